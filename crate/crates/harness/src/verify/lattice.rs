//! Compaction representatives: correctness and optimality on bounded grids.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use shared_arrangements::lattice::{beyond, grid, indistinguishable, rep, Antichain, Shape, Time};

use super::case_rng;

const COORD: u64 = 8;

fn random_time(rng: &mut ChaCha8Rng, shape: Shape) -> Time {
    match shape {
        Shape::Scalar => Time::Scalar(rng.gen_range(0..=COORD)),
        Shape::Product => Time::Product(rng.gen_range(0..=COORD), rng.gen_range(0..=COORD)),
    }
}

/// The grid bound for a case: every coordinate involved plus a margin of 2.
fn bound(shape: Shape, times: &[Time]) -> Time {
    let e = times.iter().map(|t| t.epoch()).max().unwrap_or(0) + 2;
    match shape {
        Shape::Scalar => Time::Scalar(e),
        Shape::Product => Time::Product(e, times.iter().map(|t| t.round()).max().unwrap_or(0) + 2),
    }
}

/// Checks one `(F, t)` pair, returning a description of the first violated property.
pub fn check(frontier: &Antichain, t: &Time) -> Result<(), String> {
    let elems = frontier.elements();
    for a in elems {
        for b in elems {
            if a != b && a.less_equal(b) {
                return Err(format!("frontier {} is not an antichain: {} <= {}", frontier, a, b));
            }
        }
    }
    let r = rep(frontier, t);
    let mut involved = elems.to_vec();
    involved.push(*t);
    let bound = bound(t.shape(), &involved);
    for g in grid(&bound).filter(|g| beyond(g, frontier)) {
        if t.less_equal(&g) != r.less_equal(&g) {
            return Err(format!("correctness: F = {}, t = {}, rep = {}, separated by {}", frontier, t, r, g));
        }
    }
    for t2 in grid(&bound) {
        if indistinguishable(frontier, t, &t2, &bound) && rep(frontier, &t2) != r {
            return Err(format!(
                "optimality: F = {}, {} and {} are indistinguishable but have representatives {} and {}",
                frontier, t, t2, r, rep(frontier, &t2)
            ));
        }
    }
    if rep(frontier, &r) != r {
        return Err(format!("idempotence: F = {}, t = {}, rep = {}, rep(rep) = {}", frontier, t, r, rep(frontier, &r)));
    }
    if beyond(t, frontier) && r != *t {
        return Err(format!("fixed point: F = {}, t = {} is beyond F but rep = {}", frontier, t, r));
    }
    Ok(())
}

/// `iterations` random cases per lattice shape.
pub fn run(seed: u64, iterations: usize) -> (usize, Option<String>) {
    let mut cases = 0;
    for (s, shape) in [Shape::Scalar, Shape::Product].into_iter().enumerate() {
        for i in 0..iterations {
            let mut rng = case_rng(seed, s * iterations + i);
            let size = rng.gen_range(1..=3);
            let frontier: Antichain = (0..size).map(|_| random_time(&mut rng, shape)).collect();
            let t = random_time(&mut rng, shape);
            cases += 1;
            if let Err(m) = check(&frontier, &t) {
                return (cases, Some(m));
            }
        }
    }
    (cases, None)
}
