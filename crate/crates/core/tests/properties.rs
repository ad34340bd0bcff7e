use std::collections::BTreeMap;

use proptest::prelude::*;
use shared_arrangements::lattice::{beyond, frontier_insert, grid, indistinguishable, rep, Antichain, Time};
use shared_arrangements::trace::{BatchBuilder, Cursor, Effort, Spine};

fn scalar() -> impl Strategy<Value = Time> {
    (0u64..12).prop_map(Time::Scalar)
}

fn product() -> impl Strategy<Value = Time> {
    (0u64..6, 0u64..6).prop_map(|(a, b)| Time::Product(a, b))
}

fn time() -> impl Strategy<Value = Time> {
    prop_oneof![scalar(), product()]
}

/// A time together with a non-empty frontier of the same shape.
fn frontier_and_time() -> impl Strategy<Value = (Antichain, Time, Time)> {
    prop_oneof![
        (prop::collection::vec(scalar(), 1..4), scalar(), scalar()).prop_map(|(f, t, u)| (f.into(), t, u)),
        (prop::collection::vec(product(), 1..4), product(), product()).prop_map(|(f, t, u)| (f.into(), t, u)),
    ]
}

fn bound_for(times: &[Time]) -> Time {
    match times[0] {
        Time::Scalar(_) => Time::Scalar(times.iter().map(|t| t.epoch()).max().unwrap() + 2),
        Time::Product(..) => {
            let e = times.iter().map(|t| t.epoch()).max().unwrap() + 2;
            let r = times.iter().map(|t| t.round()).max().unwrap() + 2;
            Time::Product(e, r)
        }
    }
}

fn same_shape() -> impl Strategy<Value = (Time, Time, Time)> {
    prop_oneof![(scalar(), scalar(), scalar()), (product(), product(), product())]
}

proptest! {
    #[test]
    fn lattice_laws((a, b, c) in same_shape()) {
        prop_assert_eq!(a.lub(&b), b.lub(&a));
        prop_assert_eq!(a.glb(&b), b.glb(&a));
        prop_assert_eq!(a.lub(&b).lub(&c), a.lub(&b.lub(&c)));
        prop_assert_eq!(a.glb(&b).glb(&c), a.glb(&b.glb(&c)));
        prop_assert_eq!(a.lub(&a), a);
        prop_assert!(a.glb(&b).less_equal(&a) && a.less_equal(&a.lub(&b)));
        prop_assert_eq!(a.less_equal(&b), a.lub(&b) == b);
        prop_assert!(Time::minimum(a.shape()).less_equal(&a));
    }

    #[test]
    fn rep_agrees_with_time_beyond_frontier((f, t, _) in frontier_and_time()) {
        let r = rep(&f, &t);
        let mut all = f.elements().to_vec();
        all.push(t);
        let bound = bound_for(&all);
        for g in grid(&bound).filter(|g| beyond(g, &f)) {
            prop_assert_eq!(t.less_equal(&g), r.less_equal(&g));
        }
        prop_assert_eq!(rep(&f, &r), r);
        if beyond(&t, &f) {
            prop_assert_eq!(r, t);
        }
    }

    #[test]
    fn indistinguishable_times_share_representative((f, t1, t2) in frontier_and_time()) {
        let mut all = f.elements().to_vec();
        all.push(t1);
        all.push(t2);
        let bound = bound_for(&all);
        if indistinguishable(&f, &t1, &t2, &bound) {
            prop_assert_eq!(rep(&f, &t1), rep(&f, &t2));
        }
        prop_assert!(indistinguishable(&f, &t1, &rep(&f, &t1), &bound));
    }

    #[test]
    fn frontier_insert_is_order_independent(times in prop::collection::vec(product(), 0..8), seed in any::<u64>()) {
        let mut forward = Antichain::new();
        for t in times.iter() {
            forward = frontier_insert(&forward, *t);
        }
        let mut shuffled = times.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (seed.wrapping_mul(i as u64 + 1) % n as u64) as usize);
        }
        let mut backward = Antichain::new();
        for t in shuffled.iter().rev() {
            backward = frontier_insert(&backward, *t);
        }
        let mut a = forward.elements().to_vec();
        let mut b = backward.elements().to_vec();
        a.sort();
        b.sort();
        prop_assert_eq!(&a, &b);
        for x in a.iter() {
            for y in a.iter() {
                prop_assert!(x == y || !x.less_equal(y));
            }
        }
        for t in times.iter() {
            prop_assert!(beyond(t, &forward));
        }
    }

    #[test]
    fn beyond_empty_is_false(t in time()) {
        prop_assert!(!beyond(&t, &Antichain::new()));
    }
}

type Raw = Vec<(u8, u8, i64)>;

fn epochs() -> impl Strategy<Value = Vec<Raw>> {
    prop::collection::vec(prop::collection::vec((0u8..8, 0u8..4, -2i64..3), 0..20), 1..24)
}

/// Builds a spine from per-epoch update lists, advancing `since` to `lag` epochs behind the
/// upper after each insertion, and checks every readable time against brute force.
fn check_fidelity(epochs: &[Raw], lag: u64, effort: Effort) -> Result<(), TestCaseError> {
    let mut spine: Spine<u8, u8> = Spine::new(shared_arrangements::lattice::Shape::Scalar, effort);
    let mut raw: Vec<((u8, u8), u64, i64)> = Vec::new();
    for (e, updates) in epochs.iter().enumerate() {
        let e = e as u64;
        let mut builder = BatchBuilder::new();
        for (k, v, r) in updates {
            builder.push(*k, *v, Time::Scalar(e), *r);
            raw.push(((*k, *v), e, *r));
        }
        let batch = builder.seal(Antichain::from_elem(Time::Scalar(e)), Antichain::from_elem(Time::Scalar(e + 1))).unwrap();
        batch.check_invariants().map_err(TestCaseError::fail)?;
        spine.insert(batch).unwrap();
        if e + 1 > lag {
            spine.set_since(Antichain::from_elem(Time::Scalar(e + 1 - lag))).unwrap();
        }
        for b in spine.batches() {
            b.check_invariants().map_err(TestCaseError::fail)?;
        }
        let since = spine.since().elements()[0].epoch();
        for t in since..=e {
            let mut expected: BTreeMap<(u8, u8), i64> = BTreeMap::new();
            for (d, time, r) in raw.iter() {
                if *time <= t {
                    *expected.entry(*d).or_default() += r;
                }
            }
            expected.retain(|_, r| *r != 0);
            let mut got: BTreeMap<(u8, u8), i64> = BTreeMap::new();
            let mut cursor = spine.cursor();
            while cursor.key_valid() {
                while cursor.val_valid() {
                    let d = (*cursor.key(), *cursor.val());
                    cursor.map_times(|time, r| {
                        if time.less_equal(&Time::Scalar(t)) {
                            *got.entry(d).or_default() += r;
                        }
                    });
                    cursor.step_val();
                }
                cursor.step_key();
            }
            got.retain(|_, r| *r != 0);
            prop_assert_eq!(&got, &expected, "at time {} with since {}", t, since);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accumulation_fidelity(epochs in epochs(), lag in 0u64..4) {
        for effort in [Effort::Lazy, Effort::default(), Effort::Eager] {
            check_fidelity(&epochs, lag, effort)?;
        }
    }

    #[test]
    fn merge_work_and_batch_count_are_bounded(sizes in prop::collection::vec(0usize..40, 1..400)) {
        let effort = Effort::default();
        let mut spine: Spine<u32, ()> = Spine::new(shared_arrangements::lattice::Shape::Scalar, effort);
        let mut total = 0u64;
        for (e, size) in sizes.iter().enumerate() {
            let e = e as u64;
            let mut builder = BatchBuilder::new();
            for i in 0..*size {
                builder.push((e as u32) * 64 + i as u32, (), Time::Scalar(e), 1);
            }
            let batch = builder.seal(Antichain::from_elem(Time::Scalar(e)), Antichain::from_elem(Time::Scalar(e + 1))).unwrap();
            spine.insert(batch).unwrap();
            total += *size as u64;
            let stats = spine.stats();
            prop_assert!(stats.last_insert_work.get() <= 8 * *size as u64 + 64);
            prop_assert!(stats.merge_work.get() <= 8 * total + 64 * (e + 1));
        }
    }

    #[test]
    fn live_batches_stay_logarithmic(n in 1usize..2000, size in 1usize..8) {
        let mut spine: Spine<u32, ()> = Spine::new(shared_arrangements::lattice::Shape::Scalar, Effort::default());
        for e in 0..n as u64 {
            let mut builder = BatchBuilder::new();
            for i in 0..size {
                builder.push((e * 8 + i as u64) as u32, (), Time::Scalar(e), 1);
            }
            let batch = builder.seal(Antichain::from_elem(Time::Scalar(e)), Antichain::from_elem(Time::Scalar(e + 1))).unwrap();
            spine.insert(batch).unwrap();
            let bound = 2.0 * ((e + 1) as f64).log2() + 8.0;
            prop_assert!((spine.live_batches() as f64) <= bound, "{} batches after {} inserts", spine.live_batches(), e + 1);
        }
    }

    #[test]
    fn cancellation_keeps_trace_small(domain in 1u32..64, epochs in 1u64..300) {
        let mut spine: Spine<u32, ()> = Spine::new(shared_arrangements::lattice::Shape::Scalar, Effort::default());
        let mut present = vec![false; domain as usize];
        for e in 0..epochs {
            let mut builder = BatchBuilder::new();
            for k in 0..domain {
                if (k as u64 + e) % 3 == 0 {
                    let r = if present[k as usize] { -1 } else { 1 };
                    present[k as usize] = !present[k as usize];
                    builder.push(k, (), Time::Scalar(e), r);
                }
            }
            let batch = builder.seal(Antichain::from_elem(Time::Scalar(e)), Antichain::from_elem(Time::Scalar(e + 1))).unwrap();
            spine.insert(batch).unwrap();
            spine.set_since(Antichain::from_elem(Time::Scalar(e + 1))).unwrap();
            prop_assert!(spine.resident_updates() <= 8 * domain as usize);
        }
    }
}
