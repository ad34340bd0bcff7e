use std::cell::RefCell;
use std::rc::Rc;

use shared_arrangements::dataflow::{execute, Config, Pact, StreamInput};
use shared_arrangements::error::DataflowError;
use shared_arrangements::lattice::Time;

#[test]
fn exchange_conserves_records() {
    for workers in [1, 2, 3] {
        let results = execute(Config::workers(workers), |worker| {
            let index = worker.index() as u64;
            let seen = Rc::new(RefCell::new(Vec::new()));
            let sink = seen.clone();
            let (mut input, probe) = worker.dataflow(|scope| {
                let (input, stream) = StreamInput::<u64>::new(scope);
                let exchanged = stream.unary(Pact::exchange(|x: &u64| *x), "Collect", move |_cap, _| {
                    move |input, output| {
                        while let Some((cap, data)) = input.next()? {
                            sink.borrow_mut().extend(data.iter().copied());
                            output.give_vec(&cap, data)?;
                        }
                        Ok(())
                    }
                });
                (input, exchanged.probe())
            })?;
            for round in 0..5u64 {
                for i in 0..100u64 {
                    input.send(round * 1000 + i * 7 + index)?;
                }
                input.advance_to(round + 1)?;
                worker.step_while(|| probe.less_than(&Time::Scalar(round + 1)))?;
            }
            input.close()?;
            worker.step_while(|| !probe.done())?;
            let seen = seen.borrow().clone();
            Ok(seen)
        })
        .unwrap();
        let mut all: Vec<u64> = results.iter().flatten().copied().collect();
        for (i, r) in results.iter().enumerate() {
            assert!(r.iter().all(|x| (*x % workers as u64) as usize == i));
        }
        all.sort();
        assert_eq!(all.len(), 500 * workers);
    }
}

#[test]
fn probe_tracks_input_epochs() {
    execute(Config::workers(2), |worker| {
        let (mut input, probe) = worker.dataflow(|scope| {
            let (input, stream) = StreamInput::<u64>::new(scope);
            (input, stream.probe())
        })?;
        assert!(probe.less_equal(&Time::Scalar(0)));
        input.advance_to(3)?;
        worker.step_while(|| probe.less_than(&Time::Scalar(3)))?;
        assert_eq!(probe.frontier().elements(), &[Time::Scalar(3)]);
        assert!(matches!(input.advance_to(2), Err(DataflowError::Input(_))));
        Ok(())
    })
    .unwrap();
}

#[test]
fn failure_on_one_worker_is_reported() {
    let err = execute(Config::workers(2), |worker| {
        if worker.index() == 1 {
            return Err(DataflowError::Input("boom".into()));
        }
        let (_input, probe) = worker.dataflow(|scope| {
            let (input, stream) = StreamInput::<u64>::new(scope);
            (input, stream.probe())
        })?;
        worker.step_while(|| !probe.done())?;
        Ok(())
    })
    .unwrap_err();
    assert!(matches!(err, DataflowError::Input(_)));
}
