use std::cell::RefCell;
use std::rc::Rc;

use shared_arrangements::collection::InputSession;
use shared_arrangements::dataflow::{execute, Config, Pact};
use shared_arrangements::error::TraceError;
use shared_arrangements::lattice::{Antichain, Time};
use shared_arrangements::trace::{Batch, Cursor};

type Row = (String, String);

fn row(name: &str, country: &str) -> Row {
    (name.to_string(), country.to_string())
}

fn s(t: u64) -> Time {
    Time::Scalar(t)
}

fn contents(trace: &shared_arrangements::arrange::TraceHandle<u64, u64>, time: u64) -> Vec<(u64, u64, i64)> {
    let mut out = Vec::new();
    let mut cursor = trace.cursor();
    while cursor.key_valid() {
        let k = *cursor.key();
        for (v, r) in trace.read_accumulation(&k, &s(time)).unwrap() {
            out.push((k, v, r));
        }
        cursor.step_key();
    }
    out
}

#[test]
fn reads_accumulations_of_the_worked_example() {
    let answers = execute(Config::workers(1), |worker| {
        let (mut input, trace, probe) = worker.dataflow(|scope| {
            let (input, names) = InputSession::<(u64, Row)>::new(scope);
            let arranged = names.arrange_by_key();
            let probe = arranged.stream.probe();
            (input, arranged.trace, probe)
        })?;
        let updates = [
            (342, row("Company LLC", "USA"), 4350, 1),
            (563, row("Firma GmbH", "Deutschland"), 4355, 1),
            (225, row("Azienda SRL", "Italia"), 4360, 1),
            (225, row("Azienda SRL", "Italia"), 6200, -1),
            (225, row("Company Ltd", "UK"), 6220, 1),
        ];
        for (k, v, t, r) in updates {
            input.advance_to(t)?;
            input.update((k, v), r)?;
        }
        input.advance_to(6231)?;
        worker.step_while(|| probe.less_than(&s(6231)))?;
        let read = |t: u64| -> Result<Vec<(u64, Row, i64)>, TraceError> {
            let mut out = Vec::new();
            for k in [225, 342, 563] {
                for (v, r) in trace.read_accumulation(&k, &s(t))? {
                    out.push((k, v, r));
                }
            }
            Ok(out)
        };
        let at_4360 = read(4360)?;
        let at_6230 = read(6230)?;
        let beyond = read(6231).unwrap_err();
        input.close()?;
        Ok((at_4360, at_6230, beyond))
    })
    .unwrap();
    let (at_4360, at_6230, beyond) = answers.into_iter().next().unwrap();
    assert_eq!(
        at_4360,
        vec![
            (225, row("Azienda SRL", "Italia"), 1),
            (342, row("Company LLC", "USA"), 1),
            (563, row("Firma GmbH", "Deutschland"), 1),
        ]
    );
    assert_eq!(
        at_6230,
        vec![
            (225, row("Company Ltd", "UK"), 1),
            (342, row("Company LLC", "USA"), 1),
            (563, row("Firma GmbH", "Deutschland"), 1),
        ]
    );
    assert!(matches!(beyond, TraceError::OutsideWindow { .. }));
}

#[test]
fn frontier_advance_without_data_emits_empty_batch() {
    let seen = execute(Config::workers(1), |worker| {
        let seen: Rc<RefCell<Vec<Batch<u64, u64>>>> = Rc::new(RefCell::new(Vec::new()));
        let sink = seen.clone();
        let (mut input, probe) = worker.dataflow(|scope| {
            let (input, pairs) = InputSession::<(u64, u64)>::new(scope);
            let arranged = pairs.arrange_by_key();
            arranged.stream.sink(Pact::Pipeline, "Watch", move |input| {
                while let Some(m) = input.next_message()? {
                    sink.borrow_mut().extend(m.data);
                }
                Ok(())
            });
            (input, arranged.stream.probe())
        })?;
        input.insert((1, 1))?;
        for e in 1..4 {
            input.advance_to(e)?;
            worker.step_while(|| probe.less_than(&s(e)))?;
        }
        input.close()?;
        worker.step_while(|| !probe.done())?;
        let out = seen.borrow().iter().map(|b| (b.len(), b.lower().clone(), b.upper().clone())).collect::<Vec<_>>();
        Ok(out)
    })
    .unwrap();
    let seen = &seen[0];
    let a = |t: u64| Antichain::from_elem(s(t));
    assert_eq!(seen[0], (1, a(0), a(1)));
    assert_eq!(seen[1], (0, a(1), a(2)));
    assert_eq!(seen[2], (0, a(2), a(3)));
    for pair in seen.windows(2) {
        assert_eq!(pair[0].2, pair[1].1);
    }
}

#[test]
fn shards_partition_the_collection() {
    let shards = execute(Config::workers(3), |worker| {
        let index = worker.index();
        let (mut input, trace, probe) = worker.dataflow(|scope| {
            let (input, pairs) = InputSession::<(u64, u64)>::new(scope);
            let arranged = pairs.arrange_by_key();
            let probe = arranged.stream.probe();
            (input, arranged.trace, probe)
        })?;
        if index == 0 {
            for i in 0..300 {
                input.insert((i % 37, i))?;
            }
        }
        input.advance_to(1)?;
        worker.step_while(|| probe.less_than(&s(1)))?;
        let out = contents(&trace, 0);
        input.close()?;
        Ok(out)
    })
    .unwrap();
    let mut keys = std::collections::BTreeSet::new();
    let mut union = Vec::new();
    for shard in shards.iter() {
        for (k, v, r) in shard {
            union.push((*k, *v, *r));
            keys.insert(*k);
        }
    }
    // No key appears on two workers.
    let per_shard: usize = shards.iter().map(|sh| sh.iter().map(|x| x.0).collect::<std::collections::BTreeSet<_>>().len()).sum();
    assert_eq!(per_shard, keys.len());
    union.sort();
    let mut expected: Vec<(u64, u64, i64)> = (0..300).map(|i| (i % 37, i, 1)).collect();
    expected.sort();
    assert_eq!(union, expected);
}

#[test]
fn trace_compacts_to_meet_of_reader_frontiers() {
    execute(Config::workers(1), |worker| {
        let (mut input, mut trace, probe) = worker.dataflow(|scope| {
            let (input, pairs) = InputSession::<(u64, u64)>::new(scope);
            let arranged = pairs.arrange_by_key();
            let probe = arranged.stream.probe();
            (input, arranged.trace, probe)
        })?;
        let mut other = trace.clone();
        for e in 0..6u64 {
            input.advance_to(e)?;
            input.insert((1, e))?;
        }
        input.advance_to(6)?;
        worker.step_while(|| probe.less_than(&s(6)))?;
        let a = |t: u64| Antichain::from_elem(s(t));
        trace.set_since(a(5))?;
        other.set_since(a(2))?;
        assert_eq!(trace.trace_since(), a(2));
        assert!(matches!(trace.set_since(a(3)), Err(TraceError::SinceRetreat { .. })));
        // `other` can still read at 2, and `trace` at 5.
        assert_eq!(other.read_accumulation(&1, &s(2))?.len(), 3);
        assert_eq!(trace.read_accumulation(&1, &s(5))?.len(), 6);
        assert!(matches!(trace.read_accumulation(&1, &s(4)), Err(TraceError::OutsideWindow { .. })));
        drop(other);
        assert_eq!(trace.trace_since(), a(5));
        input.close()?;
        Ok(())
    })
    .unwrap();
}

#[test]
fn dropping_every_handle_releases_the_trace() {
    let out = execute(Config::workers(1), |worker| {
        let (mut input, trace, captured, probe) = worker.dataflow(|scope| {
            let (input, pairs) = InputSession::<(u64, u64)>::new(scope);
            let arranged = pairs.arrange_by_key();
            let captured = arranged.as_collection(|k, v| (*k, *v)).capture();
            let probe = arranged.stream.probe();
            (input, arranged.trace.clone(), captured, probe)
        })?;
        input.insert((1, 1))?;
        input.advance_to(1)?;
        worker.step_while(|| probe.less_than(&s(1)))?;
        let stats = trace.stats();
        assert_eq!(stats.resident_updates.get(), 1);
        // The as_collection operator holds a clone of the handle; dropping ours is not enough.
        drop(trace);
        input.insert((2, 2))?;
        input.close()?;
        worker.step_while(|| !probe.done())?;
        let updates = captured.borrow().clone();
        Ok((updates, stats.resident_updates.get()))
    })
    .unwrap();
    let (updates, _) = &out[0];
    assert_eq!(updates.len(), 2);

    let out = execute(Config::workers(1), |worker| {
        let seen = Rc::new(RefCell::new(0usize));
        let sink = seen.clone();
        let (mut input, trace, probe) = worker.dataflow(|scope| {
            let (input, pairs) = InputSession::<(u64, u64)>::new(scope);
            let arranged = pairs.arrange_by_key();
            arranged.stream.sink(Pact::Pipeline, "Count", move |input| {
                while let Some(m) = input.next_message()? {
                    *sink.borrow_mut() += m.data.iter().map(|b| b.len()).sum::<usize>();
                }
                Ok(())
            });
            (input, arranged.trace, arranged.stream.probe())
        })?;
        input.insert((1, 1))?;
        input.advance_to(1)?;
        worker.step_while(|| probe.less_than(&s(1)))?;
        let stats = trace.stats();
        drop(trace);
        let released = stats.resident_updates.get();
        input.insert((2, 2))?;
        input.insert((3, 3))?;
        input.close()?;
        worker.step_while(|| !probe.done())?;
        let flowed = *seen.borrow();
        Ok((released, stats.resident_updates.get(), flowed))
    })
    .unwrap();
    assert_eq!(out[0], (0, 0, 3));
}

#[test]
fn import_replays_current_contents_then_follows() {
    let out = execute(Config::workers(2), |worker| {
        let index = worker.index();
        let (mut input, mut trace, probe) = worker.dataflow(|scope| {
            let (input, pairs) = InputSession::<(u64, u64)>::new(scope);
            let arranged = pairs.arrange_by_key();
            let probe = arranged.stream.probe();
            (input, arranged.trace, probe)
        })?;
        if index == 0 {
            for i in 0..20 {
                input.insert((i, i))?;
            }
        }
        input.advance_to(1)?;
        if index == 0 {
            for i in 0..10 {
                input.remove((i, i))?;
            }
        }
        input.advance_to(2)?;
        worker.step_while(|| probe.less_than(&s(2)))?;
        trace.set_since(Antichain::from_elem(s(2)))?;

        let (captured, probe2) = worker.dataflow(|scope| {
            let imported = trace.import(scope);
            let collection = imported.as_collection(|k, v| (*k, *v));
            (collection.capture(), collection.probe())
        })?;
        if index == 0 {
            input.insert((100, 100))?;
        }
        input.close()?;
        worker.step_while(|| !probe2.done())?;
        let out = captured.borrow().clone();
        Ok(out)
    })
    .unwrap();
    let all: Vec<_> = out.into_iter().flatten().collect();
    // Cancelled records were compacted away before the import and are never replayed.
    assert!(all.iter().all(|(_, _, r)| *r == 1));
    let mut records: Vec<u64> = all.iter().map(|((k, _), _, _)| *k).collect();
    records.sort();
    let mut expected: Vec<u64> = (10..20).collect();
    expected.push(100);
    assert_eq!(records, expected);
    for ((k, _), t, _) in all.iter() {
        if *k == 100 {
            assert_eq!(*t, s(2));
        } else {
            assert!(t.less_equal(&s(2)));
        }
    }
}

#[test]
fn import_into_iteration_scope_is_rejected() {
    let err = execute(Config::workers(1), |worker| {
        let trace = worker.dataflow(|scope| {
            let (_input, pairs) = InputSession::<(u64, u64)>::new(scope);
            pairs.arrange_by_key().trace
        })?;
        worker.dataflow(|scope| {
            let inner = scope.iterative();
            let _ = trace.import(&inner);
        })?;
        Ok(())
    })
    .unwrap_err();
    assert!(matches!(err, shared_arrangements::error::DataflowError::Construction(_)));
}

#[test]
fn filtered_handle_hides_records() {
    execute(Config::workers(1), |worker| {
        let (mut input, trace, probe) = worker.dataflow(|scope| {
            let (input, pairs) = InputSession::<(u64, u64)>::new(scope);
            let arranged = pairs.arrange_by_key();
            let probe = arranged.stream.probe();
            (input, arranged.trace, probe)
        })?;
        for i in 0..10 {
            input.insert((i, i * 10))?;
        }
        input.advance_to(1)?;
        worker.step_while(|| probe.less_than(&s(1)))?;
        let even = trace.filter(|k, _| k % 2 == 0);
        let keys: Vec<u64> = contents(&even, 0).into_iter().map(|x| x.0).collect();
        assert_eq!(keys, vec![0, 2, 4, 6, 8]);
        assert_eq!(contents(&trace, 0).len(), 10);
        input.close()?;
        Ok(())
    })
    .unwrap();
}
