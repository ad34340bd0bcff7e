//! Collections: streams of `(data, time, diff)` updates, and the stateless operators on them.

use std::cell::RefCell;
use std::rc::Rc;

use crate::data::{Data, Diff};
use crate::dataflow::progress::Summary;
use crate::dataflow::{Pact, ProbeHandle, Scope, Stream, StreamInput};
use crate::error::DataflowError;
use crate::lattice::{Shape, Time};

/// A stream of updates to a multiset of `D`.
pub struct Collection<D> {
    pub inner: Stream<(D, Time, Diff)>,
}

impl<D> Clone for Collection<D> {
    fn clone(&self) -> Self {
        Collection { inner: self.inner.clone() }
    }
}

/// Captured updates, in arrival order.
pub type Captured<D> = Rc<RefCell<Vec<(D, Time, Diff)>>>;

impl<D: Data> Collection<D> {
    pub fn new(inner: Stream<(D, Time, Diff)>) -> Self {
        Collection { inner }
    }

    pub fn scope(&self) -> &Scope {
        self.inner.scope()
    }

    /// Applies `logic` to every message's update vector.
    fn unary_updates<D2: Data>(
        &self,
        name: &str,
        mut logic: impl FnMut(Vec<(D, Time, Diff)>) -> Vec<(D2, Time, Diff)> + 'static,
    ) -> Collection<D2> {
        let stream = self.inner.unary(Pact::Pipeline, name, move |_cap, _| {
            move |input, output| {
                while let Some((cap, data)) = input.next()? {
                    output.give_vec(&cap, logic(data))?;
                }
                Ok(())
            }
        });
        Collection::new(stream)
    }

    pub fn map<D2: Data>(&self, f: impl Fn(D) -> D2 + 'static) -> Collection<D2> {
        self.unary_updates("Map", move |data| data.into_iter().map(|(d, t, r)| (f(d), t, r)).collect())
    }

    pub fn flat_map<D2: Data, I: IntoIterator<Item = D2>>(&self, f: impl Fn(D) -> I + 'static) -> Collection<D2> {
        self.unary_updates("FlatMap", move |data| {
            data.into_iter().flat_map(|(d, t, r)| f(d).into_iter().map(move |d2| (d2, t, r))).collect()
        })
    }

    pub fn filter(&self, p: impl Fn(&D) -> bool + 'static) -> Collection<D> {
        self.unary_updates("Filter", move |mut data| {
            data.retain(|(d, _, _)| p(d));
            data
        })
    }

    pub fn negate(&self) -> Collection<D> {
        self.unary_updates("Negate", |mut data| {
            for (_, _, r) in data.iter_mut() {
                *r = -*r;
            }
            data
        })
    }

    pub fn concat(&self, other: &Collection<D>) -> Collection<D> {
        if self.scope().shape() != other.scope().shape() {
            self.scope().error("concat of collections from different scopes");
        }
        Collection::new(self.inner.concat(&other.inner))
    }

    /// Consolidates updates within each message. Updates at different message times are not
    /// combined.
    pub fn consolidate_messages(&self) -> Collection<D> {
        self.unary_updates("Consolidate", |mut data| {
            // Diff overflow would be reported by the arrangement that eventually stores these.
            let _ = crate::trace::consolidate_in_place(&mut data);
            data
        })
    }

    /// Calls `f` on each update as it passes.
    pub fn inspect(&self, f: impl Fn(&(D, Time, Diff)) + 'static) -> Collection<D> {
        self.unary_updates("Inspect", move |data| {
            data.iter().for_each(&f);
            data
        })
    }

    /// Appends every update that passes through this worker to a shared vector.
    pub fn capture(&self) -> Captured<D> {
        let captured: Captured<D> = Rc::new(RefCell::new(Vec::new()));
        let sink = captured.clone();
        self.inner.sink(Pact::Pipeline, "Capture", move |input| {
            while let Some(message) = input.next_message()? {
                sink.borrow_mut().extend(message.data);
            }
            Ok(())
        });
        captured
    }

    pub fn probe(&self) -> ProbeHandle {
        self.inner.probe()
    }

    /// Brings the collection into the iteration scope `inner`: times `e` become `(e, 0)`.
    pub fn enter(&self, inner: &Scope) -> Collection<D> {
        if !inner.same_dataflow(self.scope()) || inner.shape() != Shape::Product || self.scope().shape() != Shape::Scalar
        {
            inner.error("enter requires a root-scope collection and an iteration scope of the same dataflow");
        }
        Collection::new(self.inner.rescope(inner, Summary::Enter, "Enter", |(d, t, r): (D, Time, Diff)| (d, t.enter(), r)))
    }

    /// Returns the collection from an iteration scope: times `(e, r)` become `e`.
    pub fn leave(&self) -> Collection<D> {
        if self.scope().shape() != Shape::Product {
            self.scope().error("leave requires a collection in an iteration scope");
        }
        let parent = self.scope().parent();
        Collection::new(self.inner.rescope(&parent, Summary::Leave, "Leave", |(d, t, r): (D, Time, Diff)| (d, t.leave(), r)))
    }

    /// Moves every update one round later; used on feedback edges.
    fn next_round(&self) -> Collection<D> {
        self.unary_updates("NextRound", |mut data| {
            for (_, t, _) in data.iter_mut() {
                *t = t.next_round();
            }
            data
        })
    }

    /// Repeatedly applies `body`, starting from this collection, until it reaches a fixed point.
    ///
    /// `body` receives the current iterate inside an iteration scope and returns the next one.
    /// Exceeding the configured maximum number of rounds fails the dataflow.
    pub fn iterate(&self, body: impl FnOnce(&Collection<D>) -> Collection<D>) -> Collection<D> {
        let inner = self.scope().iterative();
        let entered = self.enter(&inner);
        let (feedback, stream) = inner.feedback::<(D, Time, Diff)>();
        let variable = entered.concat(&Collection::new(stream));
        let result = body(&variable);
        let delta = result.concat(&entered.negate()).next_round();
        feedback.connect(&delta.inner);
        result.leave()
    }
}

/// Updates a collection at the root scope of a dataflow from outside.
pub struct InputSession<D: Data> {
    input: StreamInput<(D, Time, Diff)>,
}

impl<D: Data> InputSession<D> {
    pub fn new(scope: &Scope) -> (Self, Collection<D>) {
        let (input, stream) = StreamInput::new(scope);
        (InputSession { input }, Collection::new(stream))
    }

    pub fn epoch(&self) -> u64 {
        self.input.epoch()
    }

    pub fn insert(&mut self, d: D) -> Result<(), DataflowError> {
        self.update(d, 1)
    }

    pub fn remove(&mut self, d: D) -> Result<(), DataflowError> {
        self.update(d, -1)
    }

    /// Changes the multiplicity of `d` at the current epoch.
    pub fn update(&mut self, d: D, diff: Diff) -> Result<(), DataflowError> {
        let epoch = self.input.epoch();
        self.update_at(d, epoch, diff)
    }

    /// Changes the multiplicity of `d` at `epoch`, which must not precede the current epoch.
    pub fn update_at(&mut self, d: D, epoch: u64, diff: Diff) -> Result<(), DataflowError> {
        if epoch < self.input.epoch() {
            return Err(DataflowError::Input(format!(
                "update at epoch {} precedes the input's current epoch {}",
                epoch,
                self.input.epoch()
            )));
        }
        self.input.send((d, Time::Scalar(epoch), diff))
    }

    pub fn advance_to(&mut self, epoch: u64) -> Result<(), DataflowError> {
        self.input.advance_to(epoch)
    }

    pub fn flush(&mut self) -> Result<(), DataflowError> {
        self.input.flush()
    }

    pub fn close(&mut self) -> Result<(), DataflowError> {
        self.input.close()
    }
}
