//! Observing progress, plus a few structural stream operators.

use std::cell::RefCell;
use std::rc::Rc;

use super::channels::{Pact, StreamData};
use super::operator::{InputHandle, OperatorBuilder, Scope, Stream};
use super::progress::Summary;
use crate::error::DataflowError;
use crate::lattice::{Antichain, Time};

/// Reports the frontier of the stream it was attached to.
#[derive(Clone)]
pub struct ProbeHandle {
    frontier: Rc<RefCell<Antichain>>,
}

impl ProbeHandle {
    /// True if some time strictly before `time` may still appear.
    pub fn less_than(&self, time: &Time) -> bool {
        self.frontier.borrow().elements().iter().any(|t| t.less_equal(time) && t != time)
    }

    /// True if `time` itself may still appear.
    pub fn less_equal(&self, time: &Time) -> bool {
        self.frontier.borrow().elements().iter().any(|t| t.less_equal(time))
    }

    pub fn done(&self) -> bool {
        self.frontier.borrow().is_empty()
    }

    pub fn frontier(&self) -> Antichain {
        self.frontier.borrow().clone()
    }
}

impl<D: StreamData> Stream<D> {
    /// Attaches a probe that discards records.
    pub fn probe(&self) -> ProbeHandle {
        let mut builder = OperatorBuilder::new("Probe", self.scope());
        let shape = self.shape();
        let mut input = builder.new_input_connected(self, Pact::Pipeline, None, shape);
        let frontier = input.frontier_rc();
        builder.build(move |_| {
            move || {
                while input.next_message()?.is_some() {}
                Ok(())
            }
        });
        ProbeHandle { frontier }
    }

    /// Merges two streams of the same scope.
    pub fn concat(&self, other: &Stream<D>) -> Stream<D> {
        self.binary(other, Pact::Pipeline, Pact::Pipeline, "Concat", |_cap, _| {
            move |a, b, out| {
                while let Some((cap, data)) = a.next()? {
                    out.give_vec(&cap, data)?;
                }
                while let Some((cap, data)) = b.next()? {
                    out.give_vec(&cap, data)?;
                }
                Ok(())
            }
        })
    }
}

type Slot<D> = Rc<RefCell<Option<InputHandle<D>>>>;

/// The open end of a feedback edge; must be connected before the dataflow is installed.
pub struct Feedback<D: StreamData> {
    scope: Scope,
    node: usize,
    slot: Slot<D>,
}

impl Scope {
    /// A stream carrying the records later given to `Feedback::connect`, one round later.
    /// Only valid in an iteration scope.
    pub fn feedback<D: StreamData>(&self) -> (Feedback<D>, Stream<D>) {
        if self.shape() != crate::lattice::Shape::Product {
            self.error("feedback edges require an iteration scope");
        }
        let max_rounds = self.config().max_rounds;
        let mut builder = OperatorBuilder::new("Feedback", self);
        let node = builder.node();
        let (mut output, stream) = builder.new_output::<D>();
        let slot: Slot<D> = Rc::new(RefCell::new(None));
        let inner = slot.clone();
        builder.build(move |_cap| {
            move || {
                if let Some(input) = inner.borrow_mut().as_mut() {
                    while let Some((cap, data)) = input.next()? {
                        if let Time::Product(_, round) = cap.time() {
                            if *round > max_rounds {
                                return Err(DataflowError::IterationLimit { max_rounds });
                            }
                        }
                        output.give_vec(&cap, data)?;
                    }
                }
                Ok(())
            }
        });
        (Feedback { scope: self.clone(), node, slot }, stream)
    }
}

impl<D: StreamData> Feedback<D> {
    pub fn connect(self, stream: &Stream<D>) {
        let mut builder = OperatorBuilder::existing(&self.scope, self.node);
        let shape = self.scope.shape();
        let input = builder.new_input_connected(stream, Pact::Pipeline, Some(Summary::Increment), shape);
        *self.slot.borrow_mut() = Some(input);
    }
}

impl<D: StreamData> Drop for Feedback<D> {
    fn drop(&mut self) {
        if self.slot.borrow().is_none() {
            self.scope.error("feedback edge was never connected");
        }
    }
}
