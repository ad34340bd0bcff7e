//! Dataflow construction: scopes, streams, operator builders, and capabilities.

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use super::channels::{
    ExchangePusher, LocalQueue, Message, Pact, PipelinePusher, Puller, SharedPush, StreamData, Tee,
};
use super::progress::{ChangeBatch, Graph, Location, Summary};
use super::{Metrics, WorkerContext};
use crate::error::DataflowError;
use crate::lattice::{Antichain, Shape, Time};

pub(crate) type Log = Rc<RefCell<ChangeBatch>>;
pub(crate) type Schedule = Box<dyn FnMut() -> Result<(), DataflowError>>;

pub(crate) struct NodeSpec {
    pub name: String,
    pub summaries: Vec<Option<Summary>>,
    pub frontiers: Vec<Rc<RefCell<Antichain>>>,
    pub schedule: Option<Schedule>,
}

/// Everything accumulated while a dataflow is being described.
pub(crate) struct DataflowBuilder {
    pub index: usize,
    pub context: WorkerContext,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<Vec<(usize, usize)>>,
    pub initial: Vec<(Location, Time)>,
    pub log: Log,
    pub flushers: Vec<Rc<RefCell<dyn super::channels::Flush>>>,
    pub activators: Vec<Rc<Cell<bool>>>,
    pub channels: usize,
    pub errors: Vec<String>,
    pub sealed: bool,
}

impl DataflowBuilder {
    pub fn new(index: usize, context: WorkerContext) -> Self {
        DataflowBuilder {
            index,
            context,
            nodes: Vec::new(),
            edges: Vec::new(),
            initial: Vec::new(),
            log: Rc::new(RefCell::new(ChangeBatch::new())),
            flushers: Vec::new(),
            activators: Vec::new(),
            channels: 0,
            errors: Vec::new(),
            sealed: false,
        }
    }

    pub fn graph(&self) -> Graph {
        Graph { summaries: self.nodes.iter().map(|n| n.summaries.clone()).collect(), edges: self.edges.clone() }
    }
}

/// A region of a dataflow whose times share one shape: the root scope, or an iteration scope.
#[derive(Clone)]
pub struct Scope {
    pub(crate) builder: Rc<RefCell<DataflowBuilder>>,
    shape: Shape,
}

impl Scope {
    pub(crate) fn new(builder: Rc<RefCell<DataflowBuilder>>, shape: Shape) -> Self {
        Scope { builder, shape }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Index of the worker constructing this dataflow.
    pub fn index(&self) -> usize {
        self.builder.borrow().context.index
    }

    pub fn peers(&self) -> usize {
        self.builder.borrow().context.peers
    }

    pub fn config(&self) -> Rc<super::Config> {
        self.builder.borrow().context.config.clone()
    }

    pub fn metrics(&self) -> Rc<Metrics> {
        self.builder.borrow().context.metrics.clone()
    }

    /// The iteration scope nested in this one. Only one level of nesting is supported.
    pub fn iterative(&self) -> Scope {
        if self.shape != Shape::Scalar {
            self.error("iteration scopes cannot be nested more than one level deep");
        }
        Scope { builder: self.builder.clone(), shape: Shape::Product }
    }

    /// The scope enclosing an iteration scope.
    pub fn parent(&self) -> Scope {
        Scope { builder: self.builder.clone(), shape: Shape::Scalar }
    }

    pub(crate) fn same_dataflow(&self, other: &Scope) -> bool {
        Rc::ptr_eq(&self.builder, &other.builder)
    }

    /// Records a construction error; the dataflow will not be installed.
    pub fn error(&self, message: impl Into<String>) {
        self.builder.borrow_mut().errors.push(message.into());
    }
}

/// A stream of records produced by one operator output.
pub struct Stream<D> {
    scope: Scope,
    node: usize,
    tee: Rc<RefCell<Tee<D>>>,
}

impl<D> Clone for Stream<D> {
    fn clone(&self) -> Self {
        Stream { scope: self.scope.clone(), node: self.node, tee: self.tee.clone() }
    }
}

impl<D: StreamData> Stream<D> {
    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn shape(&self) -> Shape {
        self.scope.shape
    }

    /// A single-input, single-output operator.
    pub fn unary<D2: StreamData, B, L>(&self, pact: Pact<D>, name: &str, constructor: B) -> Stream<D2>
    where
        B: FnOnce(Capability, Activator) -> L,
        L: FnMut(&mut InputHandle<D>, &mut OutputHandle<D2>) -> Result<(), DataflowError> + 'static,
    {
        let mut builder = OperatorBuilder::new(name, &self.scope);
        let mut input = builder.new_input(self, pact);
        let (mut output, stream) = builder.new_output();
        let activator = builder.activator();
        builder.build(move |cap| {
            let mut logic = constructor(cap.expect("unary operators have an output"), activator);
            move || logic(&mut input, &mut output)
        });
        stream
    }

    /// A two-input, single-output operator.
    pub fn binary<D2: StreamData, D3: StreamData, B, L>(
        &self,
        other: &Stream<D2>,
        pact1: Pact<D>,
        pact2: Pact<D2>,
        name: &str,
        constructor: B,
    ) -> Stream<D3>
    where
        B: FnOnce(Capability, Activator) -> L,
        L: FnMut(&mut InputHandle<D>, &mut InputHandle<D2>, &mut OutputHandle<D3>) -> Result<(), DataflowError> + 'static,
    {
        let mut builder = OperatorBuilder::new(name, &self.scope);
        let mut input1 = builder.new_input(self, pact1);
        let mut input2 = builder.new_input(other, pact2);
        let (mut output, stream) = builder.new_output();
        let activator = builder.activator();
        builder.build(move |cap| {
            let mut logic = constructor(cap.expect("binary operators have an output"), activator);
            move || logic(&mut input1, &mut input2, &mut output)
        });
        stream
    }

    /// A single-input operator with no output.
    pub fn sink<L>(&self, pact: Pact<D>, name: &str, mut logic: L)
    where
        L: FnMut(&mut InputHandle<D>) -> Result<(), DataflowError> + 'static,
    {
        let mut builder = OperatorBuilder::new(name, &self.scope);
        let mut input = builder.new_input_connected(self, pact, None, self.shape());
        builder.build(move |_| move || logic(&mut input));
    }

    /// Moves the stream between scopes, mapping message times by `summary` and records by `f`.
    pub(crate) fn rescope<D2: StreamData>(
        &self,
        target: &Scope,
        summary: Summary,
        name: &str,
        f: impl Fn(D) -> D2 + 'static,
    ) -> Stream<D2> {
        let mut builder = OperatorBuilder::new(name, target);
        let mut input = builder.new_input_connected(self, Pact::Pipeline, Some(summary), self.shape());
        let (mut output, stream) = builder.new_output::<D2>();
        builder.build(move |_cap| {
            move || {
                while let Some((cap, data)) = input.next()? {
                    output.give_vec(&cap, data.into_iter().map(&f).collect())?;
                }
                Ok(())
            }
        });
        stream
    }
}

/// Requests that the owning worker keep stepping: the operator has work left that does not
/// depend on new input.
#[derive(Clone)]
pub struct Activator(Rc<Cell<bool>>);

impl Activator {
    pub fn activate(&self) {
        self.0.set(true);
    }
}

/// Permission to produce output at times greater or equal to `time()`.
pub struct Capability {
    time: Time,
    location: Location,
    log: Log,
}

impl Capability {
    fn new(time: Time, location: Location, log: Log) -> Self {
        log.borrow_mut().update(location, time, 1);
        Capability { time, location, log }
    }

    /// A capability already counted by the runtime at installation.
    fn initial(time: Time, location: Location, log: Log) -> Self {
        Capability { time, location, log }
    }

    pub fn time(&self) -> &Time {
        &self.time
    }

    /// A new capability for `time`, which must not precede this one.
    pub fn delayed(&self, time: &Time) -> Result<Capability, DataflowError> {
        if !self.time.less_equal(time) {
            return Err(DataflowError::Integrity(format!("capability at {} cannot be delayed to {}", self.time, time)));
        }
        Ok(Capability::new(*time, self.location, self.log.clone()))
    }

    /// Moves this capability forward to `time`.
    pub fn downgrade(&mut self, time: &Time) -> Result<(), DataflowError> {
        let next = self.delayed(time)?;
        *self = next;
        Ok(())
    }
}

impl Clone for Capability {
    fn clone(&self) -> Self {
        Capability::new(self.time, self.location, self.log.clone())
    }
}

impl Drop for Capability {
    fn drop(&mut self) {
        self.log.borrow_mut().update(self.location, self.time, -1);
    }
}

impl std::fmt::Debug for Capability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Capability({})", self.time)
    }
}

/// A set of capabilities whose times form an antichain.
#[derive(Debug, Default)]
pub struct CapabilitySet {
    caps: Vec<Capability>,
}

impl CapabilitySet {
    pub fn new() -> Self {
        CapabilitySet { caps: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.caps.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Capability> {
        self.caps.iter()
    }

    /// Adds `cap` unless an existing capability is at or before it; drops dominated ones.
    pub fn insert(&mut self, cap: Capability) {
        if self.caps.iter().any(|c| c.time.less_equal(&cap.time)) {
            return;
        }
        self.caps.retain(|c| !cap.time.less_equal(&c.time));
        self.caps.push(cap);
        self.caps.sort_by(|a, b| a.time.cmp(&b.time));
    }

    /// Some held capability at or before `time`.
    pub fn find(&self, time: &Time) -> Option<&Capability> {
        self.caps.iter().find(|c| c.time.less_equal(time))
    }

    pub fn frontier(&self) -> Antichain {
        self.caps.iter().map(|c| c.time).collect()
    }

    /// Replaces the held capabilities by ones at exactly the elements of `frontier`, each
    /// derived from a held capability at or before it.
    pub fn downgrade(&mut self, frontier: &Antichain) -> Result<(), DataflowError> {
        if frontier.elements() == self.frontier().elements() {
            return Ok(());
        }
        let mut next = Vec::with_capacity(frontier.len());
        for t in frontier.elements() {
            let cap = self
                .find(t)
                .ok_or_else(|| DataflowError::Integrity(format!("no capability held at or before {}", t)))?;
            next.push(cap.delayed(t)?);
        }
        self.caps = next;
        Ok(())
    }

    pub fn clear(&mut self) {
        self.caps.clear();
    }
}

/// The receiving end of an operator input.
pub struct InputHandle<D> {
    puller: Puller<D>,
    location: Location,
    output: Location,
    summary: Option<Summary>,
    log: Log,
    frontier: Rc<RefCell<Antichain>>,
}

impl<D: StreamData> InputHandle<D> {
    /// The next message, without minting a capability.
    pub fn next_message(&mut self) -> Result<Option<Message<D>>, DataflowError> {
        match self.puller.pull() {
            None => Ok(None),
            Some(message) => {
                self.log.borrow_mut().update(self.location, message.time, -1);
                if !self.frontier.borrow().less_equal(&message.time) {
                    return Err(DataflowError::Integrity(format!(
                        "message at {} delivered behind input frontier {}",
                        message.time,
                        self.frontier.borrow()
                    )));
                }
                Ok(Some(message))
            }
        }
    }

    /// The next message, with a capability for the corresponding output time.
    pub fn next(&mut self) -> Result<Option<(Capability, Vec<D>)>, DataflowError> {
        match self.next_message()? {
            None => Ok(None),
            Some(message) => {
                let summary = self.summary.unwrap_or(Summary::Identity);
                let cap = Capability::new(summary.apply(&message.time), self.output, self.log.clone());
                Ok(Some((cap, message.data)))
            }
        }
    }

    /// Frontier of times that may still arrive at this input.
    pub fn frontier(&self) -> Ref<'_, Antichain> {
        self.frontier.borrow()
    }

    pub(crate) fn frontier_rc(&self) -> Rc<RefCell<Antichain>> {
        self.frontier.clone()
    }
}

/// The sending end of an operator output.
pub struct OutputHandle<D> {
    location: Location,
    tee: Rc<RefCell<Tee<D>>>,
    log: Log,
}

impl<D: StreamData> OutputHandle<D> {
    fn check(&self, cap: &Capability) -> Result<(), DataflowError> {
        if cap.location != self.location || !Rc::ptr_eq(&cap.log, &self.log) {
            return Err(DataflowError::Integrity(format!(
                "capability for {:?} used to emit at {:?}",
                cap.location, self.location
            )));
        }
        Ok(())
    }

    /// Sends `data` at the capability's time.
    pub fn give_vec(&mut self, cap: &Capability, data: Vec<D>) -> Result<(), DataflowError> {
        self.check(cap)?;
        if !data.is_empty() {
            self.tee.borrow_mut().push(cap.time, data, &mut self.log.borrow_mut());
        }
        Ok(())
    }

    /// A buffered session at the capability's time.
    pub fn session<'a>(&'a mut self, cap: &Capability) -> Result<Session<'a, D>, DataflowError> {
        self.check(cap)?;
        Ok(Session { output: self, time: cap.time, buffer: Vec::new() })
    }
}

/// Buffers records for one capability time; flushes when full and on drop.
pub struct Session<'a, D: StreamData> {
    output: &'a mut OutputHandle<D>,
    time: Time,
    buffer: Vec<D>,
}

const SESSION_BUFFER: usize = 1024;

impl<'a, D: StreamData> Session<'a, D> {
    pub fn give(&mut self, record: D) {
        self.buffer.push(record);
        if self.buffer.len() >= SESSION_BUFFER {
            self.flush();
        }
    }

    pub fn give_iterator(&mut self, records: impl IntoIterator<Item = D>) {
        for r in records {
            self.give(r);
        }
    }

    fn flush(&mut self) {
        if !self.buffer.is_empty() {
            let data = std::mem::replace(&mut self.buffer, Vec::with_capacity(SESSION_BUFFER));
            self.output.tee.borrow_mut().push(self.time, data, &mut self.output.log.borrow_mut());
        }
    }
}

impl<'a, D: StreamData> Drop for Session<'a, D> {
    fn drop(&mut self) {
        self.flush();
    }
}

/// Assembles one operator: its inputs, its optional output, and its scheduling logic.
pub struct OperatorBuilder {
    scope: Scope,
    node: usize,
    output: Option<Shape>,
}

impl OperatorBuilder {
    pub fn new(name: &str, scope: &Scope) -> Self {
        let mut b = scope.builder.borrow_mut();
        if b.sealed {
            drop(b);
            panic!("contract violation: operator {:?} added to an installed dataflow", name);
        }
        let node = b.nodes.len();
        b.nodes.push(NodeSpec { name: name.to_string(), summaries: Vec::new(), frontiers: Vec::new(), schedule: None });
        b.edges.push(Vec::new());
        drop(b);
        OperatorBuilder { scope: scope.clone(), node, output: None }
    }

    /// Resumes building a node that was already built, to add inputs to it.
    pub(crate) fn existing(scope: &Scope, node: usize) -> Self {
        OperatorBuilder { scope: scope.clone(), node, output: Some(scope.shape()) }
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub(crate) fn node(&self) -> usize {
        self.node
    }

    /// An input connected to `stream`, with an identity summary to the output.
    pub fn new_input<D: StreamData>(&mut self, stream: &Stream<D>, pact: Pact<D>) -> InputHandle<D> {
        let shape = self.scope.shape;
        self.new_input_connected(stream, pact, Some(Summary::Identity), shape)
    }

    pub(crate) fn new_input_connected<D: StreamData>(
        &mut self,
        stream: &Stream<D>,
        pact: Pact<D>,
        summary: Option<Summary>,
        expected: Shape,
    ) -> InputHandle<D> {
        if !stream.scope.same_dataflow(&self.scope) {
            panic!("contract violation: stream used in a dataflow other than its own");
        }
        let name = self.scope.builder.borrow().nodes[self.node].name.clone();
        if stream.shape() != expected {
            self.scope.error(format!(
                "operator {:?} expects a {:?} stream but was given a {:?} stream",
                name,
                expected,
                stream.shape()
            ));
        }
        let mut b = self.scope.builder.borrow_mut();
        let input = b.nodes[self.node].summaries.len();
        let target = Location::target(self.node, input);
        let frontier = Rc::new(RefCell::new(Antichain::minimum(stream.shape())));
        b.nodes[self.node].summaries.push(summary);
        b.nodes[self.node].frontiers.push(frontier.clone());
        b.edges[stream.node].push((self.node, input));

        let peers = b.context.peers;
        let puller = match pact {
            Pact::Exchange(route) if peers > 1 => {
                let key = (b.index, b.channels);
                b.channels += 1;
                let capacity = b.context.config.channel_capacity;
                let (senders, receiver) = b.context.allocator.claim::<D>(key, b.context.index, peers, capacity);
                let pusher = Rc::new(RefCell::new(ExchangePusher::new(senders, route, target)));
                b.flushers.push(pusher.clone());
                stream.tee.borrow_mut().add(Box::new(SharedPush(pusher)));
                Puller::Remote(receiver)
            }
            _ => {
                let queue: LocalQueue<D> = Default::default();
                stream.tee.borrow_mut().add(Box::new(PipelinePusher { queue: queue.clone(), target }));
                Puller::Local(queue)
            }
        };
        InputHandle { puller, location: target, output: Location::source(self.node), summary, log: b.log.clone(), frontier }
    }

    /// The operator's output, in the operator's scope.
    pub fn new_output<D: StreamData>(&mut self) -> (OutputHandle<D>, Stream<D>) {
        assert!(self.output.is_none(), "operators have at most one output");
        self.output = Some(self.scope.shape);
        let tee = Rc::new(RefCell::new(Tee::new()));
        let log = self.scope.builder.borrow().log.clone();
        let handle = OutputHandle { location: Location::source(self.node), tee: tee.clone(), log };
        (handle, Stream { scope: self.scope.clone(), node: self.node, tee })
    }

    pub fn activator(&self) -> Activator {
        let cell = Rc::new(Cell::new(false));
        self.scope.builder.borrow_mut().activators.push(cell.clone());
        Activator(cell)
    }

    /// Installs the operator. `constructor` receives the initial capability for the output at
    /// the minimum time, which it may retain or drop.
    pub fn build<B, L>(self, constructor: B)
    where
        B: FnOnce(Option<Capability>) -> L,
        L: FnMut() -> Result<(), DataflowError> + 'static,
    {
        let cap = self.output.map(|shape| {
            let min = Time::minimum(shape);
            let location = Location::source(self.node);
            let mut b = self.scope.builder.borrow_mut();
            b.initial.push((location, min));
            Capability::initial(min, location, b.log.clone())
        });
        let logic = constructor(cap);
        self.scope.builder.borrow_mut().nodes[self.node].schedule = Some(Box::new(logic));
    }
}
