//! Message transport between operators: local queues and cross-worker exchange.

use std::any::Any;
use std::cell::RefCell;
use std::collections::{HashMap, VecDeque};
use std::rc::Rc;
use std::sync::{Arc, Mutex};

use crossbeam_channel::{Receiver, Sender, TryRecvError, TrySendError};

use super::progress::{ChangeBatch, Location};
use crate::lattice::Time;

/// Bound for records carried on dataflow edges.
pub trait StreamData: Clone + Send + 'static {}
impl<T: Clone + Send + 'static> StreamData for T {}

/// A batch of records sent under one capability time.
#[derive(Clone, Debug)]
pub struct Message<D> {
    pub time: Time,
    pub data: Vec<D>,
}

/// Routing function used by exchange edges.
pub type Route<D> = Rc<dyn Fn(&D) -> u64>;

/// How an input connects to its upstream stream.
pub enum Pact<D> {
    /// Records stay on the producing worker.
    Pipeline,
    /// Each record goes to worker `route(record) % peers`.
    Exchange(Route<D>),
}

impl<D> Pact<D> {
    pub fn exchange(route: impl Fn(&D) -> u64 + 'static) -> Self {
        Pact::Exchange(Rc::new(route))
    }
}

pub(crate) trait Push<D> {
    /// Sends `data` at `time`, recording the message in `log`.
    fn push(&mut self, time: Time, data: Vec<D>, log: &mut ChangeBatch);
}

pub(crate) type LocalQueue<D> = Rc<RefCell<VecDeque<Message<D>>>>;

pub(crate) struct PipelinePusher<D> {
    pub queue: LocalQueue<D>,
    pub target: Location,
}

impl<D> Push<D> for PipelinePusher<D> {
    fn push(&mut self, time: Time, data: Vec<D>, log: &mut ChangeBatch) {
        log.update(self.target, time, 1);
        self.queue.borrow_mut().push_back(Message { time, data });
    }
}

/// Sends records to per-worker bounded channels, parking messages locally when a channel is
/// full so that no worker ever blocks on a peer.
pub(crate) struct ExchangePusher<D> {
    senders: Vec<Sender<Message<D>>>,
    overflow: Vec<VecDeque<Message<D>>>,
    route: Route<D>,
    target: Location,
}

impl<D: StreamData> ExchangePusher<D> {
    pub fn new(senders: Vec<Sender<Message<D>>>, route: Route<D>, target: Location) -> Self {
        let overflow = senders.iter().map(|_| VecDeque::new()).collect();
        ExchangePusher { senders, overflow, route, target }
    }

    fn send(&mut self, index: usize, message: Message<D>) {
        if !self.overflow[index].is_empty() {
            self.overflow[index].push_back(message);
            return;
        }
        match self.senders[index].try_send(message) {
            Ok(()) => {}
            Err(TrySendError::Full(m)) => self.overflow[index].push_back(m),
            // The receiving worker has shut down because of a failure elsewhere.
            Err(TrySendError::Disconnected(_)) => {}
        }
    }

    /// Retries parked messages. Returns true if any remain parked.
    pub fn flush(&mut self) -> bool {
        let mut parked = false;
        for (index, queue) in self.overflow.iter_mut().enumerate() {
            while let Some(m) = queue.pop_front() {
                match self.senders[index].try_send(m) {
                    Ok(()) => {}
                    Err(TrySendError::Full(m)) => {
                        queue.push_front(m);
                        parked = true;
                        break;
                    }
                    Err(TrySendError::Disconnected(_)) => queue.clear(),
                }
            }
        }
        parked
    }
}

impl<D: StreamData> Push<D> for ExchangePusher<D> {
    fn push(&mut self, time: Time, data: Vec<D>, log: &mut ChangeBatch) {
        let peers = self.senders.len() as u64;
        let mut buffers: Vec<Vec<D>> = (0..peers).map(|_| Vec::new()).collect();
        for d in data {
            let index = ((self.route)(&d) % peers) as usize;
            buffers[index].push(d);
        }
        for (index, data) in buffers.into_iter().enumerate() {
            if !data.is_empty() {
                log.update(self.target, time, 1);
                self.send(index, Message { time, data });
            }
        }
    }
}

pub(crate) struct SharedPush<P>(pub Rc<RefCell<P>>);

impl<D, P: Push<D>> Push<D> for SharedPush<P> {
    fn push(&mut self, time: Time, data: Vec<D>, log: &mut ChangeBatch) {
        self.0.borrow_mut().push(time, data, log)
    }
}

pub(crate) trait Flush {
    fn flush(&mut self) -> bool;
}

impl<D: StreamData> Flush for ExchangePusher<D> {
    fn flush(&mut self) -> bool {
        ExchangePusher::flush(self)
    }
}

/// Fans one output out to every connected input.
pub(crate) struct Tee<D> {
    pushers: Vec<Box<dyn Push<D>>>,
}

impl<D: Clone> Tee<D> {
    pub fn new() -> Self {
        Tee { pushers: Vec::new() }
    }

    pub fn add(&mut self, pusher: Box<dyn Push<D>>) {
        self.pushers.push(pusher);
    }

    pub fn push(&mut self, time: Time, data: Vec<D>, log: &mut ChangeBatch) {
        if let Some((last, rest)) = self.pushers.split_last_mut() {
            for p in rest.iter_mut() {
                p.push(time, data.clone(), log);
            }
            last.push(time, data, log);
        }
    }
}

/// The receiving end of an input.
pub(crate) enum Puller<D> {
    Local(LocalQueue<D>),
    Remote(Receiver<Message<D>>),
}

impl<D> Puller<D> {
    pub fn pull(&mut self) -> Option<Message<D>> {
        match self {
            Puller::Local(q) => q.borrow_mut().pop_front(),
            Puller::Remote(r) => match r.try_recv() {
                Ok(m) => Some(m),
                Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => None,
            },
        }
    }
}

struct ChannelSlot<D> {
    senders: Vec<Sender<Message<D>>>,
    receivers: Vec<Option<Receiver<Message<D>>>>,
    claimed: usize,
}

/// Creates, once per exchange edge, one bounded channel per worker, and hands each worker its
/// receiver together with senders to every peer.
#[derive(Default)]
pub(crate) struct Allocator {
    slots: Mutex<HashMap<(usize, usize), Box<dyn Any + Send>>>,
}

impl Allocator {
    pub fn claim<D: StreamData>(
        &self,
        key: (usize, usize),
        index: usize,
        peers: usize,
        capacity: usize,
    ) -> (Vec<Sender<Message<D>>>, Receiver<Message<D>>) {
        let mut slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        let entry = slots.entry(key).or_insert_with(|| {
            let (senders, receivers): (Vec<_>, Vec<_>) =
                (0..peers).map(|_| crossbeam_channel::bounded::<Message<D>>(capacity.max(1))).unzip();
            Box::new(ChannelSlot { senders, receivers: receivers.into_iter().map(Some).collect(), claimed: 0 })
        });
        let slot = entry.downcast_mut::<ChannelSlot<D>>().expect("exchange channel type mismatch across workers");
        let receiver = slot.receivers[index].take().expect("exchange channel claimed twice by one worker");
        let senders = slot.senders.clone();
        slot.claimed += 1;
        if slot.claimed == peers {
            slots.remove(&key);
        }
        (senders, receiver)
    }
}

pub(crate) type SharedAllocator = Arc<Allocator>;
