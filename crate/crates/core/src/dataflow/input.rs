//! Feeding records into a dataflow from outside.

use super::channels::StreamData;
use super::operator::{Capability, OperatorBuilder, OutputHandle, Scope, Stream};
use crate::error::DataflowError;
use crate::lattice::{Shape, Time};

/// Pushes records into the root scope of a dataflow at the current epoch.
pub struct StreamInput<D: StreamData> {
    output: OutputHandle<D>,
    cap: Option<Capability>,
    buffer: Vec<D>,
    epoch: u64,
}

impl<D: StreamData> StreamInput<D> {
    pub fn new(scope: &Scope) -> (Self, Stream<D>) {
        if scope.shape() != Shape::Scalar {
            scope.error("inputs can only be created in the root scope");
        }
        let mut builder = OperatorBuilder::new("Input", scope);
        let (output, stream) = builder.new_output::<D>();
        let mut held = None;
        builder.build(|cap| {
            held = cap;
            || Ok(())
        });
        (StreamInput { output, cap: held, buffer: Vec::new(), epoch: 0 }, stream)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn send(&mut self, record: D) -> Result<(), DataflowError> {
        if self.cap.is_none() {
            return Err(DataflowError::Input("send on a closed input".into()));
        }
        self.buffer.push(record);
        if self.buffer.len() >= 4096 {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), DataflowError> {
        if let Some(cap) = &self.cap {
            if !self.buffer.is_empty() {
                let data = std::mem::take(&mut self.buffer);
                self.output.give_vec(cap, data)?;
            }
        }
        Ok(())
    }

    /// Flushes buffered records and moves the input to `epoch`, promising no further records
    /// at earlier times.
    pub fn advance_to(&mut self, epoch: u64) -> Result<(), DataflowError> {
        if epoch < self.epoch {
            return Err(DataflowError::Input(format!("cannot advance input from epoch {} back to {}", self.epoch, epoch)));
        }
        self.flush()?;
        if let Some(cap) = &mut self.cap {
            cap.downgrade(&Time::Scalar(epoch))?;
        }
        self.epoch = epoch;
        Ok(())
    }

    /// Flushes and releases the input; downstream frontiers may then become empty.
    pub fn close(&mut self) -> Result<(), DataflowError> {
        self.flush()?;
        self.cap = None;
        Ok(())
    }
}

impl<D: StreamData> Drop for StreamInput<D> {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
