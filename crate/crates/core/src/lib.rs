pub mod arrange;
pub mod collection;
pub mod data;
pub mod dataflow;
pub mod error;
pub mod lattice;
pub mod operators;
pub mod trace;
