//! Collective-communication library and benchmark harness built around a
//! 2D-torus all-reduce, with ring and hierarchical (group-leader) baselines,
//! an alpha-beta cost model, and the scalar mathematics of large-mini-batch
//! training (LARS, label smoothing, staged learning-rate/momentum/batch-size
//! schedules).
//!
//! The numeric core is generic over the scalar type through
//! [`element::Element`] (`half::f16`, `f32`, `f64`); concrete aliases for the
//! common instantiations live at the crate root. Collectives run as explicit
//! per-rank schedules over a transport — either a deterministic in-process
//! fabric or TCP — and the cost model's step/volume traces are validated
//! against instrumented executions.

pub mod bench;
pub mod collectives;
pub mod costmodel;
pub mod element;
pub mod largebatch;
pub mod sim;
pub mod topology;
pub mod transport;
pub mod verify;

pub use collectives::{Algorithm, CollectiveError, ReductionPolicy};
pub use element::{Dtype, Element, TensorBuffer};
pub use topology::{partition_chunks, ChunkRange, GridTopology, Orientation, TopologyError};
pub use transport::{Transport, TransportError, WireMessage};

/// Half-precision scalar (the compact wire format).
pub type F16 = half::f16;

/// Learning-rate configuration A at the usual precisions.
pub type LrConfigA32 = largebatch::LrConfigA<f32>;
pub type LrConfigA64 = largebatch::LrConfigA<f64>;

/// Learning-rate configuration B at the usual precisions.
pub type LrConfigB32 = largebatch::LrConfigB<f32>;
pub type LrConfigB64 = largebatch::LrConfigB<f64>;

/// LARS hyperparameters at the usual precisions.
pub type LarsConfig32 = largebatch::LarsConfig<f32>;
pub type LarsConfig64 = largebatch::LarsConfig<f64>;
