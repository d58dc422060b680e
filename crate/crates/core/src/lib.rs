//! Learning the stationary queue-length distribution of M/G/1 queues from
//! the arrival rate and the first few service-time moments.
//!
//! The crate covers the whole workflow: random phase-type service
//! distributions ([`sampler`]), exact M/PH/1 targets ([`qbd`]), feature
//! pre-processing and dataset files ([`dataset`]), the feedforward surrogate
//! ([`mlp`]), evaluation metrics ([`metrics`]), a discrete-event simulator
//! used as an independent check ([`simulate`]), and the moment-based
//! prediction workflow for raw service data ([`case_study`]).

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod case_study;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod phtype;
pub mod qbd;
pub mod random;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
pub use phtype::PhaseType;
pub use qbd::{QueueInstance, QueueLengthDistribution};
