//! Core algorithms for detecting cheating rings from keystroke and mouse
//! behavior.
//!
//! Everything in this crate is `no_std` and only needs an allocator. There is
//! no IO, no clock and no global RNG: every function that needs randomness
//! takes an explicit seed, and every function that needs "now" takes a
//! timestamp argument. The `ringwatch` crate layers file formats, the HTTP
//! service and the CLI on top.
//!
//! Module map:
//!
//! * [`session`]: event types, session records and validation.
//! * [`features`]: fixed-length keystroke (112) and mouse (68) feature vectors
//!   and their normalization statistics.
//! * [`stats`] / [`baseline`]: Welch t-tests over digraph latencies and the
//!   t-test session similarity.
//! * [`nn`], [`loss`], [`train`]: the embedding network, the squared-L2
//!   n-pair loss and the training loop.
//! * [`sampling`]: user-level splits, positive/negative pairs, training batches.
//! * [`eval`]: AUROC, FPR-targeted threshold calibration, evaluation and the
//!   per-group TNR audit.
//! * [`synth`]: the seeded synthetic corpus and cheating-ring generator.
//! * [`methods`]: the four scoring methods behind one interface.
//! * [`detect`]: the gallery, flagging, related-session ranking and review queue.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod baseline;
pub mod detect;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod loss;
pub mod methods;
pub mod nn;
pub mod sampling;
pub mod session;
pub mod stats;
pub mod synth;
pub mod train;

mod math;

pub use error::{Error, Result};
