//! Matrix-encoding attention network (MatNet) for combinatorial optimization.
//!
//! The crate is `no_std` + `alloc`. It holds everything that is pure computation:
//!
//! * [`tensor`], [`kernels`], [`tape`], [`params`], [`adam`]: a small dense tensor
//!   kernel with tape-based reverse-mode gradients and the Adam optimizer.
//! * [`encoder`] and [`decoder`]: the dual graph-attentional encoder with
//!   mixed-score attention, and the pointer decoder used for both problems.
//! * [`atsp`] and [`ffsp`]: instance generators, environments, heuristics,
//!   exact oracles, metaheuristics and MIP model builders.
//! * [`lp`]: a linear model representation shared by the MIP exports.
//! * [`pomo`] and [`inference`]: multi-start rollouts, the shared-baseline
//!   REINFORCE loss, and evaluation-time solving with instance augmentation.
//!
//! File formats, threading, the trainer loop and the command line live in the
//! companion `matnet` crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod adam;
pub mod atsp;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod ffsp;
pub mod gradcheck;
pub mod inference;
pub mod kernels;
pub mod lp;
pub mod model;
pub mod params;
pub mod pomo;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::Error;
pub use tensor::{Tensor, TensorError};
