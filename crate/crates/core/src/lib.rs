#![cfg_attr(not(feature = "std"), no_std)]

//! Deep Q-learning with experience replay, built around an exact rational
//! learning-step ratio (learning updates per environment step).
//!
//! The crate is IO-free and `no_std`-compatible (allocation required). It
//! provides:
//!
//! - [`nn`]: a small dense Q-network with exact backpropagation and RMSProp.
//! - [`replay`]: a fixed-capacity FIFO replay buffer with uniform sampling.
//! - [`dqn`]: ε-greedy control, TD targets against a target network, and the
//!   learning update.
//! - [`envs`]: a health-gathering gridworld plus an exactly solvable chain
//!   MDP used as a correctness oracle.
//! - [`eval`]: periodic greedy evaluation, EMA smoothing, and the top-10%
//!   final-score reduction.
//! - [`trainer`]: the deterministic training loop and the coupled
//!   learning-rate grid sweep.
//!
//! File formats, CSV emission, and the command line live in the companion
//! `qratio` crate.

#[cfg(not(feature = "std"))]
extern crate alloc;
#[cfg(feature = "std")]
extern crate std as alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("qratio-core requires either the `std` or the `libm` feature");

pub mod dqn;
pub mod envs;
mod error;
pub mod eval;
mod math;
pub mod nn;
pub mod replay;
pub mod trainer;

pub use crate::error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// SplitMix64 finalizer, used to derive independent sub-seeds (one per
/// `stream`) from a run seed.
///
/// Stable by contract: changing this would silently re-seed every run.
pub(crate) fn splitmix64(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add((stream.wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
