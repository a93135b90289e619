//! Two time-scale linear stochastic approximation with constant step sizes.
//!
//! * [`matproc`] — Lyapunov solves, spectra and the block weighting matrix.
//! * [`chainlab`] — Markov-modulated linear systems, mixing times and
//!   assumption checks.
//! * [`tsa`] — the coupled recursion, schedules and trajectory traces.
//! * [`certify`] — finite-time constants, the mean-square bound and its
//!   Monte-Carlo check.
//! * [`adapt`] — the slope-driven adaptive step-size rule.
//! * [`rl`] — Mountain Car, Pendulum, Fourier features and TDC.
//! * [`bench`] — experiment configs, runners and comparisons.

// `!(x > 0.0)` is used on purpose throughout so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod bench;
pub mod certify;
pub mod chainlab;
pub mod error;
pub mod matproc;
pub mod rl;
pub mod tsa;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for `(seed, stream)`; distinct streams never
/// overlap, so independent runs can share a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
