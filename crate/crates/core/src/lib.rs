//! Blurring diffusion: Gaussian diffusion with a frequency-dependent noise
//! schedule defined in the orthonormal 2-D DCT basis. Blurring a signal and
//! adding noise is, seen in frequency space, an ordinary diagonal Gaussian
//! diffusion whose per-frequency signal scale decays faster for higher
//! frequencies; that view gives exact Markov transitions, an analytic
//! denoising posterior, and the usual eps-parametrization, all of which this
//! crate implements together with a small trainable denoiser, an ancestral
//! sampler, toy datasets, and a verification suite.

pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod spectrum;
pub mod train;
pub mod transform;
pub mod verify;

pub use error::{Error, Result};
