//! Walsh-Hadamard domain channel-coding laboratory.
//!
//! The crate provides the building blocks of a short-block-length learned
//! modulation system operating in the Walsh-Hadamard (sequency) domain,
//! together with the conventional machinery needed to evaluate it:
//!
//! * [`wht`] — Hadamard/Walsh matrices and fast transforms,
//! * [`neural`] — a small dense-network engine with exact backpropagation,
//! * [`channel`] — AWGN, SNR conversions and finite-blocklength bounds,
//! * [`autoencoder`] — the end-to-end encoder/channel/decoder pipeline and
//!   its alternating training loop,
//! * [`evaluate`] — Monte-Carlo block-error-rate estimation,
//! * [`polar`] — a CRC-aided polar code with list decoding as baseline,
//! * [`powermodel`] — complexity, power and energy-efficiency accounting.
//!
//! All randomness flows through [`rng::SplitRng`], seeded explicitly, so any
//! experiment is reproducible from its seed.

pub mod autoencoder;
pub mod channel;
pub mod error;
pub mod evaluate;
pub mod fmt;
pub mod matrix;
pub mod neural;
pub mod polar;
pub mod powermodel;
pub mod rng;
pub mod wht;

pub use error::{Error, Result};
