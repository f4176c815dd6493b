//! Music source separation with STFT phase features.
//!
//! The crate covers the whole pipeline: WAV input/output ([`audio`]), the
//! STFT ([`stft`]), derivative phase features ([`phase`]), a numerical check
//! of the Gaussian-window phase/amplitude relation ([`theory`]), synthetic and
//! on-disk corpora ([`dataset`]), small dense networks trained from scratch
//! ([`nn`]), separation with Wiener post-filtering ([`separation`]), SDR
//! scoring ([`eval`]) and the experiment drivers used by the CLI
//! ([`experiment`]).

pub mod audio;
pub mod config;
pub mod dataset;
pub mod dump;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod par;
pub mod phase;
pub mod separation;
pub mod stft;
pub mod theory;

pub use error::{Error, Result};
