//! Building blocks for a found-data spoofing pipeline: signal processing,
//! corpus preparation, a small reverse-mode autodiff substrate, the four
//! generative models (waveform enhancer, frame-level voice converter,
//! autoregressive acoustic model, WaveNet vocoder) and a CQCC-GMM
//! spoofing countermeasure.

pub mod corpus;
pub mod countermeasure;
pub mod enhancer;
mod error;
pub mod nn;
pub mod signal;
pub mod toy;
pub mod tts;
pub mod vc;
pub mod vocoder;

pub use error::{Error, Result};
