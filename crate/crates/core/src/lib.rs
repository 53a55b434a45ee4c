//! Identification of short-duration action sequences in multichannel time
//! series.
//!
//! The crate provides
//! - sequence types and the frame-labeling / segment / sequence conversions
//!   ([`sequence`]),
//! - edit-distance metrics, alignment-based detection rates and bootstrap
//!   intervals ([`metrics`]),
//! - a small reverse-mode differentiation engine ([`numerics`]),
//! - a multi-stage dilated temporal-convolution segmenter with smoothing and
//!   boundary refinement ([`segmenter`]),
//! - an encoder-decoder model that predicts action sequences directly, with
//!   scheduled sampling, greedy and ensemble decoding and windowed inference
//!   ([`seq2seq`]),
//! - a semi-Markov synthetic data generator ([`datagen`]),
//! - the experiment harness and on-disk formats ([`harness`], [`io`]).

pub mod datagen;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod segmenter;
pub mod seq2seq;
pub mod sequence;
pub mod training;

pub use error::{Error, Result};
