//! Insertion-based text editing with a two-stream relative-attention
//! transformer.
//!
//! The library estimates the probability of inserting a variable-length
//! token sequence between a left and a right context, and builds editing
//! primitives on top of that estimate: locating missing text, ranking
//! deletions, infilling gaps, and unpaired style transfer.
//!
//! Module layout mirrors the data flow: [`numerics`] (tensors, reverse-mode
//! autodiff, Adam), [`encoding`] (vocabulary, interval sampling, sequence
//! composition), [`positional`] (insertion-aware relative offsets),
//! [`model`] (the transformer itself plus incremental decoding and
//! checkpoints), [`objectives`] (training), [`editor`] (post-editing
//! operations), [`styler`] (the style-transfer loop) and [`evalkit`]
//! (synthetic tasks and metrics).

pub mod editor;
pub mod encoding;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod positional;
pub mod styler;

pub use error::{Error, Result};
