//! The two-stream relative-attention transformer.
//!
//! One set of layer weights drives two streams of states: the content
//! stream, where every position encodes its own token, and the query
//! stream, where every position encodes "what goes here" without seeing its
//! own token. Attention scores mix content affinity with a learned function
//! of the effective relative offset, so span slots observe both contexts at
//! offsets that never reveal how long the span will be.
//!
//! [`forward`] holds the differentiable route used for training;
//! [`infer`] holds the plain-tensor route used for scoring and decoding,
//! including cached context states and incremental sessions. The two routes
//! are developed independently and pinned together by equivalence tests.

mod checkpoint;
mod config;
mod forward;
mod infer;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ModelConfig;
pub use forward::{
    classify_log_probs, span_log_probs, DropoutPlan, ParamVars, RowGeometry,
};
pub use infer::{
    attention_scores, classify_style, decode, ContextCache, DecodeMode, DecodeOutcome,
    DecodeSession,
};
pub use params::{LayerParams, Params};
