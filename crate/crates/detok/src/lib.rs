//! Weight-only analysis of GPT-2's first attention layer.
//!
//! After folding LayerNorm's affine part into the query/key projections, the
//! first layer's attention scores decompose into six interpretable terms
//! built from the token embeddings, the position embeddings, and the folded
//! bias. Everything here works directly on the weight file; the only forward
//! computation is a minimal first-layer attention row used for empirical
//! verification.
//!
//! Module map:
//! - [`weights`]: weight-file loading and per-head splitting
//! - [`folding`]: LayerNorm folding, wqk/bqk, and the unfolded oracle
//! - [`normstats`]: sigma computations and embedding-variance statistics
//! - [`terms`]: the six score terms and the position-bias preview
//! - [`tokenizer`]: byte-level BPE matching the subject model
//! - [`corpus`]: deterministic unigram/bigram counting
//! - [`analysis`]: AUROC ranking, KL contributions, Spearman, reports
//! - [`svg`]: self-contained chart emitters

pub mod analysis;
pub mod container;
pub mod corpus;
pub mod csvutil;
pub mod error;
pub mod folding;
pub mod normstats;
pub mod numeric;
pub mod svg;
pub mod terms;
pub mod tokenizer;
pub mod weights;

pub use error::{Error, Result};
pub use folding::{FoldedHead, FoldedModel};
pub use normstats::{SigmaCtx, SigmaMode, SigmaTable};
pub use terms::TermKind;
pub use tokenizer::Tokenizer;
pub use weights::{FirstLayerParams, HeadParams, ModelDims};
