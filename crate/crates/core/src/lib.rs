//! Keypoint-level image retrieval that fuses three levels of evidence.
//!
//! Every indexed keypoint is matched on its local descriptor (a Hamming
//! embedding signature), on the regional context of the blocks it falls in,
//! and on the global context of its image. The regional and global contexts
//! are opaque vectors supplied with the data; they are normalized with a
//! signed power law and sketched to 128-bit signatures stored once per image.
//! Postings only carry two short region pointers into that per-image table.
//!
//! The numeric kernels are generic over the scalar type (see [`Scalar`]);
//! the pipeline itself runs in `f64` and stores `f32`, and the aliases below
//! name the concrete instantiations used throughout.

pub mod datastore;
pub mod encode;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod index;
pub mod normalize;
pub mod scalar;
pub mod scoring;
pub mod search;
pub mod simfit;
pub mod sketch;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use datastore::{GroundTruth, ImageRecord, RawKeypoint};
pub use index::{ContextMode, DeepIndex, IndexConfig};
pub use search::{Encoder, QueryConfig, RankedList};
pub use sketch::{BitSignature, HeModel, LshBank};
pub use vocab::Vocabulary;

/// Match parameters in double precision, as used by the search pipeline.
pub type MatchParams = scoring::MatchParams<f64>;
/// Single-precision match parameters.
pub type MatchParamsF32 = scoring::MatchParams<f32>;
pub type MatchScore = scoring::MatchScore<f64>;
pub type SimilarityCurve = simfit::SimilarityCurve<f64>;
pub type SimilarityCurveF32 = simfit::SimilarityCurve<f32>;
pub type SrnConfig = normalize::SrnConfig<f64>;
/// Exact average precision.
pub type ExactRatio = num_rational::Ratio<u64>;

/// Length of a local (SIFT) descriptor.
pub const DESC_DIM: usize = 128;
/// Number of context slots per image: 1 global + 4x4 + 8x8 regional blocks.
pub const CONTEXT_SLOTS: usize = 81;
