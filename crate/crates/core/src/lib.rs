//! Multi-label recognition heads trained on partially annotated data.
//!
//! The crate works on precomputed spatial feature maps (`H × W × d`) and
//! class-embedding banks. It provides three head families (a linear
//! projector and dual embedding banks with text-anchored or free sides),
//! class-wise spatial softmax pooling, an asymmetric loss that ignores
//! unknown labels, a deterministic SGD trainer and mAP evaluation. Two
//! diagnostics sit alongside: a negation scanner for caption corpora and
//! cosine statistics between prompt-embedding banks.

pub mod aggregation;
pub mod cli;
pub mod corpuscan;
pub mod data;
pub mod error;
pub mod heads;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod promptlab;
pub mod train;

pub use error::{Error, Result};
