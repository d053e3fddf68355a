//! Automatic meter reading toolkit.
//!
//! The neural networks themselves live outside this crate. Everything around
//! their forward pass is here: annotated dataset handling, digit-permutation
//! augmentation, YOLO-style grid decoding with NMS and margin expansion, the
//! three counter-recognition decoders (CR-NET box assembly, multi-task argmax,
//! CTC greedy) and the evaluation protocol.
//!
//! Network outputs enter through [`tensorio::InferenceProvider`]. The
//! [`tensorio::OracleProvider`] synthesizes outputs from ground truth so the
//! whole pipeline can be exercised without trained weights.

pub mod augment;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod detect;
pub mod imaging;
pub mod metrics;
pub mod recognize;
pub mod report;
pub mod tensorio;

pub use dataset::{BBox, MeterAnnotation};
pub use detect::{DecodedBox, GridSpec};
pub use recognize::{ReadingResult, ReadingStatus};
pub use tensorio::PredictionTensor;
