//! Core algorithms for predicting skin-lesion elevation from RGB images and
//! fusing elevation labels into diagnosis classifiers.
//!
//! Everything in this crate is pure computation over in-memory data and
//! only needs `alloc`. File formats, image decoding, checkpoints and the
//! command line live in the companion `lesionelev` crate.
//!
//! Layout:
//!
//! * [`data`], [`split`], [`weights`], [`preprocess`]: records, label
//!   schemas, stratified splits, median-frequency class weights and the
//!   resize / dihedral augmentation / normalization pipeline.
//! * [`tensor`], [`nn`], [`backbone`], [`model`], [`gradcam`]: a small
//!   reverse-mode CNN engine, the backbone zoo, the fusion head and
//!   gradient-weighted class activation maps.
//! * [`loss`], [`optim`], [`train`]: weighted cross-entropy, SGD with
//!   step decay, and the epoch loop with AUROC-based model selection.
//! * [`labels`]: soft and discrete elevation pseudo-labels.
//! * [`metrics`], [`stats`]: classification metrics, bootstrap intervals,
//!   McNemar's mid-p test, Cohen's d and run aggregation.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod backbone;
pub mod data;
mod error;
pub mod gradcam;
pub mod labels;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod preprocess;
pub mod rng;
pub mod split;
pub mod stats;
pub mod tensor;
pub mod train;
pub mod weights;

pub use backbone::{BackboneFamily, BackboneSpec};
pub use data::{DatasetManifest, DiagnosisLabel, ElevationLabel, ImageRecord, LabelSchema, Modality};
pub use error::{Error, Result};
pub use model::{FusionHead, FusionMode, ModelBundle, Role};
pub use tensor::Tensor;
