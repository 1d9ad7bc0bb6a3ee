//! Voxel-wise prediction of tumor growth from two longitudinal imaging
//! visits, evaluated by leave-one-out cross-validation on synthetic
//! reaction-diffusion phantom cohorts.
//!
//! Pipeline, end to end:
//!
//! 1. [`growthsim`] synthesizes three-visit phantom cases (and doubles as
//!    the model-based baseline predictor).
//! 2. [`preprocess`] aligns visits at the tumor center, normalizes SUV /
//!    ICVF / mask channels, and cuts axial multi-channel patches around the
//!    current tumor.
//! 3. [`convnet`] trains a small from-scratch ConvNet on those patches; its
//!    two softmax outputs become the learned "deep" features.
//! 4. [`features`] assembles per-voxel feature vectors (deep features plus
//!    interval, geometry, and clinical descriptors) and standardizes them.
//! 5. [`learner`] trains a linear SVM, ranks features by SVM-RFE with the
//!    time interval as a prior, picks the feature count by held-out
//!    accuracy, and personalizes the decision threshold by volume error.
//! 6. [`eval`] predicts the third-visit tumor inside a growth zone around
//!    the second visit and scores folds with recall, precision, Dice, and
//!    relative volume difference.
//!
//! Everything randomized draws from per-stage RNGs derived in [`seed`], so
//! runs replay byte-for-byte from one master seed.

pub mod error;
pub mod seed;
pub mod volume;
pub mod rawvol;
pub mod cases;
pub mod growthsim;
pub mod preprocess;
pub mod convnet;
pub mod features;
pub mod learner;
pub mod artifact;
pub mod eval;

pub use error::{Error, ErrorClass, Result};
