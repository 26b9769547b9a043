//! Posterior predictive goodness-of-fit checks for joint models of a Gaussian
//! longitudinal marker and a time-to-event outcome.

pub mod data;
pub mod draws;
pub mod error;
pub mod fitter;
pub mod format;
pub mod gof;
pub mod model;
pub mod quadrature;
pub mod ranef;
pub mod replicate;
pub mod rng;
pub mod scenario;
pub mod spline;
pub mod survival;

pub use data::{load_joint_dataset, split_folds, FoldAssignment, JointDataset, SubjectRecord};
pub use error::{Error, Result};
