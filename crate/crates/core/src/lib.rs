//! Unsupervised domain adaptation by class-regularized hyper-graph matching.
//!
//! A labelled source domain is moved towards an unlabelled target domain.
//! Each round picks exemplars of both domains, matches them with first-,
//! second- and third-order similarity plus a class-wise group lasso, and fits
//! a ridge-regularized linear map from the source exemplars onto their matched
//! targets. A 1-nearest-neighbour classifier trained on the moved source then
//! labels the target.
//!
//! Modules, bottom-up:
//!
//! - [`data`]: feature matrices, labels, CSV IO
//! - [`exemplar`]: affinity propagation with bisection on the preference
//! - [`graph`]: adjacency matrices and the sparse triangle tensor
//! - [`objective`]: cost terms and gradients
//! - [`solver`]: conditional gradient with an ADMM linear oracle
//! - [`pipeline`]: the outer adaptation loop and ridge mapping
//! - [`eval`]: 1-NN scoring and the multi-trial benchmark protocol

pub mod data;
pub mod error;
pub mod eval;
pub mod exemplar;
pub mod graph;
pub mod objective;
pub mod pipeline;
pub mod solver;
pub mod synthetic;

pub use data::{ClassIndexSets, FeatureMatrix, LabeledDataset};
pub use error::{Error, Result};
pub use objective::{MatchingMatrix, ObjectiveContext, ObjectiveWeights};
pub use pipeline::{adapt, AdaptationConfig, AdaptationOutput, LinearMap};
