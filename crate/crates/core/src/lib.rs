//! Differentially private data synthesis with a phased generative model.
//!
//! Training runs in two phases. The encoding phase fixes the encoder mean
//! to a private PCA projection ([`pca`]) and fits a mixture-of-Gaussians
//! prior over the projected data with private EM ([`mog`]). The decoding
//! phase trains the encoder variance head and the decoder with DP-SGD over
//! the ELBO ([`neural`], [`trainer`]). Every noisy release is metered by a
//! Rényi-DP accountant ([`privacy`]) and the total cost is certified in the
//! fitted [`pipeline::GenerativeModel`].

pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod mog;
pub mod neural;
pub mod pca;
pub mod persist;
pub mod pipeline;
pub mod privacy;
pub mod rng;
pub mod trainer;

pub use data::{Column, ColumnSchema, DatasetTable, IngestLog};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use mog::{DiagGaussian, MoG};
pub use neural::{DecoderHead, ElboTerms, Mlp, Networks, VarianceMode};
pub use pca::PcaModel;
pub use pipeline::{GenerativeModel, HyperParams};
pub use privacy::{BudgetReport, Mechanism, PrivacySpec, RdpCurve};
pub use trainer::{TrainConfig, TrainLog};
