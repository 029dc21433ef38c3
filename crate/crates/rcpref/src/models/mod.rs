//! The two differentiable models: a reward scorer over explicit features and an
//! order-2 autoregressive token policy.

pub mod checkpoint;
pub mod features;
pub mod policy;
pub mod scorer;

pub use features::{FeatureConfig, FeatureMask, FeatureVector};
pub use policy::{PolicyParams, Role, SamplerConfig};
pub use scorer::{Scorer, ScorerArch, ScorerParams};

use crate::error::Result;

/// A flat parameter vector that an optimizer may update.
pub trait Parameters {
    fn values(&self) -> &[f64];
    fn values_mut(&mut self) -> Result<&mut [f64]>;
}
