//! Response-conditioned preference modelling at desk scale.
//!
//! Synthetic preference corpora with independently controllable quality and
//! length, length-constraint augmentations, tiny reward scorers and order-2
//! policies with analytic gradients, the BT / Rc-BT / DPO / Rc-DPO loss family,
//! and the evaluation protocols that probe length bias.

pub mod constraints;
pub mod corpus;
pub mod error;
pub mod evalsuite;
pub mod experiment;
pub mod io;
pub mod models;
pub mod numeric;
pub mod objectives;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
