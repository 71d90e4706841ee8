//! Minimal reverse-mode autodiff with dense MLPs, squashed-Gaussian policy
//! heads and Adam. Everything the agents train runs on this.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod mlp;
pub mod param;
pub mod policy;
pub mod scalar;
pub mod tape;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use error::NnError;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, Objective};
pub use mlp::Mlp;
pub use param::{ParamArray, ParamId, ParamStore};
pub use policy::{GaussianPolicy, LogStd, PolicySample};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
