//! Machine unlearning by residual feature alignment: LoRA adapters on a
//! frozen MLP are trained so that their residual features vanish on the
//! retained data and shift unlearning samples onto the retained mean.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod lora;
pub mod model;
pub mod numerics;
pub mod unlearn;

pub use error::{Error, Result};
