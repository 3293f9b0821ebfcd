//! Distillation of independent image mechanisms (shape, texture, background)
//! from black-box teachers into compact class-conditional generators, plus
//! the composition of counterfactual images and the shape-mask ablation
//! study around an invariant classifier.

pub mod datasets;
pub mod error;
pub mod im;
pub mod losses;
pub mod nets;
pub mod teachers;
pub mod train;

pub use error::{Error, Result};
