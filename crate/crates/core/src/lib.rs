//! Anti-causal transportable and invariant representation learning.
//!
//! The crate covers the full experimental loop: seeded domain generators
//! ([`datagen`]), the representation/head model ([`model`]), the
//! conditional-independence regularizer ([`causal_reg`]), the training
//! objectives and baselines ([`objectives`]), evaluation and few-shot
//! adaptation ([`eval`]), and the experiment driver ([`experiment`],
//! [`report`]).

pub mod autodiff;
pub mod causal_reg;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod objectives;
pub mod report;

pub use autodiff::Tensor;
pub use error::{Error, Result};
