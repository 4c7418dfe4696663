//! Negation-aware contrastive image-text toolkit.

pub mod cli;
pub mod datagen;
pub mod digest;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod jsonl;
pub mod model_clients;
pub mod negref;
pub mod text_negation;

pub use error::{Error, Result};
