//! University enquiry chatbot engine: corpus handling, intent and entity
//! models, dialogue management, actions and evaluation.

pub mod actions;
pub mod corpus;
pub mod dialogue;
pub mod entity;
pub mod error;
pub mod evalkit;
pub mod intent;
pub mod modelio;
pub mod neuralcore;
pub mod textproc;

pub use error::{Error, Result};
