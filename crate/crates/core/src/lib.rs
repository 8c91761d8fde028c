pub mod augment;
pub mod backbone;
pub mod cli;
pub mod container;
pub mod datamodel;
pub mod discovery;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod objectives;
pub mod saliency;
pub mod synthgen;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
