pub mod bpe;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod finetune;
pub mod heads;
pub mod mae;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pretrain;
pub mod render;

pub use error::{Error, ErrorKind, Result};
