//! GPT decoder stack with the multi-scale operator between blocks.

pub mod checkpoint;
mod config;
mod gpt;

pub use checkpoint::Checkpoint;
pub use config::{HeadKind, ModelConfig};
pub use gpt::{ForwardPass, GptModel, Param, ParamCount, ParamGroup, TokenBatch};
