//! The generator: encoders, transfer-block cascade and decoder.

pub mod attention;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod count;
pub mod decoder;
pub mod encoder;
pub mod generator;
pub mod layers;

pub use attention::{export_attention, QuerySet};
pub use config::{ModelConfig, Variant};
pub use count::{block_counts, count_params, enumerate_params, ParamCount};
pub use generator::{AttentionMap, AttentionRecord, BlockState, GenOutput, Generator};
pub use layers::NormKind;
