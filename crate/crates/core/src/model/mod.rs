//! The QE transformer: input encoding, encoder stack, head, parameter
//! accounting and checkpoints.

pub mod checkpoint;
mod config;
mod encode;
mod params;
mod qe;

pub use checkpoint::{
    from_bytes, load_checkpoint, load_checkpoint_for, parse_checkpoint, read_manifest, save_checkpoint, to_bytes, Manifest,
    TensorEntry, FORMAT_VERSION,
};
pub use config::{HeadMode, ModelConfig};
pub use encode::{encode_pair, encode_text, Batch, EncodedInput};
pub use params::{count_params, ParamCounts};
pub use qe::{
    param_names, significance, Bound, Embeddings, EncoderLayer, ForwardOptions, ForwardOut, Head, QeModel,
    SectionTimes, TokenMode, EMBEDDING_PARAMS, HEAD_PARAMS, LAYER_PARAMS,
};

#[cfg(test)]
mod tests;
