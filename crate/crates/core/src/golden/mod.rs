//! Bit-exact integer reference model.

mod dump;
mod ops;
mod tensor;

pub use dump::{read_dump, write_dump};
pub use ops::{batch_norm, linear_accumulate, requantize, requantize_value, run_layer, run_network, run_network_trace};
pub use tensor::{convert_layout, IntTensor};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GoldenError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("layer `{layer}`: overflow of {what}")]
    Overflow { layer: String, what: String },
    #[error("malformed tensor dump: {0}")]
    Dump(String),
}
