//! Binary tensor files and RTTM diarization files.

mod rttm;
mod tensor;

pub use rttm::{format_rttm, parse_rttm, RttmTurn};
pub use tensor::{read_tensor, read_tensor_file, write_complex, write_real, write_tensor_file, TensorData, TENSOR_MAGIC};
