//! Forward/backward kernels behind the graph ops, plus graph-level
//! compositions (attention) that the model zoo shares.

pub mod attention;
pub mod conv;
pub mod matmul;
pub mod norm;
pub mod pool;
pub mod resample;

pub use attention::scaled_dot_attention;
pub use conv::ConvDims;
