//! Lookup-table based mixed-precision GEMM: numerics emulation, weight
//! quantization, the table engine, the LMMA instruction model, a hardware
//! design-space explorer, a roofline simulator and a dataflow-graph IR.

pub mod dfg;
pub mod dse;
pub mod error;
pub mod isa;
pub mod lut;
pub mod numerics;
pub mod perfsim;
pub mod quantizer;
pub mod report;
pub mod tensor;
pub mod tensorfile;

pub use error::{Error, Result};
pub use numerics::Dtype;
pub use tensor::Matrix;
