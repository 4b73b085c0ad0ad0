//! Model-optimization toolkit for deploying small neural networks on
//! microcontrollers: graph IR, reference executor, arithmetic and structural
//! simplification, pruning-aware training utilities, convolution separation,
//! post-training quantization, and a compact flat serialization format.

pub mod arith;
pub mod corpus;
pub mod graph;
pub mod report;
pub mod interp;
pub mod ops_opt;
pub mod pipeline;
pub mod prune;
pub mod quant;
pub mod quantizer;
pub mod serdes;
pub mod shapes;
pub mod structure;

pub use graph::{DType, Graph, GraphError, Node, NodeId, OpKind, Payload, TensorId};
pub use interp::{ExecError, ExecStats, TensorValue};
pub use quant::{QuantError, QuantParams};
