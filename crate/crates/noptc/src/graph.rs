//! Computation-graph data model, validation and traversal.
//!
//! A [`Graph`] owns tensors, constant payloads and operator nodes. Tensor and
//! node ids are allocated densely at construction and never reused, so
//! rule-fire logs stay unambiguous across a pass pipeline. Loop bodies are
//! self-contained subgraphs referenced by index from a `Loop` node.
//!
//! Attribute conventions used by the operator set:
//! - `strides`: ints `[sh, sw]`
//! - `padding`: `"VALID"` or `"SAME"`
//! - `axis`, `trip_count`, `body`, `q_bits`: int
//! - `perm`, `axes`, `new_shape`, `paddings`, `multiples`, `begin`, `size`,
//!   `ksize`: int lists
//! - `epsilon`: float
//! - `preserve`: bool, honored by every removal pass

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use half::f16;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quant::QuantParams;

pub type TensorId = u32;
pub type NodeId = u32;

/// Sentinel extent marking a shape that validation must infer.
/// Real extents are always >= 1 so `[0]` cannot be a concrete shape.
pub const UNSPECIFIED_SHAPE: &[usize] = &[0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    F16,
    I8,
    I32,
    Bool,
}

impl DType {
    pub fn byte_width(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F16 => 2,
            DType::I8 | DType::Bool => 1,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, DType::F32 | DType::F16)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub id: TensorId,
    pub name: Option<String>,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub quant: Option<QuantParams>,
}

impl TensorSpec {
    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Constant payload, flat in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    F32(Vec<f32>),
    F16(Vec<f16>),
    I8(Vec<i8>),
    I32(Vec<i32>),
    Bool(Vec<bool>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F16(v) => v.len(),
            Payload::I8(v) => v.len(),
            Payload::I32(v) => v.len(),
            Payload::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F16(_) => DType::F16,
            Payload::I8(_) => DType::I8,
            Payload::I32(_) => DType::I32,
            Payload::Bool(_) => DType::Bool,
        }
    }

    pub fn byte_len(&self) -> usize {
        self.len() * self.dtype().byte_width()
    }

    /// Lossy view as f64, used by constant folding and quantization.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match self {
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::F16(v) => v.iter().map(|&x| x.to_f64()).collect(),
            Payload::I8(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::I32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::Bool(v) => v.iter().map(|&x| x as u8 as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstData {
    pub tensor_id: TensorId,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddN,
    Exp,
    Sin,
    Concat,
    Split,
    Transpose,
    Reshape,
    Reverse,
    Shuffle,
    Squeeze,
    Pad,
    Tile,
    Slice,
    Conv2D,
    DepthwiseConv2D,
    FusedConvBnBias,
    MatMul,
    BiasAdd,
    FusedBatchNorm,
    Relu,
    MaxPool,
    AvgPool,
    Softmax,
    Identity,
    NoOp,
    StopGradient,
    FakeQuant,
    Greater,
    LessEqual,
    Not,
    Loop,
    Quantize,
    Dequantize,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "Add",
            OpKind::Sub => "Sub",
            OpKind::Mul => "Mul",
            OpKind::Div => "Div",
            OpKind::Neg => "Neg",
            OpKind::AddN => "AddN",
            OpKind::Exp => "Exp",
            OpKind::Sin => "Sin",
            OpKind::Concat => "Concat",
            OpKind::Split => "Split",
            OpKind::Transpose => "Transpose",
            OpKind::Reshape => "Reshape",
            OpKind::Reverse => "Reverse",
            OpKind::Shuffle => "Shuffle",
            OpKind::Squeeze => "Squeeze",
            OpKind::Pad => "Pad",
            OpKind::Tile => "Tile",
            OpKind::Slice => "Slice",
            OpKind::Conv2D => "Conv2D",
            OpKind::DepthwiseConv2D => "DepthwiseConv2D",
            OpKind::FusedConvBnBias => "FusedConvBnBias",
            OpKind::MatMul => "MatMul",
            OpKind::BiasAdd => "BiasAdd",
            OpKind::FusedBatchNorm => "FusedBatchNorm",
            OpKind::Relu => "Relu",
            OpKind::MaxPool => "MaxPool",
            OpKind::AvgPool => "AvgPool",
            OpKind::Softmax => "Softmax",
            OpKind::Identity => "Identity",
            OpKind::NoOp => "NoOp",
            OpKind::StopGradient => "StopGradient",
            OpKind::FakeQuant => "FakeQuant",
            OpKind::Greater => "Greater",
            OpKind::LessEqual => "LessEqual",
            OpKind::Not => "Not",
            OpKind::Loop => "Loop",
            OpKind::Quantize => "Quantize",
            OpKind::Dequantize => "Dequantize",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Ints(Vec<i64>),
    Bool(bool),
    Str(String),
}

impl AttrValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            AttrValue::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_ints(&self) -> Option<&[i64]> {
        match self {
            AttrValue::Ints(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            AttrValue::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Str(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub op: OpKind,
    pub inputs: Vec<TensorId>,
    pub outputs: Vec<TensorId>,
    pub attrs: BTreeMap<String, AttrValue>,
    pub control_deps: BTreeSet<NodeId>,
}

impl Node {
    pub fn int_attr(&self, key: &str) -> Option<i64> {
        self.attrs.get(key).and_then(|a| a.as_int())
    }

    pub fn ints_attr(&self, key: &str) -> Option<&[i64]> {
        self.attrs.get(key).and_then(|a| a.as_ints())
    }

    pub fn str_attr(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).and_then(|a| a.as_str())
    }

    pub fn float_attr(&self, key: &str) -> Option<f64> {
        self.attrs.get(key).and_then(|a| a.as_float())
    }

    pub fn is_preserved(&self) -> bool {
        self.attrs
            .get("preserve")
            .and_then(|a| a.as_bool())
            .unwrap_or(false)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GraphError {
    #[error("cycle detected involving node {0}")]
    CycleDetected(NodeId),
    #[error("dangling tensor {tensor} referenced by node {node}")]
    DanglingTensor { tensor: TensorId, node: NodeId },
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: NodeId, detail: String },
    #[error("dtype mismatch at node {node}: {detail}")]
    DTypeMismatch { node: NodeId, detail: String },
    #[error("tensor {tensor}: {detail}")]
    BadTensor { tensor: TensorId, detail: String },
    #[error("node {node}: {detail}")]
    BadNode { node: NodeId, detail: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub tensors: BTreeMap<TensorId, TensorSpec>,
    pub constants: BTreeMap<TensorId, ConstData>,
    pub nodes: Vec<Node>,
    pub inputs: Vec<TensorId>,
    pub outputs: Vec<TensorId>,
    pub subgraphs: Vec<Graph>,
    next_tensor_id: TensorId,
    next_node_id: NodeId,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn add_tensor(&mut self, shape: Vec<usize>, dtype: DType) -> TensorId {
        let id = self.next_tensor_id;
        self.next_tensor_id += 1;
        self.tensors.insert(
            id,
            TensorSpec {
                id,
                name: None,
                shape,
                dtype,
                quant: None,
            },
        );
        id
    }

    pub fn add_input(&mut self, shape: Vec<usize>, dtype: DType) -> TensorId {
        let id = self.add_tensor(shape, dtype);
        self.inputs.push(id);
        id
    }

    pub fn add_const(&mut self, shape: Vec<usize>, payload: Payload) -> TensorId {
        let id = self.add_tensor(shape, payload.dtype());
        self.constants.insert(
            id,
            ConstData {
                tensor_id: id,
                payload,
            },
        );
        id
    }

    pub fn scalar_const(&mut self, value: f32) -> TensorId {
        self.add_const(vec![], Payload::F32(vec![value]))
    }

    pub fn add_node(
        &mut self,
        op: OpKind,
        inputs: Vec<TensorId>,
        outputs: Vec<TensorId>,
    ) -> NodeId {
        let id = self.next_node_id;
        self.next_node_id += 1;
        self.nodes.push(Node {
            id,
            op,
            inputs,
            outputs,
            attrs: BTreeMap::new(),
            control_deps: BTreeSet::new(),
        });
        id
    }

    /// Adds a node producing a single fresh output tensor; returns (node, tensor).
    pub fn op(
        &mut self,
        op: OpKind,
        inputs: Vec<TensorId>,
        out_shape: Vec<usize>,
        out_dtype: DType,
    ) -> (NodeId, TensorId) {
        let out = self.add_tensor(out_shape, out_dtype);
        let nid = self.add_node(op, inputs, vec![out]);
        (nid, out)
    }

    pub fn set_attr(&mut self, node: NodeId, key: &str, value: AttrValue) {
        if let Some(n) = self.node_mut(node) {
            n.attrs.insert(key.to_string(), value);
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    pub fn tensor(&self, id: TensorId) -> &TensorSpec {
        &self.tensors[&id]
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut TensorSpec {
        self.tensors.get_mut(&id).expect("tensor id")
    }

    pub fn const_data(&self, id: TensorId) -> Option<&ConstData> {
        self.constants.get(&id)
    }

    pub fn is_const(&self, id: TensorId) -> bool {
        self.constants.contains_key(&id)
    }

    pub fn is_input(&self, id: TensorId) -> bool {
        self.inputs.contains(&id)
    }

    /// Node producing tensor `id`, if any.
    pub fn producer(&self, id: TensorId) -> Option<&Node> {
        self.nodes.iter().find(|n| n.outputs.contains(&id))
    }

    /// Ids of nodes consuming tensor `id` as a data input.
    pub fn consumers(&self, id: TensorId) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.inputs.contains(&id))
            .map(|n| n.id)
            .collect()
    }

    /// Number of data uses of a tensor (node inputs plus graph outputs).
    pub fn use_count(&self, id: TensorId) -> usize {
        let node_uses: usize = self
            .nodes
            .iter()
            .map(|n| n.inputs.iter().filter(|&&t| t == id).count())
            .sum();
        node_uses + self.outputs.iter().filter(|&&t| t == id).count()
    }

    /// Rewires every data use of `old` (node inputs and graph outputs) to `new`.
    pub fn replace_uses(&mut self, old: TensorId, new: TensorId) {
        for n in &mut self.nodes {
            for t in &mut n.inputs {
                if *t == old {
                    *t = new;
                }
            }
        }
        for t in &mut self.outputs {
            if *t == old {
                *t = new;
            }
        }
    }

    pub fn remove_node(&mut self, id: NodeId) {
        self.nodes.retain(|n| n.id != id);
        for n in &mut self.nodes {
            n.control_deps.remove(&id);
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Total operator count |O| including Loop body subgraphs.
    pub fn total_operator_count(&self) -> usize {
        self.nodes.len() + self.subgraphs.iter().map(|g| g.total_operator_count()).sum::<usize>()
    }

    /// Total constant payload bytes, including subgraphs.
    pub fn payload_bytes(&self) -> u64 {
        let own: u64 = self.constants.values().map(|c| c.payload.byte_len() as u64).sum();
        own + self.subgraphs.iter().map(|g| g.payload_bytes()).sum::<u64>()
    }

    pub fn add_subgraph(&mut self, body: Graph) -> usize {
        self.subgraphs.push(body);
        self.subgraphs.len() - 1
    }

    pub(crate) fn id_counters(&self) -> (TensorId, NodeId) {
        (self.next_tensor_id, self.next_node_id)
    }

    pub(crate) fn set_id_counters(&mut self, tensor: TensorId, node: NodeId) {
        self.next_tensor_id = tensor;
        self.next_node_id = node;
    }

    /// Deterministic topological order over data and control edges.
    /// Ties are broken by ascending node id.
    pub fn topo_sort(&self) -> Result<Vec<NodeId>, GraphError> {
        // producer map: tensor -> node position
        let mut producer_of: BTreeMap<TensorId, usize> = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for &o in &n.outputs {
                producer_of.insert(o, i);
            }
        }
        let id_to_pos: BTreeMap<NodeId, usize> =
            self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();

        let mut indegree = vec![0usize; self.nodes.len()];
        let mut succs: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            let mut preds: BTreeSet<usize> = BTreeSet::new();
            for &t in &n.inputs {
                if let Some(&p) = producer_of.get(&t) {
                    preds.insert(p);
                }
            }
            for d in &n.control_deps {
                if let Some(&p) = id_to_pos.get(d) {
                    preds.insert(p);
                }
            }
            preds.remove(&i);
            for p in preds {
                succs[p].push(i);
                indegree[i] += 1;
            }
        }

        let mut heap: BinaryHeap<std::cmp::Reverse<(NodeId, usize)>> = BinaryHeap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if indegree[i] == 0 {
                heap.push(std::cmp::Reverse((n.id, i)));
            }
        }
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(std::cmp::Reverse((id, i))) = heap.pop() {
            order.push(id);
            for &s in &succs[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    heap.push(std::cmp::Reverse((self.nodes[s].id, s)));
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = self
                .nodes
                .iter()
                .enumerate()
                .find(|(i, _)| indegree[*i] > 0)
                .map(|(_, n)| n.id)
                .unwrap_or(0);
            return Err(GraphError::CycleDetected(stuck));
        }
        Ok(order)
    }

    /// Removes tensors and constants used by no node and no graph output.
    /// The node set is unchanged; idempotent.
    pub fn garbage_collect(&mut self) {
        let mut live: BTreeSet<TensorId> = BTreeSet::new();
        live.extend(self.inputs.iter().copied());
        live.extend(self.outputs.iter().copied());
        for n in &self.nodes {
            live.extend(n.inputs.iter().copied());
            live.extend(n.outputs.iter().copied());
        }
        self.tensors.retain(|id, _| live.contains(id));
        self.constants.retain(|id, _| live.contains(id));
        for g in &mut self.subgraphs {
            g.garbage_collect();
        }
    }

    /// Checks every structural, type and shape invariant; fills unspecified
    /// (`[0]`-sentinel) intermediate shapes deterministically.
    pub fn validate(&mut self) -> Result<(), Vec<GraphError>> {
        let mut errs = Vec::new();

        for t in self.tensors.values() {
            if t.shape.len() > 4 {
                errs.push(GraphError::BadTensor {
                    tensor: t.id,
                    detail: format!("rank {} exceeds 4", t.shape.len()),
                });
            }
            if t.shape != UNSPECIFIED_SHAPE && t.shape.contains(&0) {
                errs.push(GraphError::BadTensor {
                    tensor: t.id,
                    detail: "zero extent".into(),
                });
            }
        }

        for c in self.constants.values() {
            let spec = match self.tensors.get(&c.tensor_id) {
                Some(s) => s,
                None => {
                    errs.push(GraphError::BadTensor {
                        tensor: c.tensor_id,
                        detail: "constant without tensor spec".into(),
                    });
                    continue;
                }
            };
            if c.payload.dtype() != spec.dtype {
                errs.push(GraphError::DTypeMismatch {
                    node: 0,
                    detail: format!(
                        "constant tensor {} payload {:?} vs spec {:?}",
                        c.tensor_id,
                        c.payload.dtype(),
                        spec.dtype
                    ),
                });
            }
            if spec.shape != UNSPECIFIED_SHAPE && c.payload.len() != spec.num_elements() {
                errs.push(GraphError::ShapeMismatch {
                    node: 0,
                    detail: format!(
                        "constant tensor {} payload length {} vs shape {:?}",
                        c.tensor_id,
                        c.payload.len(),
                        spec.shape
                    ),
                });
            }
        }

        // Every tensor produced by at most one node; inputs/constants not produced.
        let mut produced: BTreeMap<TensorId, NodeId> = BTreeMap::new();
        for n in &self.nodes {
            for &o in &n.outputs {
                if !self.tensors.contains_key(&o) {
                    errs.push(GraphError::DanglingTensor { tensor: o, node: n.id });
                } else if let Some(prev) = produced.insert(o, n.id) {
                    errs.push(GraphError::BadNode {
                        node: n.id,
                        detail: format!("tensor {o} already produced by node {prev}"),
                    });
                }
            }
            for &i in &n.inputs {
                if !self.tensors.contains_key(&i) {
                    errs.push(GraphError::DanglingTensor { tensor: i, node: n.id });
                }
            }
            match n.op {
                OpKind::NoOp => {
                    if !n.outputs.is_empty() {
                        errs.push(GraphError::BadNode {
                            node: n.id,
                            detail: "NoOp must have zero data outputs".into(),
                        });
                    }
                }
                OpKind::Identity => {
                    if n.inputs.len() != 1 {
                        errs.push(GraphError::BadNode {
                            node: n.id,
                            detail: "Identity must have exactly one input".into(),
                        });
                    }
                }
                OpKind::Loop => {
                    let trip = n.int_attr("trip_count").unwrap_or(-1);
                    if trip < 0 {
                        errs.push(GraphError::BadNode {
                            node: n.id,
                            detail: "Loop requires trip_count >= 0".into(),
                        });
                    }
                    let body = n.int_attr("body").unwrap_or(-1);
                    if body < 0 || body as usize >= self.subgraphs.len() {
                        errs.push(GraphError::BadNode {
                            node: n.id,
                            detail: "Loop body subgraph index out of range".into(),
                        });
                    } else {
                        let b = &self.subgraphs[body as usize];
                        if b.inputs.len() != n.inputs.len() || b.outputs.len() != n.outputs.len() {
                            errs.push(GraphError::BadNode {
                                node: n.id,
                                detail: "Loop body arity mismatch".into(),
                            });
                        }
                    }
                }
                _ => {}
            }
        }

        // Inputs that are neither graph inputs nor constants must be produced.
        for n in &self.nodes {
            for &i in &n.inputs {
                if self.tensors.contains_key(&i)
                    && !self.is_input(i)
                    && !self.is_const(i)
                    && !produced.contains_key(&i)
                {
                    errs.push(GraphError::DanglingTensor { tensor: i, node: n.id });
                }
            }
        }
        for &o in &self.outputs {
            if !self.tensors.contains_key(&o)
                || (!self.is_input(o) && !self.is_const(o) && !produced.contains_key(&o))
            {
                errs.push(GraphError::DanglingTensor { tensor: o, node: 0 });
            }
        }

        if !errs.is_empty() {
            return Err(errs);
        }

        let order = match self.topo_sort() {
            Ok(o) => o,
            Err(e) => return Err(vec![e]),
        };

        // Shape/dtype inference in topological order.
        for id in order {
            let node = self.node(id).cloned().expect("node");
            match crate::shapes::infer_node(self, &node) {
                Ok(results) => {
                    for (out_id, (shape, dtype)) in node.outputs.iter().zip(results) {
                        let spec = self.tensors.get_mut(out_id).expect("tensor");
                        if spec.shape == UNSPECIFIED_SHAPE {
                            spec.shape = shape;
                        } else if spec.shape != shape {
                            errs.push(GraphError::ShapeMismatch {
                                node: id,
                                detail: format!(
                                    "tensor {} declared {:?}, inferred {:?}",
                                    out_id, spec.shape, shape
                                ),
                            });
                        }
                        if spec.dtype != dtype {
                            errs.push(GraphError::DTypeMismatch {
                                node: id,
                                detail: format!(
                                    "tensor {} declared {:?}, inferred {:?}",
                                    out_id, spec.dtype, dtype
                                ),
                            });
                        }
                    }
                }
                Err(e) => errs.push(e),
            }
        }

        // Quantization metadata rules: I8 carries params, floats/bool must not.
        for t in self.tensors.values() {
            match t.dtype {
                DType::I8 => {
                    if t.quant.is_none() {
                        errs.push(GraphError::BadTensor {
                            tensor: t.id,
                            detail: "I8 tensor without QuantParams".into(),
                        });
                    }
                }
                DType::F32 | DType::F16 | DType::Bool => {
                    if t.quant.is_some() {
                        errs.push(GraphError::BadTensor {
                            tensor: t.id,
                            detail: "non-I8 tensor carrying QuantParams".into(),
                        });
                    }
                }
                DType::I32 => {}
            }
        }

        for g in &mut self.subgraphs {
            if let Err(mut sub) = g.validate() {
                errs.append(&mut sub);
            }
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Right-aligned broadcast: extents must match or one of them be 1.
/// This is the only supported spreading rule.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let ea = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let eb = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if ea == eb {
            out[i] = ea;
        } else if ea == 1 {
            out[i] = eb;
        } else if eb == 1 {
            out[i] = ea;
        } else {
            return None;
        }
    }
    Some(out)
}
