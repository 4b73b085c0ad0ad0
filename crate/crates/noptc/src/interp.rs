//! Reference executor for float and quantized graphs.
//!
//! This is the semantic oracle every optimization pass is checked against:
//! deterministic, single-threaded, fixed row-major accumulation order. It is
//! deliberately not an inference engine.

use std::collections::BTreeMap;

use half::f16;
use thiserror::Error;

use crate::graph::{DType, Graph, GraphError, Node, NodeId, OpKind, Payload, TensorId};
use crate::quant::{self, QuantParams};
use crate::shapes;

#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I32(Vec<i32>),
    Bool(Vec<bool>),
}

impl Data {
    pub fn len(&self) -> usize {
        match self {
            Data::F32(v) => v.len(),
            Data::I8(v) => v.len(),
            Data::I32(v) => v.len(),
            Data::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A concrete tensor: shape plus flat row-major payload.
/// F16 tensors are carried as F32 data rounded through f16 at op boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    pub shape: Vec<usize>,
    pub data: Data,
}

impl TensorValue {
    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        TensorValue { shape, data: Data::F32(data) }
    }

    pub fn scalar(v: f32) -> Self {
        TensorValue::f32(vec![], vec![v])
    }

    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            Data::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i8(&self) -> Option<&[i8]> {
        match &self.data {
            Data::I8(v) => Some(v),
            _ => None,
        }
    }

    pub fn from_payload(p: &Payload, shape: Vec<usize>) -> Self {
        let data = match p {
            Payload::F32(v) => Data::F32(v.clone()),
            Payload::F16(v) => Data::F32(v.iter().map(|x| x.to_f32()).collect()),
            Payload::I8(v) => Data::I8(v.clone()),
            Payload::I32(v) => Data::I32(v.clone()),
            Payload::Bool(v) => Data::Bool(v.clone()),
        };
        TensorValue { shape, data }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExecError {
    #[error("missing input tensor {0}")]
    MissingInput(TensorId),
    #[error("int32 accumulator overflow at node {0}")]
    AccumulatorOverflow(NodeId),
    #[error("numeric overflow at node {0}")]
    NumericOverflow(NodeId),
    #[error("unsupported op {op} at node {node}")]
    UnsupportedOp { node: NodeId, op: String },
    #[error("node {node}: {detail}")]
    BadOperand { node: NodeId, detail: String },
    #[error("graph invalid: {0}")]
    InvalidGraph(String),
}

impl From<GraphError> for ExecError {
    fn from(e: GraphError) -> Self {
        ExecError::InvalidGraph(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub mults: u64,
    pub adds: u64,
    pub macs: u64,
}

impl OpCounts {
    fn add(&mut self, o: OpCounts) {
        self.mults += o.mults;
        self.adds += o.adds;
        self.macs += o.macs;
    }
}

/// Multiplication/addition/MAC accounting, per node and total, plus the
/// per-output-element multiplication metric summed over convolution-path
/// nodes (Conv2D C*A*B, depthwise A*B, pointwise C, MatMul inner extent).
#[derive(Debug, Clone, Default)]
pub struct ExecStats {
    pub per_node: BTreeMap<NodeId, OpCounts>,
    pub total: OpCounts,
    pub conv_mults_per_elem: u64,
}

impl ExecStats {
    fn record(&mut self, node: NodeId, counts: OpCounts, conv_per_elem: u64) {
        self.per_node.entry(node).or_default().add(counts);
        self.total.add(counts);
        self.conv_mults_per_elem += conv_per_elem;
    }
}

fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Maps a flat index in `out_shape` to the flat index of the right-aligned
/// broadcast operand with shape `in_shape`.
fn broadcast_index(out_shape: &[usize], in_shape: &[usize], flat: usize) -> usize {
    let out_strides = strides_for(out_shape);
    let in_strides = strides_for(in_shape);
    let offset = out_shape.len() - in_shape.len();
    let mut idx = 0;
    for (i, (&os, &oe)) in out_strides.iter().zip(out_shape).enumerate() {
        if i < offset {
            continue;
        }
        let coord = (flat / os) % oe;
        let j = i - offset;
        if in_shape[j] != 1 {
            idx += coord * in_strides[j];
        }
    }
    idx
}

fn f32s<'a>(v: &'a TensorValue, node: &Node) -> Result<&'a [f32], ExecError> {
    v.as_f32().ok_or_else(|| ExecError::BadOperand {
        node: node.id,
        detail: "expected float operand".into(),
    })
}

/// Static operation cost for a node given concrete shapes.
/// Loop bodies are accounted by the executor per iteration and by
/// [`count_multiplications`] statically.
fn node_counts(g: &Graph, node: &Node) -> (OpCounts, u64) {
    let out_elems = |i: usize| -> u64 {
        node.outputs
            .get(i)
            .map(|t| g.tensor(*t).num_elements() as u64)
            .unwrap_or(0)
    };
    let mut c = OpCounts::default();
    let mut conv_per_elem = 0u64;
    match node.op {
        OpKind::Conv2D | OpKind::FusedConvBnBias => {
            if let Some(&w) = node.inputs.get(1) {
                let ws = &g.tensor(w).shape;
                if ws.len() == 4 {
                    let per = (ws[0] * ws[1] * ws[2]) as u64;
                    let n = out_elems(0);
                    c.mults = n * per;
                    c.macs = n * per;
                    c.adds = n * per.saturating_sub(1);
                    if node.op == OpKind::FusedConvBnBias {
                        c.adds += n;
                    }
                    conv_per_elem = per;
                }
            }
        }
        OpKind::DepthwiseConv2D => {
            if let Some(&w) = node.inputs.get(1) {
                let ws = &g.tensor(w).shape;
                if ws.len() == 4 {
                    let per = (ws[0] * ws[1]) as u64;
                    let n = out_elems(0);
                    c.mults = n * per;
                    c.macs = n * per;
                    c.adds = n * per.saturating_sub(1);
                    conv_per_elem = per;
                }
            }
        }
        OpKind::MatMul => {
            if let Some(&a) = node.inputs.first() {
                let k = *g.tensor(a).shape.get(1).unwrap_or(&1) as u64;
                let n = out_elems(0);
                c.mults = n * k;
                c.macs = n * k;
                c.adds = n * k.saturating_sub(1);
                conv_per_elem = k;
            }
        }
        OpKind::Mul | OpKind::Div => c.mults = out_elems(0),
        OpKind::Add | OpKind::Sub | OpKind::BiasAdd => c.adds = out_elems(0),
        OpKind::AddN => c.adds = out_elems(0) * (node.inputs.len().saturating_sub(1) as u64),
        OpKind::FusedBatchNorm => {
            c.mults = out_elems(0);
            c.adds = out_elems(0);
        }
        OpKind::AvgPool => {
            if let Some(ks) = node.ints_attr("ksize") {
                let win = ks.iter().product::<i64>() as u64;
                c.adds = out_elems(0) * win.saturating_sub(1);
            }
        }
        _ => {}
    }
    (c, conv_per_elem)
}

/// Multiplication/MAC accounting without running the graph.
/// Loop bodies are weighted by their trip counts.
pub fn count_multiplications(graph: &Graph) -> Result<ExecStats, ExecError> {
    let mut g = graph.clone();
    g.validate().map_err(|e| ExecError::InvalidGraph(format!("{:?}", e)))?;
    let mut stats = ExecStats::default();
    count_into(&g, 1, &mut stats)?;
    Ok(stats)
}

fn count_into(g: &Graph, weight: u64, stats: &mut ExecStats) -> Result<(), ExecError> {
    for node in &g.nodes {
        if node.op == OpKind::Loop {
            let trip = node.int_attr("trip_count").unwrap_or(0).max(0) as u64;
            let body = node.int_attr("body").unwrap_or(0) as usize;
            let mut body_stats = ExecStats::default();
            count_into(&g.subgraphs[body], weight * trip, &mut body_stats)?;
            stats.record(node.id, body_stats.total, body_stats.conv_mults_per_elem);
        } else {
            let (mut c, per) = node_counts(g, node);
            c.mults *= weight;
            c.adds *= weight;
            c.macs *= weight;
            stats.record(node.id, c, per * weight);
        }
    }
    Ok(())
}

/// Exact Eq.-style symmetric quantized dot product:
/// psi = 2^(-2(Q-1)) * sum(W_i * X_i), accumulated in checked int32.
pub fn psi_symmetric(w: &[i8], x: &[i8], q: u8) -> Result<f64, ExecError> {
    let mut acc: i32 = 0;
    for (&wi, &xi) in w.iter().zip(x) {
        let prod = (wi as i32) * (xi as i32);
        acc = acc
            .checked_add(prod)
            .ok_or(ExecError::AccumulatorOverflow(0))?;
    }
    Ok(acc as f64 * quant::pow2(-2 * (q as i32 - 1)))
}

#[derive(Debug)]
pub struct RunResult {
    pub outputs: BTreeMap<TensorId, TensorValue>,
    pub stats: ExecStats,
    /// Observed (min, max) per float tensor, for activation calibration.
    pub ranges: BTreeMap<TensorId, (f64, f64)>,
}

/// Runs a validated graph on the given inputs (keyed by tensor id).
pub fn run(
    graph: &Graph,
    inputs: &BTreeMap<TensorId, TensorValue>,
) -> Result<RunResult, ExecError> {
    let mut g = graph.clone();
    g.validate()
        .map_err(|e| ExecError::InvalidGraph(format!("{:?}", e)))?;
    let mut exec = Executor { record_ranges: false, stats: ExecStats::default(), ranges: BTreeMap::new() };
    let outputs = exec.run_graph(&g, inputs)?;
    Ok(RunResult { outputs, stats: exec.stats, ranges: exec.ranges })
}

/// Like [`run`] but records per-tensor float ranges for calibration.
pub fn run_recording(
    graph: &Graph,
    inputs: &BTreeMap<TensorId, TensorValue>,
) -> Result<RunResult, ExecError> {
    let mut g = graph.clone();
    g.validate()
        .map_err(|e| ExecError::InvalidGraph(format!("{:?}", e)))?;
    let mut exec = Executor { record_ranges: true, stats: ExecStats::default(), ranges: BTreeMap::new() };
    let outputs = exec.run_graph(&g, inputs)?;
    Ok(RunResult { outputs, stats: exec.stats, ranges: exec.ranges })
}

/// Quantized execution: every Conv2D/MatMul must have int8 operands with
/// QuantParams; multiply-accumulate runs in checked 32-bit integers.
pub fn run_quantized(
    graph: &Graph,
    inputs: &BTreeMap<TensorId, TensorValue>,
) -> Result<RunResult, ExecError> {
    for node in &graph.nodes {
        if matches!(node.op, OpKind::Conv2D | OpKind::MatMul) {
            for &t in node.inputs.iter().take(2) {
                let spec = graph.tensor(t);
                if spec.dtype != DType::I8 || spec.quant.is_none() {
                    return Err(ExecError::BadOperand {
                        node: node.id,
                        detail: format!("quantized run requires I8 operands, tensor {t}"),
                    });
                }
            }
        }
    }
    run(graph, inputs)
}

struct Executor {
    record_ranges: bool,
    stats: ExecStats,
    ranges: BTreeMap<TensorId, (f64, f64)>,
}

impl Executor {
    fn run_graph(
        &mut self,
        g: &Graph,
        inputs: &BTreeMap<TensorId, TensorValue>,
    ) -> Result<BTreeMap<TensorId, TensorValue>, ExecError> {
        let mut values: BTreeMap<TensorId, TensorValue> = BTreeMap::new();
        for c in g.constants.values() {
            values.insert(
                c.tensor_id,
                TensorValue::from_payload(&c.payload, g.tensor(c.tensor_id).shape.clone()),
            );
        }
        for &t in &g.inputs {
            let v = inputs.get(&t).ok_or(ExecError::MissingInput(t))?;
            let mut v = v.clone();
            if g.tensor(t).dtype == DType::F16 {
                round_f16(&mut v);
            }
            values.insert(t, v);
        }
        for id in g.topo_sort()? {
            let node = g.node(id).expect("node").clone();
            self.eval_node(g, &node, &mut values)?;
        }
        let mut outputs = BTreeMap::new();
        for &t in &g.outputs {
            let v = values.get(&t).ok_or(ExecError::MissingInput(t))?;
            outputs.insert(t, v.clone());
        }
        Ok(outputs)
    }

    fn eval_node(
        &mut self,
        g: &Graph,
        node: &Node,
        values: &mut BTreeMap<TensorId, TensorValue>,
    ) -> Result<(), ExecError> {
        let get = |t: &TensorId| -> Result<TensorValue, ExecError> {
            values.get(t).cloned().ok_or(ExecError::MissingInput(*t))
        };
        let ins: Vec<TensorValue> = node.inputs.iter().map(|t| get(t)).collect::<Result<_, _>>()?;
        let (counts, per_elem) = node_counts(g, node);
        if node.op != OpKind::Loop {
            self.stats.record(node.id, counts, per_elem);
        }

        let outs: Vec<TensorValue> = match node.op {
            OpKind::NoOp => vec![],
            OpKind::Identity | OpKind::StopGradient => vec![ins[0].clone()],
            OpKind::Neg => vec![unary_f32(&ins[0], node, |x| -x)?],
            OpKind::Exp => vec![unary_f32(&ins[0], node, f32::exp)?],
            OpKind::Sin => vec![unary_f32(&ins[0], node, f32::sin)?],
            OpKind::Relu => vec![self.relu(g, node, &ins[0])?],
            OpKind::Softmax => vec![softmax(&ins[0], node)?],
            OpKind::Add => vec![binary(&ins[0], &ins[1], node, |a, b| a + b)?],
            OpKind::Sub => vec![binary(&ins[0], &ins[1], node, |a, b| a - b)?],
            OpKind::Mul => vec![binary(&ins[0], &ins[1], node, |a, b| a * b)?],
            OpKind::Div => vec![binary(&ins[0], &ins[1], node, |a, b| a / b)?],
            OpKind::AddN => vec![addn(&ins, node)?],
            OpKind::Greater => vec![compare(&ins[0], &ins[1], node, |a, b| a > b)?],
            OpKind::LessEqual => vec![compare(&ins[0], &ins[1], node, |a, b| a <= b)?],
            OpKind::Not => vec![not(&ins[0], node)?],
            OpKind::Concat => vec![concat(&ins, node)?],
            OpKind::Split => split(&ins[0], node)?,
            OpKind::Transpose => vec![transpose(&ins[0], node)?],
            OpKind::Reshape => {
                let shape = g.tensor(node.outputs[0]).shape.clone();
                let mut v = ins[0].clone();
                v.shape = shape;
                vec![v]
            }
            OpKind::Reverse => vec![reverse(&ins[0], node)?],
            OpKind::Shuffle => vec![shuffle(&ins[0], node)?],
            OpKind::Squeeze => {
                let shape = g.tensor(node.outputs[0]).shape.clone();
                let mut v = ins[0].clone();
                v.shape = shape;
                vec![v]
            }
            OpKind::Pad => vec![pad(&ins[0], node)?],
            OpKind::Tile => vec![tile(&ins[0], node)?],
            OpKind::Slice => vec![slice(&ins[0], node)?],
            OpKind::Conv2D => vec![self.conv2d(g, node, &ins[0], &ins[1], None)?],
            OpKind::FusedConvBnBias => {
                vec![self.conv2d(g, node, &ins[0], &ins[1], Some(&ins[2]))?]
            }
            OpKind::DepthwiseConv2D => vec![self.depthwise(g, node, &ins[0], &ins[1])?],
            OpKind::MatMul => vec![self.matmul(g, node, &ins[0], &ins[1])?],
            OpKind::BiasAdd => vec![self.bias_add(g, node, &ins[0], &ins[1])?],
            OpKind::FusedBatchNorm => vec![batch_norm(node, &ins)?],
            OpKind::MaxPool => vec![self.pool(g, node, &ins[0], true)?],
            OpKind::AvgPool => vec![self.pool(g, node, &ins[0], false)?],
            OpKind::FakeQuant => vec![fake_quant(&ins[0], node)?],
            OpKind::Quantize => vec![quantize_op(g, node, &ins[0])?],
            OpKind::Dequantize => vec![dequantize_op(g, node, &ins[0])?],
            OpKind::Loop => self.run_loop(g, node, &ins)?,
        };

        for (out_id, mut v) in node.outputs.iter().zip(outs) {
            let spec = g.tensor(*out_id);
            if spec.dtype == DType::F16 {
                round_f16(&mut v);
            }
            if self.record_ranges {
                if let Data::F32(xs) = &v.data {
                    let e = self
                        .ranges
                        .entry(*out_id)
                        .or_insert((f64::INFINITY, f64::NEG_INFINITY));
                    for &x in xs {
                        e.0 = e.0.min(x as f64);
                        e.1 = e.1.max(x as f64);
                    }
                }
            }
            values.insert(*out_id, v);
        }
        Ok(())
    }

    fn run_loop(
        &mut self,
        g: &Graph,
        node: &Node,
        ins: &[TensorValue],
    ) -> Result<Vec<TensorValue>, ExecError> {
        let trip = node.int_attr("trip_count").unwrap_or(0).max(0) as usize;
        let body_idx = node.int_attr("body").unwrap_or(0) as usize;
        let body = g
            .subgraphs
            .get(body_idx)
            .ok_or_else(|| ExecError::BadOperand {
                node: node.id,
                detail: "loop body missing".into(),
            })?;
        let mut carried: Vec<TensorValue> = ins.to_vec();
        for _ in 0..trip {
            let mut body_inputs = BTreeMap::new();
            for (&t, v) in body.inputs.iter().zip(&carried) {
                body_inputs.insert(t, v.clone());
            }
            let before = self.stats.total;
            let before_conv = self.stats.conv_mults_per_elem;
            let mut body_vals = self.run_graph(body, &body_inputs)?;
            // fold the body's cost into the Loop node entry
            let mut delta = self.stats.total;
            delta.mults -= before.mults;
            delta.adds -= before.adds;
            delta.macs -= before.macs;
            self.stats.per_node.entry(node.id).or_default().add(delta);
            let _ = before_conv;
            carried = body
                .outputs
                .iter()
                .map(|t| body_vals.remove(t).ok_or(ExecError::MissingInput(*t)))
                .collect::<Result<_, _>>()?;
        }
        Ok(carried)
    }

    fn relu(&self, g: &Graph, node: &Node, x: &TensorValue) -> Result<TensorValue, ExecError> {
        match &x.data {
            Data::F32(v) => Ok(TensorValue {
                shape: x.shape.clone(),
                data: Data::F32(v.iter().map(|&a| a.max(0.0)).collect()),
            }),
            Data::I8(v) => {
                let zp = tensor_params(g, node.inputs[0])
                    .map(|p| p.zero_points[0] as i8)
                    .unwrap_or(0);
                Ok(TensorValue {
                    shape: x.shape.clone(),
                    data: Data::I8(v.iter().map(|&c| c.max(zp)).collect()),
                })
            }
            Data::I32(v) => Ok(TensorValue {
                shape: x.shape.clone(),
                data: Data::I32(v.iter().map(|&a| a.max(0)).collect()),
            }),
            Data::Bool(_) => Err(ExecError::BadOperand {
                node: node.id,
                detail: "Relu on BOOL".into(),
            }),
        }
    }

    fn conv2d(
        &mut self,
        g: &Graph,
        node: &Node,
        x: &TensorValue,
        w: &TensorValue,
        bias: Option<&TensorValue>,
    ) -> Result<TensorValue, ExecError> {
        let (sh, sw, same) = shapes::conv_attrs(node);
        let xs = &x.shape;
        let ws = &w.shape;
        let (n, h, wi, cin) = (xs[0], xs[1], xs[2], xs[3]);
        let (ka, kb, _kc, f) = (ws[0], ws[1], ws[2], ws[3]);
        let oh = shapes::conv_out_extent(h, ka, sh, same).unwrap();
        let ow = shapes::conv_out_extent(wi, kb, sw, same).unwrap();
        let (pad_top, pad_left) = conv_padding(h, wi, ka, kb, sh, sw, same);

        let out_spec = g.tensor(node.outputs[0]);
        let bias_f32: Option<&[f32]> = match bias {
            Some(b) => Some(f32s(b, node)?),
            None => None,
        };

        match (&x.data, &w.data) {
            (Data::F32(xv), Data::F32(wv)) => {
                let mut out = vec![0f32; n * oh * ow * f];
                for b in 0..n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for oc in 0..f {
                                let mut acc = 0f32;
                                for ky in 0..ka {
                                    for kx in 0..kb {
                                        let iy = oy as i64 * sh as i64 + ky as i64 - pad_top;
                                        let ix = ox as i64 * sw as i64 + kx as i64 - pad_left;
                                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wi as i64 {
                                            continue;
                                        }
                                        for ic in 0..cin {
                                            let xi = ((b * h + iy as usize) * wi + ix as usize)
                                                * cin
                                                + ic;
                                            let wiidx = ((ky * kb + kx) * cin + ic) * f + oc;
                                            acc += xv[xi] * wv[wiidx];
                                        }
                                    }
                                }
                                if let Some(bv) = bias_f32 {
                                    acc += bv[oc];
                                }
                                out[((b * oh + oy) * ow + ox) * f + oc] = acc;
                            }
                        }
                    }
                }
                Ok(TensorValue::f32(vec![n, oh, ow, f], out))
            }
            (Data::I8(xv), Data::I8(wv)) => {
                let px = tensor_params(g, node.inputs[0]).ok_or_else(|| ExecError::BadOperand {
                    node: node.id,
                    detail: "quantized conv input lacks params".into(),
                })?;
                let pw = tensor_params(g, node.inputs[1]).ok_or_else(|| ExecError::BadOperand {
                    node: node.id,
                    detail: "quantized conv filter lacks params".into(),
                })?;
                let zx = px.zero_points[0];
                let sx = px.scales[0];
                let mut reals = vec![0f64; n * oh * ow * f];
                for b in 0..n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for oc in 0..f {
                                let (zw, swc) = channel_params(pw, oc);
                                let mut acc: i32 = 0;
                                for ky in 0..ka {
                                    for kx in 0..kb {
                                        let iy = oy as i64 * sh as i64 + ky as i64 - pad_top;
                                        let ix = ox as i64 * sw as i64 + kx as i64 - pad_left;
                                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wi as i64 {
                                            continue;
                                        }
                                        for ic in 0..cin {
                                            let xi = ((b * h + iy as usize) * wi + ix as usize)
                                                * cin
                                                + ic;
                                            let wiidx = ((ky * kb + kx) * cin + ic) * f + oc;
                                            let prod = (wv[wiidx] as i32 - zw)
                                                * (xv[xi] as i32 - zx);
                                            acc = acc.checked_add(prod).ok_or(
                                                ExecError::AccumulatorOverflow(node.id),
                                            )?;
                                        }
                                    }
                                }
                                let mut real = acc as f64 * swc * sx;
                                if let Some(bv) = bias_f32 {
                                    real += bv[oc] as f64;
                                }
                                reals[((b * oh + oy) * ow + ox) * f + oc] = real;
                            }
                        }
                    }
                }
                emit_real(out_spec.dtype, out_spec.quant.as_ref(), vec![n, oh, ow, f], reals)
            }
            _ => Err(ExecError::BadOperand {
                node: node.id,
                detail: "conv operand dtypes must both be F32 or both I8".into(),
            }),
        }
    }

    fn depthwise(
        &mut self,
        g: &Graph,
        node: &Node,
        x: &TensorValue,
        w: &TensorValue,
    ) -> Result<TensorValue, ExecError> {
        let (sh, sw, same) = shapes::conv_attrs(node);
        let xs = &x.shape;
        let ws = &w.shape;
        let (n, h, wi, cin) = (xs[0], xs[1], xs[2], xs[3]);
        let (ka, kb, _c, m) = (ws[0], ws[1], ws[2], ws[3]);
        let oh = shapes::conv_out_extent(h, ka, sh, same).unwrap();
        let ow = shapes::conv_out_extent(wi, kb, sw, same).unwrap();
        let (pad_top, pad_left) = conv_padding(h, wi, ka, kb, sh, sw, same);
        let cout = cin * m;
        let out_spec = g.tensor(node.outputs[0]);

        match (&x.data, &w.data) {
            (Data::F32(xv), Data::F32(wv)) => {
                let mut out = vec![0f32; n * oh * ow * cout];
                for b in 0..n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ic in 0..cin {
                                for im in 0..m {
                                    let mut acc = 0f32;
                                    for ky in 0..ka {
                                        for kx in 0..kb {
                                            let iy = oy as i64 * sh as i64 + ky as i64 - pad_top;
                                            let ix = ox as i64 * sw as i64 + kx as i64 - pad_left;
                                            if iy < 0
                                                || ix < 0
                                                || iy >= h as i64
                                                || ix >= wi as i64
                                            {
                                                continue;
                                            }
                                            let xi = ((b * h + iy as usize) * wi + ix as usize)
                                                * cin
                                                + ic;
                                            let wiidx = ((ky * kb + kx) * cin + ic) * m + im;
                                            acc += xv[xi] * wv[wiidx];
                                        }
                                    }
                                    out[((b * oh + oy) * ow + ox) * cout + ic * m + im] = acc;
                                }
                            }
                        }
                    }
                }
                Ok(TensorValue::f32(vec![n, oh, ow, cout], out))
            }
            (Data::I8(xv), Data::I8(wv)) => {
                let px = tensor_params(g, node.inputs[0]).ok_or_else(|| ExecError::BadOperand {
                    node: node.id,
                    detail: "quantized depthwise input lacks params".into(),
                })?;
                let pw = tensor_params(g, node.inputs[1]).ok_or_else(|| ExecError::BadOperand {
                    node: node.id,
                    detail: "quantized depthwise filter lacks params".into(),
                })?;
                let zx = px.zero_points[0];
                let sx = px.scales[0];
                let mut reals = vec![0f64; n * oh * ow * cout];
                for b in 0..n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ic in 0..cin {
                                for im in 0..m {
                                    let (zw, swc) = channel_params(pw, ic * m + im);
                                    let mut acc: i32 = 0;
                                    for ky in 0..ka {
                                        for kx in 0..kb {
                                            let iy = oy as i64 * sh as i64 + ky as i64 - pad_top;
                                            let ix = ox as i64 * sw as i64 + kx as i64 - pad_left;
                                            if iy < 0
                                                || ix < 0
                                                || iy >= h as i64
                                                || ix >= wi as i64
                                            {
                                                continue;
                                            }
                                            let xi = ((b * h + iy as usize) * wi + ix as usize)
                                                * cin
                                                + ic;
                                            let wiidx = ((ky * kb + kx) * cin + ic) * m + im;
                                            let prod = (wv[wiidx] as i32 - zw)
                                                * (xv[xi] as i32 - zx);
                                            acc = acc.checked_add(prod).ok_or(
                                                ExecError::AccumulatorOverflow(node.id),
                                            )?;
                                        }
                                    }
                                    reals[((b * oh + oy) * ow + ox) * cout + ic * m + im] =
                                        acc as f64 * swc * sx;
                                }
                            }
                        }
                    }
                }
                emit_real(out_spec.dtype, out_spec.quant.as_ref(), vec![n, oh, ow, cout], reals)
            }
            _ => Err(ExecError::BadOperand {
                node: node.id,
                detail: "depthwise operand dtypes must match".into(),
            }),
        }
    }

    fn matmul(
        &mut self,
        g: &Graph,
        node: &Node,
        a: &TensorValue,
        b: &TensorValue,
    ) -> Result<TensorValue, ExecError> {
        let (m, k) = (a.shape[0], a.shape[1]);
        let n = b.shape[1];
        let out_spec = g.tensor(node.outputs[0]);
        match (&a.data, &b.data) {
            (Data::F32(av), Data::F32(bv)) => {
                let mut out = vec![0f32; m * n];
                for i in 0..m {
                    for j in 0..n {
                        let mut acc = 0f32;
                        for p in 0..k {
                            acc += av[i * k + p] * bv[p * n + j];
                        }
                        out[i * n + j] = acc;
                    }
                }
                Ok(TensorValue::f32(vec![m, n], out))
            }
            (Data::I8(av), Data::I8(bv)) => {
                let pa = tensor_params(g, node.inputs[0]).ok_or_else(|| ExecError::BadOperand {
                    node: node.id,
                    detail: "quantized matmul lhs lacks params".into(),
                })?;
                let pb = tensor_params(g, node.inputs[1]).ok_or_else(|| ExecError::BadOperand {
                    node: node.id,
                    detail: "quantized matmul rhs lacks params".into(),
                })?;
                let za = pa.zero_points[0];
                let sa = pa.scales[0];
                let mut reals = vec![0f64; m * n];
                for i in 0..m {
                    for j in 0..n {
                        let (zb, sbc) = channel_params(pb, j);
                        let mut acc: i32 = 0;
                        for p in 0..k {
                            let prod =
                                (av[i * k + p] as i32 - za) * (bv[p * n + j] as i32 - zb);
                            acc = acc
                                .checked_add(prod)
                                .ok_or(ExecError::AccumulatorOverflow(node.id))?;
                        }
                        reals[i * n + j] = acc as f64 * sa * sbc;
                    }
                }
                emit_real(out_spec.dtype, out_spec.quant.as_ref(), vec![m, n], reals)
            }
            _ => Err(ExecError::BadOperand {
                node: node.id,
                detail: "matmul operand dtypes must match".into(),
            }),
        }
    }

    fn bias_add(
        &mut self,
        g: &Graph,
        node: &Node,
        x: &TensorValue,
        bias: &TensorValue,
    ) -> Result<TensorValue, ExecError> {
        let c = *x.shape.last().unwrap();
        let bv = f32s(bias, node)?;
        match &x.data {
            Data::F32(xv) => {
                let out: Vec<f32> = xv
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v + bv[i % c])
                    .collect();
                Ok(TensorValue { shape: x.shape.clone(), data: Data::F32(out) })
            }
            Data::I8(xv) => {
                let px = tensor_params(g, node.inputs[0]).ok_or_else(|| ExecError::BadOperand {
                    node: node.id,
                    detail: "quantized bias-add input lacks params".into(),
                })?;
                let out_spec = g.tensor(node.outputs[0]);
                let reals: Vec<f64> = xv
                    .iter()
                    .enumerate()
                    .map(|(i, &code)| quant::decode_value(code, px, 0) + bv[i % c] as f64)
                    .collect();
                emit_real(out_spec.dtype, out_spec.quant.as_ref(), x.shape.clone(), reals)
            }
            _ => Err(ExecError::BadOperand {
                node: node.id,
                detail: "BiasAdd on non-numeric input".into(),
            }),
        }
    }

    fn pool(
        &mut self,
        g: &Graph,
        node: &Node,
        x: &TensorValue,
        is_max: bool,
    ) -> Result<TensorValue, ExecError> {
        let ks = node.ints_attr("ksize").unwrap_or(&[1, 1]);
        let (kh, kw) = (ks[0] as usize, ks[1] as usize);
        let (sh, sw, same) = shapes::conv_attrs(node);
        let xs = &x.shape;
        let (n, h, wi, c) = (xs[0], xs[1], xs[2], xs[3]);
        let oh = shapes::conv_out_extent(h, kh, sh, same).unwrap();
        let ow = shapes::conv_out_extent(wi, kw, sw, same).unwrap();
        let (pad_top, pad_left) = conv_padding(h, wi, kh, kw, sh, sw, same);
        let _ = g;

        let window = |b: usize, oy: usize, ox: usize, ch: usize, f: &mut dyn FnMut(usize)| {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = oy as i64 * sh as i64 + ky as i64 - pad_top;
                    let ix = ox as i64 * sw as i64 + kx as i64 - pad_left;
                    if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wi as i64 {
                        continue;
                    }
                    f(((b * h + iy as usize) * wi + ix as usize) * c + ch);
                }
            }
        };

        match &x.data {
            Data::F32(xv) => {
                let mut out = vec![0f32; n * oh * ow * c];
                for b in 0..n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ch in 0..c {
                                let mut acc = if is_max { f32::NEG_INFINITY } else { 0.0 };
                                let mut cnt = 0usize;
                                window(b, oy, ox, ch, &mut |i| {
                                    if is_max {
                                        acc = acc.max(xv[i]);
                                    } else {
                                        acc += xv[i];
                                    }
                                    cnt += 1;
                                });
                                out[((b * oh + oy) * ow + ox) * c + ch] =
                                    if is_max { acc } else { acc / cnt as f32 };
                            }
                        }
                    }
                }
                Ok(TensorValue::f32(vec![n, oh, ow, c], out))
            }
            Data::I8(xv) => {
                let mut out = vec![0i8; n * oh * ow * c];
                for b in 0..n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ch in 0..c {
                                let mut mx = i8::MIN;
                                let mut sum = 0i64;
                                let mut cnt = 0i64;
                                window(b, oy, ox, ch, &mut |i| {
                                    mx = mx.max(xv[i]);
                                    sum += xv[i] as i64;
                                    cnt += 1;
                                });
                                out[((b * oh + oy) * ow + ox) * c + ch] = if is_max {
                                    mx
                                } else {
                                    quant::round_half_away(sum as f64 / cnt as f64) as i8
                                };
                            }
                        }
                    }
                }
                Ok(TensorValue { shape: vec![n, oh, ow, c], data: Data::I8(out) })
            }
            _ => Err(ExecError::BadOperand {
                node: node.id,
                detail: "pooling on non-numeric input".into(),
            }),
        }
    }
}

fn conv_padding(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    same: bool,
) -> (i64, i64) {
    if !same {
        return (0, 0);
    }
    let oh = h.div_ceil(sh);
    let ow = w.div_ceil(sw);
    let pad_h = ((oh - 1) * sh + kh).saturating_sub(h) as i64;
    let pad_w = ((ow - 1) * sw + kw).saturating_sub(w) as i64;
    (pad_h / 2, pad_w / 2)
}

fn tensor_params(g: &Graph, t: TensorId) -> Option<&QuantParams> {
    g.tensor(t).quant.as_ref()
}

fn channel_params(p: &QuantParams, channel: usize) -> (i32, f64) {
    match p.granularity {
        quant::Granularity::PerLayer => (p.zero_points[0], p.scales[0]),
        quant::Granularity::PerChannel(_) => {
            let c = channel.min(p.scales.len() - 1);
            (p.zero_points[c], p.scales[c])
        }
    }
}

/// Emits real-valued results either as F32 or requantized to the output
/// tensor's int8 params.
fn emit_real(
    dtype: DType,
    params: Option<&QuantParams>,
    shape: Vec<usize>,
    reals: Vec<f64>,
) -> Result<TensorValue, ExecError> {
    match (dtype, params) {
        (DType::I8, Some(p)) => {
            let codes = reals
                .iter()
                .map(|&r| quant::encode_value(r, p, 0))
                .collect();
            Ok(TensorValue { shape, data: Data::I8(codes) })
        }
        _ => Ok(TensorValue {
            shape,
            data: Data::F32(reals.iter().map(|&r| r as f32).collect()),
        }),
    }
}

fn round_f16(v: &mut TensorValue) {
    if let Data::F32(xs) = &mut v.data {
        for x in xs.iter_mut() {
            *x = f16::from_f32(*x).to_f32();
        }
    }
}

fn unary_f32(x: &TensorValue, node: &Node, f: impl Fn(f32) -> f32) -> Result<TensorValue, ExecError> {
    let xs = f32s(x, node)?;
    Ok(TensorValue {
        shape: x.shape.clone(),
        data: Data::F32(xs.iter().map(|&a| f(a)).collect()),
    })
}

fn binary(
    a: &TensorValue,
    b: &TensorValue,
    node: &Node,
    f: impl Fn(f64, f64) -> f64,
) -> Result<TensorValue, ExecError> {
    let out_shape = crate::graph::broadcast_shapes(&a.shape, &b.shape).ok_or_else(|| {
        ExecError::BadOperand { node: node.id, detail: "broadcast failure".into() }
    })?;
    let n: usize = out_shape.iter().product();
    match (&a.data, &b.data) {
        (Data::F32(av), Data::F32(bv)) => {
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let ia = broadcast_index(&out_shape, &a.shape, i);
                let ib = broadcast_index(&out_shape, &b.shape, i);
                out.push(f(av[ia] as f64, bv[ib] as f64) as f32);
            }
            Ok(TensorValue { shape: out_shape, data: Data::F32(out) })
        }
        (Data::I32(av), Data::I32(bv)) => {
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let ia = broadcast_index(&out_shape, &a.shape, i);
                let ib = broadcast_index(&out_shape, &b.shape, i);
                let r = f(av[ia] as f64, bv[ib] as f64);
                if !r.is_finite() || r.abs() > i32::MAX as f64 {
                    return Err(ExecError::NumericOverflow(node.id));
                }
                out.push(r as i32);
            }
            Ok(TensorValue { shape: out_shape, data: Data::I32(out) })
        }
        _ => Err(ExecError::BadOperand {
            node: node.id,
            detail: "binary op operand dtypes must match (F32 or I32)".into(),
        }),
    }
}

fn addn(ins: &[TensorValue], node: &Node) -> Result<TensorValue, ExecError> {
    let mut out_shape = ins[0].shape.clone();
    for v in &ins[1..] {
        out_shape = crate::graph::broadcast_shapes(&out_shape, &v.shape).ok_or_else(|| {
            ExecError::BadOperand { node: node.id, detail: "broadcast failure".into() }
        })?;
    }
    let n: usize = out_shape.iter().product();
    let mut out = vec![0f32; n];
    for v in ins {
        let xs = f32s(v, node)?;
        for (i, o) in out.iter_mut().enumerate() {
            *o += xs[broadcast_index(&out_shape, &v.shape, i)];
        }
    }
    Ok(TensorValue { shape: out_shape, data: Data::F32(out) })
}

fn compare(
    a: &TensorValue,
    b: &TensorValue,
    node: &Node,
    f: impl Fn(f64, f64) -> bool,
) -> Result<TensorValue, ExecError> {
    let out_shape = crate::graph::broadcast_shapes(&a.shape, &b.shape).ok_or_else(|| {
        ExecError::BadOperand { node: node.id, detail: "broadcast failure".into() }
    })?;
    let n: usize = out_shape.iter().product();
    let val = |d: &Data, i: usize| -> Result<f64, ExecError> {
        match d {
            Data::F32(v) => Ok(v[i] as f64),
            Data::I32(v) => Ok(v[i] as f64),
            Data::I8(v) => Ok(v[i] as f64),
            Data::Bool(_) => Err(ExecError::BadOperand {
                node: node.id,
                detail: "comparison on BOOL".into(),
            }),
        }
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let ia = broadcast_index(&out_shape, &a.shape, i);
        let ib = broadcast_index(&out_shape, &b.shape, i);
        out.push(f(val(&a.data, ia)?, val(&b.data, ib)?));
    }
    Ok(TensorValue { shape: out_shape, data: Data::Bool(out) })
}

fn not(x: &TensorValue, node: &Node) -> Result<TensorValue, ExecError> {
    match &x.data {
        Data::Bool(v) => Ok(TensorValue {
            shape: x.shape.clone(),
            data: Data::Bool(v.iter().map(|&b| !b).collect()),
        }),
        _ => Err(ExecError::BadOperand { node: node.id, detail: "Not on non-BOOL".into() }),
    }
}

fn softmax(x: &TensorValue, node: &Node) -> Result<TensorValue, ExecError> {
    let xs = f32s(x, node)?;
    let c = *x.shape.last().unwrap_or(&1);
    let rows = xs.len() / c;
    let mut out = vec![0f32; xs.len()];
    for r in 0..rows {
        let row = &xs[r * c..(r + 1) * c];
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = row.iter().map(|&v| (v - m).exp()).collect();
        let sum: f32 = exps.iter().sum();
        for (i, e) in exps.iter().enumerate() {
            out[r * c + i] = e / sum;
        }
    }
    Ok(TensorValue { shape: x.shape.clone(), data: Data::F32(out) })
}

/// Gathers input elements by index; `None` entries become the type's zero.
fn gather(x: &Data, idx: &[Option<usize>]) -> Data {
    match x {
        Data::F32(v) => Data::F32(idx.iter().map(|i| i.map_or(0.0, |i| v[i])).collect()),
        Data::I8(v) => Data::I8(idx.iter().map(|i| i.map_or(0, |i| v[i])).collect()),
        Data::I32(v) => Data::I32(idx.iter().map(|i| i.map_or(0, |i| v[i])).collect()),
        Data::Bool(v) => Data::Bool(idx.iter().map(|i| i.map_or(false, |i| v[i])).collect()),
    }
}

fn coords_of(flat: usize, shape: &[usize]) -> Vec<usize> {
    let strides = strides_for(shape);
    shape
        .iter()
        .enumerate()
        .map(|(i, &e)| (flat / strides[i]) % e)
        .collect()
}

fn flat_of(coords: &[usize], shape: &[usize]) -> usize {
    let strides = strides_for(shape);
    coords.iter().zip(&strides).map(|(c, s)| c * s).sum()
}

fn concat(ins: &[TensorValue], node: &Node) -> Result<TensorValue, ExecError> {
    let axis = node.int_attr("axis").unwrap_or(0) as usize;
    let mut out_shape = ins[0].shape.clone();
    out_shape[axis] = ins.iter().map(|v| v.shape[axis]).sum();
    let n: usize = out_shape.iter().product();
    let mut idx = Vec::with_capacity(n);
    let mut which = Vec::with_capacity(n);
    for flat in 0..n {
        let mut coords = coords_of(flat, &out_shape);
        let mut a = coords[axis];
        let mut src = 0;
        while a >= ins[src].shape[axis] {
            a -= ins[src].shape[axis];
            src += 1;
        }
        coords[axis] = a;
        which.push(src);
        idx.push(flat_of(&coords, &ins[src].shape));
    }
    // gather piecewise per source
    let mut out = match &ins[0].data {
        Data::F32(_) => Data::F32(vec![0.0; n]),
        Data::I8(_) => Data::I8(vec![0; n]),
        Data::I32(_) => Data::I32(vec![0; n]),
        Data::Bool(_) => Data::Bool(vec![false; n]),
    };
    for flat in 0..n {
        let src = &ins[which[flat]].data;
        match (&mut out, src) {
            (Data::F32(o), Data::F32(s)) => o[flat] = s[idx[flat]],
            (Data::I8(o), Data::I8(s)) => o[flat] = s[idx[flat]],
            (Data::I32(o), Data::I32(s)) => o[flat] = s[idx[flat]],
            (Data::Bool(o), Data::Bool(s)) => o[flat] = s[idx[flat]],
            _ => {
                return Err(ExecError::BadOperand {
                    node: node.id,
                    detail: "Concat operand dtypes differ".into(),
                })
            }
        }
    }
    Ok(TensorValue { shape: out_shape, data: out })
}

fn split(x: &TensorValue, node: &Node) -> Result<Vec<TensorValue>, ExecError> {
    let axis = node.int_attr("axis").unwrap_or(0) as usize;
    let parts = node.outputs.len();
    let mut piece_shape = x.shape.clone();
    piece_shape[axis] /= parts;
    let n: usize = piece_shape.iter().product();
    let mut outs = Vec::with_capacity(parts);
    for p in 0..parts {
        let idx: Vec<Option<usize>> = (0..n)
            .map(|flat| {
                let mut coords = coords_of(flat, &piece_shape);
                coords[axis] += p * piece_shape[axis];
                Some(flat_of(&coords, &x.shape))
            })
            .collect();
        outs.push(TensorValue { shape: piece_shape.clone(), data: gather(&x.data, &idx) });
    }
    Ok(outs)
}

fn transpose(x: &TensorValue, node: &Node) -> Result<TensorValue, ExecError> {
    let perm: Vec<usize> = node
        .ints_attr("perm")
        .map(|v| v.iter().map(|&p| p as usize).collect())
        .unwrap_or_else(|| (0..x.shape.len()).rev().collect());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape[p]).collect();
    let n: usize = out_shape.iter().product();
    let idx: Vec<Option<usize>> = (0..n)
        .map(|flat| {
            let oc = coords_of(flat, &out_shape);
            let mut ic = vec![0; x.shape.len()];
            for (i, &p) in perm.iter().enumerate() {
                ic[p] = oc[i];
            }
            Some(flat_of(&ic, &x.shape))
        })
        .collect();
    Ok(TensorValue { shape: out_shape, data: gather(&x.data, &idx) })
}

fn reverse(x: &TensorValue, node: &Node) -> Result<TensorValue, ExecError> {
    let axes: Vec<usize> = node
        .ints_attr("axes")
        .map(|v| v.iter().map(|&a| a as usize).collect())
        .unwrap_or_else(|| vec![0]);
    let n = x.num_elements();
    let idx: Vec<Option<usize>> = (0..n)
        .map(|flat| {
            let mut c = coords_of(flat, &x.shape);
            for &a in &axes {
                c[a] = x.shape[a] - 1 - c[a];
            }
            Some(flat_of(&c, &x.shape))
        })
        .collect();
    Ok(TensorValue { shape: x.shape.clone(), data: gather(&x.data, &idx) })
}

fn shuffle(x: &TensorValue, node: &Node) -> Result<TensorValue, ExecError> {
    let perm = node.ints_attr("perm").ok_or_else(|| ExecError::BadOperand {
        node: node.id,
        detail: "Shuffle requires perm".into(),
    })?;
    let lead = *x.shape.first().unwrap_or(&1);
    let inner: usize = x.shape.iter().skip(1).product();
    let idx: Vec<Option<usize>> = (0..lead * inner)
        .map(|flat| {
            let row = flat / inner;
            let col = flat % inner;
            Some(perm[row] as usize * inner + col)
        })
        .collect();
    Ok(TensorValue { shape: x.shape.clone(), data: gather(&x.data, &idx) })
}

fn pad(x: &TensorValue, node: &Node) -> Result<TensorValue, ExecError> {
    let p = node.ints_attr("paddings").ok_or_else(|| ExecError::BadOperand {
        node: node.id,
        detail: "Pad requires paddings".into(),
    })?;
    let out_shape: Vec<usize> = x
        .shape
        .iter()
        .enumerate()
        .map(|(i, &e)| e + p[2 * i] as usize + p[2 * i + 1] as usize)
        .collect();
    let n: usize = out_shape.iter().product();
    let idx: Vec<Option<usize>> = (0..n)
        .map(|flat| {
            let oc = coords_of(flat, &out_shape);
            let mut ic = vec![0; x.shape.len()];
            for i in 0..x.shape.len() {
                let v = oc[i] as i64 - p[2 * i];
                if v < 0 || v >= x.shape[i] as i64 {
                    return None;
                }
                ic[i] = v as usize;
            }
            Some(flat_of(&ic, &x.shape))
        })
        .collect();
    Ok(TensorValue { shape: out_shape, data: gather(&x.data, &idx) })
}

fn tile(x: &TensorValue, node: &Node) -> Result<TensorValue, ExecError> {
    let m = node.ints_attr("multiples").ok_or_else(|| ExecError::BadOperand {
        node: node.id,
        detail: "Tile requires multiples".into(),
    })?;
    let out_shape: Vec<usize> = x.shape.iter().zip(m).map(|(&e, &k)| e * k as usize).collect();
    let n: usize = out_shape.iter().product();
    let idx: Vec<Option<usize>> = (0..n)
        .map(|flat| {
            let oc = coords_of(flat, &out_shape);
            let ic: Vec<usize> = oc.iter().zip(&x.shape).map(|(&c, &e)| c % e).collect();
            Some(flat_of(&ic, &x.shape))
        })
        .collect();
    Ok(TensorValue { shape: out_shape, data: gather(&x.data, &idx) })
}

fn slice(x: &TensorValue, node: &Node) -> Result<TensorValue, ExecError> {
    let begin = node.ints_attr("begin").ok_or_else(|| ExecError::BadOperand {
        node: node.id,
        detail: "Slice requires begin".into(),
    })?;
    let size = node.ints_attr("size").ok_or_else(|| ExecError::BadOperand {
        node: node.id,
        detail: "Slice requires size".into(),
    })?;
    let out_shape: Vec<usize> = x
        .shape
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            if size[i] == -1 {
                e - begin[i] as usize
            } else {
                size[i] as usize
            }
        })
        .collect();
    let n: usize = out_shape.iter().product();
    let idx: Vec<Option<usize>> = (0..n)
        .map(|flat| {
            let oc = coords_of(flat, &out_shape);
            let ic: Vec<usize> = oc
                .iter()
                .enumerate()
                .map(|(i, &c)| c + begin[i] as usize)
                .collect();
            Some(flat_of(&ic, &x.shape))
        })
        .collect();
    Ok(TensorValue { shape: out_shape, data: gather(&x.data, &idx) })
}

fn batch_norm(node: &Node, ins: &[TensorValue]) -> Result<TensorValue, ExecError> {
    let x = f32s(&ins[0], node)?;
    let gamma = f32s(&ins[1], node)?;
    let beta = f32s(&ins[2], node)?;
    let mean = f32s(&ins[3], node)?;
    let var = f32s(&ins[4], node)?;
    let eps = node.float_attr("epsilon").unwrap_or(1e-3) as f32;
    let c = *ins[0].shape.last().unwrap();
    let out: Vec<f32> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = i % c;
            gamma[ch] * (v - mean[ch]) / (var[ch] + eps).sqrt() + beta[ch]
        })
        .collect();
    Ok(TensorValue { shape: ins[0].shape.clone(), data: Data::F32(out) })
}

/// Forward semantics of a fake-quantization node: dequantize(quantize(x)).
/// With `min`/`max` attrs the affine 8-bit grid over that range is used,
/// otherwise the symmetric Q-bit grid.
fn fake_quant(x: &TensorValue, node: &Node) -> Result<TensorValue, ExecError> {
    let xs = f32s(x, node)?;
    let q = node.int_attr("q_bits").unwrap_or(8) as u8;
    let out: Vec<f32> = match (node.float_attr("min"), node.float_attr("max")) {
        (Some(lo), Some(hi)) if hi > lo => {
            let levels = (1u32 << q) as f64 - 1.0;
            let scale = (hi - lo) / levels;
            xs.iter()
                .map(|&v| {
                    let clamped = (v as f64).clamp(lo, hi);
                    (quant::round_half_away((clamped - lo) / scale) * scale + lo) as f32
                })
                .collect()
        }
        _ => xs
            .iter()
            .map(|&v| quant::quantize_symmetric_one(v as f64, q).1 as f32)
            .collect(),
    };
    Ok(TensorValue { shape: x.shape.clone(), data: Data::F32(out) })
}

fn quantize_op(g: &Graph, node: &Node, x: &TensorValue) -> Result<TensorValue, ExecError> {
    let params = tensor_params(g, node.outputs[0]).ok_or_else(|| ExecError::BadOperand {
        node: node.id,
        detail: "Quantize output lacks params".into(),
    })?;
    let xs = f32s(x, node)?;
    let codes: Vec<i8> = xs
        .iter()
        .map(|&v| quant::encode_value(v as f64, params, 0))
        .collect();
    Ok(TensorValue { shape: x.shape.clone(), data: Data::I8(codes) })
}

fn dequantize_op(g: &Graph, node: &Node, x: &TensorValue) -> Result<TensorValue, ExecError> {
    let params = tensor_params(g, node.inputs[0]).ok_or_else(|| ExecError::BadOperand {
        node: node.id,
        detail: "Dequantize input lacks params".into(),
    })?;
    let codes = x.as_i8().ok_or_else(|| ExecError::BadOperand {
        node: node.id,
        detail: "Dequantize requires I8 input".into(),
    })?;
    let spec = g.tensor(node.inputs[0]);
    let vals = quant::dequantize(codes, params, &spec.shape)
        .map_err(|e| ExecError::BadOperand { node: node.id, detail: e.to_string() })?;
    Ok(TensorValue {
        shape: x.shape.clone(),
        data: Data::F32(vals.iter().map(|&v| v as f32).collect()),
    })
}

/// Argmax over the trailing axis of the first output, handy for classifier
/// agreement checks.
pub fn argmax_last_axis(v: &TensorValue) -> Vec<usize> {
    let xs = match &v.data {
        Data::F32(x) => x.clone(),
        Data::I8(x) => x.iter().map(|&a| a as f32).collect(),
        Data::I32(x) => x.iter().map(|&a| a as f32).collect(),
        Data::Bool(x) => x.iter().map(|&a| a as u8 as f32).collect(),
    };
    let c = *v.shape.last().unwrap_or(&1);
    xs.chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect()
}
