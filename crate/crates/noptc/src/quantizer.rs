//! Whole-graph quantization modes: weights-only int8, float16, and the two
//! int8 execution modes (with and without float fallback).
//!
//! Int8 execution quantizes filter constants per-channel, activations
//! per-layer asymmetric from calibration ranges, and stitches domains
//! together with Quantize/Dequantize boundary nodes. Biases always stay
//! float32. Graph inputs and outputs remain float for comparability with
//! the source model.

use std::collections::{BTreeMap, BTreeSet};

use half::f16;

use crate::graph::{DType, Graph, NodeId, OpKind, Payload, TensorId};
use crate::interp::{self, TensorValue};
use crate::quant::{self, QuantError};
use crate::report::PassReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphQuantMode {
    WeightsOnly,
    Int8FloatFallback,
    Int8Only,
    Float16,
}

impl GraphQuantMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "weights-only" => Some(Self::WeightsOnly),
            "int8-fallback" => Some(Self::Int8FloatFallback),
            "int8-only" => Some(Self::Int8Only),
            "float16" => Some(Self::Float16),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuantizeOptions {
    pub mode: GraphQuantMode,
    /// Ops that run float in fallback mode (beyond everything that simply has
    /// no int8 kernel).
    pub fallback_ops: BTreeSet<OpKind>,
    /// INT8_ONLY: a trailing Softmax may stay float instead of erroring.
    pub allow_terminal_softmax_float: bool,
}

impl QuantizeOptions {
    pub fn new(mode: GraphQuantMode) -> Self {
        QuantizeOptions {
            mode,
            fallback_ops: [OpKind::Exp, OpKind::Sin, OpKind::Softmax, OpKind::Div]
                .into_iter()
                .collect(),
            allow_terminal_softmax_float: true,
        }
    }
}

/// Ops with an int8 execution path in the interpreter.
fn int8_capable(op: OpKind) -> bool {
    matches!(
        op,
        OpKind::Conv2D
            | OpKind::DepthwiseConv2D
            | OpKind::FusedConvBnBias
            | OpKind::MatMul
            | OpKind::BiasAdd
            | OpKind::Relu
            | OpKind::MaxPool
            | OpKind::AvgPool
            | OpKind::Reshape
            | OpKind::Squeeze
            | OpKind::Identity
    )
}

/// Ops whose int8 output reuses the input's quantization params (codes pass
/// through or are max/mean of input codes).
fn propagates_params(op: OpKind) -> bool {
    matches!(
        op,
        OpKind::Relu
            | OpKind::MaxPool
            | OpKind::AvgPool
            | OpKind::Reshape
            | OpKind::Squeeze
            | OpKind::Identity
    )
}

pub fn quantize_graph(
    graph: &Graph,
    opts: &QuantizeOptions,
    calibration: &[BTreeMap<TensorId, TensorValue>],
) -> Result<(Graph, PassReport), QuantError> {
    let mut g = graph.clone();
    let _ = g.validate();
    let mut report = PassReport::begin(mode_name(opts.mode), &g);
    match opts.mode {
        GraphQuantMode::Float16 => to_float16(&mut g),
        GraphQuantMode::WeightsOnly => quantize_weights_only(&mut g)?,
        GraphQuantMode::Int8FloatFallback | GraphQuantMode::Int8Only => {
            quantize_int8(&mut g, opts, calibration)?
        }
    }
    let _ = g.validate();
    report.finish(&g);
    Ok((g, report))
}

fn mode_name(mode: GraphQuantMode) -> &'static str {
    match mode {
        GraphQuantMode::WeightsOnly => "quantize_weights_only",
        GraphQuantMode::Int8FloatFallback => "quantize_int8_fallback",
        GraphQuantMode::Int8Only => "quantize_int8_only",
        GraphQuantMode::Float16 => "quantize_float16",
    }
}

// ---------------------------------------------------------------------------
// float16
// ---------------------------------------------------------------------------

fn to_float16(g: &mut Graph) {
    for spec in g.tensors.values_mut() {
        if spec.dtype == DType::F32 {
            spec.dtype = DType::F16;
        }
    }
    for c in g.constants.values_mut() {
        if let Payload::F32(v) = &c.payload {
            c.payload = Payload::F16(v.iter().map(|&x| f16::from_f32(x)).collect());
        }
    }
    for sub in &mut g.subgraphs {
        to_float16(sub);
    }
}

// ---------------------------------------------------------------------------
// weights-only
// ---------------------------------------------------------------------------

/// Tensor ids of constant filter operands of conv/matmul nodes, with the
/// consuming (node, input slot).
fn weight_uses(g: &Graph) -> Vec<(NodeId, usize, TensorId)> {
    let mut out = Vec::new();
    for n in &g.nodes {
        let slot = match n.op {
            OpKind::Conv2D
            | OpKind::DepthwiseConv2D
            | OpKind::FusedConvBnBias
            | OpKind::MatMul => 1,
            _ => continue,
        };
        if let Some(&t) = n.inputs.get(slot) {
            if g.is_const(t) && g.tensor(t).dtype == DType::F32 {
                out.push((n.id, slot, t));
            }
        }
    }
    out
}

/// Constants feeding conv/matmul filters become per-layer asymmetric int8,
/// with an explicit Dequantize so compute stays float.
fn quantize_weights_only(g: &mut Graph) -> Result<(), QuantError> {
    let uses = weight_uses(g);
    let mut deq_of: BTreeMap<TensorId, TensorId> = BTreeMap::new();
    for (node_id, slot, t) in uses {
        let deq = if let Some(&d) = deq_of.get(&t) {
            d
        } else {
            let vals = g.const_data(t).expect("const").payload.to_f64_vec();
            for (i, v) in vals.iter().enumerate() {
                if !v.is_finite() {
                    return Err(QuantError::NonFiniteWeight(i));
                }
            }
            let (lo, hi) = min_max(&vals);
            let params = quant::asymmetric_params_for_range(lo, hi);
            let codes: Vec<i8> = vals.iter().map(|&v| quant::encode_value(v, &params, 0)).collect();
            let spec = g.tensor_mut(t);
            spec.dtype = DType::I8;
            spec.quant = Some(params);
            g.constants.get_mut(&t).expect("const").payload = Payload::I8(codes);
            let shape = g.tensor(t).shape.clone();
            let (_, deq) = g.op(OpKind::Dequantize, vec![t], shape, DType::F32);
            deq_of.insert(t, deq);
            deq
        };
        g.node_mut(node_id).expect("node").inputs[slot] = deq;
    }
    for i in 0..g.subgraphs.len() {
        let mut sub = std::mem::take(&mut g.subgraphs[i]);
        quantize_weights_only(&mut sub)?;
        g.subgraphs[i] = sub;
    }
    Ok(())
}

fn min_max(vals: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

// ---------------------------------------------------------------------------
// int8 execution
// ---------------------------------------------------------------------------

fn quantize_int8(
    g: &mut Graph,
    opts: &QuantizeOptions,
    calibration: &[BTreeMap<TensorId, TensorValue>],
) -> Result<(), QuantError> {
    if calibration.is_empty() {
        return Err(QuantError::MissingCalibration);
    }
    // activation ranges: graph inputs from the samples, everything else from
    // range-recording runs
    let mut ranges: BTreeMap<TensorId, (f64, f64)> = BTreeMap::new();
    for sample in calibration {
        for (&t, v) in sample {
            if let interp::Data::F32(xs) = &v.data {
                let e = ranges.entry(t).or_insert((f64::INFINITY, f64::NEG_INFINITY));
                for &x in xs {
                    e.0 = e.0.min(x as f64);
                    e.1 = e.1.max(x as f64);
                }
            }
        }
        let res = interp::run_recording(g, sample)
            .map_err(|_| QuantError::MissingCalibration)?;
        for (t, (lo, hi)) in res.ranges {
            let e = ranges.entry(t).or_insert((f64::INFINITY, f64::NEG_INFINITY));
            e.0 = e.0.min(lo);
            e.1 = e.1.max(hi);
        }
    }

    let order = g.topo_sort().expect("validated graph");
    // node domain: true = int8
    let mut domain: BTreeMap<NodeId, bool> = BTreeMap::new();
    for &id in &order {
        let node = g.node(id).expect("node");
        let capable = int8_capable(node.op)
            && !(opts.mode == GraphQuantMode::Int8FloatFallback
                && opts.fallback_ops.contains(&node.op));
        // conv/matmul need a constant filter to quantize
        let filter_ok = match node.op {
            OpKind::Conv2D | OpKind::DepthwiseConv2D | OpKind::FusedConvBnBias | OpKind::MatMul => {
                node.inputs.get(1).map(|&t| g.is_const(t)).unwrap_or(false)
            }
            _ => true,
        };
        let int8 = capable && filter_ok && node.op != OpKind::Loop;
        if !int8 && opts.mode == GraphQuantMode::Int8Only {
            let terminal_softmax = node.op == OpKind::Softmax
                && node.outputs.iter().all(|t| g.outputs.contains(t))
                && opts.allow_terminal_softmax_float;
            if !terminal_softmax {
                return Err(QuantError::UnsupportedOpForInt8(node.op.name().to_string()));
            }
        }
        domain.insert(id, int8);
    }

    // 1) quantize filter constants of int8 nodes
    for &id in &order {
        if !domain[&id] {
            continue;
        }
        let node = g.node(id).expect("node").clone();
        match node.op {
            OpKind::Conv2D | OpKind::FusedConvBnBias | OpKind::MatMul => {
                let axis = if node.op == OpKind::MatMul { 1 } else { 3 };
                quantize_filter_const(g, node.inputs[1], Some(axis))?;
            }
            OpKind::DepthwiseConv2D => {
                // interpreter indexes depthwise filters by flattened C*M,
                // which no single axis matches: quantize per-layer
                quantize_filter_const(g, node.inputs[1], None)?;
            }
            _ => {}
        }
    }

    // 2) assign output dtypes/params for int8 nodes
    for &id in &order {
        if !domain[&id] {
            continue;
        }
        let node = g.node(id).expect("node").clone();
        if propagates_params(node.op) {
            let in_spec = g.tensor(node.inputs[0]).clone();
            // only int8 when the upstream tensor actually is int8 (it may be
            // produced by a float node)
            let upstream_int8 = g
                .producer(node.inputs[0])
                .map(|p| domain.get(&p.id).copied().unwrap_or(false))
                .unwrap_or(false);
            if !upstream_int8 {
                domain.insert(id, false);
                continue;
            }
            for &o in &node.outputs {
                let spec = g.tensor_mut(o);
                spec.dtype = DType::I8;
                spec.quant = in_spec.quant.clone();
            }
        } else {
            for &o in &node.outputs {
                let (lo, hi) = ranges.get(&o).copied().unwrap_or((-1.0, 1.0));
                let params = quant::asymmetric_params_for_range(lo, hi);
                let spec = g.tensor_mut(o);
                spec.dtype = DType::I8;
                spec.quant = Some(params);
            }
        }
    }

    // 3) stitch domains with boundary nodes
    let mut i8_of: BTreeMap<TensorId, TensorId> = BTreeMap::new();
    let mut f32_of: BTreeMap<TensorId, TensorId> = BTreeMap::new();
    for &id in &order {
        let node = g.node(id).expect("node").clone();
        let act_slots: Vec<usize> = match node.op {
            OpKind::Conv2D | OpKind::DepthwiseConv2D | OpKind::FusedConvBnBias | OpKind::MatMul => {
                vec![0]
            }
            _ => (0..node.inputs.len()).collect(),
        };
        if domain[&id] {
            for slot in act_slots {
                let t = node.inputs[slot];
                if g.tensor(t).dtype != DType::F32 {
                    continue;
                }
                // bias operands stay float
                if matches!(node.op, OpKind::BiasAdd | OpKind::FusedConvBnBias) && slot > 0 {
                    continue;
                }
                let q = ensure_int8(g, t, &ranges, &mut i8_of);
                g.node_mut(id).expect("node").inputs[slot] = q;
            }
        } else {
            for slot in act_slots {
                let t = node.inputs[slot];
                if g.tensor(t).dtype != DType::I8 {
                    continue;
                }
                let f = ensure_f32(g, t, &mut f32_of);
                g.node_mut(id).expect("node").inputs[slot] = f;
            }
        }
    }
    // graph outputs come back to float
    for i in 0..g.outputs.len() {
        let t = g.outputs[i];
        if g.tensor(t).dtype == DType::I8 {
            g.outputs[i] = ensure_f32(g, t, &mut f32_of);
        }
    }
    Ok(())
}

fn quantize_filter_const(
    g: &mut Graph,
    t: TensorId,
    axis: Option<usize>,
) -> Result<(), QuantError> {
    if g.tensor(t).dtype != DType::F32 {
        return Ok(()); // already quantized (shared filter)
    }
    let vals = g.const_data(t).expect("filter const").payload.to_f64_vec();
    let shape = g.tensor(t).shape.clone();
    let (codes, params) = match axis {
        Some(a) => quant::quantize_per_channel_asymmetric(&vals, &shape, a)?,
        None => {
            for (i, v) in vals.iter().enumerate() {
                if !v.is_finite() {
                    return Err(QuantError::NonFiniteWeight(i));
                }
            }
            let (lo, hi) = min_max(&vals);
            let params = quant::asymmetric_params_for_range(lo, hi);
            let codes = vals.iter().map(|&v| quant::encode_value(v, &params, 0)).collect();
            (codes, params)
        }
    };
    let spec = g.tensor_mut(t);
    spec.dtype = DType::I8;
    spec.quant = Some(params);
    g.constants.get_mut(&t).expect("const").payload = Payload::I8(codes);
    Ok(())
}

fn ensure_int8(
    g: &mut Graph,
    t: TensorId,
    ranges: &BTreeMap<TensorId, (f64, f64)>,
    cache: &mut BTreeMap<TensorId, TensorId>,
) -> TensorId {
    if let Some(&q) = cache.get(&t) {
        return q;
    }
    let (lo, hi) = ranges.get(&t).copied().unwrap_or((-1.0, 1.0));
    let params = quant::asymmetric_params_for_range(lo, hi);
    let shape = g.tensor(t).shape.clone();
    let (_, q) = g.op(OpKind::Quantize, vec![t], shape, DType::I8);
    g.tensor_mut(q).quant = Some(params);
    cache.insert(t, q);
    q
}

fn ensure_f32(
    g: &mut Graph,
    t: TensorId,
    cache: &mut BTreeMap<TensorId, TensorId>,
) -> TensorId {
    if let Some(&f) = cache.get(&t) {
        return f;
    }
    let shape = g.tensor(t).shape.clone();
    let (_, f) = g.op(OpKind::Dequantize, vec![t], shape, DType::F32);
    cache.insert(t, f);
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AttrValue, UNSPECIFIED_SHAPE};

    fn small_conv_net() -> (Graph, TensorId) {
        let mut g = Graph::new();
        let x = g.add_input(vec![1, 4, 4, 1], DType::F32);
        let w: Vec<f32> = (0..8).map(|i| ((i as f32) * 0.711).sin() * 0.8).collect();
        let wt = g.add_const(vec![2, 2, 1, 2], Payload::F32(w));
        let (cv, co) = g.op(OpKind::Conv2D, vec![x, wt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.set_attr(cv, "strides", AttrValue::Ints(vec![1, 1]));
        let b = g.add_const(vec![2], Payload::F32(vec![0.1, -0.2]));
        let (_, bo) = g.op(OpKind::BiasAdd, vec![co, b], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        let (_, ro) = g.op(OpKind::Relu, vec![bo], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.outputs.push(ro);
        (g, x)
    }

    fn sample(x: TensorId) -> BTreeMap<TensorId, TensorValue> {
        let mut m = BTreeMap::new();
        m.insert(
            x,
            TensorValue::f32(vec![1, 4, 4, 1], (0..16).map(|i| ((i as f32) * 0.37).cos()).collect()),
        );
        m
    }

    #[test]
    fn float16_halves_payload() {
        let (g, _) = small_conv_net();
        let before = g.payload_bytes();
        let (q, report) = quantize_graph(
            &g,
            &QuantizeOptions::new(GraphQuantMode::Float16),
            &[],
        )
        .unwrap();
        assert_eq!(q.payload_bytes() * 2, before);
        assert_eq!(report.bytes_after * 2, report.bytes_before);
        let mut q2 = q.clone();
        q2.validate().unwrap();
    }

    #[test]
    fn float16_outputs_close() {
        let (g, x) = small_conv_net();
        let (q, _) = quantize_graph(&g, &QuantizeOptions::new(GraphQuantMode::Float16), &[]).unwrap();
        let a = interp::run(&g, &sample(x)).unwrap();
        let b = interp::run(&q, &sample(x)).unwrap();
        let va = a.outputs[&g.outputs[0]].as_f32().unwrap().to_vec();
        let vb = b.outputs[&q.outputs[0]].as_f32().unwrap().to_vec();
        for (p, r) in va.iter().zip(&vb) {
            assert!((p - r).abs() <= 0.01 * p.abs().max(1.0), "{p} vs {r}");
        }
    }

    #[test]
    fn weights_only_compresses_and_runs_float() {
        let mut g = Graph::new();
        let x = g.add_input(vec![1, 512], DType::F32);
        let w: Vec<f32> = (0..512 * 4).map(|i| ((i as f32) * 0.013).sin()).collect();
        let wt = g.add_const(vec![512, 4], Payload::F32(w));
        let (_, mo) = g.op(OpKind::MatMul, vec![x, wt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.outputs.push(mo);
        let before = g.payload_bytes();
        let (q, _) = quantize_graph(&g, &QuantizeOptions::new(GraphQuantMode::WeightsOnly), &[]).unwrap();
        // weight payload drops 4x; per-layer params add 8 bytes (not payload)
        let params_bytes: u64 = q
            .tensors
            .values()
            .filter_map(|t| t.quant.as_ref().map(|p| p.param_bytes()))
            .sum();
        let ratio = before as f64 / (q.payload_bytes() + params_bytes) as f64;
        assert!(ratio >= 3.9, "ratio {ratio}");
        // compute is still float: a Dequantize feeds the MatMul
        let mm = q.nodes.iter().find(|n| n.op == OpKind::MatMul).unwrap();
        let prod = q.producer(mm.inputs[1]).unwrap();
        assert_eq!(prod.op, OpKind::Dequantize);
        // outputs close to original
        let mut inp = BTreeMap::new();
        inp.insert(x, TensorValue::f32(vec![1, 512], (0..512).map(|i| ((i as f32) * 0.05).sin()).collect()));
        let a = interp::run(&g, &inp).unwrap();
        let b = interp::run(&q, &inp).unwrap();
        let va = a.outputs[&g.outputs[0]].as_f32().unwrap().to_vec();
        let vb = b.outputs[&q.outputs[0]].as_f32().unwrap().to_vec();
        for (p, r) in va.iter().zip(&vb) {
            assert!((p - r).abs() < 0.5, "{p} vs {r}");
        }
    }

    #[test]
    fn int8_fallback_quantizes_conv_chain() {
        let (g, x) = small_conv_net();
        let (q, _) = quantize_graph(
            &g,
            &QuantizeOptions::new(GraphQuantMode::Int8FloatFallback),
            &[sample(x)],
        )
        .unwrap();
        let mut q2 = q.clone();
        q2.validate().unwrap();
        // conv output is int8 now
        let conv = q.nodes.iter().find(|n| n.op == OpKind::Conv2D).unwrap();
        assert_eq!(q.tensor(conv.outputs[0]).dtype, DType::I8);
        // filter became a per-channel int8 constant
        assert_eq!(q.tensor(conv.inputs[1]).dtype, DType::I8);
        // end-to-end output close to float reference
        let a = interp::run(&g, &sample(x)).unwrap();
        let b = interp::run(&q, &sample(x)).unwrap();
        let va = a.outputs[&g.outputs[0]].as_f32().unwrap().to_vec();
        let vb = b.outputs[&q.outputs[0]].as_f32().unwrap().to_vec();
        for (p, r) in va.iter().zip(&vb) {
            assert!((p - r).abs() < 0.1, "{p} vs {r}");
        }
    }

    #[test]
    fn int8_requires_calibration() {
        let (g, _) = small_conv_net();
        assert_eq!(
            quantize_graph(&g, &QuantizeOptions::new(GraphQuantMode::Int8Only), &[]).unwrap_err(),
            QuantError::MissingCalibration
        );
    }

    #[test]
    fn int8_only_rejects_nonterminal_softmax() {
        let (mut g, x) = small_conv_net();
        // splice a Softmax in the middle
        let out = g.outputs[0];
        let (_, so) = g.op(OpKind::Softmax, vec![out], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        let (_, no) = g.op(OpKind::Neg, vec![so], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.outputs = vec![no];
        let err = quantize_graph(
            &g,
            &QuantizeOptions::new(GraphQuantMode::Int8Only),
            &[sample(x)],
        )
        .unwrap_err();
        assert!(matches!(err, QuantError::UnsupportedOpForInt8(_)));
    }

    #[test]
    fn int8_only_allows_terminal_softmax() {
        let (mut g, x) = small_conv_net();
        let out = g.outputs[0];
        let (_, so) = g.op(OpKind::Softmax, vec![out], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.outputs = vec![so];
        let (q, _) = quantize_graph(
            &g,
            &QuantizeOptions::new(GraphQuantMode::Int8Only),
            &[sample(x)],
        )
        .unwrap();
        assert!(q.nodes.iter().any(|n| n.op == OpKind::Softmax));
        let res = interp::run(&q, &sample(x)).unwrap();
        let probs = res.outputs[&q.outputs[0]].as_f32().unwrap();
        // softmax over the last axis (extent 2): rows sum to 1
        let rows = probs.len() / 2;
        let total: f32 = probs.iter().sum();
        assert!((total - rows as f32).abs() < 1e-3, "total {total}");
    }

    #[test]
    fn fallback_set_keeps_float_ops_float() {
        // Exp between two convs: fallback mode inserts Dequantize/Quantize
        let mut g = Graph::new();
        let x = g.add_input(vec![1, 4], DType::F32);
        let w: Vec<f32> = (0..16).map(|i| ((i as f32) * 0.3).sin() * 0.5).collect();
        let wt = g.add_const(vec![4, 4], Payload::F32(w));
        let (_, m1) = g.op(OpKind::MatMul, vec![x, wt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        let (_, e) = g.op(OpKind::Exp, vec![m1], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        let wt2 = g.add_const(vec![4, 2], Payload::F32((0..8).map(|i| ((i as f32) * 0.7).cos() * 0.5).collect()));
        let (_, m2) = g.op(OpKind::MatMul, vec![e, wt2], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.outputs.push(m2);
        let mut s = BTreeMap::new();
        s.insert(x, TensorValue::f32(vec![1, 4], vec![0.1, -0.4, 0.7, 0.2]));
        let (q, _) = quantize_graph(
            &g,
            &QuantizeOptions::new(GraphQuantMode::Int8FloatFallback),
            &[s.clone()],
        )
        .unwrap();
        let exp = q.nodes.iter().find(|n| n.op == OpKind::Exp).unwrap();
        assert_eq!(q.tensor(exp.inputs[0]).dtype, DType::F32);
        assert_eq!(q.tensor(exp.outputs[0]).dtype, DType::F32);
        assert!(q.nodes.iter().any(|n| n.op == OpKind::Dequantize));
        assert!(q.nodes.iter().filter(|n| n.op == OpKind::Quantize).count() >= 2);
        let a = interp::run(&g, &s).unwrap();
        let b = interp::run(&q, &s).unwrap();
        let va = a.outputs[&g.outputs[0]].as_f32().unwrap().to_vec();
        let vb = b.outputs[&q.outputs[0]].as_f32().unwrap().to_vec();
        for (p, r) in va.iter().zip(&vb) {
            assert!((p - r).abs() < 0.2, "{p} vs {r}");
        }
    }
}
