//! Structural graph passes: dead-branch removal, loop unrolling/elision,
//! Identity/NoOp elimination, control-edge transitive reduction, and
//! Conv2D/BatchNorm/BiasAdd fusion.
//!
//! Every pass leaves interpreter outputs unchanged (fusion up to float
//! refactoring tolerance) and never increases node count. Nodes with
//! `preserve=true` are never removed.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::graph::{Graph, Node, NodeId, OpKind, Payload, TensorId};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StructError {
    #[error("conv/bn/bias chain at node {node} not fusable: {detail}")]
    NotFusable { node: NodeId, detail: String },
    #[error("unknown pass '{0}'")]
    UnknownPass(String),
    #[error("graph invalid: {0}")]
    InvalidGraph(String),
}

/// Stable CLI-addressable pass names, in default order.
pub const PASS_NAMES: [&str; 5] = ["dead", "loops", "identity", "ctrl-reduce", "fuse"];

pub fn apply_pass(name: &str, g: &mut Graph) -> Result<u32, StructError> {
    match name {
        "dead" => Ok(remove_dead_branches(g)),
        "loops" => Ok(optimize_loops(g)),
        "identity" => Ok(remove_identity_noop(g, true)),
        "ctrl-reduce" => Ok(transitive_reduce_controls(g)),
        "fuse" => fuse_conv_bn_bias(g),
        other => Err(StructError::UnknownPass(other.to_string())),
    }
}

pub fn default_passes() -> Vec<String> {
    PASS_NAMES.iter().map(|s| s.to_string()).collect()
}

// ---------------------------------------------------------------------------
// dead branches
// ---------------------------------------------------------------------------

/// Deletes nodes from which no graph output is reachable. Control dependents
/// keep their dependencies alive; preserved nodes always stay.
pub fn remove_dead_branches(g: &mut Graph) -> u32 {
    let mut removed = 0;
    loop {
        // live set fixpoint over data and control edges
        let mut live: BTreeSet<NodeId> = BTreeSet::new();
        let producer_of: BTreeMap<TensorId, NodeId> = g
            .nodes
            .iter()
            .flat_map(|n| n.outputs.iter().map(move |&o| (o, n.id)))
            .collect();
        let mut frontier: Vec<NodeId> = g
            .outputs
            .iter()
            .filter_map(|t| producer_of.get(t).copied())
            .collect();
        frontier.extend(g.nodes.iter().filter(|n| n.is_preserved()).map(|n| n.id));
        while let Some(id) = frontier.pop() {
            if !live.insert(id) {
                continue;
            }
            let node = g.node(id).expect("node");
            for &t in &node.inputs {
                if let Some(&p) = producer_of.get(&t) {
                    frontier.push(p);
                }
            }
            frontier.extend(node.control_deps.iter().copied());
        }
        let dead: Vec<NodeId> = g
            .nodes
            .iter()
            .filter(|n| !live.contains(&n.id))
            .map(|n| n.id)
            .collect();
        if dead.is_empty() {
            break;
        }
        for id in dead {
            g.remove_node(id);
            removed += 1;
        }
    }
    for i in 0..g.subgraphs.len() {
        let mut sub = std::mem::take(&mut g.subgraphs[i]);
        removed += remove_dead_branches(&mut sub);
        g.subgraphs[i] = sub;
    }
    g.garbage_collect();
    removed
}

// ---------------------------------------------------------------------------
// loops
// ---------------------------------------------------------------------------

/// trip_count=0 loops disappear (outputs wired to the initial values);
/// trip_count=1 loops are inlined; invariant body nodes are hoisted out.
pub fn optimize_loops(g: &mut Graph) -> u32 {
    let mut fires = 0;
    loop {
        let plan = g
            .nodes
            .iter()
            .find(|n| {
                n.op == OpKind::Loop
                    && !n.is_preserved()
                    && n.int_attr("trip_count").map(|t| t <= 1).unwrap_or(false)
            })
            .map(|n| (n.id, n.int_attr("trip_count").unwrap_or(0)));
        let Some((id, trip)) = plan else { break };
        let node = g.node(id).expect("node").clone();
        if trip == 0 {
            for (&o, &i) in node.outputs.iter().zip(&node.inputs) {
                g.replace_uses(o, i);
            }
            g.remove_node(id);
        } else {
            inline_loop_body(g, &node);
            g.remove_node(id);
        }
        fires += 1;
    }
    fires += crate::arith::hoist_loop_invariants(g);
    for i in 0..g.subgraphs.len() {
        let mut sub = std::mem::take(&mut g.subgraphs[i]);
        fires += optimize_loops(&mut sub);
        g.subgraphs[i] = sub;
    }
    prune_subgraphs(g);
    g.garbage_collect();
    fires
}

fn inline_loop_body(g: &mut Graph, node: &Node) {
    let body_idx = node.int_attr("body").unwrap_or(0) as usize;
    let body = g.subgraphs[body_idx].clone();
    // nested loop bodies come along, with their indices shifted
    let sub_offset = g.subgraphs.len();
    for sub in &body.subgraphs {
        g.add_subgraph(sub.clone());
    }
    let mut map: BTreeMap<TensorId, TensorId> = BTreeMap::new();
    for (&bt, &pt) in body.inputs.iter().zip(&node.inputs) {
        map.insert(bt, pt);
    }
    for c in body.constants.values() {
        let spec = body.tensor(c.tensor_id).clone();
        let pc = g.add_const(spec.shape, c.payload.clone());
        g.tensor_mut(pc).quant = spec.quant;
        map.insert(c.tensor_id, pc);
    }
    let order = body.topo_sort().expect("loop body acyclic");
    let mut node_map: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for bid in order {
        let bn = body.node(bid).expect("node").clone();
        let mut outs = Vec::new();
        for &o in &bn.outputs {
            let spec = body.tensor(o).clone();
            let pt = g.add_tensor(spec.shape, spec.dtype);
            g.tensor_mut(pt).quant = spec.quant;
            map.insert(o, pt);
            outs.push(pt);
        }
        let ins = bn.inputs.iter().map(|t| map[t]).collect();
        let pid = g.add_node(bn.op, ins, outs);
        for (k, v) in &bn.attrs {
            let v = if bn.op == OpKind::Loop && k == "body" {
                crate::graph::AttrValue::Int(v.as_int().unwrap_or(0) + sub_offset as i64)
            } else {
                v.clone()
            };
            g.set_attr(pid, k, v);
        }
        if let Some(pn) = g.node_mut(pid) {
            pn.control_deps = bn
                .control_deps
                .iter()
                .filter_map(|d| node_map.get(d).copied())
                .collect();
        }
        node_map.insert(bid, pid);
    }
    for (&bo, &po) in body.outputs.iter().zip(&node.outputs) {
        g.replace_uses(po, map[&bo]);
    }
}

/// Drops loop-body subgraphs no Loop node references and renumbers `body`
/// attributes accordingly.
fn prune_subgraphs(g: &mut Graph) {
    let referenced: BTreeSet<usize> = g
        .nodes
        .iter()
        .filter(|n| n.op == OpKind::Loop)
        .filter_map(|n| n.int_attr("body").map(|b| b as usize))
        .collect();
    if referenced.len() == g.subgraphs.len() {
        return;
    }
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    let mut kept = Vec::new();
    for (i, sub) in g.subgraphs.drain(..).enumerate() {
        if referenced.contains(&i) {
            remap.insert(i, kept.len());
            kept.push(sub);
        }
    }
    g.subgraphs = kept;
    for n in &mut g.nodes {
        if n.op == OpKind::Loop {
            if let Some(b) = n.int_attr("body") {
                if let Some(&nb) = remap.get(&(b as usize)) {
                    n.attrs
                        .insert("body".into(), crate::graph::AttrValue::Int(nb as i64));
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// identity / noop
// ---------------------------------------------------------------------------

/// Removes Identity/NoOp nodes when in*out <= in+out over their edges and
/// StopGradient nodes unconditionally, splicing data and control edges
/// through. `count_controls` selects whether control edges enter the
/// in/out products (they do by default).
pub fn remove_identity_noop(g: &mut Graph, count_controls: bool) -> u32 {
    let mut fires = 0;
    loop {
        let mut plan = None;
        for n in &g.nodes {
            if n.is_preserved() {
                continue;
            }
            let removable = match n.op {
                OpKind::StopGradient => true,
                OpKind::Identity | OpKind::NoOp => {
                    let ctrl_in = if count_controls { n.control_deps.len() } else { 0 };
                    let ctrl_out = if count_controls {
                        g.nodes.iter().filter(|m| m.control_deps.contains(&n.id)).count()
                    } else {
                        0
                    };
                    let data_out: usize = n.outputs.iter().map(|&o| g.use_count(o)).sum();
                    let ins = n.inputs.len() + ctrl_in;
                    let outs = data_out + ctrl_out;
                    ins * outs <= ins + outs
                }
                _ => false,
            };
            if removable {
                plan = Some(n.id);
                break;
            }
        }
        let Some(id) = plan else { break };
        let node = g.node(id).expect("node").clone();
        // splice the data edge through
        if let (Some(&i), Some(&o)) = (node.inputs.first(), node.outputs.first()) {
            g.replace_uses(o, i);
        }
        // dependents inherit this node's control deps plus its data producer
        let inherit: BTreeSet<NodeId> = {
            let mut s = node.control_deps.clone();
            if let Some(&i) = node.inputs.first() {
                if let Some(p) = g.producer(i) {
                    s.insert(p.id);
                }
            }
            s
        };
        let dependents: Vec<NodeId> = g
            .nodes
            .iter()
            .filter(|m| m.control_deps.contains(&id))
            .map(|m| m.id)
            .collect();
        for d in dependents {
            let dn = g.node_mut(d).expect("node");
            dn.control_deps.remove(&id);
            dn.control_deps.extend(inherit.iter().copied());
            dn.control_deps.remove(&d);
        }
        g.remove_node(id);
        fires += 1;
    }
    for i in 0..g.subgraphs.len() {
        let mut sub = std::mem::take(&mut g.subgraphs[i]);
        fires += remove_identity_noop(&mut sub, count_controls);
        g.subgraphs[i] = sub;
    }
    g.garbage_collect();
    fires
}

// ---------------------------------------------------------------------------
// control-edge transitive reduction
// ---------------------------------------------------------------------------

/// Removes control edge (a,c) whenever some other path a => ... => c exists
/// through data or control edges; the execution partial order is unchanged.
pub fn transitive_reduce_controls(g: &mut Graph) -> u32 {
    let mut fires = 0;
    let ids: Vec<NodeId> = g.nodes.iter().map(|n| n.id).collect();
    for &c in &ids {
        let deps: Vec<NodeId> = g
            .node(c)
            .map(|n| n.control_deps.iter().copied().collect())
            .unwrap_or_default();
        for a in deps {
            if reachable_without_edge(g, a, c) {
                g.node_mut(c).expect("node").control_deps.remove(&a);
                fires += 1;
            }
        }
    }
    for i in 0..g.subgraphs.len() {
        let mut sub = std::mem::take(&mut g.subgraphs[i]);
        fires += transitive_reduce_controls(&mut sub);
        g.subgraphs[i] = sub;
    }
    fires
}

/// Is there a path a => c of length >= 2 edges, ignoring the direct control
/// edge (a,c)?
fn reachable_without_edge(g: &Graph, a: NodeId, c: NodeId) -> bool {
    let producer_of: BTreeMap<TensorId, NodeId> = g
        .nodes
        .iter()
        .flat_map(|n| n.outputs.iter().map(move |&o| (o, n.id)))
        .collect();
    let succs = |id: NodeId, skip_direct: bool| -> Vec<NodeId> {
        let node = g.node(id).expect("node");
        let mut out: BTreeSet<NodeId> = BTreeSet::new();
        for m in &g.nodes {
            let data_edge = m.inputs.iter().any(|t| {
                node.outputs.contains(t) && producer_of.get(t) == Some(&id)
            });
            let ctrl_edge = m.control_deps.contains(&id)
                && !(skip_direct && id == a && m.id == c);
            if data_edge || ctrl_edge {
                out.insert(m.id);
            }
        }
        out.into_iter().collect()
    };
    let mut seen = BTreeSet::new();
    let mut stack = succs(a, true);
    while let Some(id) = stack.pop() {
        if id == c {
            return true;
        }
        if seen.insert(id) {
            stack.extend(succs(id, false));
        }
    }
    false
}

// ---------------------------------------------------------------------------
// conv + batch-norm + bias fusion
// ---------------------------------------------------------------------------

/// Fuses Conv2D / FusedBatchNorm / BiasAdd chains (either normalization
/// order) into a single FusedConvBnBias node with precomputed W' and b'.
/// A chain whose intermediate tensors have external consumers is an error
/// and the graph is left untouched.
pub fn fuse_conv_bn_bias(g: &mut Graph) -> Result<u32, StructError> {
    g.validate()
        .map_err(|e| StructError::InvalidGraph(format!("{:?}", e)))?;
    let mut fires = 0;
    loop {
        let mut plan = None;
        for conv in &g.nodes {
            if conv.op != OpKind::Conv2D || conv.is_preserved() {
                continue;
            }
            if let Some(chain) = match_chain(g, conv)? {
                plan = Some(chain);
                break;
            }
        }
        let Some(chain) = plan else { break };
        apply_fusion(g, &chain);
        fires += 1;
    }
    g.garbage_collect();
    Ok(fires)
}

struct FuseChain {
    conv: NodeId,
    mid: NodeId,
    last: NodeId,
    /// true when the order is Conv -> BiasAdd -> FusedBatchNorm
    bias_before_bn: bool,
    filter: TensorId,
    bias: Option<TensorId>,
    bn_params: [TensorId; 4], // gamma, beta, mean, variance
    epsilon: f64,
    final_out: TensorId,
}

fn sole_consumer<'a>(g: &'a Graph, t: TensorId) -> Option<&'a Node> {
    let consumers = g.consumers(t);
    if consumers.len() == 1 && !g.outputs.contains(&t) && g.use_count(t) == 1 {
        g.node(consumers[0])
    } else {
        None
    }
}

fn match_chain(g: &Graph, conv: &Node) -> Result<Option<FuseChain>, StructError> {
    if !g.is_const(conv.inputs[1]) {
        return Ok(None);
    }
    let conv_out = conv.outputs[0];
    let Some(mid) = g.consumers(conv_out).first().and_then(|&i| g.node(i)) else {
        return Ok(None);
    };
    let (mid_op, last_needed) = match mid.op {
        OpKind::BiasAdd => (mid.op, OpKind::FusedBatchNorm),
        OpKind::FusedBatchNorm => (mid.op, OpKind::BiasAdd),
        _ => return Ok(None),
    };
    let Some(last) = g.consumers(mid.outputs[0]).first().and_then(|&i| g.node(i)) else {
        return Ok(None);
    };
    if last.op != last_needed || mid.is_preserved() || last.is_preserved() {
        return Ok(None);
    }
    // pattern is present; intermediates must now be single-use
    if sole_consumer(g, conv_out).map(|n| n.id) != Some(mid.id)
        || sole_consumer(g, mid.outputs[0]).map(|n| n.id) != Some(last.id)
    {
        return Err(StructError::NotFusable {
            node: conv.id,
            detail: "intermediate tensor has an external consumer".into(),
        });
    }
    let (bias_node, bn_node, bias_before_bn) = if mid_op == OpKind::BiasAdd {
        (mid, last, true)
    } else {
        (last, mid, false)
    };
    let bias = bias_node.inputs[1];
    let bn_params = [
        bn_node.inputs[1],
        bn_node.inputs[2],
        bn_node.inputs[3],
        bn_node.inputs[4],
    ];
    if !g.is_const(bias) || !bn_params.iter().all(|&t| g.is_const(t)) {
        return Ok(None);
    }
    Ok(Some(FuseChain {
        conv: conv.id,
        mid: mid.id,
        last: last.id,
        bias_before_bn,
        filter: conv.inputs[1],
        bias: Some(bias),
        bn_params,
        epsilon: bn_node.float_attr("epsilon").unwrap_or(1e-3),
        final_out: last.outputs[0],
    }))
}

fn apply_fusion(g: &mut Graph, chain: &FuseChain) {
    let w = g.const_data(chain.filter).expect("const").payload.to_f64_vec();
    let w_shape = g.tensor(chain.filter).shape.clone();
    let f = w_shape[3];
    let gamma = g.const_data(chain.bn_params[0]).expect("const").payload.to_f64_vec();
    let beta = g.const_data(chain.bn_params[1]).expect("const").payload.to_f64_vec();
    let mean = g.const_data(chain.bn_params[2]).expect("const").payload.to_f64_vec();
    let var = g.const_data(chain.bn_params[3]).expect("const").payload.to_f64_vec();
    let bias = chain
        .bias
        .map(|t| g.const_data(t).expect("const").payload.to_f64_vec())
        .unwrap_or_else(|| vec![0.0; f]);
    let inv_sigma: Vec<f64> = var
        .iter()
        .map(|&v| 1.0 / (v + chain.epsilon).sqrt())
        .collect();

    let w_fused: Vec<f32> = w
        .iter()
        .enumerate()
        .map(|(i, &x)| (gamma[i % f] * inv_sigma[i % f] * x) as f32)
        .collect();
    let b_fused: Vec<f32> = (0..f)
        .map(|c| {
            if chain.bias_before_bn {
                // Conv -> BiasAdd -> BN
                (gamma[c] * (bias[c] - mean[c]) * inv_sigma[c] + beta[c]) as f32
            } else {
                // Conv -> BN -> BiasAdd
                (gamma[c] * (0.0 - mean[c]) * inv_sigma[c] + beta[c] + bias[c]) as f32
            }
        })
        .collect();

    let conv = g.node(chain.conv).expect("node").clone();
    let wt = g.add_const(w_shape, Payload::F32(w_fused));
    let bt = g.add_const(vec![f], Payload::F32(b_fused));
    let fused = g.add_node(
        OpKind::FusedConvBnBias,
        vec![conv.inputs[0], wt, bt],
        vec![chain.final_out],
    );
    for (k, v) in &conv.attrs {
        g.set_attr(fused, k, v.clone());
    }
    if let Some(fnode) = g.node_mut(fused) {
        fnode.control_deps = conv.control_deps.clone();
    }
    g.remove_node(chain.last);
    g.remove_node(chain.mid);
    g.remove_node(chain.conv);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AttrValue, DType, UNSPECIFIED_SHAPE};
    use crate::interp::{self, TensorValue};
    use std::collections::BTreeMap;

    #[test]
    fn dead_mul_removed() {
        let mut g = Graph::new();
        let x = g.add_input(vec![2], DType::F32);
        let (_, live) = g.op(OpKind::Neg, vec![x], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        let c = g.scalar_const(2.0);
        let (dead, _) = g.op(OpKind::Mul, vec![x, c], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.outputs.push(live);
        assert_eq!(remove_dead_branches(&mut g), 1);
        assert!(g.node(dead).is_none());
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn dead_chain_of_three_removed() {
        let mut g = Graph::new();
        let x = g.add_input(vec![2], DType::F32);
        let (_, live) = g.op(OpKind::Neg, vec![x], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        let (_, d1) = g.op(OpKind::Exp, vec![x], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        let (_, d2) = g.op(OpKind::Sin, vec![d1], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        let (_, _d3) = g.op(OpKind::Neg, vec![d2], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.outputs.push(live);
        assert_eq!(remove_dead_branches(&mut g), 3);
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn all_reachable_unchanged() {
        let mut g = Graph::new();
        let x = g.add_input(vec![2], DType::F32);
        let (_, out) = g.op(OpKind::Neg, vec![x], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.outputs.push(out);
        let snapshot = g.clone();
        assert_eq!(remove_dead_branches(&mut g), 0);
        assert_eq!(g, snapshot);
    }

    fn plus_one_loop(trip: i64) -> (Graph, TensorId) {
        let mut body = Graph::new();
        let bx = body.add_input(vec![1], DType::F32);
        let one = body.add_const(vec![1], Payload::F32(vec![1.0]));
        let (_, bo) = body.op(OpKind::Add, vec![bx, one], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        body.outputs.push(bo);
        let mut g = Graph::new();
        let init = g.add_const(vec![1], Payload::F32(vec![5.0]));
        let bi = g.add_subgraph(body);
        let out = g.add_tensor(vec![1], DType::F32);
        let l = g.add_node(OpKind::Loop, vec![init], vec![out]);
        g.set_attr(l, "trip_count", AttrValue::Int(trip));
        g.set_attr(l, "body", AttrValue::Int(bi as i64));
        g.outputs.push(out);
        (g, out)
    }

    #[test]
    fn loop_trip_zero_elided() {
        let (mut g, _) = plus_one_loop(0);
        assert!(optimize_loops(&mut g) >= 1);
        assert!(g.nodes.iter().all(|n| n.op != OpKind::Loop));
        assert!(g.subgraphs.is_empty());
        let res = interp::run(&g, &BTreeMap::new()).unwrap();
        assert_eq!(res.outputs[&g.outputs[0]].as_f32().unwrap(), &[5.0]);
    }

    #[test]
    fn loop_trip_one_inlined() {
        let (mut g, _) = plus_one_loop(1);
        assert!(optimize_loops(&mut g) >= 1);
        assert!(g.nodes.iter().all(|n| n.op != OpKind::Loop));
        assert!(g.nodes.iter().any(|n| n.op == OpKind::Add));
        let res = interp::run(&g, &BTreeMap::new()).unwrap();
        assert_eq!(res.outputs[&g.outputs[0]].as_f32().unwrap(), &[6.0]);
    }

    #[test]
    fn loop_trip_three_kept() {
        let (mut g, _) = plus_one_loop(3);
        assert_eq!(optimize_loops(&mut g), 0);
        assert!(g.nodes.iter().any(|n| n.op == OpKind::Loop));
        let res = interp::run(&g, &BTreeMap::new()).unwrap();
        assert_eq!(res.outputs[&g.outputs[0]].as_f32().unwrap(), &[8.0]);
    }

    #[test]
    fn identity_one_in_two_out_removed() {
        let mut g = Graph::new();
        let x = g.add_input(vec![2], DType::F32);
        let (id, t) = g.op(OpKind::Identity, vec![x], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        let (_, a) = g.op(OpKind::Neg, vec![t], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        let (_, b) = g.op(OpKind::Exp, vec![t], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.outputs.push(a);
        g.outputs.push(b);
        assert_eq!(remove_identity_noop(&mut g, true), 1);
        assert!(g.node(id).is_none());
        // consumers rewired to x
        assert!(g.nodes.iter().all(|n| n.inputs == vec![x]));
    }

    #[test]
    fn noop_three_by_three_kept() {
        // 3 control-ins x 3 control-outs: 9 > 6, Fig-style condition keeps it
        let mut g = Graph::new();
        let mut ins = Vec::new();
        for _ in 0..3 {
            ins.push(g.add_node(OpKind::NoOp, vec![], vec![]));
        }
        let hub = g.add_node(OpKind::NoOp, vec![], vec![]);
        g.node_mut(hub).unwrap().control_deps.extend(ins.iter().copied());
        let mut outs = Vec::new();
        for _ in 0..3 {
            let n = g.add_node(OpKind::NoOp, vec![], vec![]);
            g.node_mut(n).unwrap().control_deps.insert(hub);
            outs.push(n);
        }
        // the leaf NoOps are trivially removable; protect them to isolate hub
        for &n in ins.iter().chain(&outs) {
            g.set_attr(n, "preserve", AttrValue::Bool(true));
        }
        assert_eq!(remove_identity_noop(&mut g, true), 0);
        assert!(g.node(hub).is_some());
    }

    #[test]
    fn noop_counting_switch() {
        // same hub with control edges ignored: 0*0 <= 0, removed
        let mut g = Graph::new();
        let a = g.add_node(OpKind::NoOp, vec![], vec![]);
        let hub = g.add_node(OpKind::NoOp, vec![], vec![]);
        g.node_mut(hub).unwrap().control_deps.insert(a);
        g.set_attr(a, "preserve", AttrValue::Bool(true));
        let mut g2 = g.clone();
        assert_eq!(remove_identity_noop(&mut g, false), 1);
        assert_eq!(remove_identity_noop(&mut g2, true), 1); // 1*0 <= 1 too
    }

    #[test]
    fn stop_gradient_removed_everywhere() {
        let mut g = Graph::new();
        let x = g.add_input(vec![2], DType::F32);
        let (_, t) = g.op(OpKind::StopGradient, vec![x], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        let (_, out) = g.op(OpKind::Neg, vec![t], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.outputs.push(out);
        let mut inputs = BTreeMap::new();
        inputs.insert(x, TensorValue::f32(vec![2], vec![1.0, -2.0]));
        let before = interp::run(&g, &inputs).unwrap();
        assert_eq!(remove_identity_noop(&mut g, true), 1);
        let after = interp::run(&g, &inputs).unwrap();
        assert_eq!(
            before.outputs[&out].as_f32().unwrap(),
            after.outputs[&g.outputs[0]].as_f32().unwrap()
        );
    }

    #[test]
    fn preserve_blocks_identity_removal() {
        let mut g = Graph::new();
        let x = g.add_input(vec![2], DType::F32);
        let (id, t) = g.op(OpKind::Identity, vec![x], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.set_attr(id, "preserve", AttrValue::Bool(true));
        g.outputs.push(t);
        assert_eq!(remove_identity_noop(&mut g, true), 0);
        assert!(g.node(id).is_some());
    }

    #[test]
    fn transitive_reduction_triangle() {
        let mut g = Graph::new();
        let a = g.add_node(OpKind::NoOp, vec![], vec![]);
        let b = g.add_node(OpKind::NoOp, vec![], vec![]);
        let c = g.add_node(OpKind::NoOp, vec![], vec![]);
        g.node_mut(b).unwrap().control_deps.insert(a);
        g.node_mut(c).unwrap().control_deps.insert(b);
        g.node_mut(c).unwrap().control_deps.insert(a);
        assert_eq!(transitive_reduce_controls(&mut g), 1);
        assert!(!g.node(c).unwrap().control_deps.contains(&a));
        assert!(g.node(c).unwrap().control_deps.contains(&b));
        assert!(g.topo_sort().is_ok());
    }

    #[test]
    fn transitive_reduction_single_edge_kept() {
        let mut g = Graph::new();
        let a = g.add_node(OpKind::NoOp, vec![], vec![]);
        let b = g.add_node(OpKind::NoOp, vec![], vec![]);
        g.node_mut(b).unwrap().control_deps.insert(a);
        assert_eq!(transitive_reduce_controls(&mut g), 0);
        assert!(g.node(b).unwrap().control_deps.contains(&a));
    }

    #[test]
    fn transitive_reduction_matches_closure_oracle() {
        // random-ish 12-node DAG; after reduction the transitive closure of
        // the execution order must be unchanged
        let mut g = Graph::new();
        let ids: Vec<NodeId> = (0..12).map(|_| g.add_node(OpKind::NoOp, vec![], vec![])).collect();
        let mut seed = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 33) as usize
        };
        for i in 1..ids.len() {
            for j in 0..i {
                if next() % 3 == 0 {
                    g.node_mut(ids[i]).unwrap().control_deps.insert(ids[j]);
                }
            }
        }
        let closure = |g: &Graph| -> BTreeSet<(NodeId, NodeId)> {
            let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
            for n in &g.nodes {
                for &d in &n.control_deps {
                    edges.insert((d, n.id));
                }
            }
            // Floyd-Warshall style closure
            let ids: Vec<NodeId> = g.nodes.iter().map(|n| n.id).collect();
            let mut ch = true;
            while ch {
                ch = false;
                let snapshot: Vec<(NodeId, NodeId)> = edges.iter().copied().collect();
                for &(a, b) in &snapshot {
                    for &k in &ids {
                        if edges.contains(&(b, k)) && edges.insert((a, k)) {
                            ch = true;
                        }
                    }
                }
            }
            edges
        };
        let before = closure(&g);
        transitive_reduce_controls(&mut g);
        assert_eq!(closure(&g), before);
        // and the result is minimal: removing any remaining edge changes it
        let remaining: Vec<(NodeId, NodeId)> = g
            .nodes
            .iter()
            .flat_map(|n| n.control_deps.iter().map(move |&d| (d, n.id)))
            .collect();
        for (a, b) in remaining {
            let mut g2 = g.clone();
            g2.node_mut(b).unwrap().control_deps.remove(&a);
            assert_ne!(closure(&g2), before, "edge ({a},{b}) was redundant");
        }
    }

    fn conv_bn_bias_graph(bias_before_bn: bool) -> (Graph, TensorId, TensorId) {
        let mut g = Graph::new();
        let x = g.add_input(vec![1, 4, 4, 2], DType::F32);
        let w: Vec<f32> = (0..2 * 2 * 2 * 3).map(|i| (i as f32 * 0.17).sin()).collect();
        let wt = g.add_const(vec![2, 2, 2, 3], Payload::F32(w));
        let (cv, conv_out) = g.op(OpKind::Conv2D, vec![x, wt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.set_attr(cv, "strides", AttrValue::Ints(vec![1, 1]));
        let gamma = g.add_const(vec![3], Payload::F32(vec![1.1, 0.9, 1.3]));
        let beta = g.add_const(vec![3], Payload::F32(vec![0.2, -0.1, 0.4]));
        let mean = g.add_const(vec![3], Payload::F32(vec![0.05, -0.2, 0.3]));
        let var = g.add_const(vec![3], Payload::F32(vec![0.8, 1.2, 0.5]));
        let bias = g.add_const(vec![3], Payload::F32(vec![0.3, -0.4, 0.1]));
        let out = if bias_before_bn {
            let (_, ba) = g.op(OpKind::BiasAdd, vec![conv_out, bias], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (bn, o) = g.op(
                OpKind::FusedBatchNorm,
                vec![ba, gamma, beta, mean, var],
                UNSPECIFIED_SHAPE.to_vec(),
                DType::F32,
            );
            g.set_attr(bn, "epsilon", AttrValue::Float(1e-3));
            o
        } else {
            let (bn, bo) = g.op(
                OpKind::FusedBatchNorm,
                vec![conv_out, gamma, beta, mean, var],
                UNSPECIFIED_SHAPE.to_vec(),
                DType::F32,
            );
            g.set_attr(bn, "epsilon", AttrValue::Float(1e-3));
            let (_, o) = g.op(OpKind::BiasAdd, vec![bo, bias], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            o
        };
        g.outputs.push(out);
        (g, x, out)
    }

    fn assert_close(a: &[f32], b: &[f32]) {
        for (x, y) in a.iter().zip(b) {
            let tol = 1e-5 * x.abs().max(y.abs()).max(1.0);
            assert!((x - y).abs() <= tol as f32, "{x} vs {y}");
        }
    }

    #[test]
    fn fuse_both_orders_equivalent() {
        for order in [true, false] {
            let (mut g, x, _out) = conv_bn_bias_graph(order);
            let mut inputs = BTreeMap::new();
            inputs.insert(
                x,
                TensorValue::f32(vec![1, 4, 4, 2], (0..32).map(|i| (i as f32 * 0.3).cos()).collect()),
            );
            let before = interp::run(&g, &inputs).unwrap();
            assert_eq!(fuse_conv_bn_bias(&mut g).unwrap(), 1);
            assert_eq!(g.node_count(), 1);
            assert_eq!(g.nodes[0].op, OpKind::FusedConvBnBias);
            let after = interp::run(&g, &inputs).unwrap();
            assert_close(
                before.outputs[&before.outputs.keys().next().copied().unwrap()]
                    .as_f32()
                    .unwrap(),
                after.outputs[&g.outputs[0]].as_f32().unwrap(),
            );
        }
    }

    #[test]
    fn fuse_identity_normalization() {
        // gamma=1, beta=0, mu=0, var=1-eps: W'=W, b'=b
        let mut g = Graph::new();
        let x = g.add_input(vec![1, 2, 2, 1], DType::F32);
        let wt = g.add_const(vec![1, 1, 1, 1], Payload::F32(vec![2.0]));
        let (cv, conv_out) = g.op(OpKind::Conv2D, vec![x, wt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.set_attr(cv, "strides", AttrValue::Ints(vec![1, 1]));
        let bias = g.add_const(vec![1], Payload::F32(vec![0.5]));
        let (_, ba) = g.op(OpKind::BiasAdd, vec![conv_out, bias], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        let gamma = g.add_const(vec![1], Payload::F32(vec![1.0]));
        let beta = g.add_const(vec![1], Payload::F32(vec![0.0]));
        let mean = g.add_const(vec![1], Payload::F32(vec![0.0]));
        let eps = 1e-3f64;
        let var = g.add_const(vec![1], Payload::F32(vec![(1.0 - eps) as f32]));
        let (bn, out) = g.op(
            OpKind::FusedBatchNorm,
            vec![ba, gamma, beta, mean, var],
            UNSPECIFIED_SHAPE.to_vec(),
            DType::F32,
        );
        g.set_attr(bn, "epsilon", AttrValue::Float(eps));
        g.outputs.push(out);
        assert_eq!(fuse_conv_bn_bias(&mut g).unwrap(), 1);
        let fused = &g.nodes[0];
        let wf = g.const_data(fused.inputs[1]).unwrap().payload.to_f64_vec();
        let bf = g.const_data(fused.inputs[2]).unwrap().payload.to_f64_vec();
        assert!((wf[0] - 2.0).abs() < 1e-6);
        assert!((bf[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn fuse_blocked_by_external_consumer() {
        let (mut g, _x, _) = conv_bn_bias_graph(true);
        // expose the conv intermediate as an extra graph output
        let conv_out = g
            .nodes
            .iter()
            .find(|n| n.op == OpKind::Conv2D)
            .unwrap()
            .outputs[0];
        g.outputs.push(conv_out);
        g.validate().unwrap();
        let snapshot = g.clone();
        assert!(matches!(
            fuse_conv_bn_bias(&mut g),
            Err(StructError::NotFusable { .. })
        ));
        assert_eq!(g, snapshot);
    }
}
