//! Seeded test-asset generation: per-rewrite-pattern random graphs used by
//! the soundness suite, random input batches, and the bundled reference
//! CNN/MLP model builders.

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::graph::{AttrValue, DType, Graph, OpKind, Payload, TensorId, UNSPECIFIED_SHAPE};
use crate::interp::TensorValue;

/// Default seed, overridable through the NOPTC_SEED environment variable.
pub const DEFAULT_SEED: u64 = 0;

pub fn env_seed() -> u64 {
    std::env::var("NOPTC_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_SEED)
}

/// Every rewrite/pass name a corpus generator exists for.
pub const TARGETS: [&str; 11] = [
    "fold",
    "trivial",
    "flatten",
    "reduce_nodes",
    "hoist",
    "minimize_broadcast",
    "dead",
    "loops",
    "identity",
    "ctrl-reduce",
    "fuse",
];

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("no generator for rule or pass '{0}'")]
    UnknownRule(String),
}

#[derive(Debug, Clone)]
pub struct GraphGenSpec {
    pub target: String,
    pub seed: u64,
}

impl GraphGenSpec {
    pub fn new(target: &str, seed: u64) -> Self {
        GraphGenSpec {
            target: target.to_string(),
            seed,
        }
    }
}

fn rnd_const(g: &mut Graph, rng: &mut ChaCha8Rng, shape: Vec<usize>) -> TensorId {
    let n: usize = shape.iter().product();
    let vals: Vec<f32> = (0..n).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
    g.add_const(shape, Payload::F32(vals))
}

/// Appends 0..=2 random unary distractor ops after `t`; returns the new tail.
fn distract(g: &mut Graph, rng: &mut ChaCha8Rng, t: TensorId) -> TensorId {
    let mut cur = t;
    for _ in 0..rng.random_range(0..3u32) {
        let op = match rng.random_range(0..4u32) {
            0 => OpKind::Neg,
            1 => OpKind::Sin,
            2 => OpKind::Relu,
            _ => OpKind::Identity,
        };
        let (_, o) = g.op(op, vec![cur], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        cur = o;
    }
    cur
}

/// Seeded graph embedding the named rule/pass pattern amid random
/// distractors; always validates, and the target fires at least once.
pub fn gen_for_target(spec: &GraphGenSpec) -> Result<Graph, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9);
    let rng = &mut rng;
    let k = rng.random_range(2..6usize);
    let mut g = Graph::new();
    match spec.target.as_str() {
        "fold" => {
            let x = g.add_input(vec![k], DType::F32);
            let c0 = rnd_const(&mut g, rng, vec![k]);
            let c1 = rnd_const(&mut g, rng, vec![k]);
            let (_, inner) = g.op(OpKind::Sub, vec![x, c1], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (_, outer) = g.op(OpKind::Sub, vec![c0, inner], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            // plus a fully constant subexpression the folder can evaluate
            let c2 = rnd_const(&mut g, rng, vec![k]);
            let c3 = rnd_const(&mut g, rng, vec![k]);
            let (_, cc) = g.op(OpKind::Add, vec![c2, c3], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (_, o) = g.op(OpKind::Add, vec![outer, cc], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            { let tail = distract(&mut g, rng, o); g.outputs.push(tail); }
        }
        "trivial" => {
            let x = g.add_input(vec![k], DType::F32);
            let (t, tt) = g.op(OpKind::Transpose, vec![x], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            g.set_attr(t, "perm", AttrValue::Ints(vec![0]));
            let (r, rr) = g.op(OpKind::Reshape, vec![tt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            g.set_attr(r, "new_shape", AttrValue::Ints(vec![k as i64]));
            let c = rnd_const(&mut g, rng, vec![k]);
            let (_, o) = g.op(OpKind::Add, vec![rr, c], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            { let tail = distract(&mut g, rng, o); g.outputs.push(tail); }
        }
        "flatten" => {
            let x = g.add_input(vec![k], DType::F32);
            let mut cur = x;
            for _ in 0..rng.random_range(3..5u32) {
                let c = rnd_const(&mut g, rng, vec![k]);
                let (_, o) = g.op(OpKind::Add, vec![cur, c], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
                cur = o;
            }
            { let tail = distract(&mut g, rng, cur); g.outputs.push(tail); }
        }
        "reduce_nodes" => {
            let x = g.add_input(vec![k], DType::F32);
            let c = rnd_const(&mut g, rng, vec![k]);
            let (_, gt) = g.op(OpKind::Greater, vec![x, c], UNSPECIFIED_SHAPE.to_vec(), DType::Bool);
            let (_, nt) = g.op(OpKind::Not, vec![gt], UNSPECIFIED_SHAPE.to_vec(), DType::Bool);
            g.outputs.push(nt);
            // common-factor AddN: f*x + f*(x + c2)
            let f = rnd_const(&mut g, rng, vec![k]);
            let c2 = rnd_const(&mut g, rng, vec![k]);
            let (_, s) = g.op(OpKind::Add, vec![x, c2], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (_, m1) = g.op(OpKind::Mul, vec![f, x], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (_, m2) = g.op(OpKind::Mul, vec![f, s], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (_, an) = g.op(OpKind::AddN, vec![m1, m2], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            { let tail = distract(&mut g, rng, an); g.outputs.push(tail); }
        }
        "hoist" => {
            let x = g.add_input(vec![k], DType::F32);
            let y = g.add_input(vec![k], DType::F32);
            // same unary on every Concat branch: hoistable above the Concat
            let (_, n1) = g.op(OpKind::Neg, vec![x], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (_, n2) = g.op(OpKind::Neg, vec![y], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (cc, ct) = g.op(OpKind::Concat, vec![n1, n2], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            g.set_attr(cc, "axis", AttrValue::Int(0));
            let c = rnd_const(&mut g, rng, vec![2 * k]);
            let (_, o) = g.op(OpKind::Add, vec![ct, c], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            { let tail = distract(&mut g, rng, o); g.outputs.push(tail); }
        }
        "minimize_broadcast" => {
            let x = g.add_input(vec![2, k], DType::F32);
            let y = g.add_input(vec![k], DType::F32);
            let s1 = g.scalar_const(rng.random::<f32>());
            let s2 = g.scalar_const(rng.random::<f32>());
            let (_, t1) = g.op(OpKind::Add, vec![x, s1], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (_, t2) = g.op(OpKind::Add, vec![t1, y], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (_, t3) = g.op(OpKind::Add, vec![t2, s2], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            { let tail = distract(&mut g, rng, t3); g.outputs.push(tail); }
        }
        "dead" => {
            let x = g.add_input(vec![k], DType::F32);
            let c = rnd_const(&mut g, rng, vec![k]);
            let (_, live) = g.op(OpKind::Add, vec![x, c], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (_, r) = g.op(OpKind::Relu, vec![live], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            // dead branch: consumed by nothing
            let c2 = rnd_const(&mut g, rng, vec![k]);
            let (_, d1) = g.op(OpKind::Mul, vec![x, c2], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (_, _d2) = g.op(OpKind::Sin, vec![d1], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            { let tail = distract(&mut g, rng, r); g.outputs.push(tail); }
        }
        "loops" => {
            let x = g.add_input(vec![k], DType::F32);
            let mut body = Graph::new();
            let bx = body.add_input(vec![k], DType::F32);
            let step = rnd_const(&mut body, rng, vec![k]);
            let (_, bo) = body.op(OpKind::Add, vec![bx, step], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            body.outputs.push(bo);
            body.validate().expect("loop body");
            let idx = g.add_subgraph(body);
            let trip = rng.random_range(1..4i64);
            let (lp, lo) = g.op(OpKind::Loop, vec![x], vec![k], DType::F32);
            g.set_attr(lp, "trip_count", AttrValue::Int(trip));
            g.set_attr(lp, "body", AttrValue::Int(idx as i64));
            { let tail = distract(&mut g, rng, lo); g.outputs.push(tail); }
        }
        "identity" => {
            let x = g.add_input(vec![k], DType::F32);
            let c = rnd_const(&mut g, rng, vec![k]);
            let (_, a) = g.op(OpKind::Add, vec![x, c], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (_, i1) = g.op(OpKind::Identity, vec![a], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (_, i2) = g.op(OpKind::Identity, vec![i1], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (_, sg) = g.op(OpKind::StopGradient, vec![i2], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (_, o) = g.op(OpKind::Relu, vec![sg], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            { let tail = distract(&mut g, rng, o); g.outputs.push(tail); }
        }
        "ctrl-reduce" => {
            let x = g.add_input(vec![k], DType::F32);
            let c = rnd_const(&mut g, rng, vec![k]);
            let (na, a) = g.op(OpKind::Add, vec![x, c], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (nb, b) = g.op(OpKind::Mul, vec![a, c], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let (nc, o) = g.op(OpKind::Neg, vec![b], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            // redundant control edge a -> c alongside a -> b -> c
            g.node_mut(nb).expect("node").control_deps.insert(na);
            g.node_mut(nc).expect("node").control_deps.insert(na);
            g.node_mut(nc).expect("node").control_deps.insert(nb);
            { let tail = distract(&mut g, rng, o); g.outputs.push(tail); }
        }
        "fuse" => {
            let c_in = 1 + rng.random_range(0..2usize);
            let f = 2 + rng.random_range(0..3usize);
            let x = g.add_input(vec![1, 6, 6, c_in], DType::F32);
            let w = rnd_const(&mut g, rng, vec![3, 3, c_in, f]);
            let (cv, co) = g.op(OpKind::Conv2D, vec![x, w], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            g.set_attr(cv, "strides", AttrValue::Ints(vec![1, 1]));
            let bias = rnd_const(&mut g, rng, vec![f]);
            let (_, ba) = g.op(OpKind::BiasAdd, vec![co, bias], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            let gamma = g.add_const(
                vec![f],
                Payload::F32((0..f).map(|_| 0.5 + rng.random::<f32>()).collect()),
            );
            let beta = rnd_const(&mut g, rng, vec![f]);
            let mean = rnd_const(&mut g, rng, vec![f]);
            let var = g.add_const(
                vec![f],
                Payload::F32((0..f).map(|_| 0.5 + rng.random::<f32>()).collect()),
            );
            let (bn, bo) = g.op(
                OpKind::FusedBatchNorm,
                vec![ba, gamma, beta, mean, var],
                UNSPECIFIED_SHAPE.to_vec(),
                DType::F32,
            );
            g.set_attr(bn, "epsilon", AttrValue::Float(1e-3));
            let (_, o) = g.op(OpKind::Relu, vec![bo], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            g.outputs.push(o);
        }
        other => return Err(CorpusError::UnknownRule(other.to_string())),
    }
    g.validate().expect("generated graph validates");
    Ok(g)
}

/// Seeded random float inputs for every graph input tensor.
pub fn random_inputs(g: &Graph, seed: u64) -> BTreeMap<TensorId, TensorValue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ed_2701);
    let mut m = BTreeMap::new();
    for &t in &g.inputs {
        let spec = g.tensor(t);
        let n = spec.num_elements();
        let vals: Vec<f32> = (0..n).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
        m.insert(t, TensorValue::f32(spec.shape.clone(), vals));
    }
    m
}

/// Total parameters held in constants.
pub fn param_count(g: &Graph) -> usize {
    g.constants.values().map(|c| c.payload.len()).sum::<usize>()
        + g.subgraphs.iter().map(param_count).sum::<usize>()
}

/// Bundled reference CNN: 28x28x1 input, two 3x3 conv + 2x2 maxpool stages
/// (8 then 16 filters), a 400->160 dense layer, and a 160->10 softmax head.
/// 67,018 parameters with seeded random weights.
pub fn reference_cnn(seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let x = g.add_input(vec![1, 28, 28, 1], DType::F32);

    let cur = conv_block(&mut g, &mut rng, x, 1, 8); // 28 -> 26 -> 13
    let cur = conv_block(&mut g, &mut rng, cur, 8, 16); // 13 -> 11 -> 5

    let (r, rr) = g.op(OpKind::Reshape, vec![cur], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
    g.set_attr(r, "new_shape", AttrValue::Ints(vec![1, 400]));

    let fc1 = dense(&mut g, &mut rng, rr, 400, 160, 0.2);
    let (_, h) = g.op(OpKind::Relu, vec![fc1], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
    let fc2 = classifier_head(&mut g, &mut rng, h, 160, 10);
    let (_, sm) = g.op(OpKind::Softmax, vec![fc2], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
    g.outputs.push(sm);
    g.validate().expect("reference cnn");
    g
}

fn conv_block(
    g: &mut Graph,
    rng: &mut ChaCha8Rng,
    x: TensorId,
    c_in: usize,
    c_out: usize,
) -> TensorId {
    // Filters are rank-1 separable (u ⊗ v ⊗ M) so the convolution-separation
    // pass applies exactly; the weights are still fully seed-determined.
    let fan_in = 9 * c_in;
    let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("normal");
    let unit = Normal::new(0.0, 1.0).expect("normal");
    let u: Vec<f64> = (0..3).map(|_| unit.sample(rng)).collect();
    let v: Vec<f64> = (0..3).map(|_| unit.sample(rng)).collect();
    let m: Vec<f64> = (0..c_in * c_out).map(|_| normal.sample(rng)).collect();
    let mut w = vec![0f32; 9 * c_in * c_out];
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..c_in {
                for f in 0..c_out {
                    w[((a * 3 + b) * c_in + c) * c_out + f] =
                        (u[a] * v[b] * m[c * c_out + f]) as f32;
                }
            }
        }
    }
    let wt = g.add_const(vec![3, 3, c_in, c_out], Payload::F32(w));
    let (cv, co) = g.op(OpKind::Conv2D, vec![x, wt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
    g.set_attr(cv, "strides", AttrValue::Ints(vec![1, 1]));
    let b: Vec<f32> = (0..c_out).map(|_| (rng.random::<f32>() - 0.5) * 0.2).collect();
    let bt = g.add_const(vec![c_out], Payload::F32(b));
    let (_, ba) = g.op(OpKind::BiasAdd, vec![co, bt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
    let (_, rl) = g.op(OpKind::Relu, vec![ba], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
    let (mp, po) = g.op(OpKind::MaxPool, vec![rl], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
    g.set_attr(mp, "ksize", AttrValue::Ints(vec![2, 2]));
    g.set_attr(mp, "strides", AttrValue::Ints(vec![2, 2]));
    po
}

/// Final dense layer with trained-classifier-like logit margins: per-class
/// biases sit on a shuffled unit-spaced ladder so the top-2 logit gap stays a
/// healthy fraction of the tensor range, as it would after softmax training.
/// Purely random logits have near-tie margins that no 8-bit representation
/// can preserve, which would make argmax-agreement checks meaningless.
fn classifier_head(
    g: &mut Graph,
    rng: &mut ChaCha8Rng,
    x: TensorId,
    fan_in: usize,
    classes: usize,
) -> TensorId {
    let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("normal");
    let w: Vec<f32> = (0..fan_in * classes)
        .map(|_| normal.sample(rng) as f32)
        .collect();
    let wt = g.add_const(vec![fan_in, classes], Payload::F32(w));
    let (_, mo) = g.op(OpKind::MatMul, vec![x, wt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
    let mut b: Vec<f32> = (0..classes)
        .map(|i| 1.5 * (i as f32 - (classes - 1) as f32 / 2.0))
        .collect();
    for i in (1..b.len()).rev() {
        b.swap(i, rng.random_range(0..=i));
    }
    let bt = g.add_const(vec![classes], Payload::F32(b));
    let (_, bo) = g.op(OpKind::BiasAdd, vec![mo, bt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
    bo
}

fn dense(
    g: &mut Graph,
    rng: &mut ChaCha8Rng,
    x: TensorId,
    fan_in: usize,
    fan_out: usize,
    bias_scale: f64,
) -> TensorId {
    let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("normal");
    let w: Vec<f32> = (0..fan_in * fan_out)
        .map(|_| normal.sample(rng) as f32)
        .collect();
    let wt = g.add_const(vec![fan_in, fan_out], Payload::F32(w));
    let (_, mo) = g.op(OpKind::MatMul, vec![x, wt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
    let bias = Normal::new(0.0, bias_scale).expect("normal");
    let b: Vec<f32> = (0..fan_out).map(|_| bias.sample(rng) as f32).collect();
    let bt = g.add_const(vec![fan_out], Payload::F32(b));
    let (_, bo) = g.op(OpKind::BiasAdd, vec![mo, bt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
    bo
}
