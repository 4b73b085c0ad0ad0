//! Gradual magnitude pruning and quantization-aware training: the polynomial
//! sparsity schedule, monotone binary weight masks, fake-quant node insertion,
//! and a seed-deterministic toy trainer (dense MLPs on synthetic blobs) that
//! exercises both with straight-through-estimator gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::graph::{AttrValue, DType, Graph, OpKind, Payload, TensorId, UNSPECIFIED_SHAPE};

#[derive(Debug, Error, PartialEq)]
pub enum PruneError {
    #[error("invalid sparsity schedule: {0}")]
    BadSchedule(String),
    #[error("unsupported layer for training: {0}")]
    UnsupportedLayerForTraining(String),
}

/// Polynomial decay from `s_initial` to `s_final` over `span_steps` starting
/// at `t0`, updated every `delta_t` steps. `exponent = 1` gives the plain
/// linear ramp; the default 3 is the usual cubic schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsitySchedule {
    pub s_initial: f64,
    pub s_final: f64,
    pub t0: u64,
    pub delta_t: u64,
    pub span_steps: u64,
    pub exponent: f64,
}

impl SparsitySchedule {
    pub fn new(
        s_initial: f64,
        s_final: f64,
        t0: u64,
        delta_t: u64,
        span_steps: u64,
    ) -> Result<Self, PruneError> {
        let s = SparsitySchedule {
            s_initial,
            s_final,
            t0,
            delta_t,
            span_steps,
            exponent: 3.0,
        };
        s.check()?;
        Ok(s)
    }

    pub fn with_exponent(mut self, exponent: f64) -> Result<Self, PruneError> {
        self.exponent = exponent;
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> Result<(), PruneError> {
        if !(0.0..1.0).contains(&self.s_initial) {
            return Err(PruneError::BadSchedule("s_initial must be in [0,1)".into()));
        }
        if !(self.s_final > 0.0 && self.s_final <= 1.0) {
            return Err(PruneError::BadSchedule("s_final must be in (0,1]".into()));
        }
        if self.s_final < self.s_initial {
            return Err(PruneError::BadSchedule("s_final < s_initial".into()));
        }
        if self.delta_t == 0 {
            return Err(PruneError::BadSchedule("delta_t must be >= 1".into()));
        }
        if self.span_steps == 0 || self.span_steps % self.delta_t != 0 {
            return Err(PruneError::BadSchedule(
                "span_steps must be a positive multiple of delta_t".into(),
            ));
        }
        if self.exponent <= 0.0 {
            return Err(PruneError::BadSchedule("exponent must be positive".into()));
        }
        Ok(())
    }

    /// Target sparsity at step `t` (constant `s_final` once the span ends).
    pub fn sparsity_at(&self, t: u64) -> f64 {
        if t <= self.t0 {
            return self.s_initial;
        }
        let progress = ((t - self.t0) as f64 / self.span_steps as f64).min(1.0);
        let s = self.s_final
            + (self.s_initial - self.s_final) * (1.0 - progress).powf(self.exponent);
        s.clamp(self.s_initial, self.s_final)
    }

    /// Steps at which masks change: t0 + m*delta_t within the span.
    pub fn is_update_step(&self, t: u64) -> bool {
        t >= self.t0 && t <= self.t0 + self.span_steps && (t - self.t0) % self.delta_t == 0
    }
}

/// Binary keep-mask over one layer's weights (1 = keep, 0 = pruned).
pub type PruneMask = Vec<u8>;

pub fn mask_sparsity(mask: &[u8]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.iter().filter(|&&m| m == 0).count() as f64 / mask.len() as f64
}

/// Magnitude pruning: zero the smallest-|w| surviving entries until
/// ceil(target * total) are masked. Already-masked entries never revive.
pub fn update_mask(weights: &[f64], mask: &mut PruneMask, target_sparsity: f64) {
    assert_eq!(weights.len(), mask.len());
    let total = mask.len();
    let want_zero = (target_sparsity * total as f64).ceil().min(total as f64) as usize;
    let have_zero = mask.iter().filter(|&&m| m == 0).count();
    if want_zero <= have_zero {
        return;
    }
    let mut live: Vec<usize> = (0..total).filter(|&i| mask[i] == 1).collect();
    live.sort_by(|&a, &b| {
        weights[a]
            .abs()
            .partial_cmp(&weights[b].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in live.iter().take(want_zero - have_zero) {
        mask[i] = 0;
    }
}

/// Per-layer `update_mask` over parallel slices.
pub fn update_masks(weights: &[Vec<f64>], masks: &mut [PruneMask], target_sparsity: f64) {
    for (w, m) in weights.iter().zip(masks.iter_mut()) {
        update_mask(w, m, target_sparsity);
    }
}

// ---------------------------------------------------------------------------
// fake-quant
// ---------------------------------------------------------------------------

/// Affine fake quantization on the [lo, hi] grid with 2^bits levels:
/// dequantize(quantize(x)). The backward surrogate is clip(x, lo, hi).
pub fn fake_quant_forward(x: f64, lo: f64, hi: f64, bits: u32) -> f64 {
    debug_assert!(lo < hi);
    let levels = (1u64 << bits) as f64 - 1.0;
    let scale = (hi - lo) / levels;
    let code = ((x.clamp(lo, hi) - lo) / scale).round();
    lo + code * scale
}

/// Straight-through-estimator gradient of the fake-quant surrogate
/// clip(x, lo, hi): 1 inside the range, 0 outside.
pub fn ste_grad(x: f64, lo: f64, hi: f64) -> f64 {
    if x >= lo && x <= hi {
        1.0
    } else {
        0.0
    }
}

/// Inserts FakeQuant nodes after every weight constant feeding a conv/matmul
/// and after every Conv2D/MatMul/Relu output, using the symmetric Q-bit grid.
pub fn insert_fake_quant(graph: &Graph, q_bits: i64) -> Graph {
    let mut g = graph.clone();
    let mut sites: Vec<TensorId> = Vec::new();
    for n in &g.nodes {
        match n.op {
            OpKind::Conv2D | OpKind::DepthwiseConv2D | OpKind::MatMul => {
                if let Some(&w) = n.inputs.get(1) {
                    if g.is_const(w) {
                        sites.push(w);
                    }
                }
                sites.extend(&n.outputs);
            }
            OpKind::Relu => sites.extend(&n.outputs),
            _ => {}
        }
    }
    sites.sort_unstable();
    sites.dedup();
    for t in sites {
        let shape = g.tensor(t).shape.clone();
        let (nid, fq) = g.op(OpKind::FakeQuant, vec![t], shape, DType::F32);
        g.set_attr(nid, "q_bits", AttrValue::Int(q_bits));
        // reroute every other consumer (and graph outputs) to the fake-quant
        g.replace_uses(t, fq);
        g.node_mut(nid).expect("fq node").inputs[0] = t;
    }
    g
}

// ---------------------------------------------------------------------------
// toy trainer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: u64,
    pub lr: f64,
    pub schedule: Option<SparsitySchedule>,
    /// Fake-quant bit width; STE gradients when set.
    pub fake_quant: Option<u32>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            lr: 0.1,
            schedule: None,
            fake_quant: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainMetrics {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// (step, test accuracy) sampled during training.
    pub trajectory: Vec<(u64, f64)>,
    /// Final sparsity per prunable layer.
    pub layer_sparsity: Vec<f64>,
}

/// Seeded two-Gaussian-blob dataset: class 0 near (1.5, 1.5), class 1 near
/// (-1.5, -1.5), sigma 0.5 — linearly separable by construction.
pub fn make_blobs(n: usize, seed: u64) -> (Vec<[f64; 2]>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.5).expect("normal");
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let c = if class == 0 { 1.5 } else { -1.5 };
        xs.push([c + normal.sample(&mut rng), c + normal.sample(&mut rng)]);
        ys.push(class);
    }
    (xs, ys)
}

/// Seeded dense MLP graph: MatMul + BiasAdd + Relu per hidden layer, final
/// MatMul + BiasAdd + Softmax. `sizes` = [inputs, hidden..., classes].
pub fn build_mlp(sizes: &[usize], seed: u64) -> Graph {
    assert!(sizes.len() >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let mut cur = g.add_input(vec![1, sizes[0]], DType::F32);
    for (l, win) in sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (win[0], win[1]);
        let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("normal");
        let w: Vec<f32> = (0..fan_in * fan_out)
            .map(|_| normal.sample(&mut rng) as f32)
            .collect();
        let wt = g.add_const(vec![fan_in, fan_out], Payload::F32(w));
        let (_, mo) = g.op(OpKind::MatMul, vec![cur, wt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        let bt = g.add_const(vec![fan_out], Payload::F32(vec![0.0; fan_out]));
        let (_, bo) = g.op(OpKind::BiasAdd, vec![mo, bt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        cur = bo;
        if l + 1 < sizes.len() - 1 {
            let (_, ro) = g.op(OpKind::Relu, vec![bo], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
            cur = ro;
        }
    }
    let (_, so) = g.op(OpKind::Softmax, vec![cur], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
    g.outputs.push(so);
    g.validate().expect("mlp graph");
    g
}

struct Layer {
    w: Vec<f64>,
    rows: usize,
    cols: usize,
    b: Vec<f64>,
    relu: bool,
    w_tensor: TensorId,
    b_tensor: TensorId,
}

/// Pulls the MatMul/BiasAdd/Relu layer stack out of a dense MLP graph.
fn extract_layers(g: &Graph) -> Result<Vec<Layer>, PruneError> {
    let order = g
        .topo_sort()
        .map_err(|_| PruneError::UnsupportedLayerForTraining("cyclic graph".into()))?;
    let mut layers: Vec<Layer> = Vec::new();
    for id in order {
        let n = g.node(id).expect("node");
        match n.op {
            OpKind::MatMul => {
                let w_tensor = n.inputs[1];
                let c = g.const_data(w_tensor).ok_or_else(|| {
                    PruneError::UnsupportedLayerForTraining("MatMul weight must be const".into())
                })?;
                let shape = g.tensor(w_tensor).shape.clone();
                layers.push(Layer {
                    w: c.payload.to_f64_vec(),
                    rows: shape[0] as usize,
                    cols: shape[1] as usize,
                    b: vec![0.0; shape[1] as usize],
                    relu: false,
                    w_tensor,
                    b_tensor: w_tensor,
                });
            }
            OpKind::BiasAdd => {
                let b_tensor = n.inputs[1];
                let c = g.const_data(b_tensor).ok_or_else(|| {
                    PruneError::UnsupportedLayerForTraining("bias must be const".into())
                })?;
                let last = layers.last_mut().ok_or_else(|| {
                    PruneError::UnsupportedLayerForTraining("BiasAdd before MatMul".into())
                })?;
                last.b = c.payload.to_f64_vec();
                last.b_tensor = b_tensor;
            }
            OpKind::Relu => {
                let last = layers.last_mut().ok_or_else(|| {
                    PruneError::UnsupportedLayerForTraining("Relu before MatMul".into())
                })?;
                last.relu = true;
            }
            OpKind::Softmax | OpKind::Identity => {}
            other => {
                return Err(PruneError::UnsupportedLayerForTraining(
                    other.name().to_string(),
                ))
            }
        }
    }
    if layers.is_empty() {
        return Err(PruneError::UnsupportedLayerForTraining("no MatMul layers".into()));
    }
    Ok(layers)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / s).collect()
}

fn accuracy(layers: &[Layer], fq: Option<(u32, &[(f64, f64)], &[(f64, f64)])>, xs: &[[f64; 2]], ys: &[usize]) -> f64 {
    let mut hit = 0usize;
    for (x, &y) in xs.iter().zip(ys) {
        let logits = forward(layers, fq, &[x[0], x[1]]).pop().expect("acts");
        let pred = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if pred == y {
            hit += 1;
        }
    }
    hit as f64 / xs.len().max(1) as f64
}

/// Forward pass; returns the activation after each layer (pre-softmax at the
/// end). `fq` = (bits, per-layer weight ranges, per-layer activation ranges).
fn forward(
    layers: &[Layer],
    fq: Option<(u32, &[(f64, f64)], &[(f64, f64)])>,
    x: &[f64],
) -> Vec<Vec<f64>> {
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut a = x.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let mut z = layer.b.clone();
        for i in 0..layer.rows {
            for j in 0..layer.cols {
                let mut w = layer.w[i * layer.cols + j];
                if let Some((bits, wr, _)) = fq {
                    let (lo, hi) = wr[l];
                    if hi > lo {
                        w = fake_quant_forward(w, lo, hi, bits);
                    }
                }
                z[j] += a[i] * w;
            }
        }
        if layer.relu {
            for v in &mut z {
                *v = v.max(0.0);
            }
        }
        if let Some((bits, _, ar)) = fq {
            if l + 1 < layers.len() {
                let (lo, hi) = ar[l];
                if hi > lo {
                    for v in &mut z {
                        *v = fake_quant_forward(*v, lo, hi, bits);
                    }
                }
            }
        }
        a = z.clone();
        acts.push(z);
    }
    acts
}

/// Plain gradient-descent trainer over a dense MLP graph on seeded blob data.
/// Masks (when a schedule is set) multiply both weights and gradients each
/// step; fake-quant (when set) uses straight-through gradients clipped to the
/// running per-layer ranges, refreshed every step.
pub fn train_toy(model: &Graph, config: &TrainConfig) -> Result<(Graph, TrainMetrics), PruneError> {
    if let Some(s) = &config.schedule {
        s.check()?;
    }
    let mut layers = extract_layers(model)?;
    let (xs, ys) = make_blobs(256, config.seed);
    let split = xs.len() * 3 / 4;
    let (train_x, test_x) = xs.split_at(split);
    let (train_y, test_y) = ys.split_at(split);

    let mut masks: Vec<PruneMask> = layers.iter().map(|l| vec![1u8; l.w.len()]).collect();
    // running fake-quant ranges per layer: weights and activations
    let mut w_ranges: Vec<(f64, f64)> = vec![(0.0, 0.0); layers.len()];
    let mut a_ranges: Vec<(f64, f64)> = vec![(0.0, 0.0); layers.len()];
    let mut trajectory = Vec::new();

    for t in 0..config.steps {
        // schedule: update masks, then re-apply to weights
        if let Some(s) = &config.schedule {
            if s.is_update_step(t) {
                let target = s.sparsity_at(t);
                let ws: Vec<Vec<f64>> = layers.iter().map(|l| l.w.clone()).collect();
                update_masks(&ws, &mut masks, target);
            }
            for (l, m) in layers.iter_mut().zip(&masks) {
                for (w, &keep) in l.w.iter_mut().zip(m) {
                    if keep == 0 {
                        *w = 0.0;
                    }
                }
            }
        }
        // refresh fake-quant ranges from current weights / last activations
        if config.fake_quant.is_some() {
            for (l, layer) in layers.iter().enumerate() {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for &w in &layer.w {
                    lo = lo.min(w);
                    hi = hi.max(w);
                }
                if lo < hi {
                    w_ranges[l] = (lo, hi);
                }
            }
        }
        let fq = config
            .fake_quant
            .map(|bits| (bits, w_ranges.as_slice(), a_ranges.as_slice()));

        // full-batch gradients
        let mut gw: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.b.len()]).collect();
        let mut new_a_ranges: Vec<(f64, f64)> = vec![(f64::INFINITY, f64::NEG_INFINITY); layers.len()];
        for (x, &y) in train_x.iter().zip(train_y) {
            let input = [x[0], x[1]];
            let acts = forward(&layers, fq, &input);
            for (l, a) in acts.iter().enumerate() {
                for &v in a {
                    new_a_ranges[l].0 = new_a_ranges[l].0.min(v);
                    new_a_ranges[l].1 = new_a_ranges[l].1.max(v);
                }
            }
            let probs = softmax(acts.last().expect("logits"));
            // d(loss)/d(logits) for softmax cross-entropy
            let mut delta: Vec<f64> = probs.clone();
            delta[y] -= 1.0;
            for l in (0..layers.len()).rev() {
                let prev: &[f64] = if l == 0 { &input } else { &acts[l - 1] };
                let layer = &layers[l];
                // STE through the activation fake-quant
                if let Some((_, _, ar)) = fq {
                    if l + 1 < layers.len() {
                        let (lo, hi) = ar[l];
                        if hi > lo {
                            for (d, &v) in delta.iter_mut().zip(&acts[l]) {
                                *d *= ste_grad(v, lo, hi);
                            }
                        }
                    }
                }
                if layer.relu {
                    for (d, &v) in delta.iter_mut().zip(&acts[l]) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                for j in 0..layer.cols {
                    gb[l][j] += delta[j];
                    for i in 0..layer.rows {
                        gw[l][i * layer.cols + j] += prev[i] * delta[j];
                    }
                }
                if l > 0 {
                    let mut next = vec![0.0; layer.rows];
                    for i in 0..layer.rows {
                        for j in 0..layer.cols {
                            let mut w = layer.w[i * layer.cols + j];
                            if let Some((_, wr, _)) = fq {
                                let (lo, hi) = wr[l];
                                // STE through the weight fake-quant
                                if hi > lo {
                                    w = fake_quant_forward(w, lo, hi, config.fake_quant.unwrap());
                                }
                            }
                            next[i] += w * delta[j];
                        }
                    }
                    delta = next;
                }
            }
        }
        a_ranges = new_a_ranges
            .into_iter()
            .map(|(lo, hi)| if lo < hi { (lo, hi) } else { (0.0, 0.0) })
            .collect();

        let n = train_x.len() as f64;
        for (l, layer) in layers.iter_mut().enumerate() {
            for (k, w) in layer.w.iter_mut().enumerate() {
                let mut grad = gw[l][k] / n;
                if config.schedule.is_some() && masks[l][k] == 0 {
                    grad = 0.0;
                }
                *w -= config.lr * grad;
            }
            for (j, b) in layer.b.iter_mut().enumerate() {
                *b -= config.lr * gb[l][j] / n;
            }
        }
        if t % 100 == 0 || t + 1 == config.steps {
            let fq = config
                .fake_quant
                .map(|bits| (bits, w_ranges.as_slice(), a_ranges.as_slice()));
            trajectory.push((t, accuracy(&layers, fq, test_x, test_y)));
        }
    }
    // final mask application so the returned weights are actually sparse
    if config.schedule.is_some() {
        for (l, m) in layers.iter_mut().zip(&masks) {
            for (w, &keep) in l.w.iter_mut().zip(m) {
                if keep == 0 {
                    *w = 0.0;
                }
            }
        }
    }

    let fq = config
        .fake_quant
        .map(|bits| (bits, w_ranges.as_slice(), a_ranges.as_slice()));
    let metrics = TrainMetrics {
        train_accuracy: accuracy(&layers, fq, train_x, train_y),
        test_accuracy: accuracy(&layers, fq, test_x, test_y),
        trajectory,
        layer_sparsity: masks.iter().map(|m| mask_sparsity(m)).collect(),
    };

    let mut out = model.clone();
    for layer in &layers {
        out.constants.get_mut(&layer.w_tensor).expect("weight const").payload =
            Payload::F32(layer.w.iter().map(|&w| w as f32).collect());
        if layer.b_tensor != layer.w_tensor {
            out.constants.get_mut(&layer.b_tensor).expect("bias const").payload =
                Payload::F32(layer.b.iter().map(|&b| b as f32).collect());
        }
    }
    Ok((out, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{self, TensorValue};
    use std::collections::BTreeMap;

    fn schedule(s_i: f64, s_f: f64) -> SparsitySchedule {
        SparsitySchedule::new(s_i, s_f, 0, 10, 100).unwrap()
    }

    #[test]
    fn sparsity_endpoints() {
        let s = schedule(0.1, 0.8);
        assert_eq!(s.sparsity_at(0), 0.1);
        assert!((s.sparsity_at(100) - 0.8).abs() < 1e-12);
        assert!((s.sparsity_at(1000) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn sparsity_cubic_midpoint() {
        let s = SparsitySchedule::new(0.0, 0.5, 0, 10, 100).unwrap();
        assert!((s.sparsity_at(50) - 0.4375).abs() < 1e-12);
        let lin = s.with_exponent(1.0).unwrap();
        assert!((lin.sparsity_at(50) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn sparsity_nondecreasing() {
        for &e in &[0.5, 1.0, 3.0] {
            let s = schedule(0.05, 0.9).with_exponent(e).unwrap();
            let mut prev = 0.0;
            for t in 0..150 {
                let v = s.sparsity_at(t);
                assert!(v >= prev - 1e-12, "t={t} exp={e}");
                prev = v;
            }
        }
    }

    #[test]
    fn bad_schedules_rejected() {
        assert!(SparsitySchedule::new(0.5, 0.4, 0, 10, 100).is_err());
        assert!(SparsitySchedule::new(0.0, 0.5, 0, 0, 100).is_err());
        assert!(SparsitySchedule::new(0.0, 0.5, 0, 10, 105).is_err());
        assert!(SparsitySchedule::new(1.0, 1.0, 0, 10, 100).is_err());
    }

    #[test]
    fn update_mask_magnitude_order() {
        let w = vec![0.1, -0.5, 0.3, 0.05];
        let mut m = vec![1u8; 4];
        update_mask(&w, &mut m, 0.0);
        assert_eq!(m, vec![1, 1, 1, 1]);
        update_mask(&w, &mut m, 0.5);
        assert_eq!(m, vec![0, 1, 1, 0]);
        update_mask(&w, &mut m, 1.0);
        assert_eq!(m, vec![0, 0, 0, 0]);
    }

    #[test]
    fn masks_never_revive() {
        let mut rngw: Vec<f64> = (0..40).map(|i| ((i * 37 % 17) as f64 - 8.0) / 10.0).collect();
        let mut m = vec![1u8; 40];
        let mut prev = m.clone();
        for k in 1..=8 {
            update_mask(&rngw, &mut m, k as f64 * 0.1);
            for (a, b) in m.iter().zip(&prev) {
                assert!(a <= b);
            }
            prev = m.clone();
            // change surviving weights; pruned stay pruned regardless
            for (w, &keep) in rngw.iter_mut().zip(&m) {
                if keep == 1 {
                    *w += 0.01;
                }
            }
        }
    }

    #[test]
    fn insert_fake_quant_one_conv() {
        let mut g = Graph::new();
        let x = g.add_input(vec![1, 3, 3, 1], DType::F32);
        let w = g.add_const(vec![2, 2, 1, 1], Payload::F32(vec![0.25; 4]));
        let (cv, co) = g.op(OpKind::Conv2D, vec![x, w], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.set_attr(cv, "strides", AttrValue::Ints(vec![1, 1]));
        g.outputs.push(co);
        let q = insert_fake_quant(&g, 8);
        let fq_count = q.nodes.iter().filter(|n| n.op == OpKind::FakeQuant).count();
        assert_eq!(fq_count, 2);
        let mut q2 = q.clone();
        q2.validate().unwrap();
        // conv now consumes fake-quant outputs, graph output rerouted
        let conv = q.nodes.iter().find(|n| n.op == OpKind::Conv2D).unwrap();
        assert_eq!(q.producer(conv.inputs[1]).unwrap().op, OpKind::FakeQuant);
        assert_eq!(q.producer(q.outputs[0]).unwrap().op, OpKind::FakeQuant);
    }

    #[test]
    fn fake_quant_half_exact_and_idempotent() {
        // affine 255-level grid: round-trip error bounded by half a step,
        // and a second application is exact (grid points are fixed points)
        let y = fake_quant_forward(0.5, -1.0, 1.0, 8);
        assert!((y - 0.5).abs() <= 1.0 / 255.0);
        assert_eq!(fake_quant_forward(y, -1.0, 1.0, 8), y);
        // symmetric interpreter grid represents 0.5 exactly at q_bits=8
        let mut g = Graph::new();
        let x = g.add_input(vec![1], DType::F32);
        let (n1, f1) = g.op(OpKind::FakeQuant, vec![x], vec![1], DType::F32);
        g.set_attr(n1, "q_bits", AttrValue::Int(8));
        let (n2, f2) = g.op(OpKind::FakeQuant, vec![f1], vec![1], DType::F32);
        g.set_attr(n2, "q_bits", AttrValue::Int(8));
        g.outputs.push(f1);
        g.outputs.push(f2);
        let mut inp = BTreeMap::new();
        inp.insert(x, TensorValue::f32(vec![1], vec![0.5]));
        let r = interp::run(&g, &inp).unwrap();
        let once = r.outputs[&f1].as_f32().unwrap()[0];
        let twice = r.outputs[&f2].as_f32().unwrap()[0];
        assert_eq!(once, 0.5);
        assert_eq!(once, twice);
    }

    #[test]
    fn ste_matches_finite_difference_of_clip() {
        let (lo, hi) = (-0.73, 0.91);
        let clip = |x: f64| x.clamp(lo, hi);
        let h = 1e-6;
        let mut x = -1.2;
        while x < 1.2 {
            if (x - lo).abs() > 1e-3 && (x - hi).abs() > 1e-3 {
                let fd = (clip(x + h) - clip(x - h)) / (2.0 * h);
                assert!((ste_grad(x, lo, hi) - fd).abs() < 1e-4, "x={x}");
            }
            x += 0.0137;
        }
    }

    #[test]
    fn train_dense_reaches_high_accuracy() {
        let model = build_mlp(&[2, 8, 2], 7);
        let (trained, m) = train_toy(&model, &TrainConfig::default()).unwrap();
        assert!(m.test_accuracy >= 0.95, "test acc {}", m.test_accuracy);
        // the trained graph itself agrees on a test point (class 0 blob)
        let x = trained.inputs[0];
        let mut inp = BTreeMap::new();
        inp.insert(x, TensorValue::f32(vec![1, 2], vec![1.5, 1.5]));
        let r = interp::run(&trained, &inp).unwrap();
        let probs = r.outputs[&trained.outputs[0]].as_f32().unwrap();
        assert!(probs[0] > probs[1], "probs {probs:?}");
    }

    #[test]
    fn train_sparse_stays_close_to_dense() {
        let model = build_mlp(&[2, 8, 2], 7);
        let dense = train_toy(&model, &TrainConfig::default()).unwrap().1;
        let cfg = TrainConfig {
            schedule: Some(SparsitySchedule::new(0.0, 0.5, 50, 10, 300).unwrap()),
            ..TrainConfig::default()
        };
        let (g, m) = train_toy(&model, &cfg).unwrap();
        let total: usize = g
            .constants
            .values()
            .filter(|c| g.tensors[&c.tensor_id].shape.len() == 2)
            .map(|c| c.payload.to_f64_vec().len())
            .sum();
        for s in &m.layer_sparsity {
            assert!((s - 0.5).abs() <= 1.0 / total as f64 + 1e-9, "sparsity {s}");
        }
        // pruned weights really are zero in the emitted graph
        let zeros: usize = g
            .constants
            .values()
            .filter(|c| g.tensors[&c.tensor_id].shape.len() == 2)
            .map(|c| c.payload.to_f64_vec().iter().filter(|&&w| w == 0.0).count())
            .sum();
        assert!(zeros * 2 >= total, "{zeros}/{total}");
        assert!(
            m.test_accuracy >= dense.test_accuracy - 0.05,
            "sparse {} vs dense {}",
            m.test_accuracy,
            dense.test_accuracy
        );
    }

    #[test]
    fn train_with_fake_quant_still_learns() {
        let model = build_mlp(&[2, 8, 2], 7);
        let cfg = TrainConfig {
            fake_quant: Some(8),
            ..TrainConfig::default()
        };
        let (_, m) = train_toy(&model, &cfg).unwrap();
        assert!(m.test_accuracy >= 0.9, "test acc {}", m.test_accuracy);
    }

    #[test]
    fn zero_steps_keeps_initial_weights() {
        let model = build_mlp(&[2, 4, 2], 3);
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let (g, m) = train_toy(&model, &cfg).unwrap();
        for (t, c) in &g.constants {
            assert_eq!(c.payload, model.constants[t].payload);
        }
        assert!(m.layer_sparsity.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn trainer_rejects_conv() {
        let mut g = Graph::new();
        let x = g.add_input(vec![1, 3, 3, 1], DType::F32);
        let w = g.add_const(vec![2, 2, 1, 1], Payload::F32(vec![0.25; 4]));
        let (cv, co) = g.op(OpKind::Conv2D, vec![x, w], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.set_attr(cv, "strides", AttrValue::Ints(vec![1, 1]));
        g.outputs.push(co);
        assert!(matches!(
            train_toy(&g, &TrainConfig::default()).unwrap_err(),
            PruneError::UnsupportedLayerForTraining(_)
        ));
    }

    #[test]
    fn trainer_deterministic() {
        let model = build_mlp(&[2, 6, 2], 11);
        let cfg = TrainConfig { steps: 50, ..TrainConfig::default() };
        let (g1, m1) = train_toy(&model, &cfg).unwrap();
        let (g2, m2) = train_toy(&model, &cfg).unwrap();
        assert_eq!(m1.test_accuracy, m2.test_accuracy);
        for (t, c) in &g1.constants {
            assert_eq!(c.payload, g2.constants[t].payload);
        }
    }
}
