//! Named optimization pipelines: preset step sequences, pass-list parsing,
//! and the driver that applies steps in order while collecting reports.

use std::collections::{BTreeMap, BTreeSet};

use crate::arith;
use crate::graph::{Graph, OpKind, TensorId};
use crate::interp::TensorValue;
use crate::ops_opt::{self, OpsError, DEFAULT_SEP_TOL};
use crate::quantizer::{quantize_graph, GraphQuantMode, QuantizeOptions};
use crate::report::PassReport;
use crate::structure;

pub const PRESET_NAMES: [&str; 3] = ["smallest", "accurate", "fastest"];

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// Arithmetic simplification to a cost-decreasing fixpoint.
    ArithFixpoint(Vec<String>),
    /// Structural passes applied once each, in order.
    Structure(Vec<String>),
    /// Low-rank separation of every eligible convolution.
    Separate,
    /// Post-training quantization in the given mode.
    Quantize(GraphQuantMode),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineError {
    InvalidPresetName(String),
    UnknownPass(String),
    /// A step failed; `pass` names it for the diagnostic.
    Pass { pass: String, detail: String },
    /// Models under comparison disagree on input/output arity or shapes.
    SignatureMismatch(String),
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub rank: usize,
    pub sep_tol: f64,
    pub max_iters: u32,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            rank: 1,
            sep_tol: DEFAULT_SEP_TOL,
            max_iters: arith::DEFAULT_MAX_ITERS,
        }
    }
}

/// The three recommended joint-optimization sequences.
pub fn preset(name: &str) -> Result<Vec<Step>, PipelineError> {
    match name {
        "smallest" => Ok(vec![
            Step::ArithFixpoint(arith::default_rules()),
            Step::Structure(structure::default_passes()),
            Step::Quantize(GraphQuantMode::Int8FloatFallback),
        ]),
        "accurate" => Ok(vec![
            Step::ArithFixpoint(arith::default_rules()),
            Step::Structure(structure::default_passes()),
            Step::Quantize(GraphQuantMode::Int8Only),
        ]),
        "fastest" => Ok(vec![Step::Separate, Step::Quantize(GraphQuantMode::Float16)]),
        other => Err(PipelineError::InvalidPresetName(other.to_string())),
    }
}

/// Builds a step list from `--passes` tokens. Accepts "arith" (fixpoint over
/// `rules`), the five structural pass names, "ops-sep", and the four
/// quantization mode names. Empty input means no steps.
pub fn parse_pass_list(tokens: &[String], rules: &[String]) -> Result<Vec<Step>, PipelineError> {
    let mut steps = Vec::new();
    for tok in tokens {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        if tok == "arith" {
            steps.push(Step::ArithFixpoint(rules.to_vec()));
        } else if structure::PASS_NAMES.contains(&tok) {
            steps.push(Step::Structure(vec![tok.to_string()]));
        } else if tok == "ops-sep" {
            steps.push(Step::Separate);
        } else if let Some(mode) = GraphQuantMode::parse(tok) {
            steps.push(Step::Quantize(mode));
        } else {
            return Err(PipelineError::UnknownPass(tok.to_string()));
        }
    }
    Ok(steps)
}

fn pass_err(pass: &str, detail: impl std::fmt::Debug) -> PipelineError {
    PipelineError::Pass {
        pass: pass.to_string(),
        detail: format!("{detail:?}"),
    }
}

/// Separates every eligible convolution (non-pointwise kernel, predicted
/// multiplication saving, decomposition within tolerance); leaves the rest
/// unchanged.
fn separate_all(g: &Graph, opts: &PipelineOptions) -> Result<(Graph, PassReport), PipelineError> {
    let mut cur = g.clone();
    let mut report = PassReport::begin("ops_separation", &cur);
    let mut attempted: BTreeSet<u32> = BTreeSet::new();
    let mut sweep = 0;
    loop {
        let candidate = cur.nodes.iter().find(|n| {
            if n.op != OpKind::Conv2D || attempted.contains(&n.id) || n.inputs.len() < 2 {
                return false;
            }
            let fs = &cur.tensor(n.inputs[1]).shape;
            if fs.len() != 4 || (fs[0] == 1 && fs[1] == 1) {
                return false;
            }
            let (before, after, _) = ops_opt::estimate_savings(
                fs[2] as u64,
                fs[0] as u64,
                fs[1] as u64,
                opts.rank as u64,
            );
            after < before
        });
        let Some(node) = candidate else { break };
        let id = node.id;
        attempted.insert(id);
        match ops_opt::separate_conv2d(&cur, id, opts.rank, opts.sep_tol) {
            Ok((next, _)) => {
                sweep += 1;
                report.log_fire("separate_conv2d", sweep, 1);
                cur = next;
            }
            // Not separable at this rank/shape: keep the original node.
            Err(OpsError::RankTooLow { .. })
            | Err(OpsError::BadRank { .. })
            | Err(OpsError::TooLarge)
            | Err(OpsError::UnsupportedConv(_)) => {}
            Err(e) => return Err(pass_err("ops_separation", e)),
        }
    }
    report.finish(&cur);
    Ok((cur, report))
}

/// Applies `steps` in order, returning the final graph and one report per
/// step. `calibration` feeds the int8 quantization modes.
pub fn run_pipeline(
    graph: &Graph,
    steps: &[Step],
    opts: &PipelineOptions,
    calibration: &[BTreeMap<TensorId, TensorValue>],
) -> Result<(Graph, Vec<PassReport>), PipelineError> {
    let mut cur = graph.clone();
    let mut reports = Vec::new();
    for step in steps {
        match step {
            Step::ArithFixpoint(rules) => {
                let (next, report) = arith::simplify_to_fixpoint(&cur, rules, opts.max_iters)
                    .map_err(|e| pass_err("arith_simplify", e))?;
                cur = next;
                reports.push(report);
            }
            Step::Structure(passes) => {
                let mut report = PassReport::begin("structure_opt", &cur);
                for (i, pass) in passes.iter().enumerate() {
                    let fires = structure::apply_pass(pass, &mut cur)
                        .map_err(|e| pass_err(pass, e))?;
                    report.log_fire(pass, i as u32 + 1, fires);
                }
                report.finish(&cur);
                reports.push(report);
            }
            Step::Separate => {
                let (next, report) = separate_all(&cur, opts)?;
                cur = next;
                reports.push(report);
            }
            Step::Quantize(mode) => {
                let qopts = QuantizeOptions::new(*mode);
                let (next, report) = quantize_graph(&cur, &qopts, calibration)
                    .map_err(|e| pass_err("quantize", e))?;
                cur = next;
                reports.push(report);
            }
        }
    }
    Ok((cur, reports))
}

/// Outcome of running two models on the same seeded random inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffVerdict {
    pub samples: u64,
    pub max_abs: f64,
    pub max_rel: f64,
    pub argmax_agreement: f64,
}

impl DiffVerdict {
    /// Equivalence contract: tight numeric agreement, or identical decisions.
    pub fn equivalent(&self) -> bool {
        self.max_rel <= 1e-5 || self.argmax_agreement == 1.0
    }
}

/// Runs both models on `samples` seeded random inputs and reports the worst
/// absolute/relative output deviation plus the argmax agreement rate.
pub fn diff_models(
    a: &Graph,
    b: &Graph,
    samples: u64,
    seed: u64,
) -> Result<DiffVerdict, PipelineError> {
    let sig = |g: &Graph| -> Vec<Vec<usize>> {
        g.inputs.iter().map(|&t| g.tensor(t).shape.clone()).collect()
    };
    if sig(a) != sig(b) || a.outputs.len() != b.outputs.len() {
        return Err(PipelineError::SignatureMismatch(format!(
            "{} in / {} out vs {} in / {} out",
            a.inputs.len(),
            a.outputs.len(),
            b.inputs.len(),
            b.outputs.len()
        )));
    }
    let mut max_abs = 0f64;
    let mut max_rel = 0f64;
    let mut agree = 0u64;
    for i in 0..samples {
        let inputs = crate::corpus::random_inputs(a, seed.wrapping_add(i));
        let ra = crate::interp::run(a, &inputs).map_err(|e| pass_err("diff", e))?;
        let rb = crate::interp::run(b, &inputs).map_err(|e| pass_err("diff", e))?;
        let mut sample_agrees = true;
        for (&ta, &tb) in a.outputs.iter().zip(&b.outputs) {
            let va = &ra.outputs[&ta];
            let vb = &rb.outputs[&tb];
            if crate::interp::argmax_last_axis(va) != crate::interp::argmax_last_axis(vb) {
                sample_agrees = false;
            }
            let (Some(fa), Some(fb)) = (va.as_f32(), vb.as_f32()) else {
                continue;
            };
            for (&x, &y) in fa.iter().zip(fb) {
                let abs = (x as f64 - y as f64).abs();
                max_abs = max_abs.max(abs);
                let denom = (x as f64).abs().max((y as f64).abs()).max(1e-30);
                max_rel = max_rel.max(abs / denom);
            }
        }
        if sample_agrees {
            agree += 1;
        }
    }
    Ok(DiffVerdict {
        samples,
        max_abs,
        max_rel,
        argmax_agreement: if samples == 0 { 1.0 } else { agree as f64 / samples as f64 },
    })
}
