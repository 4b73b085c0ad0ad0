//! Command-line front end: preset pipelines, pass composition, model
//! generation, running, diffing, and corpus generation over `.topt` files.
//!
//! Exit codes: 0 success, 1 pass/equivalence failure, 2 usage error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use noptc::graph::{Graph, TensorId};
use noptc::interp::{self, Data, TensorValue};
use noptc::pipeline::{self, PipelineError, PipelineOptions, Step};
use noptc::prune::{self, SparsitySchedule, TrainConfig};
use noptc::{corpus, report, serdes};

#[derive(Parser)]
#[command(name = "noptc", version, about = "Model-optimization compiler for microcontroller targets")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Apply a preset or a pass list to a model file.
    Optimize(OptimizeArgs),
    /// Run a model on inputs from a JSON file.
    Run(RunArgs),
    /// Compare two models on seeded random inputs.
    Diff(DiffArgs),
    /// Generate a deterministic random-weight model.
    Genmodel(GenmodelArgs),
    /// Train the toy MLP with optional pruning / fake-quant, then save it.
    TrainDemo(TrainDemoArgs),
    /// Write the golden test-corpus model files.
    GenCorpus(GenCorpusArgs),
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// One of: smallest, accurate, fastest.
    #[arg(long, conflicts_with = "passes")]
    preset: Option<String>,
    /// Comma-separated steps: arith, dead, loops, identity, ctrl-reduce,
    /// fuse, ops-sep, weights-only, int8-fallback, int8-only, float16.
    #[arg(long)]
    passes: Option<String>,
    /// Comma-separated arithmetic rules for the "arith" step (default: all).
    #[arg(long)]
    rules: Option<String>,
    /// Separation rank for ops-sep.
    #[arg(long, default_value_t = 1)]
    rank: usize,
    /// Separation reconstruction tolerance (relative to max |weight|).
    #[arg(long, default_value_t = noptc::ops_opt::DEFAULT_SEP_TOL)]
    sep_tol: f64,
    /// Also write the output bytes as a C array to this path.
    #[arg(long)]
    emit_c: Option<PathBuf>,
    /// Write the per-pass JSON report to this path.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Random inputs for the post-preset equivalence check.
    #[arg(long, default_value_t = 1000)]
    samples: u64,
    /// Calibration inputs (JSON, same format as `run --data`; object or
    /// array of objects). Defaults to 8 seeded random samples.
    #[arg(long)]
    calib: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    /// JSON object mapping input tensor ids to {shape, data}.
    #[arg(long)]
    data: PathBuf,
    /// Write op-count statistics JSON here.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct DiffArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long, default_value_t = 1000)]
    samples: u64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenmodelArgs {
    /// mlp or cnn.
    #[arg(long)]
    kind: String,
    /// Layer sizes for mlp, e.g. 2,8,2.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Store a training checkpoint (weights + two optimizer moments).
    #[arg(long)]
    checkpoint: bool,
}

#[derive(Args)]
struct TrainDemoArgs {
    /// Final sparsity for the pruning schedule (0 disables pruning).
    #[arg(long, default_value_t = 0.0)]
    sparsity: f64,
    #[arg(long, default_value_t = 500)]
    steps: u64,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Fake-quantization bit width (quantization-aware training).
    #[arg(long)]
    fake_quant: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Optimize(a) => cmd_optimize(&a),
        Cmd::Run(a) => cmd_run(&a),
        Cmd::Diff(a) => cmd_diff(&a),
        Cmd::Genmodel(a) => cmd_genmodel(&a),
        Cmd::TrainDemo(a) => cmd_train_demo(&a),
        Cmd::GenCorpus(a) => cmd_gen_corpus(&a),
    };
    match code {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("noptc: {msg}");
            ExitCode::from(1)
        }
    }
}

fn usage(msg: String) -> ExitCode {
    eprintln!("noptc: {msg}");
    ExitCode::from(2)
}

fn seed_of(flag: Option<u64>) -> u64 {
    flag.unwrap_or_else(corpus::env_seed)
}

fn load_graph(path: &Path) -> Result<Graph, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serdes::deserialize(&bytes).map_err(|e| format!("{}: {e:?}", path.display()))
}

fn save_graph(path: &Path, g: &Graph, checkpoint: bool) -> Result<(), String> {
    let bin = if checkpoint {
        serdes::serialize_checkpoint(g)
    } else {
        serdes::serialize(g)
    };
    std::fs::write(path, &bin.bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn tensor_map_from_json(v: &serde_json::Value) -> Result<BTreeMap<TensorId, TensorValue>, String> {
    let obj = v.as_object().ok_or("input data must be a JSON object")?;
    let mut map = BTreeMap::new();
    for (key, entry) in obj {
        let id: TensorId = key.parse().map_err(|_| format!("bad tensor id {key:?}"))?;
        let shape: Vec<usize> = serde_json::from_value(entry["shape"].clone())
            .map_err(|e| format!("tensor {key}: bad shape: {e}"))?;
        let data: Vec<f32> = serde_json::from_value(entry["data"].clone())
            .map_err(|e| format!("tensor {key}: bad data: {e}"))?;
        if shape.iter().product::<usize>() != data.len() {
            return Err(format!("tensor {key}: shape/data length mismatch"));
        }
        map.insert(id, TensorValue::f32(shape, data));
    }
    Ok(map)
}

fn tensor_map_to_json(map: &BTreeMap<TensorId, TensorValue>) -> serde_json::Value {
    let mut obj = serde_json::Map::new();
    for (id, val) in map {
        let data: Vec<f64> = match &val.data {
            Data::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Data::I8(v) => v.iter().map(|&x| x as f64).collect(),
            Data::I32(v) => v.iter().map(|&x| x as f64).collect(),
            Data::Bool(v) => v.iter().map(|&x| x as u8 as f64).collect(),
        };
        obj.insert(
            id.to_string(),
            serde_json::json!({ "shape": val.shape, "data": data }),
        );
    }
    serde_json::Value::Object(obj)
}

fn load_calibration(
    path: &Path,
) -> Result<Vec<BTreeMap<TensorId, TensorValue>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    match &v {
        serde_json::Value::Array(items) => items.iter().map(tensor_map_from_json).collect(),
        _ => Ok(vec![tensor_map_from_json(&v)?]),
    }
}

fn pipeline_exit(e: &PipelineError) -> ExitCode {
    match e {
        PipelineError::InvalidPresetName(name) => usage(format!("unknown preset {name:?}")),
        PipelineError::UnknownPass(name) => usage(format!("unknown pass {name:?}")),
        PipelineError::Pass { pass, detail } => {
            eprintln!("noptc: pass {pass} failed: {detail}");
            ExitCode::from(1)
        }
        PipelineError::SignatureMismatch(detail) => {
            eprintln!("noptc: signature mismatch: {detail}");
            ExitCode::from(1)
        }
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

fn cmd_optimize(args: &OptimizeArgs) -> Result<ExitCode, String> {
    let seed = seed_of(args.seed);
    let graph = load_graph(&args.input)?;
    let rules = match &args.rules {
        Some(r) => split_list(r),
        None => noptc::arith::default_rules(),
    };
    let steps: Vec<Step> = if let Some(name) = &args.preset {
        match pipeline::preset(name) {
            Ok(s) => s,
            Err(e) => return Ok(pipeline_exit(&e)),
        }
    } else if let Some(passes) = &args.passes {
        match pipeline::parse_pass_list(&split_list(passes), &rules) {
            Ok(s) => s,
            Err(e) => return Ok(pipeline_exit(&e)),
        }
    } else {
        return Ok(usage("optimize needs --preset or --passes".into()));
    };
    let calibration = match &args.calib {
        Some(path) => load_calibration(path)?,
        None => (0..8)
            .map(|i| corpus::random_inputs(&graph, seed.wrapping_add(1000 + i)))
            .collect(),
    };
    let opts = PipelineOptions {
        rank: args.rank,
        sep_tol: args.sep_tol,
        ..PipelineOptions::default()
    };
    let (optimized, reports) = match pipeline::run_pipeline(&graph, &steps, &opts, &calibration) {
        Ok(r) => r,
        Err(e) => return Ok(pipeline_exit(&e)),
    };
    save_graph(&args.output, &optimized, false)?;
    let bin = serdes::serialize(&optimized);
    if let Some(c_path) = &args.emit_c {
        let symbol = c_symbol(&args.output);
        let text = serdes::emit_c_array(&bin.bytes, &symbol).map_err(|e| format!("{e:?}"))?;
        std::fs::write(c_path, text).map_err(|e| format!("{}: {e}", c_path.display()))?;
    }
    if let Some(r_path) = &args.report {
        std::fs::write(r_path, report::emit_report(&reports))
            .map_err(|e| format!("{}: {e}", r_path.display()))?;
    }
    let in_bytes = std::fs::metadata(&args.input).map(|m| m.len()).unwrap_or(0);
    println!(
        "optimized {} -> {} ({} -> {} bytes, {} passes)",
        args.input.display(),
        args.output.display(),
        in_bytes,
        bin.bytes.len(),
        reports.len()
    );
    if args.preset.is_some() {
        let verdict = match pipeline::diff_models(&graph, &optimized, args.samples, seed) {
            Ok(v) => v,
            Err(e) => return Ok(pipeline_exit(&e)),
        };
        println!(
            "equivalence: max_rel {:.3e}, argmax agreement {:.4}",
            verdict.max_rel, verdict.argmax_agreement
        );
        if verdict.argmax_agreement < 0.99 && !verdict.equivalent() {
            eprintln!("noptc: optimized model diverges from the original");
            return Ok(ExitCode::from(1));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn c_symbol(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let mut sym: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    if sym.chars().next().map_or(true, |c| c.is_ascii_digit()) {
        sym.insert(0, '_');
    }
    sym
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode, String> {
    let graph = load_graph(&args.input)?;
    let text =
        std::fs::read_to_string(&args.data).map_err(|e| format!("{}: {e}", args.data.display()))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", args.data.display()))?;
    let inputs = tensor_map_from_json(&v)?;
    let result = interp::run(&graph, &inputs).map_err(|e| format!("run failed: {e:?}"))?;
    let out: BTreeMap<TensorId, TensorValue> = graph
        .outputs
        .iter()
        .map(|&t| (t, result.outputs[&t].clone()))
        .collect();
    println!("{}", serde_json::to_string_pretty(&tensor_map_to_json(&out)).unwrap());
    if let Some(s_path) = &args.stats {
        let stats = serde_json::json!({
            "mults": result.stats.total.mults,
            "adds": result.stats.total.adds,
            "macs": result.stats.total.macs,
            "conv_mults_per_elem": result.stats.conv_mults_per_elem,
        });
        std::fs::write(s_path, serde_json::to_string_pretty(&stats).unwrap())
            .map_err(|e| format!("{}: {e}", s_path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_diff(args: &DiffArgs) -> Result<ExitCode, String> {
    let a = load_graph(&args.a)?;
    let b = load_graph(&args.b)?;
    let verdict = match pipeline::diff_models(&a, &b, args.samples, seed_of(args.seed)) {
        Ok(v) => v,
        Err(e) => return Ok(pipeline_exit(&e)),
    };
    let doc = serde_json::json!({
        "samples": verdict.samples,
        "max_abs": verdict.max_abs,
        "max_rel": verdict.max_rel,
        "argmax_agreement": verdict.argmax_agreement,
        "equivalent": verdict.equivalent(),
    });
    println!("{}", serde_json::to_string_pretty(&doc).unwrap());
    Ok(if verdict.equivalent() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_genmodel(args: &GenmodelArgs) -> Result<ExitCode, String> {
    let seed = seed_of(args.seed);
    let graph = match args.kind.as_str() {
        "cnn" => corpus::reference_cnn(seed),
        "mlp" => {
            let spec = args.layers.as_deref().unwrap_or("2,8,2");
            let sizes: Result<Vec<usize>, _> =
                split_list(spec).iter().map(|t| t.parse()).collect();
            let sizes = match sizes {
                Ok(s) if s.len() >= 2 => s,
                _ => return Ok(usage(format!("bad --layers {spec:?}"))),
            };
            prune::build_mlp(&sizes, seed)
        }
        other => return Ok(usage(format!("unknown model kind {other:?}"))),
    };
    save_graph(&args.out, &graph, args.checkpoint)?;
    println!(
        "wrote {} ({} parameters{})",
        args.out.display(),
        corpus::param_count(&graph),
        if args.checkpoint { ", checkpoint" } else { "" }
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train_demo(args: &TrainDemoArgs) -> Result<ExitCode, String> {
    if !(0.0..1.0).contains(&args.sparsity) {
        return Ok(usage(format!("--sparsity {} out of [0, 1)", args.sparsity)));
    }
    let seed = seed_of(args.seed);
    let model = prune::build_mlp(&[2, 16, 2], seed);
    let schedule = if args.sparsity > 0.0 {
        let span = (args.steps / 2).max(10);
        Some(
            SparsitySchedule::new(0.0, args.sparsity, 0, 10, span - span % 10)
                .map_err(|e| format!("bad schedule: {e:?}"))?,
        )
    } else {
        None
    };
    let config = TrainConfig {
        steps: args.steps,
        lr: args.lr,
        schedule,
        fake_quant: args.fake_quant,
        seed,
    };
    let (trained, metrics) =
        prune::train_toy(&model, &config).map_err(|e| format!("training failed: {e:?}"))?;
    let trained = match args.fake_quant {
        Some(bits) => prune::insert_fake_quant(&trained, bits as i64),
        None => trained,
    };
    save_graph(&args.out, &trained, false)?;
    println!(
        "wrote {} (train acc {:.3}, test acc {:.3}, sparsity {:?})",
        args.out.display(),
        metrics.train_accuracy,
        metrics.test_accuracy,
        metrics.layer_sparsity
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen_corpus(args: &GenCorpusArgs) -> Result<ExitCode, String> {
    let seed = seed_of(args.seed);
    std::fs::create_dir_all(&args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    let mut written = 0;
    for target in corpus::TARGETS {
        let spec = corpus::GraphGenSpec::new(target, seed);
        let g = corpus::gen_for_target(&spec).map_err(|e| format!("{target}: {e:?}"))?;
        let name = format!("{}_{}.topt", target.replace('-', "_"), seed);
        save_graph(&args.out.join(name), &g, false)?;
        written += 1;
    }
    let cnn = corpus::reference_cnn(seed);
    save_graph(&args.out.join(format!("reference_cnn_{seed}.topt")), &cnn, false)?;
    written += 1;
    println!("wrote {written} corpus files to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}
