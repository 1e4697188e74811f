//! Subcommand implementations behind the `tailcut` binary.
//!
//! Every command reads/writes the containers from [`crate::format`], echoes
//! the seed and SHA-256 digests of its inputs in a JSON report (stdout or
//! `--out`), and is deterministic: identical command lines on identical
//! files produce identical reports and artifacts.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tailcut_core::affinity::{
    coactivation_against_candidates, coactivation_matrix, hot_cdf, io_simulate, reuse_ratio,
    top_avg_gap, top_pairs, ActivationSetTrace, IoSimConfig, DENSE_COACTIVATION_CAP,
};
use tailcut_core::ffn::{ActivationKind, FfnWeights};
use tailcut_core::predictor::{
    predict_scores, predictor_metrics, select_threshold, select_topk, train_predictor,
    ActivationDataset, PredictorParams, PredictorTrainConfig, SelectionResult,
};
use tailcut_core::sparsity::{
    active_set, calibrate, cett, sparse_forward, sparsity_ratio, summarize, InputTrace,
    MagnitudeTrace, ThresholdProvenance, ThresholdTable,
};
use tailcut_core::tensor::{l2_norm, Vector};

use crate::error::{CliError, Result};
use crate::format::{load_ffw1, load_nat1, save_ffw1, save_nat1, TracePayload, WeightsPayload};
use crate::report::{FileDigest, MaskSidecar, Report, ThresholdTableFile};
use crate::synth::{generate, GenSpec, WeightsSource};

#[derive(Parser)]
#[command(
    name = "tailcut",
    version,
    about = "Neuron-level activation sparsity: traces, thresholds, prediction, and I/O analytics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate synthetic FFN weights and an input stream
    Gen(GenArgs),
    /// Run FFNs over recorded inputs and write magnitude/bitmask traces
    Trace(TraceArgs),
    /// Mean truncation error and sparsity at a fixed threshold
    Cett(CettArgs),
    /// Calibrate per-layer thresholds against an error bound
    Threshold(ThresholdArgs),
    /// Compare sparse and full forward passes over a trace
    SparseEval(SparseEvalArgs),
    /// Train per-layer activation predictors from a trace
    PredictorTrain(PredictorTrainArgs),
    /// Evaluate predictor recall and prediction sparsity
    PredictorEval(PredictorEvalArgs),
    /// Reuse ratio, co-activation, and hot-neuron statistics
    Affinity(AffinityArgs),
    /// Sliding-window parameter-I/O cache simulation
    Iosim(IosimArgs),
    /// Merge prior reports into one summary
    Report(ReportArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Trace(a) => run_trace(a),
        Command::Cett(a) => run_cett(a),
        Command::Threshold(a) => run_threshold(a),
        Command::SparseEval(a) => run_sparse_eval(a),
        Command::PredictorTrain(a) => run_predictor_train(a),
        Command::PredictorEval(a) => run_predictor_eval(a),
        Command::Affinity(a) => run_affinity(a),
        Command::Iosim(a) => run_iosim(a),
        Command::Report(a) => run_report(a),
    }
}

fn parse_kind(s: &str) -> std::result::Result<ActivationKind, String> {
    ActivationKind::from_name(s)
        .ok_or_else(|| format!("unknown activation kind {s:?} (relu|relu2|silu|gelu|reglu|swiglu)"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algorithm {
    /// Binary search over the candidate quantiles
    Alg1,
    /// Exhaustive scan of every candidate (the assumption-free oracle)
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    /// Predict the top fraction of scores active
    Topk,
    /// Predict scores above 0.5 active
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AffinityMetric {
    Reuse,
    Coact,
    Cdf,
    All,
}

// ---------------------------------------------------------------------------
// shared loading helpers
// ---------------------------------------------------------------------------

fn load_layer_weights(paths: &[PathBuf]) -> Result<Vec<FfnWeights<f32>>> {
    if paths.is_empty() {
        return Err(CliError::Usage(
            "at least one --weights file required".into(),
        ));
    }
    paths
        .iter()
        .map(|p| match load_ffw1(p)? {
            WeightsPayload::Ffn(w) => Ok(w),
            WeightsPayload::Predictor(_) => Err(CliError::Usage(format!(
                "{} holds a predictor, expected FFN weights",
                p.display()
            ))),
        })
        .collect()
}

fn load_predictors(paths: &[PathBuf]) -> Result<Vec<PredictorParams<f32>>> {
    paths
        .iter()
        .map(|p| match load_ffw1(p)? {
            WeightsPayload::Predictor(w) => Ok(w),
            WeightsPayload::Ffn(_) => Err(CliError::Usage(format!(
                "{} holds FFN weights, expected a predictor",
                p.display()
            ))),
        })
        .collect()
}

fn load_inputs(path: &Path) -> Result<InputTrace<f32>> {
    match load_nat1(path)? {
        TracePayload::Inputs(i) => Ok(i),
        _ => Err(CliError::Usage(format!(
            "{} is not an inputs trace (record kind 2)",
            path.display()
        ))),
    }
}

fn load_magnitudes(path: &Path) -> Result<MagnitudeTrace<f32>> {
    match load_nat1(path)? {
        TracePayload::Magnitudes(m) => Ok(m),
        _ => Err(CliError::Usage(format!(
            "{} is not a magnitude trace (record kind 0)",
            path.display()
        ))),
    }
}

fn load_mask(path: &Path) -> Result<ActivationSetTrace> {
    match load_nat1(path)? {
        TracePayload::Masks(m) => Ok(m),
        _ => Err(CliError::Usage(format!(
            "{} is not a bitmask trace (record kind 1)",
            path.display()
        ))),
    }
}

/// Magnitude trace with inputs attached: reuse a recorded magnitudes file
/// when given, otherwise recompute from the weights.
fn magnitude_trace_with_inputs(
    weights: &[FfnWeights<f32>],
    trace_path: Option<&Path>,
    inputs_path: &Path,
) -> Result<MagnitudeTrace<f32>> {
    let inputs = load_inputs(inputs_path)?;
    if inputs.n_layers() != weights.len() {
        return Err(CliError::Usage(format!(
            "{} weight files for {} trace layers",
            weights.len(),
            inputs.n_layers()
        )));
    }
    match trace_path {
        Some(p) => {
            let mags = load_magnitudes(p)?;
            Ok(MagnitudeTrace::new(
                mags.n_tokens(),
                mags.n_layers(),
                mags.d_ff(),
                mags.all_magnitudes().to_vec(),
                Some(inputs),
            )?)
        }
        None => Ok(MagnitudeTrace::compute(weights, inputs)?),
    }
}

fn load_table(path: &Path) -> Result<ThresholdTable<f32>> {
    ThresholdTableFile::load(path)?.to_table()
}

fn mask_from_args(
    mask: Option<&Path>,
    trace: Option<&Path>,
    thresholds: Option<&Path>,
) -> Result<(ActivationSetTrace, Vec<PathBuf>)> {
    match (mask, trace, thresholds) {
        (Some(m), _, _) => Ok((load_mask(m)?, vec![m.to_path_buf()])),
        (None, Some(t), Some(th)) => {
            let mags = load_magnitudes(t)?;
            let table = load_table(th)?;
            Ok((
                ActivationSetTrace::from_magnitudes(&mags, &table)?,
                vec![t.to_path_buf(), th.to_path_buf()],
            ))
        }
        _ => Err(CliError::Usage(
            "need either --mask, or --trace together with --thresholds".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct GenArgs {
    /// Activation kind: relu, relu2, silu, gelu, reglu, swiglu
    #[arg(long, value_parser = parse_kind)]
    pub kind: ActivationKind,
    #[arg(long, default_value_t = 16)]
    pub d_model: usize,
    #[arg(long, default_value_t = 64)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    /// Tokens to generate (corpus-scale runs use 131072)
    #[arg(long, default_value_t = 4096)]
    pub tokens: usize,
    /// Token-to-token input autocorrelation in [0, 1]
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    /// Distill each layer from a random teacher instead of raw Gaussian init
    #[arg(long)]
    pub trained: bool,
    #[arg(long, default_value_t = 2000)]
    pub train_steps: usize,
    #[arg(long, default_value_t = 16)]
    pub train_batch: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub train_lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub train_momentum: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for weights_l<i>.ffw1 and inputs.nat1
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Write the report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct GenMetrics {
    kind: String,
    d_model: usize,
    d_ff: usize,
    n_layers: usize,
    n_tokens: usize,
    rho: f64,
    generator: String,
}

pub fn weights_path(dir: &Path, layer: usize) -> PathBuf {
    dir.join(format!("weights_l{layer}.ffw1"))
}

pub fn inputs_path(dir: &Path) -> PathBuf {
    dir.join("inputs.nat1")
}

fn run_gen(args: GenArgs) -> Result<()> {
    let source = if args.trained {
        WeightsSource::ToyTrained {
            steps: args.train_steps,
            batch_size: args.train_batch,
            learning_rate: args.train_lr,
            momentum: args.train_momentum,
        }
    } else {
        WeightsSource::Random
    };
    let spec = GenSpec {
        kind: args.kind,
        d_model: args.d_model,
        d_ff: args.d_ff,
        n_layers: args.layers,
        n_tokens: args.tokens,
        rho: args.rho,
        source,
        seed: args.seed,
    };
    let (weights, inputs) = generate(&spec)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let mut report = Report::new(
        "gen",
        Some(args.seed),
        GenMetrics {
            kind: args.kind.name().into(),
            d_model: args.d_model,
            d_ff: args.d_ff,
            n_layers: args.layers,
            n_tokens: args.tokens,
            rho: args.rho,
            generator: if args.trained {
                "toy-trained"
            } else {
                "random"
            }
            .into(),
        },
    );
    for (layer, w) in weights.iter().enumerate() {
        let path = weights_path(&args.out_dir, layer);
        save_ffw1(&path, &WeightsPayload::Ffn(w.clone()))?;
        report = report.with_output(&path)?;
    }
    let ipath = inputs_path(&args.out_dir);
    save_nat1(&ipath, &TracePayload::Inputs(inputs))?;
    report = report.with_output(&ipath)?;
    report.emit(args.out.as_deref())
}

// ---------------------------------------------------------------------------
// trace
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TraceArgs {
    /// FFN weights, one file per layer, in layer order
    #[arg(long, required = true)]
    pub weights: Vec<PathBuf>,
    /// Inputs trace (NAT1 record kind 2)
    #[arg(long)]
    pub inputs: PathBuf,
    /// Write f32 neuron output magnitudes here (NAT1 record kind 0)
    #[arg(long)]
    pub magnitudes_out: Option<PathBuf>,
    /// Write bitmask activation sets here (NAT1 record kind 1); requires --thresholds
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
    /// Threshold table JSON used to cut the bitmask
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TraceMetrics {
    n_tokens: usize,
    n_layers: usize,
    d_ff: usize,
    emitted: Vec<String>,
}

fn run_trace(args: TraceArgs) -> Result<()> {
    if args.magnitudes_out.is_none() && args.mask_out.is_none() {
        return Err(CliError::Usage(
            "nothing to do: pass --magnitudes-out and/or --mask-out".into(),
        ));
    }
    let weights = load_layer_weights(&args.weights)?;
    let inputs = load_inputs(&args.inputs)?;
    if inputs.n_layers() != weights.len() {
        return Err(CliError::Usage(format!(
            "{} weight files for {} input layers",
            weights.len(),
            inputs.n_layers()
        )));
    }
    let trace = MagnitudeTrace::compute(&weights, inputs)?;
    let mut emitted = Vec::new();
    let mut report = Report::new(
        "trace",
        None,
        TraceMetrics {
            n_tokens: trace.n_tokens(),
            n_layers: trace.n_layers(),
            d_ff: trace.d_ff(),
            emitted: Vec::new(),
        },
    )
    .with_inputs(&args.weights)?
    .with_input(&args.inputs)?;

    if let Some(path) = &args.magnitudes_out {
        let bare = MagnitudeTrace::new(
            trace.n_tokens(),
            trace.n_layers(),
            trace.d_ff(),
            trace.all_magnitudes().to_vec(),
            None,
        )?;
        save_nat1(path, &TracePayload::Magnitudes(bare))?;
        report = report.with_output(path)?;
        emitted.push("magnitudes".to_string());
    }
    if let Some(path) = &args.mask_out {
        let table_path = args
            .thresholds
            .as_ref()
            .ok_or_else(|| CliError::Usage("--mask-out requires --thresholds".into()))?;
        let table_file = ThresholdTableFile::load(table_path)?;
        let table = table_file.to_table()?;
        let mask = ActivationSetTrace::from_magnitudes(&trace, &table)?;
        save_nat1(path, &TracePayload::Masks(mask))?;
        let sidecar = MaskSidecar {
            schema_version: crate::report::REPORT_SCHEMA_VERSION,
            bound: table_file.bound,
            provenance: table_file.provenance.clone(),
            epsilons: table_file.epsilons.clone(),
            source_weights: args
                .weights
                .iter()
                .map(|p| FileDigest::of(p))
                .collect::<Result<_>>()?,
            source_inputs: Some(FileDigest::of(&args.inputs)?),
        };
        sidecar.save(path)?;
        report = report.with_output(path)?;
        report = report.with_output(&MaskSidecar::path_for(path))?;
        emitted.push("mask".to_string());
    }
    report.metrics.emitted = emitted;
    report.emit(args.out.as_deref())
}

// ---------------------------------------------------------------------------
// cett
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct CettArgs {
    #[arg(long, required = true)]
    pub weights: Vec<PathBuf>,
    #[arg(long)]
    pub inputs: PathBuf,
    /// One threshold applied to every layer
    #[arg(long, conflicts_with = "thresholds")]
    pub epsilon: Option<f64>,
    /// Threshold table JSON (per-layer thresholds)
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SparsitySummaryMetrics {
    bound: Option<f64>,
    epsilons: Vec<f64>,
    per_layer_mean_cett: Vec<f64>,
    per_layer_sparsity: Vec<f64>,
    overall_mean_cett: f64,
    overall_sparsity: f64,
}

fn run_cett(args: CettArgs) -> Result<()> {
    let weights = load_layer_weights(&args.weights)?;
    let inputs = load_inputs(&args.inputs)?;
    let trace = MagnitudeTrace::compute(&weights, inputs)?;
    let (table, shown_bound) = match (&args.epsilon, &args.thresholds) {
        (Some(e), None) => (
            ThresholdTable::new(
                vec![*e as f32; weights.len()],
                1.0,
                ThresholdProvenance::Manual,
            )?,
            None,
        ),
        (None, Some(path)) => {
            let file = ThresholdTableFile::load(path)?;
            let bound = file.bound;
            (file.to_table()?, Some(bound))
        }
        _ => {
            return Err(CliError::Usage(
                "pass exactly one of --epsilon or --thresholds".into(),
            ))
        }
    };
    let summary = summarize(&weights, &trace, &table)?;
    let report = Report::new(
        "cett",
        None,
        SparsitySummaryMetrics {
            bound: shown_bound,
            epsilons: summary.thresholds.clone(),
            per_layer_mean_cett: summary.per_layer_cett.clone(),
            per_layer_sparsity: summary.per_layer_sparsity.clone(),
            overall_mean_cett: summary.overall_cett,
            overall_sparsity: summary.overall_sparsity,
        },
    )
    .with_inputs(&args.weights)?
    .with_input(&args.inputs)?;
    report.emit(args.out.as_deref())
}

// ---------------------------------------------------------------------------
// threshold
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct ThresholdArgs {
    #[arg(long, required = true)]
    pub weights: Vec<PathBuf>,
    #[arg(long)]
    pub inputs: PathBuf,
    /// Reuse a recorded magnitude trace instead of recomputing it
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Target upper bound on the mean truncation error
    #[arg(long, default_value_t = 0.2)]
    pub bound: f64,
    /// Number of candidate quantiles per layer
    #[arg(long, default_value_t = 1000)]
    pub candidates: usize,
    #[arg(long, value_enum, default_value_t = Algorithm::Alg1)]
    pub algorithm: Algorithm,
    /// Write the calibrated threshold table JSON here
    #[arg(long)]
    pub table_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ThresholdMetrics {
    bound: f64,
    algorithm: String,
    candidates: usize,
    epsilons: Vec<f64>,
    per_layer_mean_cett: Vec<f64>,
    per_layer_sparsity: Vec<f64>,
    overall_mean_cett: f64,
    overall_sparsity: f64,
}

fn run_threshold(args: ThresholdArgs) -> Result<()> {
    let weights = load_layer_weights(&args.weights)?;
    let trace = magnitude_trace_with_inputs(&weights, args.trace.as_deref(), &args.inputs)?;
    let provenance = match args.algorithm {
        Algorithm::Alg1 => ThresholdProvenance::Algorithm1,
        Algorithm::Exact => ThresholdProvenance::ExactScan,
    };
    let table = calibrate(
        &weights,
        &trace,
        args.bound as f32,
        args.candidates,
        provenance,
    )?;
    let summary = summarize(&weights, &trace, &table)?;
    if let Some(path) = &args.table_out {
        // Keep the user's f64 bound in the artifact rather than the widened f32.
        let mut file = ThresholdTableFile::from_table(&table);
        file.bound = args.bound;
        file.save(path)?;
    }
    let mut report = Report::new(
        "threshold",
        None,
        ThresholdMetrics {
            bound: args.bound,
            algorithm: match args.algorithm {
                Algorithm::Alg1 => "alg1".into(),
                Algorithm::Exact => "exact".into(),
            },
            candidates: args.candidates,
            epsilons: summary.thresholds.clone(),
            per_layer_mean_cett: summary.per_layer_cett.clone(),
            per_layer_sparsity: summary.per_layer_sparsity.clone(),
            overall_mean_cett: summary.overall_cett,
            overall_sparsity: summary.overall_sparsity,
        },
    )
    .with_inputs(&args.weights)?
    .with_input(&args.inputs)?;
    if let Some(t) = &args.trace {
        report = report.with_input(t)?;
    }
    if let Some(path) = &args.table_out {
        report = report.with_output(path)?;
    }
    report.emit(args.out.as_deref())
}

// ---------------------------------------------------------------------------
// sparse-eval
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct SparseEvalArgs {
    #[arg(long, required = true)]
    pub weights: Vec<PathBuf>,
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long)]
    pub thresholds: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SparseEvalLayer {
    epsilon: f64,
    mean_relative_error: f64,
    max_relative_error: f64,
    mean_sparsity: f64,
    /// Largest |residual-route − cett-route| disagreement observed.
    max_route_divergence: f64,
}

#[derive(Serialize)]
struct SparseEvalMetrics {
    per_layer: Vec<SparseEvalLayer>,
    overall_mean_relative_error: f64,
    overall_mean_sparsity: f64,
}

fn run_sparse_eval(args: SparseEvalArgs) -> Result<()> {
    let weights = load_layer_weights(&args.weights)?;
    let inputs = load_inputs(&args.inputs)?;
    let table = load_table(&args.thresholds)?;
    if table.epsilons.len() != weights.len() {
        return Err(CliError::Usage(
            "threshold table layer count != weights count".into(),
        ));
    }
    let n_tokens = inputs.n_tokens();
    let mut per_layer = Vec::new();
    for (layer, w) in weights.iter().enumerate() {
        let eps = table.epsilons[layer];
        let mut err_sum = 0.0f64;
        let mut err_max = 0.0f64;
        let mut ratio_sum = 0.0f64;
        let mut route_div = 0.0f64;
        let mut eligible = 0usize;
        for token in 0..n_tokens {
            let x = Vector::new(inputs.input(token, layer).to_vec())?;
            let full = w.forward(&x)?;
            let sparse = sparse_forward(w, &x, eps)?;
            let mut diff_sq = 0.0f64;
            for (f, s) in full.iter().zip(sparse.iter()) {
                let d = (*f - *s) as f64;
                diff_sq += d * d;
            }
            let full_norm = l2_norm(&full) as f64;
            ratio_sum += sparsity_ratio(&w.evaluate(&x)?.magnitudes, eps) as f64;
            if full_norm == 0.0 {
                continue;
            }
            eligible += 1;
            let residual = diff_sq.sqrt() / full_norm;
            let via_cett = cett(w, &x, eps)? as f64;
            err_sum += residual;
            err_max = err_max.max(residual);
            route_div = route_div.max((residual - via_cett).abs());
        }
        per_layer.push(SparseEvalLayer {
            epsilon: eps as f64,
            mean_relative_error: if eligible == 0 {
                0.0
            } else {
                err_sum / eligible as f64
            },
            max_relative_error: err_max,
            mean_sparsity: ratio_sum / n_tokens as f64,
            max_route_divergence: route_div,
        });
    }
    let overall_err =
        per_layer.iter().map(|l| l.mean_relative_error).sum::<f64>() / per_layer.len() as f64;
    let overall_sparsity =
        per_layer.iter().map(|l| l.mean_sparsity).sum::<f64>() / per_layer.len() as f64;
    let report = Report::new(
        "sparse-eval",
        None,
        SparseEvalMetrics {
            per_layer,
            overall_mean_relative_error: overall_err,
            overall_mean_sparsity: overall_sparsity,
        },
    )
    .with_inputs(&args.weights)?
    .with_input(&args.inputs)?
    .with_input(&args.thresholds)?;
    report.emit(args.out.as_deref())
}

// ---------------------------------------------------------------------------
// predictor-train
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct PredictorTrainArgs {
    #[arg(long, required = true)]
    pub weights: Vec<PathBuf>,
    #[arg(long)]
    pub inputs: PathBuf,
    /// Reuse a recorded magnitude trace instead of recomputing it
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub thresholds: PathBuf,
    /// Low-rank width; defaults to the ~6%-of-FFN sizing rule
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for predictor_l<i>.ffw1
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct PredictorTrainLayer {
    rank: usize,
    predictor_params: usize,
    ffn_params: usize,
    size_ratio: f64,
    initial_loss: f64,
    final_loss: f64,
}

#[derive(Serialize)]
struct PredictorTrainMetrics {
    epochs: usize,
    batch_size: usize,
    per_layer: Vec<PredictorTrainLayer>,
}

pub fn predictor_path(dir: &Path, layer: usize) -> PathBuf {
    dir.join(format!("predictor_l{layer}.ffw1"))
}

fn run_predictor_train(args: PredictorTrainArgs) -> Result<()> {
    let weights = load_layer_weights(&args.weights)?;
    let trace = magnitude_trace_with_inputs(&weights, args.trace.as_deref(), &args.inputs)?;
    let table = load_table(&args.thresholds)?;
    if table.epsilons.len() != weights.len() {
        return Err(CliError::Usage(
            "threshold table layer count != weights count".into(),
        ));
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let mut per_layer = Vec::new();
    let mut report = Report::new(
        "predictor-train",
        Some(args.seed),
        PredictorTrainMetrics {
            epochs: args.epochs,
            batch_size: args.batch_size,
            per_layer: Vec::new(),
        },
    )
    .with_inputs(&args.weights)?
    .with_input(&args.inputs)?
    .with_input(&args.thresholds)?;

    for (layer, w) in weights.iter().enumerate() {
        let data = ActivationDataset::from_trace(&trace, layer, table.epsilons[layer])?;
        let rank = args.rank.unwrap_or_else(|| {
            PredictorParams::<f32>::default_rank(w.d_model(), w.d_ff(), w.kind().matrix_count())
        });
        let cfg = PredictorTrainConfig {
            rank,
            epochs: args.epochs,
            batch_size: args.batch_size,
            learning_rate: args.lr,
            momentum: args.momentum,
            seed: args.seed.wrapping_add(layer as u64),
        };
        let outcome = train_predictor(&data, &cfg)?;
        let path = predictor_path(&args.out_dir, layer);
        save_ffw1(&path, &WeightsPayload::Predictor(outcome.params.clone()))?;
        report = report.with_output(&path)?;
        per_layer.push(PredictorTrainLayer {
            rank,
            predictor_params: outcome.params.param_count(),
            ffn_params: w.param_count(),
            size_ratio: outcome.params.param_count() as f64 / w.param_count() as f64,
            initial_loss: outcome.initial_loss,
            final_loss: outcome.final_loss,
        });
    }
    report.metrics.per_layer = per_layer;
    report.emit(args.out.as_deref())
}

// ---------------------------------------------------------------------------
// predictor-eval
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct PredictorEvalArgs {
    /// Trained predictors, one per layer (omit with --oracle)
    #[arg(long)]
    pub predictor: Vec<PathBuf>,
    /// Score truly active neurons 1 and the rest 0 instead of a predictor
    #[arg(long)]
    pub oracle: bool,
    /// Magnitude trace (record kind 0) supplying the ground truth
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long)]
    pub thresholds: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: Strategy,
    /// Active fraction for the top-k strategy
    #[arg(long, default_value_t = 0.2)]
    pub fraction: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct PredictorEvalLayer {
    mean_recall: f64,
    mean_prediction_sparsity: f64,
    recall_tokens: usize,
}

#[derive(Serialize)]
struct PredictorEvalMetrics {
    strategy: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    fraction: Option<f64>,
    oracle: bool,
    per_layer: Vec<PredictorEvalLayer>,
    /// Flat means over all (token, layer) pairs.
    mean_recall: f64,
    mean_prediction_sparsity: f64,
}

fn run_predictor_eval(args: PredictorEvalArgs) -> Result<()> {
    let mags = load_magnitudes(&args.trace)?;
    let inputs = load_inputs(&args.inputs)?;
    if inputs.n_tokens() != mags.n_tokens() || inputs.n_layers() != mags.n_layers() {
        return Err(CliError::Usage(
            "inputs and magnitude trace dimensions differ".into(),
        ));
    }
    let table = load_table(&args.thresholds)?;
    if table.epsilons.len() != mags.n_layers() {
        return Err(CliError::Usage(
            "threshold table layer count != trace layer count".into(),
        ));
    }
    let predictors = if args.oracle {
        Vec::new()
    } else {
        if args.predictor.len() != mags.n_layers() {
            return Err(CliError::Usage(format!(
                "{} predictors for {} layers (or pass --oracle)",
                args.predictor.len(),
                mags.n_layers()
            )));
        }
        load_predictors(&args.predictor)?
    };

    let d_ff = mags.d_ff();
    let mut per_layer = Vec::new();
    let mut flat_recall_sum = 0.0f64;
    let mut flat_recall_n = 0usize;
    let mut flat_sparsity_sum = 0.0f64;
    let mut flat_sparsity_n = 0usize;
    for layer in 0..mags.n_layers() {
        let eps = table.epsilons[layer];
        let mut recall_sum = 0.0f64;
        let mut recall_n = 0usize;
        let mut sparsity_sum = 0.0f64;
        for token in 0..mags.n_tokens() {
            let truth = active_set(mags.magnitudes(token, layer), eps);
            let scores = if args.oracle {
                let mut s = vec![0.0f32; d_ff];
                for &i in &truth {
                    s[i as usize] = 1.0;
                }
                Vector::new(s)?
            } else {
                let x = Vector::new(inputs.input(token, layer).to_vec())?;
                predict_scores(&predictors[layer], &x)?
            };
            let selection: SelectionResult<f32> = match args.strategy {
                Strategy::Topk => select_topk(&scores, args.fraction)?,
                Strategy::Threshold => select_threshold(&scores),
            };
            let (recall, prediction_sparsity) = predictor_metrics(&selection.active, &truth, d_ff);
            if let Some(r) = recall {
                recall_sum += r;
                recall_n += 1;
                flat_recall_sum += r;
                flat_recall_n += 1;
            }
            sparsity_sum += prediction_sparsity;
            flat_sparsity_sum += prediction_sparsity;
            flat_sparsity_n += 1;
        }
        per_layer.push(PredictorEvalLayer {
            mean_recall: if recall_n == 0 {
                0.0
            } else {
                recall_sum / recall_n as f64
            },
            mean_prediction_sparsity: sparsity_sum / mags.n_tokens() as f64,
            recall_tokens: recall_n,
        });
    }
    let mut report = Report::new(
        "predictor-eval",
        None,
        PredictorEvalMetrics {
            strategy: match args.strategy {
                Strategy::Topk => "topk".into(),
                Strategy::Threshold => "threshold".into(),
            },
            fraction: matches!(args.strategy, Strategy::Topk).then_some(args.fraction),
            oracle: args.oracle,
            per_layer,
            mean_recall: if flat_recall_n == 0 {
                0.0
            } else {
                flat_recall_sum / flat_recall_n as f64
            },
            mean_prediction_sparsity: flat_sparsity_sum / flat_sparsity_n as f64,
        },
    )
    .with_input(&args.trace)?
    .with_input(&args.inputs)?
    .with_input(&args.thresholds)?;
    for p in &args.predictor {
        report = report.with_input(p)?;
    }
    report.emit(args.out.as_deref())
}

// ---------------------------------------------------------------------------
// affinity
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct AffinityArgs {
    /// Bitmask trace (record kind 1)
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Magnitude trace, thresholded on the fly with --thresholds
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = AffinityMetric::All)]
    pub metric: AffinityMetric,
    /// Sliding-window size for the reuse ratio
    #[arg(long, default_value_t = 1)]
    pub window: usize,
    /// Points on the hot-neuron CDF grid
    #[arg(long, default_value_t = 20)]
    pub cdf_points: usize,
    /// Ranked co-activated pairs to report
    #[arg(long, default_value_t = 10)]
    pub pairs: usize,
    /// Dense co-activation cap override (candidate fallback above it)
    #[arg(long, default_value_t = DENSE_COACTIVATION_CAP)]
    pub dense_cap: usize,
    /// Per-layer CSV: layer, activation_ratio, reuse_ratio, top_avg_gap
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// CDF CSV: layer, p, cdf
    #[arg(long)]
    pub cdf_csv: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct AffinityLayer {
    activation_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    reuse_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_avg_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap_is_estimate: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_pairs: Option<Vec<(u32, u32, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cdf: Option<Vec<(f64, f64)>>,
}

#[derive(Serialize)]
struct AffinityMetrics {
    window: usize,
    per_layer: Vec<AffinityLayer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    overall_reuse_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    overall_top_avg_gap: Option<f64>,
}

fn run_affinity(args: AffinityArgs) -> Result<()> {
    let (trace, input_paths) = mask_from_args(
        args.mask.as_deref(),
        args.trace.as_deref(),
        args.thresholds.as_deref(),
    )?;
    let want = |m: AffinityMetric| args.metric == m || args.metric == AffinityMetric::All;
    let mut per_layer = Vec::new();
    for layer in 0..trace.n_layers() {
        let activation_ratio = trace.activation_ratio(layer)?;
        let reuse = if want(AffinityMetric::Reuse) {
            Some(reuse_ratio(&trace, layer, args.window)?)
        } else {
            None
        };
        let (gap, estimate, pairs) = if want(AffinityMetric::Coact) {
            if trace.d_ff() <= args.dense_cap {
                let m = coactivation_matrix(&trace, layer)?;
                (
                    Some(top_avg_gap(&m)),
                    Some(false),
                    Some(top_pairs(&m, args.pairs)),
                )
            } else {
                // Candidate fallback: row maxima over the hottest columns
                // only, so the gap is a lower-bound estimate.
                let cand = coactivation_against_candidates(&trace, layer, 256)?;
                let width = cand.candidates.len();
                let d = trace.d_ff() as f64;
                let mut max_sum = 0.0;
                let mut all_sum = 0.0;
                let mut ranked: Vec<(u32, u32, f64)> = Vec::new();
                for i in 0..trace.d_ff() {
                    let row = &cand.values[i * width..(i + 1) * width];
                    let mut row_max = 0.0f64;
                    for (slot, &v) in row.iter().enumerate() {
                        all_sum += v;
                        row_max = row_max.max(v);
                        if v > 0.0 {
                            ranked.push((i as u32, cand.candidates[slot], v));
                        }
                    }
                    max_sum += row_max;
                }
                ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
                ranked.truncate(args.pairs);
                (
                    Some(max_sum / d - all_sum / (d * d)),
                    Some(true),
                    Some(ranked),
                )
            }
        } else {
            (None, None, None)
        };
        let cdf = if want(AffinityMetric::Cdf) {
            let grid: Vec<f64> = (1..=args.cdf_points)
                .map(|k| k as f64 / args.cdf_points as f64)
                .collect();
            Some(hot_cdf(&trace, layer, &grid)?)
        } else {
            None
        };
        per_layer.push(AffinityLayer {
            activation_ratio,
            reuse_ratio: reuse,
            top_avg_gap: gap,
            gap_is_estimate: estimate,
            top_pairs: pairs,
            cdf,
        });
    }
    let overall_reuse = per_layer
        .iter()
        .map(|l| l.reuse_ratio)
        .collect::<Option<Vec<_>>>()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64);
    let overall_gap = per_layer
        .iter()
        .map(|l| l.top_avg_gap)
        .collect::<Option<Vec<_>>>()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64);

    if let Some(path) = &args.csv {
        let mut csv = String::from("layer,activation_ratio,reuse_ratio,top_avg_gap\n");
        for (layer, l) in per_layer.iter().enumerate() {
            let reuse = l.reuse_ratio.map(|v| v.to_string()).unwrap_or_default();
            let gap = l.top_avg_gap.map(|v| v.to_string()).unwrap_or_default();
            csv.push_str(&format!("{layer},{},{reuse},{gap}\n", l.activation_ratio));
        }
        std::fs::write(path, csv)?;
    }
    if let Some(path) = &args.cdf_csv {
        let mut csv = String::from("layer,p,cdf\n");
        for (layer, l) in per_layer.iter().enumerate() {
            if let Some(curve) = &l.cdf {
                for (p, v) in curve {
                    csv.push_str(&format!("{layer},{p},{v}\n"));
                }
            }
        }
        std::fs::write(path, csv)?;
    }

    let mut report = Report::new(
        "affinity",
        None,
        AffinityMetrics {
            window: args.window,
            per_layer,
            overall_reuse_ratio: overall_reuse,
            overall_top_avg_gap: overall_gap,
        },
    )
    .with_inputs(&input_paths)?;
    if let Some(path) = &args.csv {
        report = report.with_output(path)?;
    }
    if let Some(path) = &args.cdf_csv {
        report = report.with_output(path)?;
    }
    report.emit(args.out.as_deref())
}

// ---------------------------------------------------------------------------
// iosim
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct IosimArgs {
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Sliding-window size (0 = no cache)
    #[arg(long, default_value_t = 1)]
    pub window: usize,
    /// Bytes per fetched neuron; derived from --weights when omitted
    #[arg(long)]
    pub bytes_per_neuron: Option<u64>,
    /// FFN weights used to derive bytes per neuron
    #[arg(long)]
    pub weights: Vec<PathBuf>,
    /// Clear the cache every N tokens (document boundaries)
    #[arg(long)]
    pub reset_period: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct IosimLayer {
    total_bytes: u64,
    baseline_bytes: u64,
    reduction: f64,
}

#[derive(Serialize)]
struct IosimMetrics {
    window: usize,
    bytes_per_neuron: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    reset_period: Option<u64>,
    per_layer: Vec<IosimLayer>,
    total_bytes: u64,
    baseline_bytes: u64,
    reduction: f64,
}

fn run_iosim(args: IosimArgs) -> Result<()> {
    let (trace, mut input_paths) = mask_from_args(
        args.mask.as_deref(),
        args.trace.as_deref(),
        args.thresholds.as_deref(),
    )?;
    let bytes_per_neuron = match args.bytes_per_neuron {
        Some(b) => b,
        None => {
            if args.weights.is_empty() {
                return Err(CliError::Usage(
                    "pass --bytes-per-neuron or --weights to derive it".into(),
                ));
            }
            let w = load_layer_weights(&args.weights)?;
            input_paths.extend(args.weights.iter().cloned());
            // One neuron owns a W_in row, an optional V_in row, and a W_out
            // column, all f32.
            (w[0].kind().matrix_count() * w[0].d_model() * 4) as u64
        }
    };
    let cfg = IoSimConfig {
        window: args.window,
        bytes_per_neuron,
        reset_period: args.reset_period,
    };
    let mut per_layer = Vec::new();
    let mut total = 0u64;
    let mut baseline = 0u64;
    for layer in 0..trace.n_layers() {
        let r = io_simulate(&trace, layer, &cfg)?;
        total += r.total_bytes;
        baseline += r.baseline_bytes;
        per_layer.push(IosimLayer {
            total_bytes: r.total_bytes,
            baseline_bytes: r.baseline_bytes,
            reduction: r.reduction,
        });
    }
    let report = Report::new(
        "iosim",
        None,
        IosimMetrics {
            window: args.window,
            bytes_per_neuron,
            reset_period: args.reset_period,
            per_layer,
            total_bytes: total,
            baseline_bytes: baseline,
            reduction: 1.0 - total as f64 / baseline as f64,
        },
    )
    .with_inputs(&input_paths)?;
    report.emit(args.out.as_deref())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct ReportArgs {
    /// Prior report JSON files to merge
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct MergedMetrics {
    sections: Vec<serde_json::Value>,
}

fn run_report(args: ReportArgs) -> Result<()> {
    let mut sections = Vec::new();
    for path in &args.inputs {
        let value: serde_json::Value = serde_json::from_slice(&std::fs::read(path)?)?;
        sections.push(value);
    }
    let report =
        Report::new("report", None, MergedMetrics { sections }).with_inputs(&args.inputs)?;
    report.emit(args.out.as_deref())
}
