//! `scalelaw`: ingest training runs, fit scaling laws and ask them for
//! training recommendations.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 when a
//! numerical step fails.

mod failure;
mod files;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use scalelaw::advisor::{self, LrAnchor, Recommendation};
use scalelaw::artifact::LawArtifact;
use scalelaw::bslaw::{self, BoptLaw, Vertex};
use scalelaw::frontier;
use scalelaw::lrlaw::{self, LrLaw, LrOptSample, LrScaling};
use scalelaw::noisescale::{self, TABLE_B_RATIOS};
use scalelaw::pipeline::{self, PipelineOptions};
use scalelaw::runlog::{self, RunSet};
use scalelaw::synth::{self, GroundTruth, SynthConfig};
use serde::Serialize;
use serde_json::{json, Value};

use failure::Failure;
use files::{read_artifact, read_json, read_runs, to_json, write_atomic};

const SEED_ENV: &str = "SCALELAW_SEED";

#[derive(Parser)]
#[command(name = "scalelaw", version, about = "Fit scaling laws to training runs and turn them into training recommendations")]
struct Cli {
    /// Print a machine-readable JSON summary (or error) on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate one or more JSONL run logs and merge them into one file.
    Ingest(IngestArgs),
    /// Generate a synthetic sweep of training runs from a planted law.
    Simulate(SimulateArgs),
    /// Fit every law the runs support and write a law artifact.
    FitLaw(FitLawArgs),
    /// Extract the compute-efficient frontier and its power laws.
    Frontier(FrontierArgs),
    /// Fit the optimal-batch-size law from iso-loss contours.
    FitBopt(FitBoptArgs),
    /// Fit the optimal-learning-rate law of one model's LR sweep.
    FitLr(FitLrArgs),
    /// Print the steps/examples trade-off table.
    Tradeoff(TradeoffArgs),
    /// Recommend a training configuration from a law artifact.
    Advise(AdviseArgs),
    /// Write plot data as CSV.
    ExportPlot(ExportArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Run logs (JSONL, one run per line); run ids must be unique across files.
    #[arg(long = "runs", required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Merged, normalized JSONL output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Sweep configuration (JSON). Defaults to the reference 105-run sweep.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground truth (JSON). Defaults to the reference planted law.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Noise seed; overrides SCALELAW_SEED and the ground-truth file.
    #[arg(long)]
    seed: Option<u64>,
    /// JSONL output; defaults to the config's `output` field.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the effective config and ground truth to this directory
    /// as config.json and truth.json.
    #[arg(long)]
    emit_config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct AnalysisArgs {
    /// Run logs (JSONL).
    #[arg(long)]
    runs: PathBuf,
    /// Smoothing half-life in ln(tokens) applied before analysis.
    #[arg(long, default_value_t = pipeline::DEFAULT_HALF_LIFE_LOG, conflicts_with = "no_smoothing")]
    half_life_log: f64,
    /// Analyse the raw curves.
    #[arg(long)]
    no_smoothing: bool,
}

impl AnalysisArgs {
    fn options(&self) -> Result<PipelineOptions, Failure> {
        if !self.no_smoothing && !(self.half_life_log > 0.0 && self.half_life_log.is_finite()) {
            return Err(Failure::validation("--half-life-log must be positive"));
        }
        Ok(PipelineOptions {
            smoothing_half_life_log: (!self.no_smoothing).then_some(self.half_life_log),
            ..PipelineOptions::default()
        })
    }
}

#[derive(Args)]
struct FitLawArgs {
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Law artifact output (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Loss observations per model for the loss-law fit.
    #[arg(long, default_value_t = 24)]
    observations: usize,
    /// Minimum steps of the batch-size law; estimated when omitted.
    #[arg(long)]
    s_floor: Option<f64>,
}

#[derive(Args)]
struct FrontierArgs {
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Frontier report output (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitBoptArgs {
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Batch-size analysis output (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Minimum steps of the linear regime; estimated when omitted.
    #[arg(long)]
    s_floor: Option<f64>,
    /// Number of iso-loss levels across the sweep.
    #[arg(long, default_value_t = 8)]
    levels: usize,
}

#[derive(Args)]
struct FitLrArgs {
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// LR analysis output (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Model size to analyse; defaults to the one with the most peak LRs.
    #[arg(long)]
    model: Option<f64>,
    /// Checkpoint as a fraction of the shortest usable run.
    #[arg(long, default_value_t = 1.0)]
    checkpoint_fraction: f64,
}

#[derive(Args)]
struct TradeoffArgs {
    /// Trade-off constant of the steps/examples hyperbola.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Batch-size ratios B/B_crit; defaults to the standard seven columns.
    #[arg(long, num_args = 1..)]
    ratios: Option<Vec<f64>>,
    /// Print CSV instead of an aligned table.
    #[arg(long)]
    csv: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scaling {
    Linear,
    Sqrt,
    None,
}

impl From<Scaling> for LrScaling {
    fn from(s: Scaling) -> Self {
        match s {
            Scaling::Linear => LrScaling::Linear,
            Scaling::Sqrt => LrScaling::Sqrt,
            Scaling::None => LrScaling::None,
        }
    }
}

#[derive(Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["compute", "data", "compress"])))]
struct AdviseArgs {
    /// Law artifact (JSON).
    #[arg(long)]
    laws: PathBuf,
    /// Compute budget in FLOPs: size the model, data, steps and batch.
    #[arg(long)]
    compute: Option<f64>,
    /// Data budget in tokens: pick batch size, steps and LR.
    #[arg(long)]
    data: Option<f64>,
    /// Candidate token count for an iso-loss compression query; needs
    /// --reference-n and --reference-d.
    #[arg(long, requires_all = ["reference_n", "reference_d"])]
    compress: Option<f64>,
    /// Reference model size of a compression query.
    #[arg(long, requires = "compress")]
    reference_n: Option<f64>,
    /// Reference token count of a compression query.
    #[arg(long, requires = "compress")]
    reference_d: Option<f64>,
    /// Model size in data mode, for the loss prediction and LR preset.
    #[arg(long, requires = "data")]
    params: Option<f64>,
    /// Baseline learning rate that replaces preset anchoring (data mode).
    #[arg(long, requires_all = ["data", "anchor_batch"])]
    anchor_lr: Option<f64>,
    /// Batch size in tokens at which --anchor-lr was tuned.
    #[arg(long, requires = "anchor_lr")]
    anchor_batch: Option<f64>,
    /// Rule for scaling the LR from its anchor batch to the recommended one.
    #[arg(long, value_enum, default_value_t = Scaling::Linear)]
    scaling: Scaling,
    /// Also write the recommendation as JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    /// Every run's curve.
    Curves,
    /// Lower envelope of loss over compute, with the winning run.
    Envelope,
    /// Iso-loss contour points (B, D required) per model.
    Contours,
    /// Contour vertices (B*, D*) per model.
    Vertices,
    /// Loss on the (B, LR) grid of one model.
    LrSurface,
    /// Optimal LR per batch size of one model.
    LrOpt,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Which data set to write.
    #[arg(long, value_enum)]
    kind: PlotKind,
    /// CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Model size for the LR plots; defaults to the one with the most peak LRs.
    #[arg(long)]
    model: Option<f64>,
}

/// What a successful command reports: text for people, JSON for scripts.
struct Report {
    text: String,
    json: Value,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(failure::EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(report) => {
            if cli.json {
                print!("{}", to_json(&report.json));
            } else {
                print!("{}", report.text);
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            if cli.json {
                print!(
                    "{}",
                    to_json(&json!({"status": "error", "exit_code": f.code, "message": f.message, "partial": f.partial}))
                );
            } else {
                eprintln!("error: {}", f.message);
                if let Some(p) = &f.partial {
                    eprintln!("best partial result:\n{}", to_json(p));
                }
            }
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<Report, Failure> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Simulate(a) => simulate(a),
        Command::FitLaw(a) => fit_law(a),
        Command::Frontier(a) => frontier_cmd(a),
        Command::FitBopt(a) => fit_bopt(a),
        Command::FitLr(a) => fit_lr(a),
        Command::Tradeoff(a) => tradeoff(a),
        Command::Advise(a) => advise(a),
        Command::ExportPlot(a) => export_plot(a),
    }
}

fn wrote(path: &Path, what: &str) -> String {
    format!("wrote {what} to {}\n", path.display())
}

fn ingest(a: IngestArgs) -> Result<Report, Failure> {
    let mut merged = RunSet::new();
    for path in &a.runs {
        let set = read_runs(path)?;
        if merged.provenance.source.is_none() {
            merged.provenance = set.provenance.clone();
        }
        for run in set.runs.into_values() {
            let id = run.run_id.clone();
            merged
                .insert(run)
                .map_err(|e| Failure::from(e).context(&format!("{}: run {id}", path.display())))?;
        }
    }
    write_atomic(&a.out, &merged.to_jsonl())?;
    let sizes = merged.model_sizes();
    let diverged = merged.iter().filter(|r| r.diverged).count();
    Ok(Report {
        text: format!(
            "{} runs over {} model sizes ({} diverged)\n{}",
            merged.len(),
            sizes.len(),
            diverged,
            wrote(&a.out, "runs")
        ),
        json: json!({"status": "ok", "runs": merged.len(), "model_sizes": sizes, "diverged": diverged, "out": a.out}),
    })
}

/// The seed from the flag, else from SCALELAW_SEED, else `fallback`.
fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::validation(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(fallback),
    }
}

fn simulate(a: SimulateArgs) -> Result<Report, Failure> {
    let config: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::published_shaped(),
    };
    let mut truth: GroundTruth = match &a.truth {
        Some(p) => read_json(p)?,
        None => GroundTruth::published_shaped(0),
    };
    truth.seed = resolve_seed(a.seed, truth.seed)?;
    let out = a
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .ok_or_else(|| Failure::validation("no output path: pass --out or set `output` in the config"))?;
    if let Some(dir) = &a.emit_config {
        write_atomic(&dir.join("config.json"), &to_json(&config))?;
        write_atomic(&dir.join("truth.json"), &to_json(&truth))?;
    }
    let runs = synth::simulate_grid(&config, &truth)?;
    write_atomic(&out, &runs.to_jsonl())?;
    let diverged = runs.iter().filter(|r| r.diverged).count();
    Ok(Report {
        text: format!(
            "simulated {} runs ({} diverged) with seed {}\n{}",
            runs.len(),
            diverged,
            truth.seed,
            wrote(&out, "runs")
        ),
        json: json!({"status": "ok", "runs": runs.len(), "diverged": diverged, "seed": truth.seed, "out": out}),
    })
}

fn fit_law(a: FitLawArgs) -> Result<Report, Failure> {
    let runs = read_runs(&a.analysis.runs)?;
    let mut opts = a.analysis.options()?;
    opts.observations_per_model = a.observations;
    opts.s_floor_hint = a.s_floor;
    let out = pipeline::fit_all(&runs, &opts)?;
    write_atomic(&a.out, &out.artifact.to_json())?;
    let law = out.fit.law;
    let mut text = format!(
        "L = {:.4} + {:.4}/N^{:.4} + {:.4}/D^{:.4}   (R^2 = {:.4}, {} points)\nN_opt = {:.4e} C^{:.4}   D_opt = {:.4e} C^{:.4}\n",
        law.e,
        law.a,
        law.alpha,
        law.b,
        law.beta,
        out.fit.r_squared,
        out.fit.n_points,
        out.frontier.n_opt.k,
        out.frontier.n_opt.p,
        out.frontier.d_opt.k,
        out.frontier.d_opt.p
    );
    if let Some(b) = &out.artifact.bopt_law {
        text.push_str(&format!("B_opt = min(D/{:.0}, {:.4e} D^{:.4})\n", b.s_floor, b.k, b.p));
    }
    for w in &out.artifact.warnings {
        text.push_str(&format!("warning: {w}\n"));
    }
    text.push_str(&wrote(&a.out, "law artifact"));
    Ok(Report {
        text,
        json: json!({
            "status": "ok",
            "law": law,
            "r_squared": out.fit.r_squared,
            "frontier": {"n_opt": out.frontier.n_opt, "d_opt": out.frontier.d_opt},
            "bopt_law": out.artifact.bopt_law,
            "lr_law": out.artifact.lr_law,
            "warnings": out.artifact.warnings,
            "out": a.out,
        }),
    })
}

fn frontier_cmd(a: FrontierArgs) -> Result<Report, Failure> {
    let raw = read_runs(&a.analysis.runs)?;
    let opts = a.analysis.options()?;
    let runs = pipeline::analysis_runs(&raw, &opts);
    let fa = pipeline::fit_frontier(&runs)?;
    #[derive(Serialize)]
    struct Output<'a> {
        report: &'a frontier::FrontierReport,
        excluded_models: &'a [f64],
        warnings: &'a [String],
    }
    let output = Output {
        report: &fa.report,
        excluded_models: &fa.extraction.excluded,
        warnings: &fa.extraction.warnings,
    };
    write_atomic(&a.out, &to_json(&output))?;
    let r = &fa.report;
    let mut text = String::new();
    for (name, law) in [("L_opt", &r.l_opt), ("N_opt", &r.n_opt), ("D_opt", &r.d_opt), ("S_opt", &r.s_opt), ("B_opt", &r.b_opt)] {
        text.push_str(&format!("{name} = {:.4e} C^{:.4}\n", law.k, law.p));
    }
    for w in &fa.extraction.warnings {
        text.push_str(&format!("warning: {w}\n"));
    }
    text.push_str(&wrote(&a.out, "frontier report"));
    Ok(Report {
        text,
        json: json!({"status": "ok", "report": r, "warnings": fa.extraction.warnings, "out": a.out}),
    })
}

#[derive(Serialize)]
struct ModelVertices<'a> {
    n_params: f64,
    vertices: &'a [Vertex],
    skipped: &'a [(f64, String)],
}

fn fit_bopt(a: FitBoptArgs) -> Result<Report, Failure> {
    let raw = read_runs(&a.analysis.runs)?;
    let mut opts = a.analysis.options()?;
    opts.s_floor_hint = a.s_floor;
    opts.levels_per_model = a.levels;
    let runs = pipeline::analysis_runs(&raw, &opts);
    let ba = pipeline::fit_batch_law(&runs, &opts);
    let models: Vec<ModelVertices> = ba
        .per_model
        .iter()
        .map(|(n, an)| ModelVertices {
            n_params: *n,
            vertices: &an.vertices,
            skipped: &an.skipped,
        })
        .collect();
    let law: BoptLaw = ba.law?;
    #[derive(Serialize)]
    struct Output<'a> {
        bopt_law: &'a BoptLaw,
        s_opt: scalelaw::frontier::PowerLaw,
        models: &'a [ModelVertices<'a>],
        warnings: &'a [String],
    }
    let output = Output {
        bopt_law: &law,
        s_opt: bslaw::derive_sopt(&law),
        models: &models,
        warnings: &ba.warnings,
    };
    write_atomic(&a.out, &to_json(&output))?;
    let vertices: usize = models.iter().map(|m| m.vertices.len()).sum();
    let mut text = format!(
        "B_opt = min(D/{:.0}, {:.4e} D^{:.4}), crossover at D = {:.3e}, from {vertices} vertices\n",
        law.s_floor, law.k, law.p, law.crossover_d
    );
    for w in &ba.warnings {
        text.push_str(&format!("warning: {w}\n"));
    }
    text.push_str(&wrote(&a.out, "batch-size law"));
    Ok(Report {
        text,
        json: json!({"status": "ok", "bopt_law": law, "vertices": vertices, "warnings": ba.warnings, "out": a.out}),
    })
}

fn lr_model(runs: &RunSet, model: Option<f64>) -> Result<f64, Failure> {
    match model {
        Some(n) if runs.model_sizes().contains(&n) => Ok(n),
        Some(n) => Err(Failure::validation(format!("no runs for model size {n:e}"))),
        None => pipeline::richest_lr_sweep(runs)
            .ok_or_else(|| Failure::validation("no model has runs at three or more peak LRs")),
    }
}

fn fit_lr(a: FitLrArgs) -> Result<Report, Failure> {
    let raw = read_runs(&a.analysis.runs)?;
    let opts = a.analysis.options()?;
    if !(a.checkpoint_fraction > 0.0 && a.checkpoint_fraction <= 1.0) {
        return Err(Failure::validation("--checkpoint-fraction must lie in (0, 1]"));
    }
    let runs = pipeline::analysis_runs(&raw, &opts);
    let n = lr_model(&runs, a.model)?;
    let la = pipeline::fit_lr(&runs, n, a.checkpoint_fraction)?;
    #[derive(Serialize)]
    struct Output<'a> {
        n_params: f64,
        lr_law: &'a LrLaw,
        samples: &'a [LrOptSample],
    }
    write_atomic(
        &a.out,
        &to_json(&Output {
            n_params: n,
            lr_law: &la.law,
            samples: &la.samples,
        }),
    )?;
    let gamma = la.law.gamma.map_or_else(|| "undefined".to_string(), |g| format!("{g:.4}"));
    let ceiling = la.law.lr_ceiling.map_or_else(|| "none".to_string(), |c| format!("{c:.3e}"));
    Ok(Report {
        text: format!(
            "model {n:e}: gamma = {gamma}, LR ceiling = {ceiling}, base LR {:.3e} at B = {:.3e}\n{}",
            la.law.base_lr,
            la.law.base_b,
            wrote(&a.out, "LR law")
        ),
        json: json!({"status": "ok", "n_params": n, "lr_law": la.law, "out": a.out}),
    })
}

fn tradeoff(a: TradeoffArgs) -> Result<Report, Failure> {
    let ratios = a.ratios.unwrap_or_else(|| TABLE_B_RATIOS.to_vec());
    let rows = noisescale::tradeoff_table(a.gamma, &ratios)?;
    let text = if a.csv {
        noisescale::render_csv(&rows)
    } else {
        noisescale::render_table(&rows)
    };
    Ok(Report {
        text,
        json: json!({"status": "ok", "gamma": a.gamma, "rows": rows}),
    })
}

fn advise(a: AdviseArgs) -> Result<Report, Failure> {
    let art: LawArtifact = read_artifact(&a.laws)?;
    let scaling = LrScaling::from(a.scaling);
    if let Some(candidate) = a.compress {
        let law = art
            .chinchilla()
            .ok_or_else(|| Failure::validation("compression needs a Chinchilla-form loss law"))?;
        let (n0, d0) = (a.reference_n.unwrap_or_default(), a.reference_d.unwrap_or_default());
        let c = advisor::compress_query(law, (n0, d0), candidate)?;
        return Ok(Report {
            text: format!(
                "reference N = {n0:e}, D = {d0:e} reaches loss {:.4}\nwith D = {candidate:e}: N = {:.4e}, inference cost / {:.3}\n",
                c.target_loss, c.n_small, c.inference_ratio
            ),
            json: json!({"status": "ok", "compression": c}),
        });
    }
    let rec: Recommendation = if let Some(c) = a.compute {
        let fr = art
            .frontier
            .as_ref()
            .ok_or_else(|| Failure::validation("compute mode needs a frontier in the law artifact"))?;
        advisor::advise_compute(fr, art.chinchilla(), art.lr_law.as_ref(), &art.presets, c, scaling)?
    } else {
        let d = a.data.expect("clap requires one mode");
        let bopt = art
            .bopt_law
            .as_ref()
            .ok_or_else(|| Failure::validation("data mode needs a batch-size law in the law artifact"))?;
        let anchor = a.anchor_lr.zip(a.anchor_batch).map(|(lr, batch)| LrAnchor { lr, batch });
        advisor::advise_data(bopt, art.chinchilla(), art.lr_law.as_ref(), &art.presets, d, a.params, anchor, scaling)?
    };
    let mut text = advisor::render_text(&rec);
    if let Some(out) = &a.out {
        write_atomic(out, &to_json(&rec))?;
        text.push_str(&wrote(out, "recommendation"));
    }
    Ok(Report {
        text,
        json: json!({"status": "ok", "recommendation": rec}),
    })
}

fn export_plot(a: ExportArgs) -> Result<Report, Failure> {
    let raw = read_runs(&a.analysis.runs)?;
    let opts = a.analysis.options()?;
    let runs = pipeline::analysis_runs(&raw, &opts);
    let csv = match a.kind {
        PlotKind::Curves => runlog::runs_to_csv(&runs),
        PlotKind::Envelope => {
            let grid = frontier::envelope_grid(&runs, frontier::GRID_PER_DECADE)?;
            frontier::envelope_to_csv(&frontier::compute_envelope(&runs, &grid)?)
        }
        PlotKind::Contours | PlotKind::Vertices => {
            let ba = pipeline::fit_batch_law(&runs, &opts);
            let mut out = String::new();
            for (i, (n, an)) in ba.per_model.iter().enumerate() {
                let table = match a.kind {
                    PlotKind::Contours => bslaw::contour_points_csv(&an.contours),
                    _ => bslaw::vertices_csv(&an.vertices),
                };
                out.push_str(&prefix_column(&table, "n_params", &n.to_string(), i == 0));
            }
            out
        }
        PlotKind::LrSurface | PlotKind::LrOpt => {
            let n = lr_model(&runs, a.model)?;
            let la = pipeline::fit_lr(&runs, n, 1.0)?;
            match a.kind {
                PlotKind::LrSurface => lrlaw::surface_to_csv(&la.surface),
                _ => lrlaw::samples_to_csv(&la.samples),
            }
        }
    };
    write_atomic(&a.out, &csv)?;
    let rows = csv.lines().count().saturating_sub(1);
    Ok(Report {
        text: format!("{rows} rows\n{}", wrote(&a.out, "plot data")),
        json: json!({"status": "ok", "rows": rows, "out": a.out}),
    })
}

/// Prepends a constant column to CSV text, keeping the header only when
/// `with_header` is set.
fn prefix_column(table: &str, name: &str, value: &str, with_header: bool) -> String {
    let mut out = String::new();
    for (i, line) in table.lines().enumerate() {
        if i == 0 {
            if with_header {
                out.push_str(&format!("{name},{line}\n"));
            }
        } else {
            out.push_str(&format!("{value},{line}\n"));
        }
    }
    out
}
