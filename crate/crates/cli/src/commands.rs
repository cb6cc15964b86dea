//! Command line verbs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use gdimpute_core::checkpoint;
use gdimpute_core::config::{Experiment, ExperimentConfig, MethodKind};
use gdimpute_core::diffusion::{point_estimate, ImputerModel, LossTrace};
use gdimpute_core::evaluate::{evaluate, EvalOptions, Method};
use gdimpute_core::graph_encoder::GraphVariant;
use gdimpute_core::ingest::{generate_synthetic, load_partial_csv, write_rows, MaskingProtocol, SyntheticConfig};
use gdimpute_core::Error as CoreError;

use crate::service;

pub const BIND_ENV: &str = "GDIMPUTE_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

/// Invalid configuration or arguments; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

/// Exit status for an error returned by [`run`].
pub fn exit_code(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}

#[derive(Debug, Parser)]
#[command(name = "gdimpute", version, about = "Graph-guided diffusion imputation for assembly designs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the diffusion model and write a checkpoint plus a loss trace CSV.
    Train(TrainArgs),
    /// Run a method over the masked test split and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Complete the missing cells of a CSV of partial designs.
    Impute(ImputeArgs),
    /// Serve completions over HTTP.
    Serve(ServeArgs),
    /// Write a synthetic assembly dataset (schema, graph, CSV).
    SynthData(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Graph encoder variant: gatv2, gcn or none.
    #[arg(long, visible_alias = "ablate-graph")]
    pub graph: Option<String>,
}

impl ExperimentArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config).map_err(|e| match e {
            CoreError::Io { .. } | CoreError::Config(_) => usage(e),
            other => anyhow::Error::new(other).context("loading config"),
        })?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.epochs {
            cfg.train.epochs = n;
        }
        if let Some(g) = &self.graph {
            cfg.model.graph.variant = g.parse::<GraphVariant>().map_err(usage)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Checkpoint path.
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
    /// Loss trace path; defaults to the checkpoint path with a `.loss.csv` suffix.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Trained diffusion checkpoint; without it the diffusion method trains first.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// diffusion, hotdeck, ppca or forest.
    #[arg(long)]
    pub method: Option<String>,
    /// Hide only this feature in every test row.
    #[arg(long)]
    pub mask_feature: Option<String>,
    #[arg(long)]
    pub missing_fraction: Option<f64>,
    /// Draws per test case.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV with schema header; empty cells are imputed.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "imputed.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, env = BIND_ENV, default_value = DEFAULT_BIND)]
    pub bind: String,
    /// Seeds requests that do not carry their own.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic config (JSON); overrides --rows and --coupling.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub rows: usize,
    #[arg(long, default_value_t = 0.8)]
    pub coupling: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Impute(a) => impute(&a),
        Command::Serve(a) => serve(&a),
        Command::SynthData(a) => synth_data(&a),
    }
}

fn materialize(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.materialize().context("loading data")
}

fn train_model(cfg: &ExperimentConfig, exp: &Experiment) -> Result<(ImputerModel, LossTrace)> {
    let mut model = ImputerModel::new(exp.graph.clone(), cfg.model.clone(), cfg.seed)
        .context("building model")?;
    let trace = model.train(&exp.train, &cfg.train, cfg.seed).context("training")?;
    Ok((model, trace))
}

fn write_loss_csv(path: &Path, trace: &LossTrace) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for (e, l) in trace.epoch_losses.iter().enumerate() {
        text.push_str(&format!("{},{l}\n", e + 1));
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = a.experiment.load()?;
    let exp = materialize(&cfg)?;
    let (model, trace) = train_model(&cfg, &exp)?;
    let digest = checkpoint::save(&model, &a.out).context("writing checkpoint")?;
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.csv");
        p.into()
    });
    write_loss_csv(&loss_path, &trace)?;
    println!("checkpoint {} sha256 {digest}", a.out.display());
    Ok(())
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let mut cfg = a.experiment.load()?;
    if let Some(m) = &a.method {
        cfg.method = m.parse::<MethodKind>().map_err(usage)?;
    }
    if let Some(n) = a.samples {
        cfg.samples = n;
    }
    if let Some(f) = a.missing_fraction {
        cfg.masking.missing_fraction = f;
    }
    if let Some(name) = &a.mask_feature {
        cfg.masking = MaskingProtocol {
            missing_fraction: cfg.masking.missing_fraction,
            ..MaskingProtocol::fixed_feature(name.clone(), cfg.masking.seed)
        };
    }
    cfg.validate().map_err(usage)?;
    let exp = materialize(&cfg)?;
    let cases = cfg.masked_cases(&exp).map_err(|e| match e {
        CoreError::Config(_) => usage(e),
        other => anyhow::Error::new(other).context("masking the test split"),
    })?;
    let options = EvalOptions {
        samples: cfg.samples,
        seed: cfg.seed,
        ..Default::default()
    };
    let model = match (cfg.method, &a.checkpoint) {
        (MethodKind::Diffusion, Some(path)) => {
            let (m, _) = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            if m.schema().as_ref() != exp.schema().as_ref() {
                return Err(usage("checkpoint schema does not match the experiment data"));
            }
            Some(m)
        }
        (MethodKind::Diffusion, None) => Some(train_model(&cfg, &exp)?.0),
        _ => None,
    };
    let method = match cfg.method {
        MethodKind::Diffusion => Method::Diffusion(model.as_ref().expect("diffusion model")),
        MethodKind::Hotdeck => Method::HotDeck,
        MethodKind::Ppca => Method::Ppca(cfg.ppca.clone()),
        MethodKind::Forest => Method::Forest(cfg.forest.clone()),
    };
    let report = evaluate(&method, &exp.train, &cases, &cfg.masking, &options).context("evaluating")?;
    std::fs::write(&a.out, report.to_json()).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "{} rmse {} error_rate {} diversity {} -> {}",
        report.method,
        fmt_opt(report.rmse),
        fmt_opt(report.error_rate),
        fmt_opt(report.diversity_score),
        a.out.display()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.5}"))
}

pub fn impute(a: &ImputeArgs) -> Result<()> {
    let (model, _) = checkpoint::load(&a.checkpoint).map_err(usage)?;
    let schema = model.schema().clone();
    let partials = load_partial_csv(&a.input, &schema).map_err(usage)?;
    let sets = model
        .sample_many(&partials, a.samples, a.seed)
        .context("sampling")?;
    let completed = partials
        .iter()
        .zip(&sets)
        .map(|(p, s)| point_estimate(&schema, p, s))
        .collect::<gdimpute_core::Result<Vec<_>>>()?;
    let file = std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_rows(file, &schema, completed.iter().map(|c| c.values()))?;
    println!("imputed {} rows -> {}", completed.len(), a.out.display());
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let (model, digest) = checkpoint::load(&a.checkpoint).map_err(usage)?;
    let state = Arc::new(service::AppState::new(model, digest, a.seed));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting runtime")?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| usage(format!("cannot bind {}: {e}", a.bind)))?;
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, service::router(state))
            .await
            .context("serving")
    })
}

pub fn synth_data(a: &SynthArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            SyntheticConfig::from_json(&text).map_err(usage)?
        }
        None => SyntheticConfig::assembly(a.rows, a.coupling),
    };
    let (schema, graph, data) = generate_synthetic(&cfg, a.seed).map_err(usage)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let write = |name: &str, text: String| {
        let p = a.out_dir.join(name);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    };
    write("schema.json", schema.to_json())?;
    write("graph.json", graph.to_json())?;
    write("synthetic.json", serde_json::to_string_pretty(&cfg)?)?;
    data.write_csv(a.out_dir.join("data.csv"))?;
    println!("{} rows, {} features -> {}", data.len(), schema.len(), a.out_dir.display());
    Ok(())
}
