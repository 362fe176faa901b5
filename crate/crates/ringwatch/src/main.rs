use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::{Arc, RwLock};

use clap::{Args, Parser, Subcommand};
use ringwatch::artifact::RunManifest;
use ringwatch::error::{Error, Result};
use ringwatch::pipeline::{self, load_detection_scorer, PipelineConfig, StageContext};
use ringwatch::service::{self, AppState, DetectService};
use ringwatch::store::DEFAULT_SNAPSHOT_EVERY;
use ringwatch_core::detect::DetectorConfig;
use ringwatch_core::eval::GroupBy;

#[derive(Parser)]
#[command(name = "ringwatch", version, about = "Behavioral-biometric cheating-ring detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with ring ground truth.
    Simulate(Common),
    /// Split users and train the embedding networks.
    Train(Common),
    /// Calibrate thresholds on validation negatives.
    Calibrate(Common),
    /// Compare methods on the test pairs.
    Eval(Common),
    /// Per-group true negative rates of the audit method.
    Audit(Common),
    /// Replay the corpus through a fresh detector and write its flags.
    Backfill(Common),
    /// Serve the detection API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Bearer token required by every route except health.
        #[arg(long, env = "RINGWATCH_TOKEN")]
        token: Option<String>,
        /// Compare only against sessions started within this many ms.
        #[arg(long)]
        window_ms: Option<i64>,
        #[arg(long, default_value_t = DEFAULT_SNAPSHOT_EVERY)]
        snapshot_every: u64,
    },
    /// simulate, train, calibrate, eval and audit in one go.
    Run(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Artifact directory.
    #[arg(long, default_value = "data")]
    data: PathBuf,
    /// JSON config document with a schema_version field; overrides flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    threshold_file: Option<PathBuf>,
    #[arg(long)]
    fpr_target: Option<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_group)]
    group_by: Option<Vec<GroupBy>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_group(s: &str) -> std::result::Result<GroupBy, String> {
    GroupBy::parse(s).ok_or_else(|| format!("unknown group {s:?}; use gender, age_band or region"))
}

/// Flags first, then the config document on top.
fn context(stage: &str, c: &Common) -> Result<StageContext> {
    let mut cfg = PipelineConfig::default();
    if let Some(seed) = c.seed {
        let x = &mut cfg.experiment;
        match stage {
            "simulate" => cfg.generator.seed = seed,
            "train" => (x.net_seed, x.train.seed) = (seed, seed),
            "run" => {
                cfg.generator.seed = seed;
                (x.net_seed, x.train.seed, x.split.seed, x.pair_seed) = (seed, seed, seed, seed);
            }
            _ => x.pair_seed = seed,
        }
    }
    if let Some(f) = c.fpr_target {
        cfg.experiment.fpr_target = f;
    }
    if let Some(g) = &c.group_by {
        cfg.group_by = g.clone();
    }
    if let Some(path) = &c.config {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        cfg = cfg.with_document(&bytes)?;
    }
    cfg.validate()?;
    let mut ctx = StageContext::new(&c.data, cfg);
    ctx.model = c.model.clone();
    ctx.threshold_file = c.threshold_file.clone();
    ctx.out = c.out.clone();
    ctx.command = std::env::args().collect();
    Ok(ctx)
}

fn print_outputs(m: &RunManifest) {
    for o in &m.outputs {
        println!("{}  {}", o.sha256, o.path);
    }
    eprintln!("{} finished in {:.1}s", m.stage, m.duration_ms as f64 / 1000.0);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => print_outputs(&pipeline::simulate(&context("simulate", &c)?)?),
        Command::Train(c) => print_outputs(&pipeline::train(&context("train", &c)?)?),
        Command::Calibrate(c) => print_outputs(&pipeline::calibrate(&context("calibrate", &c)?)?),
        Command::Eval(c) => {
            let (m, report) = pipeline::eval(&context("eval", &c)?)?;
            print!("{}", report.to_text());
            print_outputs(&m);
        }
        Command::Audit(c) => {
            let (m, doc) = pipeline::audit(&context("audit", &c)?)?;
            print!("{}", doc.to_text());
            print_outputs(&m);
        }
        Command::Backfill(c) => {
            let (m, summary) = pipeline::backfill(&context("backfill", &c)?)?;
            println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| Error::Runtime(e.to_string()))?);
            print_outputs(&m);
        }
        Command::Run(c) => {
            for m in pipeline::run_pipeline(&context("run", &c)?)? {
                print_outputs(&m);
            }
        }
        Command::Serve { common, addr, token, window_ms, snapshot_every } => {
            let ctx = context("serve", &common)?;
            let calibrated = load_detection_scorer(&ctx)?;
            let config = DetectorConfig { threshold: calibrated.threshold.threshold.value, window_ms };
            let svc = DetectService::open(calibrated.scorer, config, &ctx.layout.store(), snapshot_every)?;
            let model_version = calibrated
                .model_sha256
                .map_or_else(|| calibrated.method.as_str().to_string(), |d| d[..16].to_string());
            let app = Arc::new(AppState { service: RwLock::new(svc), token, model_version, clock: service::system_clock() });
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Runtime(e.to_string()))?;
            rt.block_on(service::serve(addr, app))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
