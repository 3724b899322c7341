use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fundus_curator::classifier::ModelKind;
use fundus_curator::config::CuratorConfig;
use fundus_curator::manifest::DatasetManifest;
use fundus_curator::pipeline::{self, StageReport};
use fundus_curator::service::{self, ServiceSettings, Store};

#[derive(Parser)]
#[command(name = "fundus-curator", version, about = "Fundus photograph corpus curation")]
struct Cli {
    /// Dataset manifest (manifest.json)
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output directory; each stage writes to <out>/<stage>/
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML or JSON configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract quality features into features.csv
    Features,
    /// Grid-search, fit and evaluate the quality classifier
    Train(TrainArgs),
    /// Label every image with the trained classifier
    Assess(AssessArgs),
    /// Write lesion-visibility enhanced copies of every image
    Enhance(EnhanceArgs),
    /// Clean machine-predicted lesion masks
    Postprocess(PostprocessArgs),
    /// Inter-annotator agreement reports and keep/discard verdicts
    Agree(AgreeArgs),
    /// Serve the annotation REST API
    Serve(ServeArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Feature table (default: <out>/features/features.csv)
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    model: Option<ModelKind>,
    #[arg(long)]
    train_ratio: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Args)]
struct AssessArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    /// Model file (default: <out>/train/model.json)
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Also write per-image Shapley explanations
    #[arg(long)]
    explain: bool,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Tile grid as COLSxROWS
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(u32, u32)>,
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long)]
    window: Option<u32>,
}

#[derive(Args)]
struct AgreeArgs {
    /// Image-level discard threshold on the mean weighted kappa
    #[arg(long)]
    discard_below: Option<f64>,
    /// Pairwise kappa under which a pair counts against an annotator
    #[arg(long)]
    pairwise_low: Option<f64>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    bind: Option<String>,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    match s {
        "forest" => Ok(ModelKind::Forest),
        "logistic" => Ok(ModelKind::Logistic),
        _ => Err(format!("expected forest or logistic, got {s:?}")),
    }
}

fn parse_grid(s: &str) -> Result<(u32, u32), String> {
    let (c, r) = s.split_once(['x', 'X']).ok_or("expected COLSxROWS")?;
    Ok((
        c.parse().map_err(|e| format!("{e}"))?,
        r.parse().map_err(|e| format!("{e}"))?,
    ))
}

fn dataset(cli: &Cli) -> Result<DatasetManifest> {
    let path = cli.manifest.as_ref().context("--manifest is required for this command")?;
    DatasetManifest::load(path).with_context(|| format!("loading {}", path.display()))
}

fn finish(stage: &str, report: &StageReport) -> ExitCode {
    log::info!(
        "{stage}: {} processed, {} skipped",
        report.processed.len(),
        report.skipped.len()
    );
    ExitCode::from(report.exit_code() as u8)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(p) => CuratorConfig::load(p)?,
        None => CuratorConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs.or(cfg.jobs) {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    let out: &Path = &cli.out;
    match &cli.command {
        Command::Features => {
            let ds = dataset(&cli)?;
            Ok(finish("features", &pipeline::cmd_features(&ds, out, &cfg.features)?))
        }
        Command::Train(a) => {
            if let Some(m) = a.model {
                cfg.train.model = m;
            }
            if let Some(r) = a.train_ratio {
                cfg.train.train_ratio = r;
            }
            if let Some(f) = a.folds {
                cfg.train.folds = f;
            }
            let features = a.features.clone().unwrap_or_else(|| pipeline::features_csv_path(out));
            let s = pipeline::cmd_train(&features, out, &cfg)?;
            println!(
                "test F2 {:.4}  accuracy {:.4}  precision {:.4}  recall {:.4}",
                s.test.f2, s.test.accuracy, s.test.precision, s.test.recall
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Assess(a) => {
            let ds = dataset(&cli)?;
            let features = a.features.clone().unwrap_or_else(|| pipeline::features_csv_path(out));
            let model = a.model_file.clone().unwrap_or_else(|| pipeline::model_path(out));
            Ok(finish("assess", &pipeline::cmd_assess(&ds, &features, &model, out, a.explain)?))
        }
        Command::Enhance(a) => {
            if let Some(c) = a.clip {
                cfg.enhance.clahe_clip = c;
            }
            if let Some(g) = a.gamma {
                cfg.enhance.gamma = g;
            }
            if let Some(g) = a.grid {
                cfg.enhance.tile_grid = g;
            }
            let ds = dataset(&cli)?;
            Ok(finish("enhance", &pipeline::cmd_enhance(&ds, out, &cfg.enhance)?))
        }
        Command::Postprocess(a) => {
            if let Some(m) = a.min_area {
                cfg.postprocess.min_area = m;
            }
            if let Some(w) = a.window {
                cfg.postprocess.window = w;
            }
            let ds = dataset(&cli)?;
            Ok(finish("postprocess", &pipeline::cmd_postprocess(&ds, out, &cfg.postprocess)?))
        }
        Command::Agree(a) => {
            if let Some(t) = a.discard_below {
                cfg.agreement.overall_discard = t;
            }
            if let Some(t) = a.pairwise_low {
                cfg.agreement.pairwise_low = t;
            }
            let ds = dataset(&cli)?;
            let (report, summary) = pipeline::cmd_agree(&ds, out, &cfg.agreement)?;
            println!(
                "kept {}  discarded {}  insufficient {}",
                summary.kept, summary.discarded, summary.insufficient
            );
            Ok(finish("agree", &report))
        }
        Command::Serve(a) => {
            let path = cli.manifest.clone().context("--manifest is required for serve")?;
            let bind = a.bind.clone().unwrap_or_else(|| cfg.serve.bind.clone());
            let store = Arc::new(Store::open(path, ServiceSettings::from(&cfg))?);
            tokio::runtime::Runtime::new()?.block_on(service::serve(store, &bind))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
