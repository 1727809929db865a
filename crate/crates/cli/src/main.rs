//! `alspot` command-line front end.

use std::fs;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use alspot::dataset::{read_dataset, write_dataset, Dataset, SplitName, SyntheticConfig};
use alspot::harness::{
    compare_strategies, run_active_learning, ALConfig, OracleKind, Schedule, SimulatedOracle,
};
use alspot::metrics::{avg_map, Regime, VideoEval};
use alspot::model::Paradigm;
use alspot::selection::{Aggregation, Strategy};
use alspot::spotting::{read_predictions, PredictedSpot};
use alspot_service::Session;

#[derive(Parser)]
#[command(name = "alspot", version, about = "Active learning for temporal action spotting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        /// Generator config (TOML). Uses the built-in benchmark when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one active-learning experiment.
    Run(RunArgs),
    /// Run every config in a directory over several seeds and tabulate.
    Compare {
        /// Directory of AL config files (`*.toml`).
        #[arg(long)]
        configs: PathBuf,
        /// Output directory for `report.txt` and `report.json`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
    },
    /// Score a prediction file against a dataset split.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Serve the annotation API for one remote-oracle session.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Session state directory.
        #[arg(long, default_value = "alspot-session")]
        state: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    aggregate: Option<AggregateArg>,
    /// `fixed:<pct>` or `adaptive`.
    #[arg(long)]
    schedule: Option<Schedule>,
    #[arg(long, value_enum)]
    paradigm: Option<ParadigmArg>,
    #[arg(long, value_enum)]
    oracle: Option<OracleArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Listen address when the oracle is remote.
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Rs,
    Um,
    Em,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregateArg {
    Mean,
    Max,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParadigmArg {
    Scratch,
    Continual,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Simulated,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::GenData { config, out } => gen_data(config.as_deref(), &out),
        Command::Run(args) => run(args),
        Command::Compare {
            configs,
            out,
            seeds,
        } => compare(&configs, &out, &seeds),
        Command::Eval {
            predictions,
            dataset,
            split,
        } => eval(&predictions, &dataset, split),
        Command::Serve {
            config,
            bind,
            state,
        } => {
            let config = ALConfig::load(&config)?;
            serve(config, bind, &state)
        }
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_dataset(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn gen_data(config: Option<&Path>, out: &Path) -> Result<()> {
    let config = match config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            toml::from_str::<SyntheticConfig>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => SyntheticConfig::benchmark(),
    };
    let dataset = alspot::dataset::generate_synthetic(&config)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(out)?;
    write_dataset(&dataset, std::io::BufWriter::new(file))?;
    let events: usize = dataset.videos.iter().map(|v| v.spots().len()).sum();
    println!(
        "wrote {} videos, {} events to {}",
        dataset.videos.len(),
        events,
        out.display()
    );
    Ok(())
}

fn apply_overrides(config: &mut ALConfig, args: &RunArgs) {
    if let Some(s) = args.strategy {
        config.selection.strategy = match s {
            StrategyArg::Rs => Strategy::Rs,
            StrategyArg::Um => Strategy::Um,
            StrategyArg::Em => Strategy::Em,
        };
    }
    if let Some(a) = args.aggregate {
        config.selection.aggregation = match a {
            AggregateArg::Mean => Aggregation::Mean,
            AggregateArg::Max => Aggregation::Max,
        };
    }
    if let Some(s) = args.schedule {
        config.schedule = s;
    }
    if let Some(p) = args.paradigm {
        config.train.paradigm = match p {
            ParadigmArg::Scratch => Paradigm::Scratch,
            ParadigmArg::Continual => Paradigm::Continual,
        };
    }
    if let Some(o) = args.oracle {
        config.oracle = match o {
            OracleArg::Simulated => OracleKind::Simulated,
            OracleArg::Remote => OracleKind::Remote,
        };
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = ALConfig::load(&args.config)?;
    apply_overrides(&mut config, &args);
    config.validate()?;
    if config.oracle == OracleKind::Remote {
        return serve(config, args.bind, &args.out);
    }
    let dataset = load_dataset(&config.dataset)?;
    let outcome = run_active_learning(
        &config,
        &dataset,
        &mut SimulatedOracle::new(&dataset),
        Some(&args.out),
    )?;
    if let Some(report) = &outcome.report {
        print!("{}", report.render());
    }
    if let Some(reason) = outcome.failure {
        bail!("run aborted: {reason}");
    }
    println!(
        "{} steps; artifacts in {}",
        outcome.steps,
        args.out.display()
    );
    Ok(())
}

fn compare(dir: &Path, out: &Path, seeds: &[u64]) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    let configs: Vec<ALConfig> = paths
        .iter()
        .map(|p| ALConfig::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<_>>()?;
    let first = configs
        .first()
        .with_context(|| format!("no *.toml configs in {}", dir.display()))?;
    let dataset = load_dataset(&first.dataset)?;
    let report = compare_strategies(&configs, seeds, &dataset)?;
    fs::create_dir_all(out)?;
    let text = report.render();
    fs::write(out.join("report.txt"), &text)?;
    fs::write(out.join("report.json"), report.to_json()?)?;
    print!("{text}");
    Ok(())
}

fn eval(predictions: &Path, dataset: &Path, split: SplitArg) -> Result<()> {
    let dataset = load_dataset(dataset)?;
    let file = fs::File::open(predictions)?;
    let records = read_predictions(BufReader::new(file))?;
    let split = match split {
        SplitArg::Train => SplitName::Train,
        SplitArg::Valid => SplitName::Valid,
        SplitArg::Test => SplitName::Test,
    };
    let videos = dataset.split_videos(split)?;
    let per_video: Vec<Vec<PredictedSpot>> = videos
        .iter()
        .map(|v| {
            records
                .iter()
                .filter(|r| r.video_id == v.video_id())
                .map(|r| PredictedSpot {
                    class_id: r.class_id,
                    time: r.time,
                    confidence: r.confidence,
                })
                .collect()
        })
        .collect();
    let evals: Vec<VideoEval<'_>> = videos
        .iter()
        .zip(&per_video)
        .map(|(v, p)| VideoEval {
            predictions: p,
            ground_truth: v.spots(),
        })
        .collect();
    let tight = avg_map(&evals, Regime::Tight)?;
    let loose = avg_map(&evals, Regime::Loose)?;
    let report = serde_json::json!({
        "tight_avg_map": tight.avg_map,
        "loose_avg_map": loose.avg_map,
        "per_class_ap": loose
            .per_class
            .iter()
            .map(|(k, ap)| (dataset.config.class_name(*k), *ap))
            .collect::<std::collections::BTreeMap<_, _>>(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn serve(config: ALConfig, bind: SocketAddr, state: &Path) -> Result<()> {
    let dataset = Arc::new(load_dataset(&config.dataset)?);
    let id = config.label();
    let session = Session::open(id.clone(), config, dataset, state)?;
    session.spawn();
    println!("session {id} listening on http://{bind}");
    alspot_service::serve_blocking(bind, alspot_service::sessions([session]))?;
    Ok(())
}
