//! Command-line driver for the multi-hop simulator.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a configuration
//! error (bad key or value, missing weights or code files).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use multihop_sim::acceptance::{self, CRITERIA};
use multihop_sim::config::{default_config_path, Config};
use multihop_sim::corpus::{synthetic_corpus, write_corpus};
use multihop_sim::pipeline::read_csv;
use multihop_sim::plot::{plot_rows, Metric, PlotKind};
use multihop_sim::{workflow, Error};

#[derive(Parser)]
#[command(
    name = "mhsim",
    version,
    about = "Multi-hop image transmission simulator with residual compensation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Configuration file (TOML). Defaults to `$MHSIM_CONFIG_DIR/mhsim.toml`
    /// when that exists, else built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set residual.qam=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replace the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps and training batches (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured chain or sweep and write the results CSV.
    Run {
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Run one training stage and write its weights and loss curve.
    Train {
        #[command(flatten)]
        args: ConfigArgs,
        /// 1: codec on the chain loss, 2: residual compressor, 3: entropy model.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
    },
    /// Draw an SVG line chart from a results CSV.
    Plot {
        /// Results table written by `run`.
        #[arg(long)]
        csv: PathBuf,
        /// Which sweep the table holds.
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Quality metric on the y axis.
        #[arg(long, value_enum, default_value = "psnr")]
        metric: MetricArg,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic PNG image corpus.
    GenCorpus {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of images.
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Square image side in pixels.
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// Corpus seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the acceptance checks and print one line per criterion.
    Verify {
        /// Criteria to run (default: all).
        #[arg(long = "criterion", value_name = "N")]
        criteria: Vec<u8>,
        /// Directory for files written by the determinism check.
        #[arg(long)]
        scratch: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Snr,
    Cbr,
    Hops,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Psnr,
    MsSsim,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    /// Errors raised while the configuration is being assembled are
    /// configuration errors whatever their kind.
    fn config(e: Error) -> Self {
        Failure::Config(e.to_string())
    }

    fn runtime(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(format!("invalid configuration: {m}")),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<Config, Failure> {
    let path = args.config.clone().or_else(default_config_path);
    let mut cfg = match &path {
        Some(p) => Config::load(p).map_err(Failure::config)?,
        None => Config::default(),
    };
    cfg = cfg
        .with_overrides(&args.overrides)
        .map_err(Failure::config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(Failure::Config("--jobs must be at least 1".into()));
        }
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    Ok(cfg)
}

fn cmd_run(args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    workflow::validate(&cfg).map_err(Failure::config)?;
    let result = workflow::run(&cfg).map_err(Failure::runtime)?;
    print!("{}", workflow::summarize(&result.rows));
    println!("wrote {}", result.csv.display());
    Ok(())
}

fn cmd_train(args: &ConfigArgs, stage: u8) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let r = workflow::train(&cfg, stage).map_err(Failure::runtime)?;
    println!(
        "stage {stage}: loss {:.6} -> {:.6}; wrote {} and {}",
        r.initial,
        r.last,
        r.weights.display(),
        r.curve.display()
    );
    Ok(())
}

fn cmd_plot(csv: &Path, kind: KindArg, metric: MetricArg, out: &Path) -> Result<(), Failure> {
    let file = fs::File::open(csv)
        .map_err(|e| Failure::Runtime(format!("cannot open {}: {e}", csv.display())))?;
    let rows = read_csv(file).map_err(Failure::runtime)?;
    let kind = match kind {
        KindArg::Snr => PlotKind::Snr,
        KindArg::Cbr => PlotKind::Cbr,
        KindArg::Hops => PlotKind::Hops,
    };
    let metric = match metric {
        MetricArg::Psnr => Metric::Psnr,
        MetricArg::MsSsim => Metric::MsSsim,
    };
    let svg = plot_rows(&rows, kind, metric).map_err(Failure::runtime)?;
    fs::write(out, svg)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", out.display())))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_gen_corpus(out: &Path, count: usize, size: usize, seed: u64) -> Result<(), Failure> {
    let images = synthetic_corpus(count, size, size, seed).map_err(Failure::config)?;
    write_corpus(out, &images).map_err(Failure::runtime)?;
    println!("wrote {count} images to {}", out.display());
    Ok(())
}

fn cmd_verify(criteria: &[u8], scratch: Option<&Path>) -> Result<(), Failure> {
    let ids = if criteria.is_empty() {
        CRITERIA.to_vec()
    } else {
        criteria.to_vec()
    };
    if let Some(bad) = ids.iter().find(|id| !CRITERIA.contains(id)) {
        return Err(Failure::Config(format!("no acceptance criterion {bad}")));
    }
    let scratch = scratch.map(Path::to_path_buf).unwrap_or_else(|| {
        std::env::temp_dir().join(format!("mhsim-verify-{}", std::process::id()))
    });
    let mut failed = 0;
    for id in ids {
        let outcome = acceptance::run(id, &scratch);
        println!("{outcome}");
        failed += usize::from(!outcome.passed);
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} criteria failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { args } => cmd_run(args),
        Command::Train { args, stage } => cmd_train(args, *stage),
        Command::Plot {
            csv,
            kind,
            metric,
            out,
        } => cmd_plot(csv, *kind, *metric, out),
        Command::GenCorpus {
            out,
            count,
            size,
            seed,
        } => cmd_gen_corpus(out, *count, *size, *seed),
        Command::Verify { criteria, scratch } => cmd_verify(criteria, scratch.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
