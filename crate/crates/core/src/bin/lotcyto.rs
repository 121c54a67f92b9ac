use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lotcyto::config::RunConfig;
use lotcyto::pipeline::{cmd_classify, cmd_contrast, cmd_embed, cmd_generate, cmd_simulate, Manifest};

/// Linear optimal transport embeddings for single-cell cohorts.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides LOTCYTO_OUTPUT_DIR and the config file).
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,
    /// Embedding worker threads, 0 for all cores (overrides LOTCYTO_WORKERS).
    #[arg(short, long, global = true)]
    workers: Option<usize>,
    /// Input cell table (overrides input.cells).
    #[arg(long, global = true)]
    cells: Option<PathBuf>,
    /// Reference size m.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the reference and embed every sample.
    Embed,
    /// Train and evaluate the linear classifier, then interpret its weights.
    Classify {
        /// SVM regularization C.
        #[arg(long)]
        c: Option<f64>,
        /// Row (reference) clusters.
        #[arg(long)]
        k: Option<usize>,
        /// Column (marker) clusters.
        #[arg(long)]
        l: Option<usize>,
    },
    /// Control-normalize, build the contrast matrix and analyze its spectrum.
    Contrast {
        /// Outlier margin above the upper Marčenko–Pastur edge.
        #[arg(long)]
        margin: Option<f64>,
    },
    /// Generate a synthetic cohort, or barycenters and interpolations of embeddings.
    Generate {
        /// Cohort seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run synthetic separability and spectrum calibration trials.
    Simulate,
}

fn resolve(cli: &Cli) -> lotcyto::Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    let c = &cli.common;
    if let Some(dir) = &c.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(cells) = &c.cells {
        cfg.input.cells = Some(cells.clone());
    }
    if let Some(m) = c.m {
        cfg.reference.m = m;
        cfg.simulate.m = m;
    }
    match &cli.command {
        Command::Classify { c, k, l } => {
            if let Some(c) = c {
                cfg.svm.c = *c;
            }
            if let Some(k) = k {
                cfg.cocluster.k = *k;
            }
            if let Some(l) = l {
                cfg.cocluster.l = *l;
            }
        }
        Command::Contrast { margin: Some(margin) } => cfg.contrast.margin = *margin,
        Command::Generate { seed: Some(seed) } => cfg.generate.cohort.seed = *seed,
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> lotcyto::Result<Option<(Manifest, PathBuf)>> {
    let cfg = resolve(cli)?;
    if cli.common.print_config {
        let _ = write!(std::io::stdout(), "{}", cfg.to_toml()?);
        return Ok(None);
    }
    let manifest = match cli.command {
        Command::Embed => cmd_embed(&cfg)?.manifest,
        Command::Classify { .. } => cmd_classify(&cfg)?.manifest,
        Command::Contrast { .. } => cmd_contrast(&cfg)?.manifest,
        Command::Generate { .. } => cmd_generate(&cfg)?.manifest,
        Command::Simulate => cmd_simulate(&cfg)?.manifest,
    };
    Ok(Some((manifest, cfg.output_dir)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Some((manifest, dir))) => {
            // A closed stdout must not turn a finished run into a failure.
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{}: wrote {} files to {}", manifest.command, manifest.outputs.len(), dir.display());
            for (k, v) in &manifest.counts {
                let _ = writeln!(out, "  {k} = {v}");
            }
            for note in &manifest.notes {
                let _ = writeln!(out, "  note: {note}");
            }
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

