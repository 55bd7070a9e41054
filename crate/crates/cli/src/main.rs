use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use enginebio::audio_io::Rpm;
use enginebio::classifiers::Family;
use enginebio::segmentation::Multiplier;
use enginebio_cli::{
    cmd_evaluate, cmd_extract, cmd_predict, cmd_synth, cmd_train, cmd_tune, emit_json, render_summary, CliError,
    CliResult, GridCell, RunConfig,
};

#[derive(Parser)]
#[command(name = "enginebio", version, about = "Identify car manufacturers from engine sound")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// Master seed for sampling, splits and model initialisation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON run configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic engine-sound corpus and its manifest.
    Synth {
        /// Corpus description (JSON); the bundled five-profile corpus when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment every recording of a manifest and write the feature table.
    Extract {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Window sizes in tempos, e.g. `1,2,5`.
        #[arg(long, value_delimiter = ',', value_parser = parse_multiplier)]
        multipliers: Option<Vec<Multiplier>>,
    },
    /// Hyperparameter search for one family on one (rpm, multiplier) variant.
    Tune {
        features: PathBuf,
        #[arg(long, value_parser = parse_rpm)]
        rpm: Rpm,
        #[arg(long, value_parser = parse_multiplier)]
        multiplier: Multiplier,
        #[arg(long, value_parser = parse_family)]
        family: Family,
        /// Search space (JSON); the bundled space when omitted.
        #[arg(long)]
        space: Option<PathBuf>,
        /// Number of sampled configurations.
        #[arg(long)]
        n: Option<usize>,
        /// Refit the winner on the whole variant and save it here.
        #[arg(long)]
        model_out: Option<PathBuf>,
        /// Result JSON (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one family on a whole variant and save the model.
    Train {
        features: PathBuf,
        #[arg(long, value_parser = parse_rpm)]
        rpm: Rpm,
        #[arg(long, value_parser = parse_multiplier)]
        multiplier: Multiplier,
        #[arg(long, value_parser = parse_family)]
        family: Family,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune and leave-one-out evaluate every family on the grid; write the report.
    Evaluate {
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Families to evaluate, e.g. `mlp,knn,rf`.
        #[arg(long, value_delimiter = ',', value_parser = parse_family)]
        families: Option<Vec<Family>>,
        /// Configurations sampled per family and variant; 0 uses the defaults.
        #[arg(long)]
        n: Option<usize>,
        /// Hold out whole recordings instead of single segments.
        #[arg(long)]
        group_by_recording: bool,
    },
    /// Predict the manufacturer of one recording.
    Predict {
        #[arg(long)]
        model: PathBuf,
        wav: PathBuf,
        #[arg(long, value_parser = parse_multiplier, default_value = "1")]
        multiplier: Multiplier,
    },
}

fn parse_multiplier(s: &str) -> Result<Multiplier, String> {
    let v: u32 = s.trim().parse().map_err(|e| format!("{e}"))?;
    Multiplier::new(v).map_err(|e| e.to_string())
}

fn parse_rpm(s: &str) -> Result<Rpm, String> {
    let v: u32 = s.trim().parse().map_err(|e| format!("{e}"))?;
    Rpm::new(v).map_err(|e| e.to_string())
}

fn parse_family(s: &str) -> Result<Family, String> {
    Family::parse(s.trim()).map_err(|e| e.to_string())
}

fn resolve(shared: &Shared) -> CliResult<RunConfig> {
    let mut config = match &shared.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = shared.seed {
        config.seed = s;
    }
    if let Some(t) = shared.threads {
        config.threads = Some(t);
    }
    Ok(config)
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = resolve(&cli.shared)?;
    match cli.command {
        Command::Synth { spec, out } => {
            let manifest = cmd_synth(spec.as_deref(), cli.shared.seed, &out)?;
            println!("{}", manifest.display());
            return Ok(());
        }
        Command::Extract { ref multipliers, .. } => {
            if let Some(m) = multipliers {
                config.multipliers = m.clone();
            }
        }
        Command::Tune { n, .. } => {
            if let Some(n) = n {
                config.n_configs = n;
            }
        }
        Command::Evaluate {
            ref families,
            n,
            group_by_recording,
            ..
        } => {
            if let Some(f) = families {
                config.families = f.clone();
            }
            if let Some(n) = n {
                config.n_configs = n;
            }
            if group_by_recording {
                config.loo_group = enginebio::dataset::LooGroup::Recording;
            }
        }
        Command::Train { .. } | Command::Predict { .. } => {}
    }
    config.validate()?;
    if let Some(t) = config.threads {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match cli.command {
        Command::Synth { .. } => unreachable!(),
        Command::Extract { manifest, out, .. } => {
            let summary = cmd_extract(&config, &manifest, &out)?;
            eprintln!("{} rows from {} recordings", summary.rows, summary.recordings.len());
        }
        Command::Tune {
            features,
            rpm,
            multiplier,
            family,
            space,
            model_out,
            out,
            ..
        } => {
            let cell = GridCell { rpm, multiplier };
            let result = cmd_tune(&config, &features, cell, family, space.as_deref(), model_out.as_deref())?;
            emit_json(&result, out.as_deref())?;
        }
        Command::Train {
            features,
            rpm,
            multiplier,
            family,
            out,
        } => {
            cmd_train(&config, &features, GridCell { rpm, multiplier }, family, &out)?;
        }
        Command::Evaluate { features, out, .. } => {
            let report = cmd_evaluate(&config, &features, &out)?;
            print!("{}", render_summary(&report));
        }
        Command::Predict { model, wav, multiplier } => {
            emit_json(&cmd_predict(&config, &model, &wav, multiplier)?, None)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Domain(inner) = &e {
                let mut source = std::error::Error::source(inner);
                while let Some(s) = source {
                    eprintln!("  caused by: {s}");
                    source = s.source();
                }
            }
            ExitCode::from(1)
        }
    }
}
