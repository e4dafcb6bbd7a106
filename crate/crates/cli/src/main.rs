use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mecvf_cli::check::run_checks;
use mecvf_cli::error::HarnessError;
use mecvf_cli::harness::run_experiment;
use mecvf_cli::spec::{Algorithm, ExperimentKind, ExperimentSection, ExperimentSpec, Preset};

#[derive(Parser)]
#[command(name = "mecvf", version, about = "Task offloading across MEC servers and vehicular fogs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one DRL algorithm and save its checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "dtd3")]
        algorithm: Algorithm,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a saved checkpoint across the traffic grid.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run a sigma, traffic or vehicle sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: SweepKind,
        /// Comma-separated algorithm list.
        #[arg(long, value_delimiter = ',')]
        algorithms: Option<Vec<Algorithm>>,
    },
    /// Convergence comparison of all algorithms.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        evaluations: Option<usize>,
    },
    /// Run the oracle and invariant checks.
    Check {
        /// Include the multi-minute learning smoke test.
        #[arg(long)]
        full: bool,
        #[arg(long, env = "MECVF_OUTPUT_DIR", default_value = "results")]
        output_dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment spec (TOML). Without it the preset defaults are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Seeds as a list (`0,1,2`) or a half-open range (`0..10`).
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    #[arg(long, env = "MECVF_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Sigma,
    Traffic,
    Vehicle,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Standard,
    Desk,
}

#[derive(Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
        return Ok(Seeds((a..b).collect()));
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|e| format!("bad seed `{t}`: {e}")))
        .collect::<Result<_, _>>()
        .map(Seeds)
}

impl Common {
    /// Loads the spec (or preset defaults) and applies `kind` plus the flags.
    fn spec(&self, kind: ExperimentKind) -> Result<ExperimentSpec, HarnessError> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::load(path)?,
            None => {
                let preset = match self.preset.unwrap_or(PresetArg::Desk) {
                    PresetArg::Standard => Preset::Standard,
                    PresetArg::Desk => Preset::Desk,
                };
                ExperimentSpec::new(ExperimentSection {
                    id: kind.name().into(),
                    preset,
                    ..ExperimentSection::default()
                })
            }
        };
        if self.config.is_some() && self.preset.is_some() {
            eprintln!("note: --preset is ignored when --config is given");
        }
        spec.experiment.kind = kind;
        if let Some(Seeds(seeds)) = &self.seeds {
            spec.experiment.seeds = seeds.clone();
        }
        if let Some(dir) = &self.output_dir {
            spec.experiment.output_dir = dir.clone();
        }
        Ok(spec)
    }

    fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

fn run(spec: ExperimentSpec, workers: usize) -> Result<(), HarnessError> {
    spec.validate()?;
    let dir = spec.experiment.output_dir.clone();
    let files = run_experiment(&spec, &dir, workers)?;
    println!("metrics   {}", files.metrics.display());
    println!("summary   {}", files.summary.display());
    println!("plot data {}", files.plot.display());
    println!("manifest  {}", files.manifest.display());
    for c in &files.checkpoints {
        println!("checkpoint {}", c.display());
    }
    Ok(())
}

fn check(full: bool, scratch: &Path) -> Result<(), HarnessError> {
    let outcomes = run_checks(full, &scratch.join("check-scratch"));
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(HarnessError::ChecksFailed {
            failed,
            total: outcomes.len(),
        });
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train {
            common,
            algorithm,
            episodes,
        } => {
            if algorithm.agent_kind().is_none() {
                return Err(HarnessError::InvalidSpec {
                    field: "algorithm",
                    reason: format!("`{}` is not a trainable agent", algorithm.name()),
                });
            }
            let mut spec = common.spec(ExperimentKind::SingleTrain)?;
            spec.experiment.algorithms = vec![algorithm];
            if let Some(n) = episodes {
                spec.experiment.drl_episodes = n;
            }
            run(spec, common.workers())
        }
        Command::Evaluate { common, checkpoint } => {
            let mut spec = common.spec(ExperimentKind::Evaluate)?;
            spec.experiment.checkpoint = Some(checkpoint);
            run(spec, common.workers())
        }
        Command::Sweep {
            common,
            kind,
            algorithms,
        } => {
            let kind = match kind {
                SweepKind::Sigma => ExperimentKind::SigmaSweep,
                SweepKind::Traffic => ExperimentKind::TrafficSweep,
                SweepKind::Vehicle => ExperimentKind::VehicleSweep,
            };
            let mut spec = common.spec(kind)?;
            if let Some(a) = algorithms {
                spec.experiment.algorithms = a;
            }
            run(spec, common.workers())
        }
        Command::Compare {
            common,
            episodes,
            evaluations,
        } => {
            let mut spec = common.spec(ExperimentKind::Convergence)?;
            if let Some(n) = episodes {
                spec.experiment.drl_episodes = n;
            }
            if let Some(n) = evaluations {
                spec.experiment.search_evaluations = n;
            }
            run(spec, common.workers())
        }
        Command::Check { full, output_dir } => check(full, &output_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(e.exit_code())
        }
    }
}
