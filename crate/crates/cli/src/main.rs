//! `otfcl` command-line runner.

mod ablate;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use otfcl::dataio::{generate_synthetic, read_dump, Checkpoint, Dataset, SyntheticSpec};
use otfcl::ican::GeneratorKind;
use otfcl::protocol::{self, Learner};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "otfcl", version, about = "Buffer-free online continual learning over feature streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a stream and write metrics, summary, and checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test dump.
    Eval(EvalArgs),
    /// Write synthetic train/test feature dumps.
    Synth(SynthArgs),
    /// Run the component ablation grid (and optional pseudo-quantity sweep).
    Ablate(AblateArgs),
}

#[derive(Args)]
struct OutputArgs {
    /// Directory receiving all artifacts.
    #[arg(long, env = "OTFCL_OUTPUT_DIR", default_value = "otfcl-out")]
    output_dir: PathBuf,
}

#[derive(Args, Clone, Default)]
pub struct Toggles {
    /// Override the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Disable analogical pseudo-feature rehearsal.
    #[arg(long)]
    no_ican: bool,
    /// Disable the significance-weighted bias correction.
    #[arg(long)]
    no_isay: bool,
    /// Pseudo-feature generator.
    #[arg(long, value_parser = parse_generator)]
    generator: Option<GeneratorKind>,
    /// Pseudo-features per real feature.
    #[arg(long)]
    pseudo_per_real: Option<f64>,
    /// Keep only this fraction of each class's training data.
    #[arg(long)]
    low_data: Option<f64>,
}

fn parse_generator(s: &str) -> Result<GeneratorKind, String> {
    s.parse().map_err(|e: otfcl::Error| e.to_string())
}

impl Toggles {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.reseed(seed);
        }
        if self.no_ican {
            cfg.run.ican_enabled = false;
        }
        if self.no_isay {
            cfg.run.isay_enabled = false;
        }
        if let Some(g) = self.generator {
            cfg.run.ican.generator = g;
        }
        if let Some(p) = self.pseudo_per_real {
            cfg.run.ican.pseudo_per_real = p;
        }
        if let Some(f) = self.low_data {
            cfg.run.low_data_fraction = f;
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    toggles: Toggles,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test feature dump (I2FV).
    #[arg(long)]
    test: PathBuf,
    /// Also write eval.json here.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic spec (JSON); defaults to the reference spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
    /// Seeds per cell, starting at the configured seed.
    #[arg(long, default_value_t = 5)]
    repeats: u64,
    /// Add the pseudo-quantity sweep over 0, 0.5, 1, 2.
    #[arg(long)]
    sweep: bool,
    #[command(flatten)]
    toggles: Toggles,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Synth(a) => run_synth(a),
        Command::Ablate(a) => ablate::run_ablate(&a.config, &a.output.output_dir, a.repeats, a.sweep, &a.toggles),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    args.toggles.apply(&mut cfg);
    let (train, test) = cfg.load_data()?;
    let out = protocol::run(&cfg.run, &train, &test)?;

    let dir = &args.output.output_dir;
    create_dir(dir)?;
    let mut csv = Vec::new();
    out.report.write_csv(&mut csv)?;
    fs::write(dir.join("metrics.csv"), csv)?;
    fs::write(dir.join("summary.json"), out.report.summary_json()?)?;
    out.checkpoint().write(dir.join("checkpoint.i2ck"))?;

    println!(
        "last accuracy {:.2}%, average accuracy {:.2}% over {} checkpoints -> {}",
        out.report.last_accuracy,
        out.report.average_accuracy,
        out.report.session_accuracies.len(),
        dir.display()
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let ck = Checkpoint::read(&args.checkpoint)
        .with_context(|| format!("reading checkpoint {}", args.checkpoint.display()))?;
    let dump = read_dump(&args.test)
        .with_context(|| format!("reading test dump {}", args.test.display()))?;
    if dump.dim as usize != ck.head.dim() {
        bail!(
            "dimension mismatch: checkpoint has dim {}, test dump has dim {}",
            ck.head.dim(),
            dump.dim
        );
    }
    let test = Dataset::from(&dump);
    let learner = Learner::from_checkpoint(&ck)?;
    let accuracy = learner.evaluate(&test)?;
    let seen = learner.store().seen_classes();
    let evaluated = test
        .labels()
        .iter()
        .filter(|l| seen.binary_search(l).is_ok())
        .count();
    let summary = serde_json::json!({
        "accuracy": accuracy,
        "seen_classes": seen.len(),
        "test_samples": evaluated,
        "seed": ck.config.seed,
        "config": ck.config,
    });
    let text = serde_json::to_string_pretty(&summary)?;
    println!("{text}");
    if let Some(dir) = args.output_dir {
        create_dir(&dir)?;
        fs::write(dir.join("eval.json"), text)?;
    }
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading spec {}", path.display()))?;
            serde_json::from_str::<SyntheticSpec>(&text)
                .with_context(|| format!("parsing spec {}", path.display()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (train, test) = generate_synthetic(&spec)?;
    let dir = &args.output.output_dir;
    create_dir(dir)?;
    train.write(dir.join("train.i2fv"))?;
    test.write(dir.join("test.i2fv"))?;
    fs::write(dir.join("synthetic.json"), serde_json::to_string_pretty(&spec)?)?;
    println!(
        "wrote {} train / {} test records (dim {}) -> {}",
        train.records.len(),
        test.records.len(),
        train.dim,
        dir.display()
    );
    Ok(())
}
