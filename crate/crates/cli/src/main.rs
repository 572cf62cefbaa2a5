use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hwdm_cli::commands::{self, Context};
use hwdm_cli::{CliError, CliResult, Preset, RunConfig};

/// Hybrid CNN/ViT/GNN weed detection: data, training, evaluation and deployment.
#[derive(Parser)]
#[command(name = "hwdm", version)]
struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured preset.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the procedural dataset with masks and a manifest.
    GenData {
        #[arg(long)]
        per_class: Option<usize>,
        /// Total sample count at the imbalanced class shares.
        #[arg(long)]
        imbalanced: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Write enhanced copies of the manifest's images.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train the conditional GAN on the manifest's images.
    GanTrain {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Copy the dataset and add generated images until classes are balanced.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        gan: PathBuf,
    },
    /// Contrastive pretraining of the CNN and ViT encoders.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Multi-task training.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Validation manifest, evaluated after every epoch.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Pretraining checkpoint supplying the encoder weights.
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Metrics of a model on a manifest, or k-fold cross-validation with --cv.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, required_unless_present = "cv")]
        model: Option<PathBuf>,
        #[arg(long, conflicts_with = "model")]
        cv: bool,
    },
    /// 8-bit weight quantization, with an agreement report given a manifest.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Zero the smallest-magnitude fraction of every weight tensor.
    Prune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Predict one image.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
        None => String::new(),
    };
    let cfg = RunConfig::parse(&text, cli.preset, cli.seed).map_err(|e| match &cli.config {
        Some(path) => CliError::Usage(format!("{}: {e}", path.display())),
        None => CliError::Usage(e.to_string()),
    })?;
    let ctx = Context { cfg, out: cli.out };
    match cli.command {
        Command::GenData { per_class, imbalanced, size } => commands::gen_data(&ctx, per_class, imbalanced, size),
        Command::Preprocess { manifest } => commands::preprocess(&ctx, &manifest),
        Command::GanTrain { manifest } => commands::gan_train(&ctx, &manifest),
        Command::Augment { manifest, gan } => commands::augment(&ctx, &manifest, &gan),
        Command::Pretrain { manifest } => commands::pretrain_cmd(&ctx, &manifest),
        Command::Train { manifest, val, pretrained } => {
            commands::train_cmd(&ctx, &manifest, val.as_deref(), pretrained.as_deref())
        }
        Command::Eval { manifest, model: Some(model), cv: false } => commands::eval(&ctx, &manifest, &model),
        Command::Eval { manifest, .. } => commands::cross_validate(&ctx, &manifest),
        Command::Quantize { model, manifest } => commands::quantize(&ctx, &model, manifest.as_deref()),
        Command::Prune { model, fraction } => commands::prune(&ctx, &model, fraction),
        Command::Infer { model, image } => commands::infer(&ctx, &model, &image),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
