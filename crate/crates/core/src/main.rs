use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use orthoplane::config::{load_run_config, RunConfig};
use orthoplane::pipeline::{Format, LossInputs, Run, Stage, StageError};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Pfm,
    Png16,
}

#[derive(Debug, Parser)]
#[command(name = "orthoplane", version, about = "Orthogonal-plane mixture depth toolkit")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run directory; inputs default to files inside it.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Container for disparity outputs.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Pfm)]
    format: FormatArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a seeded scene, its ground truth and its ideal field.
    Synth,
    /// Write the plane bank.
    Planes,
    /// Synthesize the right view from the left image and a field.
    Warp {
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        left: Option<PathBuf>,
    },
    /// Evaluate the training losses of a field.
    Loss {
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        left: Option<PathBuf>,
        #[arg(long)]
        right: Option<PathBuf>,
        /// Right-view mask (PFM) for the masked loss variants.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Disparity label (PFM); enables the distillation term.
        #[arg(long)]
        label: Option<PathBuf>,
    },
    /// Soft occlusion masks of a field.
    Masks {
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Post-processed prediction and the blended distillation label.
    Distill {
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        mask_rl: Option<PathBuf>,
        #[arg(long)]
        mask_lr: Option<PathBuf>,
    },
    /// Depth metrics; PFM inputs hold depth, PNG inputs 16-bit disparity.
    Eval {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, default_value = "label")]
        name: String,
    },
    /// Tabulate metrics files as CSV and JSON.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), StageError> {
    let config = match &cli.config {
        Some(p) => load_run_config(p).map_err(|source| StageError {
            stage: stage_of(&cli.command),
            source,
        })?,
        None => RunConfig::default(),
    };
    let format = match cli.format {
        FormatArg::Pfm => Format::Pfm,
        FormatArg::Png16 => Format::Png16,
    };
    let run = Run::new(config, cli.seed, &cli.out, format);
    let or = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| run.path(name));
    let outputs = match &cli.command {
        Command::Synth => run.stage(Stage::Synth, |r| r.synth())?,
        Command::Planes => run.stage(Stage::Planes, |r| r.planes())?,
        Command::Warp { field, left } => {
            let (field, left) = (or(field, "field"), or(left, "left.pfm"));
            run.stage(Stage::Warp, |r| r.warp(&field, &left))?
        }
        Command::Loss {
            field,
            left,
            right,
            mask,
            label,
        } => {
            let inputs = LossInputs {
                field: or(field, "field"),
                left: or(left, "left.pfm"),
                right: or(right, "right.pfm"),
                mask_r: mask.clone(),
                label: label.clone(),
            };
            run.stage(Stage::Loss, |r| r.loss(&inputs))?
        }
        Command::Masks { field } => {
            let field = or(field, "field");
            run.stage(Stage::Masks, |r| r.masks(&field))?
        }
        Command::Distill { field, mask_rl, mask_lr } => {
            let (field, rl, lr) = (or(field, "field"), or(mask_rl, "mask_rl.pfm"), or(mask_lr, "mask_lr.pfm"));
            run.stage(Stage::Distill, |r| r.distill(&field, &rl, &lr))?
        }
        Command::Eval { pred, gt, name } => {
            let (pred, gt) = (or(pred, "depth_label.pfm"), or(gt, "depth_gt.pfm"));
            let mut record = None;
            let outputs = run.stage(Stage::Eval, |r| {
                let (rec, outputs) = r.eval(&pred, &gt, name)?;
                record = Some(rec);
                Ok(outputs)
            })?;
            let rec = record.expect("eval succeeded");
            let cols: Vec<String> = orthoplane::metrics::Metrics::COLUMNS
                .iter()
                .zip(rec.metrics.values())
                .map(|(k, v)| format!("{k}={v:.6}"))
                .collect();
            println!("{} {} count={}", rec.name, cols.join(" "), rec.metrics.count);
            outputs
        }
        Command::Report { metrics } => run.stage(Stage::Report, |r| r.report(metrics))?,
    };
    for p in outputs {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn stage_of(cmd: &Command) -> Stage {
    match cmd {
        Command::Synth => Stage::Synth,
        Command::Planes => Stage::Planes,
        Command::Warp { .. } => Stage::Warp,
        Command::Loss { .. } => Stage::Loss,
        Command::Masks { .. } => Stage::Masks,
        Command::Distill { .. } => Stage::Distill,
        Command::Eval { .. } => Stage::Eval,
        Command::Report { .. } => Stage::Report,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error {e}");
            ExitCode::FAILURE
        }
    }
}
