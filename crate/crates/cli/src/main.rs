use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vulndistill_cli::commands::{
    cmd_evaluate, cmd_predict, cmd_prepare, cmd_train_student, cmd_train_teacher_a, cmd_train_teacher_b, gen_corpus,
};
use vulndistill_cli::{PipelineError, RunConfig, SEED_ENV};

#[derive(Parser)]
#[command(name = "vulndistill", version, about = "Dual-teacher distillation for vulnerability detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled corpus as train/val/test JSONL.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        /// Number of functions.
        #[arg(long)]
        n: Option<usize>,
        /// Fraction of vulnerable functions.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Train vocabularies and write token sequences, structure sequences
    /// and graph dumps.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// JSON array or JSONL of externally parsed trees keyed by sample id.
        #[arg(long)]
        ast: Option<PathBuf>,
    },
    /// Train the token-sequence teacher.
    TrainTeacherA {
        #[command(flatten)]
        common: Common,
    },
    /// Train the structure-graph teacher.
    TrainTeacherB {
        #[command(flatten)]
        common: Common,
    },
    /// Distil both teachers into the student.
    TrainStudent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher_a: Option<PathBuf>,
        #[arg(long)]
        teacher_b: Option<PathBuf>,
        /// Train one student per grid point and write a comparison report.
        #[arg(long)]
        grid: bool,
    },
    /// Score a checkpoint on a prepared split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Print predictions for a JSONL file of {id, code} or one source file.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Prepared directory holding the vocabularies.
        #[arg(long)]
        prepared: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Input: dataset, prepared directory, or inputs to predict.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON object of dotted keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long, value_parser = ["ast", "dfg"])]
    structure: Option<String>,
    #[arg(long, value_parser = ["wAB", "w/oA", "w/oB", "w/oAB"])]
    ablation: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, value_parser = ["json", "csv", "md"])]
    format: Option<String>,
}

impl Common {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut o = Vec::new();
        let mut put = |key, v: Option<String>| {
            if let Some(v) = v {
                o.push((key, v));
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("train.epochs", self.epochs.map(|v| v.to_string()));
        put("train.batch_size", self.batch_size.map(|v| v.to_string()));
        put("train.lr", self.lr.map(|v| v.to_string()));
        put("prepare.seq_len", self.seq_len.map(|v| v.to_string()));
        put("prepare.vocab_size", self.vocab_size.map(|v| v.to_string()));
        put("structure", self.structure.clone());
        put("train.ablation", self.ablation.clone());
        put("distill.gamma", self.gamma.map(|v| v.to_string()));
        put("distill.kappa", self.kappa.map(|v| v.to_string()));
        put("distill.temperature", self.temperature.map(|v| v.to_string()));
        put("format", self.format.clone());
        o
    }

    fn resolve(&self, extra: Vec<(&'static str, String)>) -> Result<RunConfig, PipelineError> {
        let env_seed = std::env::var(SEED_ENV).ok();
        let mut overrides = self.overrides();
        overrides.extend(extra);
        RunConfig::resolve(self.config.as_deref(), env_seed.as_deref(), &overrides)
    }

    fn data(&self) -> Result<&PathBuf, PipelineError> {
        self.data.as_ref().ok_or_else(|| PipelineError::Usage("--data is required".into()))
    }

    fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

fn run(cli: Cli, log: &mut dyn Write) -> Result<(), PipelineError> {
    match cli.command {
        Command::GenCorpus { common, n, ratio } => {
            let mut extra = Vec::new();
            extra.extend(n.map(|v| ("corpus.n", v.to_string())));
            extra.extend(ratio.map(|v| ("corpus.ratio", v.to_string())));
            gen_corpus(&common.resolve(extra)?, &common.out(), log)?;
        }
        Command::Prepare { common, ast } => {
            cmd_prepare(&common.resolve(Vec::new())?, common.data()?, &common.out(), ast.as_deref(), log)?;
        }
        Command::TrainTeacherA { common } => {
            cmd_train_teacher_a(&common.resolve(Vec::new())?, common.data()?, &common.out(), log)?;
        }
        Command::TrainTeacherB { common } => {
            cmd_train_teacher_b(&common.resolve(Vec::new())?, common.data()?, &common.out(), log)?;
        }
        Command::TrainStudent {
            common,
            teacher_a,
            teacher_b,
            grid,
        } => {
            cmd_train_student(
                &common.resolve(Vec::new())?,
                common.data()?,
                &common.out(),
                teacher_a.as_deref(),
                teacher_b.as_deref(),
                grid,
                log,
            )?;
        }
        Command::Evaluate {
            common,
            checkpoint,
            split,
        } => {
            cmd_evaluate(&common.resolve(Vec::new())?, &checkpoint, common.data()?, &split, &common.out(), log)?;
        }
        Command::Predict {
            common,
            checkpoint,
            prepared,
        } => {
            common.resolve(Vec::new())?;
            cmd_predict(&checkpoint, &prepared, common.data()?, log)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut stdout = std::io::stdout();
    match run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
