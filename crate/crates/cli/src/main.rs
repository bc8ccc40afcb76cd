use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "sml", version, about = "Scheduled multi-task learning for chat translation")]
struct Cli {
    /// Global seed for every source of randomness.
    #[arg(long, global = true, env = "SML_SEED", default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Window aligned utterance pairs into conversations and build a vocabulary.
    Prepare(PrepareArgs),
    /// Run training stages in order, writing a checkpoint per stage.
    Train(TrainArgs),
    /// Beam-decode every turn of a corpus with a checkpoint.
    Translate(TranslateArgs),
    /// Score hypotheses against references.
    Eval(EvalArgs),
    /// Finite-difference check of every training loss.
    Gradcheck(GradcheckArgs),
    /// Compare strategies on the synthetic quadratic benchmark.
    SchedDemo(SchedDemoArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Tab-separated `source<TAB>target` lines in dialogue order.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub window: usize,
    /// Pairs between window starts; defaults to the window size.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Model config (`key=value` lines).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Stage config files, in stage order.
    #[arg(long = "stage", required = true)]
    pub stages: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop early: `STEP` stops the first stage that runs at that step,
    /// `STAGE:STEP` stops the named stage (name or number).
    #[arg(long, value_name = "[STAGE:]STEP")]
    pub stop_after: Option<String>,
    /// Scheduling strategy for every stage.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Step count for every stage.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Extra `key=value` stage overrides applied after the files.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Hypotheses, one line per turn in corpus order.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the target-side references in the same order.
    #[arg(long)]
    pub refs_out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub beam_size: usize,
    #[arg(long, default_value_t = 0.6)]
    pub length_penalty: f64,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    #[arg(long, default_value_t = 256)]
    pub max_ctx_tokens: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub hyps: PathBuf,
    #[arg(long)]
    pub refs: PathBuf,
    /// `word` or `char`.
    #[arg(long, default_value = "word")]
    pub mode: String,
    /// Corpus the hypotheses were decoded from; enables coherence.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Word-vector file (`dim N` header) for coherence.
    #[arg(long, conflicts_with = "checkpoint")]
    pub vectors: Option<PathBuf>,
    /// Take coherence vectors from a checkpoint's word embeddings.
    #[arg(long, requires = "vocab")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub max_k: usize,
    /// Metrics JSON; also printed to stdout.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Model config; defaults to two layers, d=16, 50-word vocabulary.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SchedDemoArgs {
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Auxiliary task set: `mixed`, `conflicting` or `orthogonal`.
    #[arg(long, default_value = "mixed")]
    pub tasks: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result: Result<bool> = match cli.command {
        Command::Prepare(a) => commands::prepare::run(&a, cli.seed).map(|_| true),
        Command::Train(a) => commands::train::run(&a, cli.seed).map(|_| true),
        Command::Translate(a) => commands::translate::run(&a, cli.seed).map(|_| true),
        Command::Eval(a) => commands::evaluate::run(&a, cli.seed).map(|_| true),
        Command::Gradcheck(a) => commands::tools::gradcheck(&a, cli.seed),
        Command::SchedDemo(a) => commands::tools::sched_demo(&a, cli.seed).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
