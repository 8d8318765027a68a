//! `mvhash`: train, encode, index, query, evaluate and ablate multi-view
//! hashing models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunArgs;
use mvhash::{Error, RelationSource};

#[derive(Debug, Parser)]
#[command(name = "mvhash", version, about = "Multi-view supervised hashing for image retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Two-stage training; writes the checkpoint, relation vector, loss history and config.
    Train(RunArgs),
    /// Encode one part of a split with a trained model.
    Encode {
        #[arg(long)]
        model: PathBuf,
        /// Run directory or config holding the dataset and split (defaults to the model's directory).
        #[arg(long)]
        run: Option<PathBuf>,
        /// Which part of the split to encode.
        #[arg(long, default_value = "gallery")]
        set: commands::SetName,
        #[arg(long, default_value = "exact")]
        relation: RelationSource,
        #[arg(long)]
        out: PathBuf,
        /// Also write an `id,label` CSV for the encoded images.
        #[arg(long)]
        labels_out: Option<PathBuf>,
    },
    /// Build a Hamming index from a code file.
    Index {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Look up query codes in an index (radius lookup plus re-rank).
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        codes: PathBuf,
        /// Only this query id; all queries otherwise.
        #[arg(long)]
        id: Option<u32>,
        #[arg(long, default_value_t = mvhash::retrieval::DEFAULT_RADIUS)]
        radius: usize,
        /// Keep at most this many hits per query.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// mAP (radius and full ranking), precision within radius and ROC.
    Eval {
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// CSV with `id,label` rows covering gallery and queries.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = mvhash::retrieval::DEFAULT_RADIUS)]
        radius: usize,
        /// Ranking depth for full-ranking AP (whole gallery by default).
        #[arg(long)]
        depth: Option<usize>,
        /// Fusion method and relation source echoed into the report.
        #[arg(long, default_value = "")]
        fusion: String,
        #[arg(long, default_value = "")]
        relation: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the baseline, every view subset and the full model; write the ablation table.
    Ablate(RunArgs),
    /// Write a procedural corpus in CIFAR-10 binary format.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16_000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("MVHASH_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not cap threads: {e}");
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    configure_threads();
    let result = match cli.command {
        Command::Train(args) => commands::train(&args),
        Command::Encode {
            model,
            run,
            set,
            relation,
            out,
            labels_out,
        } => commands::encode(&model, run.as_deref(), set, relation, &out, labels_out.as_deref()),
        Command::Index { codes, out } => commands::index(&codes, &out),
        Command::Query {
            index,
            codes,
            id,
            radius,
            top,
        } => commands::query(&index, &codes, id, radius, top),
        Command::Eval {
            gallery,
            queries,
            labels,
            radius,
            depth,
            fusion,
            relation,
            out,
        } => commands::eval(&gallery, &queries, &labels, radius, depth, fusion, relation, &out),
        Command::Ablate(args) => commands::ablate(&args),
        Command::Synth { out, count, seed } => commands::synth(&out, count, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
