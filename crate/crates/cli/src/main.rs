//! `unlearn-lab`: generate desk problems, train the convex head, unlearn,
//! and measure — one experiment per invocation, every artifact reproducible
//! from the `config.json` stamped next to it.

mod cmds;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use unlearn_lab::Error;

#[derive(Parser)]
#[command(
    name = "unlearn-lab",
    version,
    about = "Desk-scale laboratory for influence-guided unlearning",
    after_help = "Any config leaf can be overridden with a dotted flag, e.g. \
`--unlearn.eta 0.01` or `--dataset.spread 0.6`; see docs/formats.md for the \
full schema. UNLEARN_LAB_SEED overrides the seed of every section."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset or corpus preset.
    Gen {
        /// "gaussian3" (labeled blobs + split) or "markov" (walk corpus).
        #[arg(long)]
        preset: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the classifier head on the full training split.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset file from `gen`; generated in memory when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one unlearning method and emit its trajectory.
    Unlearn {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Trained model from `train`; trained in memory when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Retrained reference model; retrained in memory when omitted.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Shorthand for --unlearn.method.
        #[arg(long)]
        method: Option<String>,
        /// Shorthand for --unlearn.refresh_every (0 scores once).
        #[arg(long)]
        nu: Option<usize>,
        /// Shorthand for --unlearn.top_ratio.
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model and append one row to a runs.csv ledger.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// First column of the ledger row.
        #[arg(long, default_value = "eval")]
        label: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-out retraining oracle vs. the influence predictions.
    Oracle {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Shorthand for --oracle.probes.
        #[arg(long)]
        probes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay the weighted-divergence identity and its eigenvalue bounds.
    Divergence {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sequence-model case study: one table row per method.
    Markov {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate `unlearn` output directories into one table per method.
    Report {
        /// Run directories, each containing a run.json.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Splits argv into clap-visible arguments and dotted `--section.key value`
/// overrides. Dotted flags accept both `--a.b v` and `--a.b=v`.
fn split_dotted_args(
    argv: impl Iterator<Item = String>,
) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut plain = Vec::new();
    let mut dotted = Vec::new();
    let mut args = argv;
    while let Some(arg) = args.next() {
        let Some(body) = arg.strip_prefix("--") else {
            plain.push(arg);
            continue;
        };
        let (name, inline) = match body.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (body, None),
        };
        if !name.contains('.') {
            plain.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => args
                .next()
                .ok_or_else(|| format!("flag --{name} expects a value"))?,
        };
        dotted.push((name.to_string(), value));
    }
    Ok((plain, dotted))
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter(_) | Error::Format(_) | Error::Io(_) => 2,
        Error::Numeric(_) | Error::Training(_) => 3,
    }
}

fn main() {
    let (plain, dotted) = match split_dotted_args(std::env::args()) {
        Ok(parts) => parts,
        Err(msg) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
    };
    let cli = Cli::parse_from(plain);
    match cmds::run(cli.cmd, &dotted) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
