//! detok: weight-only analysis of GPT-2's first attention layer.

mod cmds;
mod ctx;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::ctx::RunCtx;

#[derive(Parser)]
#[command(
    name = "detok",
    version,
    about = "Decompose and analyze the first attention layer directly from model weights",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Weight container file (model.safetensors).
    #[arg(long, global = true)]
    model: Option<PathBuf>,

    /// Vocabulary file (vocab.json).
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,

    /// Merge rules file (merges.txt).
    #[arg(long, global = true)]
    merges: Option<PathBuf>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Seed for every sampled quantity.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Omit the created-at line from CSV headers.
    #[arg(long, global = true)]
    no_timestamp: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fold LayerNorm into the attention projections and cache the result.
    Fold,
    /// Per-position sigma aggregates over the vocabulary.
    SigmaStats {
        /// Aggregate over a seeded token sample instead of the full vocab.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Per-row embedding variances and norm-variance summary.
    Variances {
        /// Which embedding matrix to analyze.
        #[arg(long, default_value = "token", value_parser = ["token", "position"])]
        matrix: String,
    },
    /// Score rows for one of the six terms.
    Terms {
        /// Term kind: ee, pp, pe, ep, e, p.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        head: usize,
        /// Query token text (required for ee/ep).
        #[arg(long)]
        query: Option<String>,
        /// Query position i (required for pp/pe/ep).
        #[arg(long)]
        i: Option<usize>,
        /// Query-side sigma mode: exact, mean, max, min, none.
        #[arg(long, default_value = "mean")]
        sigma_i: String,
        /// Key-side sigma mode.
        #[arg(long, default_value = "mean")]
        sigma_j: String,
        /// Reference position for token-keyed sigmas.
        #[arg(long)]
        ref_pos: Option<usize>,
        /// Also emit a line plot (position-indexed terms only).
        #[arg(long)]
        svg: bool,
        /// For --kind p: add the vocab mean/std band of the token
        /// self-assertion score at every position.
        #[arg(long)]
        spread: bool,
    },
    /// Sum of the position terms and its softmax weights at one position.
    PositionBias {
        #[arg(long)]
        i: usize,
        #[arg(long)]
        head: usize,
        #[arg(long, default_value = "mean")]
        sigma: String,
    },
    /// Top-k key tokens by token-token score for a query token.
    Topk {
        /// Query token text, e.g. "iens".
        #[arg(long)]
        query: String,
        #[arg(long)]
        head: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value = "mean")]
        sigma_j: String,
        #[arg(long)]
        ref_pos: Option<usize>,
    },
    /// Token-token score heatmap over a sampled token set.
    Heatmap {
        #[arg(long)]
        head: usize,
        /// Number of sampled tokens per axis.
        #[arg(long, default_value_t = 64)]
        tokens: usize,
        /// Use raw numerators (sigma = 1).
        #[arg(long)]
        no_layernorm: bool,
    },
    /// Count unigrams and bigrams over a text corpus.
    Count {
        /// Text files or directories to count.
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        /// Document separator: blankline, newline, none.
        #[arg(long, default_value = "blankline")]
        doc_sep: String,
    },
    /// ROC / AUROC of token-token scores against bigram counts.
    Auroc {
        /// Counts snapshot produced by `count`.
        #[arg(long)]
        counts: PathBuf,
        /// Single query token text; emits the ROC curve.
        #[arg(long)]
        query: Option<String>,
        /// Head for --query mode.
        #[arg(long)]
        head: Option<usize>,
        /// Mean AUROC across every head.
        #[arg(long)]
        mean: bool,
        /// Permutation null instead of real counts (with --mean).
        #[arg(long)]
        null: bool,
        #[arg(long, default_value_t = 100)]
        min_count: u64,
        #[arg(long, default_value_t = 2000)]
        max_queries: usize,
    },
    /// KL contribution of each term to the attention rows.
    Contrib {
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        /// Comma-separated head list, or "all".
        #[arg(long, default_value = "all")]
        heads: String,
        /// Comma-separated query positions.
        #[arg(long, default_value = "50,500")]
        positions: String,
        #[arg(long, default_value_t = 512)]
        samples: usize,
        #[arg(long, default_value = "blankline")]
        doc_sep: String,
    },
    /// Mean empirical first-layer attention over corpus sequences.
    Empirical {
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long, default_value_t = 500)]
        i: usize,
        #[arg(long, default_value_t = 512)]
        samples: usize,
        #[arg(long, default_value = "blankline")]
        doc_sep: String,
    },
    /// Spearman correlation of a weight-derived statistic with frequency.
    Spearman {
        #[arg(long)]
        counts: PathBuf,
        /// term-e (per head) or variance (token-embedding variances).
        #[arg(long, default_value = "term-e", value_parser = ["term-e", "variance"])]
        target: String,
        /// Restrict term-e to one head.
        #[arg(long)]
        head: Option<usize>,
        #[arg(long)]
        ref_pos: Option<usize>,
    },
    /// Top-k detokenization report for multi-token words.
    DetokReport {
        /// Words given inline.
        #[arg(long, num_args = 0..)]
        word: Vec<String>,
        /// File with one word per line.
        #[arg(long)]
        words_file: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Comma-separated head list, or "all".
        #[arg(long, default_value = "all")]
        heads: String,
        #[arg(long)]
        ref_pos: Option<usize>,
    },
    /// Run the folding and decomposition equivalence checks.
    Verify {
        #[arg(long, default_value_t = 64)]
        seqs: usize,
        #[arg(long, default_value_t = 64)]
        seq_len: usize,
        #[arg(long, default_value_t = 10000)]
        draws: usize,
    },
}

/// Failures before any computation starts exit 1; failures during
/// computation exit 2.
pub enum CliError {
    Validation(anyhow::Error),
    Computation(anyhow::Error),
}

impl CliError {
    fn report(self) -> ExitCode {
        match self {
            CliError::Validation(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
            CliError::Computation(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        }
    }
}

pub fn validation(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Validation(e.into())
}

pub fn computation(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Computation(e.into())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage and parse errors go to stderr with exit 1 (help and
            // version requests still succeed).
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .ok();
    }

    let config_hash = util::config_hash(&argv[1..]);
    let mut ctx = RunCtx::new(
        cli.model,
        cli.vocab,
        cli.merges,
        cli.out,
        cli.seed,
        config_hash,
        !cli.no_timestamp,
    );

    let result = match cli.command {
        Command::Fold => cmds::fold(&mut ctx),
        Command::SigmaStats { sample } => cmds::sigma_stats(&mut ctx, sample),
        Command::Variances { matrix } => cmds::variances(&mut ctx, &matrix),
        Command::Terms {
            kind,
            head,
            query,
            i,
            sigma_i,
            sigma_j,
            ref_pos,
            svg,
            spread,
        } => cmds::terms(&mut ctx, &kind, head, query, i, &sigma_i, &sigma_j, ref_pos, svg, spread),
        Command::PositionBias { i, head, sigma } => cmds::position_bias(&mut ctx, i, head, &sigma),
        Command::Topk {
            query,
            head,
            k,
            sigma_j,
            ref_pos,
        } => cmds::topk(&mut ctx, &query, head, k, &sigma_j, ref_pos),
        Command::Heatmap {
            head,
            tokens,
            no_layernorm,
        } => cmds::heatmap(&mut ctx, head, tokens, no_layernorm),
        Command::Count { corpus, doc_sep } => cmds::count(&mut ctx, &corpus, &doc_sep),
        Command::Auroc {
            counts,
            query,
            head,
            mean,
            null,
            min_count,
            max_queries,
        } => cmds::auroc(&mut ctx, &counts, query, head, mean, null, min_count, max_queries),
        Command::Contrib {
            corpus,
            heads,
            positions,
            samples,
            doc_sep,
        } => cmds::contrib(&mut ctx, &corpus, &heads, &positions, samples, &doc_sep),
        Command::Empirical {
            corpus,
            i,
            samples,
            doc_sep,
        } => cmds::empirical(&mut ctx, &corpus, i, samples, &doc_sep),
        Command::Spearman {
            counts,
            target,
            head,
            ref_pos,
        } => cmds::spearman(&mut ctx, &counts, &target, head, ref_pos),
        Command::DetokReport {
            word,
            words_file,
            k,
            heads,
            ref_pos,
        } => cmds::detok_report(&mut ctx, word, words_file, k, &heads, ref_pos),
        Command::Verify {
            seqs,
            seq_len,
            draws,
        } => cmds::verify(&mut ctx, seqs, seq_len, draws),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
