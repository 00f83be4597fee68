//! Privacy-preserving text rewriting: train the models, rewrite corpora,
//! attack the rewrites, and score the accuracy/privacy trade-off.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use synveil_cli::config::Overrides;
use synveil_cli::ops;

#[derive(Parser)]
#[command(
    name = "synveil",
    version,
    about = "Syntax-preserving word substitution with privacy evaluation",
    after_help = "Configuration precedence: built-in defaults, then --config, then flags.\n\
                  Exit codes: 0 success, 2 usage (bad flags, configs, or inputs), 1 failure."
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic treebank and its frame lexicon.
    GenFixture {
        /// Training sentences to generate.
        #[arg(long, default_value_t = 2000)]
        train_count: usize,
        /// Development sentences to generate.
        #[arg(long, default_value_t = 200)]
        dev_count: usize,
        /// Evaluation sentences to generate.
        #[arg(long, default_value_t = 200)]
        test_count: usize,
    },
    /// Train the dependency parser and save its checkpoint.
    TrainParser,
    /// Train the substitution policy against a frozen parser checkpoint.
    TrainObf,
    /// Rewrite a corpus with the configured policy, emitting a mask sidecar.
    Obfuscate {
        /// Corpus to rewrite (CoNLL-U).
        #[arg(long)]
        input: PathBuf,
        /// Rewritten corpus path.
        #[arg(long)]
        output: PathBuf,
        /// Mask sidecar path (default: output with a .mask extension).
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Parse a corpus with the internal model or an external adapter.
    Parse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Recover original words from a rewritten corpus and score privacy.
    Attack {
        /// Rewritten corpus (CoNLL-U).
        #[arg(long)]
        input: PathBuf,
        /// Mask sidecar marking substituted positions.
        #[arg(long)]
        mask: PathBuf,
        /// Original corpus, for scoring only.
        #[arg(long)]
        original: PathBuf,
    },
    /// Score one substitution scheme for accuracy and privacy.
    Evaluate,
    /// Sweep all five substitution levels plus the identity baseline.
    Spectrum,
    /// Frame-signature overlap between an original corpus and rewrites.
    AnalyzeFrames {
        /// Original corpus (CoNLL-U).
        #[arg(long)]
        original: PathBuf,
        /// Rewritten corpus, aligned with the original.
        #[arg(long)]
        obfuscated: PathBuf,
        /// Frame lexicon (`word sig1,sig2,…` lines).
        #[arg(long)]
        lexicon: PathBuf,
        /// Second rewritten corpus; tests whether it preserves more frame
        /// structure than --obfuscated.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> synveil::Result<()> {
    let cfg = cli.overrides.effective()?;
    match cli.command {
        Command::GenFixture { train_count, dev_count, test_count } => {
            ops::gen_fixture_cmd(&cfg, train_count, dev_count, test_count)
        }
        Command::TrainParser => ops::train_parser_cmd(&cfg),
        Command::TrainObf => ops::train_obf_cmd(&cfg),
        Command::Obfuscate { input, output, mask_out } => {
            ops::obfuscate_cmd(&cfg, &input, &output, mask_out.as_deref())
        }
        Command::Parse { input, output } => ops::parse_cmd(&cfg, &input, &output),
        Command::Attack { input, mask, original } => {
            ops::attack_cmd(&cfg, &input, &mask, &original)
        }
        Command::Evaluate => ops::evaluate_cmd(&cfg),
        Command::Spectrum => ops::spectrum_cmd(&cfg),
        Command::AnalyzeFrames { original, obfuscated, lexicon, compare } => {
            ops::analyze_frames_cmd(&cfg, &original, &obfuscated, &lexicon, compare.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
