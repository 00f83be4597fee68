//! Privacy-preserving word substitution that keeps sentences parseable.
//!
//! The toolkit revolves around one idea: replace privacy-sensitive words in a
//! POS-tagged sentence with other words of the same tag, so that a reader (or
//! an attacker) cannot recover the original text, while a downstream syntactic
//! parser still produces the original structure. The pieces:
//!
//! * [`corpus`] — tokens, sentences, dependency/constituency trees, tagged
//!   corpus I/O, tag vocabularies and the five-level sensitive-tag spectrum.
//! * [`obfuscator`] — substitution policies: a uniform random baseline and a
//!   trainable neural scorer, both constrained to same-tag candidates that
//!   exclude the original word.
//! * [`parser`] — a trainable graph-based dependency parser with a biaffine
//!   scorer, used both as the downstream evaluation target and, frozen, as
//!   the training signal for the neural obfuscator.
//! * [`training`] — the end-to-end objective: Gumbel relaxation with a
//!   straight-through estimator, exact enumeration oracles for small
//!   instances, and the training loop itself.
//! * [`attackers`] — adversaries that try to invert the substitution: a
//!   trained neural attacker, a count-based context predictor, and an
//!   adapter for external masked-word predictors.
//! * [`metrics`] — parsing accuracy (attachment scores, labeled span F1),
//!   privacy scores built on mean reciprocal rank, the accuracy/privacy
//!   ratio, and a frame-signature overlap analysis with a significance test.
//!
//! Internal support lives in [`autodiff`] (a small reverse-mode tape over
//! `ndarray`), [`nn`] (layers, initialization, the optimizer) and
//! [`fixture`] (a deterministic synthetic corpus generator used by tests and
//! the documentation examples).

pub mod attackers;
pub mod autodiff;
pub mod corpus;
pub mod fixture;
pub mod metrics;
pub mod nn;
pub mod obfuscator;
pub mod parser;
pub mod training;

/// Library-wide error type.
///
/// The split matters to callers: `Argument` (and `Parse` on user-supplied
/// files) are caller mistakes the CLI reports as usage errors, everything
/// else is an internal/runtime failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed content in an input file; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A structurally invalid tree or sentence, identified by sentence id.
    #[error("invalid structure in sentence {sentence}: {msg}")]
    Structure { sentence: String, msg: String },

    /// An argument or configuration value that cannot be honored.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An API contract violation (e.g. training against an unfrozen parser).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A malformed, incompatible or corrupt model checkpoint.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// An external helper process misbehaved; `excerpt` is a bounded slice
    /// of its raw response, kept for diagnosis.
    #[error("external adapter error: {msg}{}", excerpt_suffix(excerpt))]
    Adapter { msg: String, excerpt: String },

    /// An exhaustive enumeration whose size exceeds the configured guard.
    #[error("enumeration too large: {combinations} combinations exceed the limit of {limit}")]
    Enumeration { combinations: u128, limit: u128 },
}

fn excerpt_suffix(excerpt: &str) -> String {
    if excerpt.is_empty() {
        String::new()
    } else {
        format!(" (response excerpt: {excerpt:?})")
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors that indicate a bad invocation (usage, configuration,
    /// unreadable/malformed user input) as opposed to an internal failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Argument(_) | Error::Parse { .. } | Error::Io(_)
        )
    }
}
