//! Experiment configuration: a JSON file merged with command-line overrides.
//!
//! Precedence is built-in defaults, then the `--config` file, then individual
//! flags. The merged configuration is echoed into every report header so a
//! result file records exactly what produced it.

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use synveil::attackers::AttackerConfig;
use synveil::corpus::{TagSet, TagSpectrum};
use synveil::obfuscator::ObfuscatorConfig;
use synveil::parser::{AdapterMode, ExternalParserAdapter, ParserConfig, ParserTrainConfig};
use synveil::{Error, Result};

/// Scale preset: `desk` finishes on a laptop core in minutes, `full` is the
/// large configuration (hours; intended for real treebanks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    Full,
}

/// Which substitution policy rewrites targeted positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Uniform choice over the tag pool (excluding the original word).
    Random,
    /// The trained neural policy, loaded from `obf-checkpoint`.
    Neural,
}

impl PolicyKind {
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Neural => "neural",
        }
    }
}

/// Parser selection: the built-in model (`"internal"`) or an external
/// process adapter.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParserSpec {
    Named(String),
    External { external: ExternalParserAdapter },
}

impl ParserSpec {
    fn validate(&self) -> Result<()> {
        match self {
            ParserSpec::Named(name) if name == "internal" => Ok(()),
            ParserSpec::Named(name) => Err(Error::Argument(format!(
                "unknown parser `{name}`; use `internal` or an external adapter"
            ))),
            ParserSpec::External { external } => {
                if external.command.is_empty() {
                    Err(Error::Argument("external parser command is empty".into()))
                } else {
                    Ok(())
                }
            }
        }
    }
}

fn default_attack_timeout() -> u64 {
    120
}

/// One attacker to run during evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttackerSpec {
    /// Neural inverter trained against the configured policy.
    Trained,
    /// Additively smoothed context-count predictor built from the training
    /// corpus.
    ContextCounts,
    /// External masked-prediction process.
    #[serde(rename_all = "kebab-case")]
    External {
        command: Vec<String>,
        #[serde(default = "default_attack_timeout")]
        timeout_secs: u64,
    },
}

impl AttackerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackerSpec::Trained => "trained",
            AttackerSpec::ContextCounts => "context-counts",
            AttackerSpec::External { .. } => "external",
        }
    }
}

/// The full experiment description. Every field has a default, so a config
/// file only needs the keys it wants to change.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Training corpus (CoNLL-U, gold heads required for training commands).
    pub train: Option<PathBuf>,
    /// Development corpus for model selection.
    pub dev: Option<PathBuf>,
    /// Held-out corpus for evaluation.
    pub test: Option<PathBuf>,
    /// Optional pretrained word vectors (`word v1 v2 …` lines); when set the
    /// parser's word table is initialized from them and frozen.
    pub embeddings: Option<PathBuf>,
    /// Substitution level 1..=5 on the built-in tag spectrum.
    pub level: Option<usize>,
    /// Explicit target tags; takes precedence over `level`.
    pub targets: Option<Vec<String>>,
    pub policy: PolicyKind,
    pub parser: ParserSpec,
    /// Attackers evaluated against the obfuscated output.
    pub attackers: Vec<AttackerSpec>,
    pub seed: u64,
    pub preset: Preset,
    /// Directory for checkpoints, reports, and tables.
    pub out: PathBuf,
    pub parser_checkpoint: Option<PathBuf>,
    pub obf_checkpoint: Option<PathBuf>,
    /// Overrides the preset's epoch count for the command's training loop.
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    /// Full model configurations for scales the presets don't cover.
    pub parser_config: Option<ParserConfig>,
    pub obf_config: Option<ObfuscatorConfig>,
    pub attacker_config: Option<AttackerConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: None,
            dev: None,
            test: None,
            embeddings: None,
            level: None,
            targets: None,
            policy: PolicyKind::Random,
            parser: ParserSpec::Named("internal".into()),
            attackers: vec![AttackerSpec::ContextCounts],
            seed: 1,
            preset: Preset::Desk,
            out: PathBuf::from("out"),
            parser_checkpoint: None,
            obf_checkpoint: None,
            epochs: None,
            batch_size: None,
            parser_config: None,
            obf_config: None,
            attacker_config: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(level) = self.level {
            let levels = TagSpectrum::ptb().levels();
            if level == 0 || level > levels {
                return Err(Error::Argument(format!(
                    "level {level} is outside the spectrum (1..={levels})"
                )));
            }
        }
        self.parser.validate()
    }

    /// The target tag set: explicit `targets` if given, else the cumulative
    /// classes up to `level`, else empty (identity obfuscation).
    pub fn targets(&self) -> Result<TagSet> {
        if let Some(tags) = &self.targets {
            return Ok(tags.iter().cloned().collect());
        }
        match self.level {
            Some(level) => TagSpectrum::ptb().cumulative(level),
            None => Ok(TagSet::new()),
        }
    }

    pub fn require_train(&self) -> Result<&Path> {
        require(&self.train, "train", "the training corpus")
    }

    pub fn require_dev(&self) -> Result<&Path> {
        require(&self.dev, "dev", "the development corpus")
    }

    pub fn require_test(&self) -> Result<&Path> {
        require(&self.test, "test", "the evaluation corpus")
    }

    pub fn require_parser_checkpoint(&self) -> Result<&Path> {
        require(&self.parser_checkpoint, "parser-checkpoint", "the parser checkpoint")
    }

    pub fn require_obf_checkpoint(&self) -> Result<&Path> {
        require(&self.obf_checkpoint, "obf-checkpoint", "the policy checkpoint")
    }

    /// Parser training settings derived from the preset, with any explicit
    /// overrides applied.
    pub fn parser_training(&self) -> ParserTrainConfig {
        let mut tc = ParserTrainConfig::desk();
        if self.preset == Preset::Full {
            tc.model = ParserConfig::large();
            tc.epochs = 30;
        }
        if let Some(model) = &self.parser_config {
            tc.model = model.clone();
        }
        if let Some(epochs) = self.epochs {
            tc.epochs = epochs;
        }
        if let Some(batch) = self.batch_size {
            tc.batch_size = batch;
        }
        tc.seed = self.seed;
        tc.embeddings = self.embeddings.clone();
        tc
    }

    pub fn obf_model_config(&self) -> ObfuscatorConfig {
        self.obf_config.clone().unwrap_or_else(|| match self.preset {
            Preset::Desk => ObfuscatorConfig::desk(),
            Preset::Full => ObfuscatorConfig::large(),
        })
    }

    pub fn attacker_training(&self) -> AttackerConfig {
        let mut ac = self.attacker_config.clone().unwrap_or_else(|| match self.preset {
            Preset::Desk => AttackerConfig::desk(),
            Preset::Full => AttackerConfig::large(),
        });
        ac.seed = self.seed;
        ac
    }
}

fn require<'a>(field: &'a Option<PathBuf>, flag: &str, what: &str) -> Result<&'a Path> {
    field.as_deref().ok_or_else(|| {
        Error::Argument(format!("{what} is missing: pass --{flag} or set `{flag}` in the config"))
    })
}

/// Command-line overrides, applied on top of the config file.
#[derive(Debug, clap::Args)]
pub struct Overrides {
    /// JSON experiment configuration; individual flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Scale preset.
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Substitution level 1..=5 on the built-in tag spectrum.
    #[arg(long, global = true)]
    pub level: Option<usize>,
    /// Substitution policy.
    #[arg(long, global = true, value_enum)]
    pub policy: Option<PolicyKind>,
    /// Parser: `internal` or `external:<command line>`.
    #[arg(long, global = true, value_name = "SPEC")]
    pub parser: Option<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Training corpus (CoNLL-U).
    #[arg(long, global = true, value_name = "FILE")]
    pub train: Option<PathBuf>,
    /// Development corpus (CoNLL-U).
    #[arg(long, global = true, value_name = "FILE")]
    pub dev: Option<PathBuf>,
    /// Evaluation corpus (CoNLL-U).
    #[arg(long, global = true, value_name = "FILE")]
    pub test: Option<PathBuf>,
    /// Pretrained word-vector file.
    #[arg(long, global = true, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Saved parser model.
    #[arg(long, global = true, value_name = "FILE")]
    pub parser_checkpoint: Option<PathBuf>,
    /// Saved policy model.
    #[arg(long, global = true, value_name = "FILE")]
    pub obf_checkpoint: Option<PathBuf>,
    /// Training epochs (overrides the preset).
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Training batch size (overrides the preset).
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
}

impl Overrides {
    /// The merged configuration: defaults, then the config file, then flags.
    pub fn effective(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => read_config_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(preset) = self.preset {
            cfg.preset = preset;
        }
        if let Some(level) = self.level {
            cfg.level = Some(level);
        }
        if let Some(policy) = self.policy {
            cfg.policy = policy;
        }
        if let Some(spec) = &self.parser {
            cfg.parser = parse_parser_flag(spec)?;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        for (flag, field) in [
            (&self.train, &mut cfg.train),
            (&self.dev, &mut cfg.dev),
            (&self.test, &mut cfg.test),
            (&self.embeddings, &mut cfg.embeddings),
            (&self.parser_checkpoint, &mut cfg.parser_checkpoint),
            (&self.obf_checkpoint, &mut cfg.obf_checkpoint),
        ] {
            if flag.is_some() {
                *field = flag.clone();
            }
        }
        if self.epochs.is_some() {
            cfg.epochs = self.epochs;
        }
        if self.batch_size.is_some() {
            cfg.batch_size = self.batch_size;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Argument(format!("config {}: {e}", path.display())))
}

/// Parses the `--parser` flag: `internal`, or `external:<command line>`
/// (whitespace-split, dependency mode, default timeout).
pub fn parse_parser_flag(spec: &str) -> Result<ParserSpec> {
    if spec == "internal" {
        return Ok(ParserSpec::Named("internal".into()));
    }
    if let Some(rest) = spec.strip_prefix("external:") {
        let command: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
        if command.is_empty() {
            return Err(Error::Argument("external parser command is empty".into()));
        }
        return Ok(ParserSpec::External {
            external: ExternalParserAdapter {
                command,
                mode: AdapterMode::Dependency,
                timeout_secs: 120,
            },
        });
    }
    Err(Error::Argument(format!(
        "parser spec `{spec}` is neither `internal` nor `external:<command>`"
    )))
}
