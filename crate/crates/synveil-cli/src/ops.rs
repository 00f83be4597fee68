//! Command implementations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use synveil::attackers::{
    attack_with_predictor, context_count_predictor, external_masked_predictor, score_attack,
    top1_accuracy, train_attacker_resampled, AttackAdapter, AttackInstance, AttackOutcome,
    AttackPrediction,
};
use synveil::corpus::{
    read_conllu_file, write_conllu_file, ConlluConfig, DepTree, Sentence, TagSet, TagSpectrum,
    TagVocabulary,
};
use synveil::fixture::{self, FixtureConfig};
use synveil::metrics::{
    accuracy_privacy_ratio, attachment_scores, frame_overlap, privacy_report, read_frame_lexicon,
    t_test_one_sided, write_frame_lexicon, FrameOverlapReport, PrivacyReport, ScoringPolicy,
    TTestResult,
};
use synveil::nn::{corpus_chars, mix_seed};
use synveil::obfuscator::{
    NeuralObfuscatorModel, ObfuscationPolicy, ObfuscationResult, RandomPolicy,
};
use synveil::parser::{
    external_parse, train_parser, AdapterMode, ExternalParse, ParserModel,
};
use synveil::training::{train_obfuscator, TrainingConfig};
use synveil::{Error, Result};

use crate::config::{AttackerSpec, ExperimentConfig, ParserSpec, PolicyKind};
use crate::report::{
    render_table, write_json, write_jsonl, AttackerColumn, ReportHeader, ResultRow,
};

/// Row labels for spectrum levels 1..=5, matching the cumulative tag
/// classes.
const LEVEL_LABELS: [&str; 5] =
    ["proper-nouns", "+nouns", "+adjectives", "+verbs", "+adverbs"];

fn level_label(level: usize) -> &'static str {
    LEVEL_LABELS[level - 1]
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn read_corpus(path: &Path) -> Result<Vec<Sentence>> {
    let sentences = read_conllu_file(path, &ConlluConfig::default())?;
    if sentences.is_empty() {
        return Err(Error::Argument(format!("{}: no sentences", path.display())));
    }
    Ok(sentences)
}

fn gold_trees(corpus: &[Sentence], what: &str) -> Result<Vec<DepTree>> {
    corpus
        .iter()
        .map(|s| {
            s.gold_tree().ok_or_else(|| {
                Error::Argument(format!("{what} sentence {} has no gold tree", s.id))
            })
        })
        .collect()
}

fn ensure_out(cfg: &ExperimentConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out)?;
    Ok(cfg.out.clone())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn owned_forms(sentence: &Sentence) -> Vec<String> {
    sentence.forms().iter().map(|f| f.to_string()).collect()
}

/// Builds the configured policy. `random_vocab` supplies the substitution
/// pools for the random policy; `require_fingerprint` rejects a neural
/// checkpoint trained on a different vocabulary (used when the policy must
/// agree with an attacker's training corpus).
fn build_policy(
    cfg: &ExperimentConfig,
    random_vocab: TagVocabulary,
    require_fingerprint: Option<&str>,
    checksums: &mut BTreeMap<String, String>,
) -> Result<Box<dyn ObfuscationPolicy>> {
    match cfg.policy {
        PolicyKind::Random => Ok(Box::new(RandomPolicy::new(random_vocab))),
        PolicyKind::Neural => {
            let model = NeuralObfuscatorModel::load(cfg.require_obf_checkpoint()?)?;
            if let Some(fingerprint) = require_fingerprint {
                if model.vocab_fingerprint != fingerprint {
                    return Err(Error::Argument(
                        "the policy checkpoint was trained on a different vocabulary \
                         than --train"
                            .into(),
                    ));
                }
            }
            checksums.insert("obfuscator".into(), model.checksum());
            Ok(Box::new(model))
        }
    }
}

fn write_mask_file(path: &Path, results: &[ObfuscationResult]) -> Result<()> {
    let mut text = String::new();
    for r in results {
        let line: Vec<&str> = r.mask.iter().map(|&m| if m { "1" } else { "0" }).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a mask sidecar: one line per sentence of space-separated 0/1 flags.
fn read_mask_file(path: &Path) -> Result<Vec<Vec<bool>>> {
    let text = std::fs::read_to_string(path)?;
    let mut masks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut mask = Vec::new();
        for token in line.split_whitespace() {
            match token {
                "0" => mask.push(false),
                "1" => mask.push(true),
                other => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("mask entry `{other}` is not 0 or 1"),
                    })
                }
            }
        }
        masks.push(mask);
    }
    Ok(masks)
}

fn identity_result(sentence: &Sentence) -> ObfuscationResult {
    ObfuscationResult {
        original: sentence.clone(),
        obfuscated: sentence.clone(),
        mask: vec![false; sentence.len()],
        unsubstitutable: Default::default(),
    }
}

/// Adds a stage label to an error without changing its usage/failure class.
fn with_stage(stage: &str, e: Error) -> Error {
    if e.is_usage() {
        Error::Argument(format!("{stage}: {e}"))
    } else {
        Error::Contract(format!("{stage}: {e}"))
    }
}

// ---------------------------------------------------------------------------
// gen-fixture
// ---------------------------------------------------------------------------

pub fn gen_fixture_cmd(
    cfg: &ExperimentConfig,
    train: usize,
    dev: usize,
    test: usize,
) -> Result<()> {
    let out = ensure_out(cfg)?;
    let fixture =
        fixture::generate(&FixtureConfig { train, dev, test, seed: cfg.seed });
    for (name, corpus) in
        [("train", &fixture.train), ("dev", &fixture.dev), ("test", &fixture.test)]
    {
        let path = out.join(format!("{name}.conllu"));
        write_conllu_file(&path, corpus)?;
        println!("{name}: {} sentences → {}", corpus.len(), path.display());
    }
    let lexicon_path = out.join("lexicon.txt");
    let mut file = std::io::BufWriter::new(std::fs::File::create(&lexicon_path)?);
    let lexicon = fixture::frame_lexicon();
    write_frame_lexicon(&mut file, &lexicon)?;
    use std::io::Write as _;
    file.flush()?;
    println!("frame lexicon: {} words → {}", lexicon.len(), lexicon_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train-parser
// ---------------------------------------------------------------------------

pub fn train_parser_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let train = read_corpus(cfg.require_train()?)?;
    let dev = read_corpus(cfg.require_dev()?)?;
    let tc = cfg.parser_training();
    println!(
        "training parser on {} sentences ({} dev) for {} epochs, seed {}",
        train.len(),
        dev.len(),
        tc.epochs,
        tc.seed
    );
    let start = Instant::now();
    let (model, records) = train_parser(&train, &dev, &tc)?;
    let out = ensure_out(cfg)?;
    let ckpt = out.join("parser.bin");
    model.save(&ckpt)?;
    let checksum = model.checksum();
    let header =
        ReportHeader::new("train-parser", cfg).with_checksum("parser", &checksum);
    write_jsonl(&out.join("parser-report.jsonl"), &header, &records)?;
    for r in &records {
        println!(
            "epoch {}: train loss {:.4}, dev UAS {:.2}, LAS {:.2}{}",
            r.epoch,
            r.train_loss,
            r.dev_uas,
            r.dev_las,
            if r.best { "  *" } else { "" }
        );
    }
    let best = records
        .iter()
        .find(|r| r.best)
        .ok_or_else(|| Error::Contract("no epoch was selected".into()))?;
    println!(
        "done in {:.1}s: dev UAS {:.2}, LAS {:.2} (epoch {})",
        start.elapsed().as_secs_f64(),
        best.dev_uas,
        best.dev_las,
        best.epoch
    );
    println!("parser checkpoint {checksum} → {}", ckpt.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train-obf
// ---------------------------------------------------------------------------

pub fn train_obf_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let mut parser = ParserModel::load(cfg.require_parser_checkpoint()?)?;
    parser.freeze();
    let parser_checksum = parser.checksum();
    let train = read_corpus(cfg.require_train()?)?;
    let dev = read_corpus(cfg.require_dev()?)?;
    let vocab = TagVocabulary::build(&train);
    if vocab.fingerprint() != parser.vocab_fingerprint {
        return Err(Error::Argument(
            "the parser checkpoint was trained on a different vocabulary than --train".into(),
        ));
    }
    let targets = cfg.targets()?;
    if targets.is_empty() {
        return Err(Error::Argument(
            "policy training needs targets: pass --level 1..=5 or set `targets`".into(),
        ));
    }
    let obf = NeuralObfuscatorModel::init(
        &vocab,
        corpus_chars(&train),
        cfg.obf_model_config(),
        None,
        cfg.seed,
    )?;
    let mut tc = TrainingConfig::new(targets);
    if let Some(epochs) = cfg.epochs {
        tc.epochs = epochs;
    }
    if let Some(batch) = cfg.batch_size {
        tc.batch_size = batch;
    }
    tc.seed = cfg.seed;
    println!(
        "training policy against frozen parser {parser_checksum} on {} sentences: \
         {} epochs, temperature {} → {}",
        train.len(),
        tc.epochs,
        tc.tau_start,
        tc.tau_end
    );
    let start = Instant::now();
    let (model, report) = train_obfuscator(obf, &parser, &train, &dev, &tc)?;
    for r in &report.epochs {
        let loss = match r.train_loss {
            Some(l) => format!("{l:.4}"),
            None => "-".into(),
        };
        println!(
            "epoch {}: temperature {:.3}, train loss {}, obfuscated dev UAS {:.2}, \
             LAS {:.2} ({:.1}s){}",
            r.epoch,
            r.tau,
            loss,
            r.dev_uas,
            r.dev_las,
            r.wall_secs,
            if r.best { "  *" } else { "" }
        );
    }
    if report.parser_checksum != parser_checksum || parser.checksum() != parser_checksum {
        return Err(Error::Contract(
            "frozen parser changed during policy training".into(),
        ));
    }
    let out = ensure_out(cfg)?;
    let ckpt = out.join("obfuscator.bin");
    model.save(&ckpt)?;
    let header = ReportHeader::new("train-obf", cfg)
        .with_checksum("parser", &parser_checksum)
        .with_checksum("obfuscator", &model.checksum());
    write_jsonl(&out.join("obf-report.jsonl"), &header, &report.epochs)?;
    let best = report
        .epochs
        .iter()
        .find(|r| r.best)
        .ok_or_else(|| Error::Contract("no epoch was selected".into()))?;
    println!(
        "done in {:.1}s: selected epoch {} with obfuscated dev UAS {:.2}",
        start.elapsed().as_secs_f64(),
        best.epoch,
        best.dev_uas
    );
    println!("parser checksum after training {} (unchanged)", parser_checksum);
    println!("policy checkpoint {} → {}", model.checksum(), ckpt.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// obfuscate
// ---------------------------------------------------------------------------

pub fn obfuscate_cmd(
    cfg: &ExperimentConfig,
    input: &Path,
    output: &Path,
    mask_out: Option<&Path>,
) -> Result<()> {
    let sentences = read_corpus(input)?;
    let vocab = match &cfg.train {
        Some(path) => TagVocabulary::build(&read_corpus(path)?),
        None => TagVocabulary::build(&sentences),
    };
    let mut checksums = BTreeMap::new();
    let policy = build_policy(cfg, vocab, None, &mut checksums)?;
    let targets = cfg.targets()?;
    let mut results = Vec::with_capacity(sentences.len());
    for (i, sentence) in sentences.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[0x0b5c, i as u64]));
        results.push(policy.sample(sentence, &targets, &mut rng)?);
    }
    ensure_parent(output)?;
    let obfuscated: Vec<Sentence> = results.iter().map(|r| r.obfuscated.clone()).collect();
    write_conllu_file(output, &obfuscated)?;
    let mask_path = match mask_out {
        Some(p) => p.to_path_buf(),
        None => output.with_extension("mask"),
    };
    ensure_parent(&mask_path)?;
    write_mask_file(&mask_path, &results)?;
    let substituted: usize =
        results.iter().map(|r| r.mask.iter().filter(|&&m| m).count()).sum();
    let unsubstitutable: usize = results.iter().map(|r| r.unsubstitutable.len()).sum();
    println!(
        "{} policy rewrote {} sentences: {} positions substituted, \
         {} targeted positions had no alternative",
        cfg.policy.label(),
        results.len(),
        substituted,
        unsubstitutable
    );
    println!("corpus → {}", output.display());
    println!("mask → {}", mask_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// parse
// ---------------------------------------------------------------------------

pub fn parse_cmd(cfg: &ExperimentConfig, input: &Path, output: &Path) -> Result<()> {
    let sentences = read_corpus(input)?;
    ensure_parent(output)?;
    let parsed: Vec<Sentence> = match &cfg.parser {
        ParserSpec::Named(_) => {
            let model = ParserModel::load(cfg.require_parser_checkpoint()?)?;
            println!("parsing {} sentences with internal parser {}", sentences.len(), model.checksum());
            sentences.iter().map(|s| model.parse(s)).collect::<Result<_>>()?
        }
        ParserSpec::External { external } => match external_parse(external, &sentences)? {
            ExternalParse::Dependencies(parsed) => parsed,
            ExternalParse::Constituencies(trees) => {
                synveil::corpus::write_bracketed_file(output, &trees)?;
                println!(
                    "{} bracketed trees from external parser → {}",
                    trees.len(),
                    output.display()
                );
                return Ok(());
            }
        },
    };
    write_conllu_file(output, &parsed)?;
    println!("{} parsed sentences → {}", parsed.len(), output.display());
    if sentences.iter().all(|s| s.gold_tree().is_some()) {
        let gold = gold_trees(&sentences, "input")?;
        let predicted = gold_trees(&parsed, "parsed")?;
        let scores = attachment_scores(&sentences, &gold, &predicted, &ScoringPolicy::default())?;
        println!("UAS {:.2}, LAS {:.2} over {} tokens", scores.uas, scores.las, scores.tokens);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

/// One attacker's full report on a fixed set of instances.
#[derive(Debug, Clone, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct AttackerReport {
    pub name: String,
    pub privacy: PrivacyReport,
    /// Top-1 recovery accuracy, percent.
    pub top1: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
struct AttackReportFile {
    #[serde(flatten)]
    header: ReportHeader,
    attackers: Vec<AttackerReport>,
}

pub fn attack_cmd(
    cfg: &ExperimentConfig,
    input: &Path,
    mask: &Path,
    original: &Path,
) -> Result<()> {
    let obfuscated = read_corpus(input)?;
    let originals = read_corpus(original)?;
    let masks = read_mask_file(mask)?;
    if obfuscated.len() != originals.len() || obfuscated.len() != masks.len() {
        return Err(Error::Argument(format!(
            "misaligned inputs: {} obfuscated sentences, {} originals, {} mask lines",
            obfuscated.len(),
            originals.len(),
            masks.len()
        )));
    }
    let mut instances = Vec::with_capacity(obfuscated.len());
    for ((obf, mask), orig) in obfuscated.iter().zip(&masks).zip(&originals) {
        instances.push(
            AttackInstance::new(obf.clone(), mask.clone(), owned_forms(orig))
                .map_err(|e| with_stage(&format!("sentence {}", obf.id), e))?,
        );
    }
    if cfg.attackers.is_empty() {
        return Err(Error::Argument("no attackers configured".into()));
    }
    let train = read_corpus(cfg.require_train()?)?;
    let vocab = TagVocabulary::build(&train);
    let targets = cfg.targets()?;
    let mut checksums = BTreeMap::new();
    let mut reports = Vec::new();
    for spec in &cfg.attackers {
        let predictions = attacker_predictions(
            spec,
            cfg,
            &train,
            &vocab,
            &targets,
            &instances,
            &mut checksums,
        )?;
        let (ranks, outcomes) = score_predictions(&instances, &predictions)?;
        if ranks.is_empty() {
            return Err(Error::Argument(
                "the mask marks no substituted positions; nothing to attack".into(),
            ));
        }
        let privacy = privacy_report(ranks)?;
        let top1 = 100.0 * top1_accuracy(&outcomes).unwrap_or(0.0);
        println!(
            "{}: privacy {:.1} (MRR {:.1}), top-1 {:.1}% over {} positions",
            spec.name(),
            privacy.attacker_error,
            privacy.mrr,
            top1,
            privacy.evaluated
        );
        reports.push(AttackerReport { name: spec.name().into(), privacy, top1 });
    }
    let out = ensure_out(cfg)?;
    let path = out.join("attack-report.json");
    let header = ReportHeader::new("attack", cfg).with_checksums(checksums);
    write_json(&path, &AttackReportFile { header, attackers: reports })?;
    println!("report → {}", path.display());
    Ok(())
}

/// Runs one configured attacker over every instance. `targets` drives the
/// trained attacker's resampled training set and must match the scheme that
/// produced the instances.
fn attacker_predictions(
    spec: &AttackerSpec,
    cfg: &ExperimentConfig,
    train: &[Sentence],
    vocab: &TagVocabulary,
    targets: &TagSet,
    instances: &[AttackInstance],
    checksums: &mut BTreeMap<String, String>,
) -> Result<Vec<Vec<AttackPrediction>>> {
    match spec {
        AttackerSpec::Trained => {
            if targets.is_empty() {
                return Err(Error::Argument(
                    "the trained attacker resamples obfuscations during training \
                     and needs targets: pass --level or set `targets`"
                        .into(),
                ));
            }
            let mut policy_sums = BTreeMap::new();
            let policy = build_policy(
                cfg,
                vocab.clone(),
                Some(&vocab.fingerprint()),
                &mut policy_sums,
            )?;
            let (model, records) = train_attacker_resampled(
                policy.as_ref(),
                train,
                targets,
                vocab,
                &cfg.attacker_training(),
            )?;
            if let Some(last) = records.last() {
                log::info!(
                    "attacker trained for {} epochs, final loss {:.4}",
                    records.len(),
                    last.train_loss
                );
            }
            checksums.insert("attacker".into(), model.checksum());
            instances.iter().map(|i| model.attack(i.sentence(), i.mask())).collect()
        }
        AttackerSpec::ContextCounts => {
            let predictor = context_count_predictor(train);
            instances
                .iter()
                .map(|i| attack_with_predictor(&predictor, i.sentence(), i.mask()))
                .collect()
        }
        AttackerSpec::External { command, timeout_secs } => {
            let adapter =
                AttackAdapter { command: command.clone(), timeout_secs: *timeout_secs };
            let predictor = external_masked_predictor(adapter, vocab.words().to_vec())?;
            instances
                .iter()
                .map(|i| attack_with_predictor(&predictor, i.sentence(), i.mask()))
                .collect()
        }
    }
}

fn score_predictions(
    instances: &[AttackInstance],
    predictions: &[Vec<AttackPrediction>],
) -> Result<(Vec<synveil::metrics::RankEntry>, Vec<AttackOutcome>)> {
    let mut ranks = Vec::new();
    let mut outcomes = Vec::new();
    for (instance, preds) in instances.iter().zip(predictions) {
        for outcome in score_attack(instance, preds)? {
            ranks.push(outcome.rank);
            outcomes.push(outcome);
        }
    }
    Ok((ranks, outcomes))
}

// ---------------------------------------------------------------------------
// evaluate / spectrum
// ---------------------------------------------------------------------------

enum ParserEval {
    Internal(Box<ParserModel>),
    External(synveil::parser::ExternalParserAdapter),
}

struct EvalContext {
    cfg: ExperimentConfig,
    parser: ParserEval,
    policy: Box<dyn ObfuscationPolicy>,
    train: Vec<Sentence>,
    test: Vec<Sentence>,
    test_gold: Vec<DepTree>,
    vocab: TagVocabulary,
    checksums: BTreeMap<String, String>,
}

fn build_context(cfg: &ExperimentConfig) -> Result<EvalContext> {
    if cfg.attackers.is_empty() {
        return Err(Error::Argument("no attackers configured".into()));
    }
    let train = read_corpus(cfg.require_train()?)?;
    let test = read_corpus(cfg.require_test()?)?;
    let test_gold = gold_trees(&test, "test")?;
    let vocab = TagVocabulary::build(&train);
    let mut checksums = BTreeMap::new();
    let parser = match &cfg.parser {
        ParserSpec::Named(_) => {
            let model = ParserModel::load(cfg.require_parser_checkpoint()?)?;
            checksums.insert("parser".into(), model.checksum());
            ParserEval::Internal(Box::new(model))
        }
        ParserSpec::External { external } => {
            if external.mode != AdapterMode::Dependency {
                return Err(Error::Argument(
                    "evaluation scores attachment; the external parser must run in \
                     dependency mode"
                        .into(),
                ));
            }
            ParserEval::External(external.clone())
        }
    };
    let policy =
        build_policy(cfg, vocab.clone(), Some(&vocab.fingerprint()), &mut checksums)?;
    Ok(EvalContext {
        cfg: cfg.clone(),
        parser,
        policy,
        train,
        test,
        test_gold,
        vocab,
        checksums,
    })
}

/// Scores one condition: obfuscate the test set (identity when `targets` is
/// `None`), parse it, and run every configured attacker.
fn evaluate_row(ctx: &EvalContext, label: &str, targets: Option<&TagSet>) -> Result<ResultRow> {
    let results: Vec<ObfuscationResult> = match targets {
        Some(t) => ctx
            .test
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix_seed(ctx.cfg.seed, &[0xeba1, i as u64]));
                ctx.policy.sample(s, t, &mut rng)
            })
            .collect::<Result<_>>()?,
        None => ctx.test.iter().map(identity_result).collect(),
    };
    let obf_sentences: Vec<Sentence> = results.iter().map(|r| r.obfuscated.clone()).collect();
    let predicted: Vec<DepTree> = match &ctx.parser {
        ParserEval::Internal(model) => obf_sentences
            .iter()
            .map(|s| {
                model.parse(s).map(|p| p.gold_tree().expect("the parser attaches every token"))
            })
            .collect::<Result<_>>()?,
        ParserEval::External(adapter) => match external_parse(adapter, &obf_sentences)? {
            ExternalParse::Dependencies(parsed) => parsed
                .iter()
                .map(|s| {
                    s.gold_tree().ok_or_else(|| Error::Adapter {
                        msg: format!("external parser left sentence {} unattached", s.id),
                        excerpt: String::new(),
                    })
                })
                .collect::<Result<_>>()?,
            ExternalParse::Constituencies(_) => {
                return Err(Error::Argument(
                    "external parser returned constituency trees; attachment evaluation \
                     needs dependency mode"
                        .into(),
                ))
            }
        },
    };
    let scores =
        attachment_scores(&ctx.test, &ctx.test_gold, &predicted, &ScoringPolicy::default())?;
    let mut columns = Vec::new();
    if let Some(t) = targets {
        let instances: Vec<AttackInstance> =
            results.iter().map(AttackInstance::from_result).collect();
        let mut discarded = BTreeMap::new();
        for spec in &ctx.cfg.attackers {
            let predictions = attacker_predictions(
                spec,
                &ctx.cfg,
                &ctx.train,
                &ctx.vocab,
                t,
                &instances,
                &mut discarded,
            )
            .map_err(|e| with_stage(spec.name(), e))?;
            let (ranks, outcomes) = score_predictions(&instances, &predictions)?;
            if ranks.is_empty() {
                continue;
            }
            let privacy = privacy_report(ranks)?;
            let top1 = 100.0 * top1_accuracy(&outcomes).unwrap_or(0.0);
            columns.push(AttackerColumn {
                name: spec.name().into(),
                positions: privacy.evaluated,
                missing: privacy.missing_true_words,
                prv: privacy.attacker_error,
                mrr: privacy.mrr,
                top1,
                ratio: accuracy_privacy_ratio(scores.uas, privacy.mrr),
            });
        }
    }
    Ok(ResultRow {
        label: label.into(),
        sentences: ctx.test.len(),
        uas: scores.uas,
        las: scores.las,
        attackers: columns,
    })
}

fn finish_eval(
    cfg: &ExperimentConfig,
    ctx: &EvalContext,
    command: &str,
    rows: &[ResultRow],
) -> Result<()> {
    let out = ensure_out(cfg)?;
    let header =
        ReportHeader::new(command, cfg).with_checksums(ctx.checksums.clone());
    let records = out.join(format!("{command}-records.jsonl"));
    write_jsonl(&records, &header, rows)?;
    let table = render_table(rows);
    let table_path = out.join(format!("{command}-table.txt"));
    std::fs::write(&table_path, &table)?;
    print!("{table}");
    println!("records → {}", records.display());
    println!("table → {}", table_path.display());
    Ok(())
}

pub fn evaluate_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let ctx = build_context(cfg)?;
    let targets = cfg.targets()?;
    let row = if targets.is_empty() {
        evaluate_row(&ctx, "none", None)?
    } else {
        let label = match (&cfg.targets, cfg.level) {
            (Some(_), _) => "custom",
            (None, Some(level)) => level_label(level),
            (None, None) => unreachable!("non-empty targets come from one of the two"),
        };
        evaluate_row(&ctx, label, Some(&targets))?
    };
    finish_eval(cfg, &ctx, "evaluate", &[row])
}

pub fn spectrum_cmd(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.targets.is_some() {
        return Err(Error::Argument(
            "spectrum sweeps the built-in levels; drop `targets` or use `evaluate`".into(),
        ));
    }
    let ctx = build_context(cfg)?;
    let spectrum = TagSpectrum::ptb();
    let start = Instant::now();
    let mut rows =
        vec![evaluate_row(&ctx, "none", None).map_err(|e| with_stage("baseline", e))?];
    println!(
        "baseline done: UAS {:.2} ({:.0}s elapsed)",
        rows[0].uas,
        start.elapsed().as_secs_f64()
    );
    for level in 1..=spectrum.levels() {
        let targets = spectrum.cumulative(level)?;
        let label = level_label(level);
        let row = evaluate_row(&ctx, label, Some(&targets))
            .map_err(|e| with_stage(label, e))?;
        println!(
            "{label} done: UAS {:.2} ({:.0}s elapsed)",
            row.uas,
            start.elapsed().as_secs_f64()
        );
        rows.push(row);
    }
    finish_eval(cfg, &ctx, "spectrum", &rows)
}

// ---------------------------------------------------------------------------
// analyze-frames
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
struct FrameReportFile {
    #[serde(flatten)]
    header: ReportHeader,
    primary: FrameOverlapReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<FrameOverlapReport>,
    /// One-sided test that the comparison corpus preserves more frame
    /// structure than the primary.
    #[serde(skip_serializing_if = "Option::is_none")]
    t_test: Option<TTestResult>,
}

/// Pairs each verb-tagged position's original form with its rewritten form.
/// The corpora must be aligned: same sentence count, lengths, and tags.
fn aligned_verb_pairs(
    original: &[Sentence],
    rewritten: &[Sentence],
    what: &str,
) -> Result<Vec<(String, String)>> {
    if original.len() != rewritten.len() {
        return Err(Error::Argument(format!(
            "{what}: {} sentences against {} originals",
            rewritten.len(),
            original.len()
        )));
    }
    let spectrum = TagSpectrum::ptb();
    let verb_tags: TagSet = spectrum.class(4)?.iter().cloned().collect();
    let mut pairs = Vec::new();
    for (i, (orig, rewr)) in original.iter().zip(rewritten).enumerate() {
        if orig.len() != rewr.len() || orig.tags() != rewr.tags() {
            return Err(Error::Argument(format!(
                "{what}: sentence {i} is not aligned with the original \
                 (token count or tags differ)"
            )));
        }
        for (pos, tag) in orig.tags().iter().enumerate() {
            if verb_tags.contains(*tag) {
                pairs.push((
                    orig.forms()[pos].to_string(),
                    rewr.forms()[pos].to_string(),
                ));
            }
        }
    }
    Ok(pairs)
}

fn describe_overlap(name: &str, report: &FrameOverlapReport) {
    match report.mean_overlap {
        Some(mean) => println!(
            "{name}: mean frame overlap {:.3} over {} verb pairs ({} skipped)",
            mean, report.scored_pairs, report.skipped_pairs
        ),
        None => println!(
            "{name}: no scorable verb pairs ({} skipped)",
            report.skipped_pairs
        ),
    }
}

pub fn analyze_frames_cmd(
    cfg: &ExperimentConfig,
    original: &Path,
    obfuscated: &Path,
    lexicon_path: &Path,
    compare: Option<&Path>,
) -> Result<()> {
    let orig = read_corpus(original)?;
    let lexicon = read_frame_lexicon(std::fs::File::open(lexicon_path)?)?;
    let primary_pairs = aligned_verb_pairs(&orig, &read_corpus(obfuscated)?, "obfuscated")?;
    let primary = frame_overlap(&primary_pairs, &lexicon);
    describe_overlap("primary", &primary);
    let mut comparison = None;
    let mut t_test = None;
    if let Some(path) = compare {
        let compare_pairs = aligned_verb_pairs(&orig, &read_corpus(path)?, "comparison")?;
        let report = frame_overlap(&compare_pairs, &lexicon);
        describe_overlap("comparison", &report);
        let a: Vec<f64> = report.overlaps.iter().map(|&o| o as f64).collect();
        let b: Vec<f64> = primary.overlaps.iter().map(|&o| o as f64).collect();
        let test = t_test_one_sided(&a, &b)?;
        println!(
            "one-sided t-test (comparison > primary): t {:.3}, p {:.4}",
            test.t, test.p_value
        );
        comparison = Some(report);
        t_test = Some(test);
    }
    let out = ensure_out(cfg)?;
    let path = out.join("frames-report.json");
    write_json(
        &path,
        &FrameReportFile {
            header: ReportHeader::new("analyze-frames", cfg),
            primary,
            comparison,
            t_test,
        },
    )?;
    println!("report → {}", path.display());
    Ok(())
}
