//! Adversaries that try to recover the original words of an obfuscated
//! sentence.
//!
//! Two families: a trained inversion model (an encoder mirroring the
//! substitution policy's, plus a feed-forward head with a softmax over the
//! whole vocabulary), and pluggable masked-token predictors (a smoothed
//! context-count model, or any external process speaking the line-oriented
//! `[MASK]` wire format).
//!
//! Ground truth is structurally out of reach: attackers only ever receive
//! the obfuscated sentence and the substitution mask; original forms live in
//! a private field of [`AttackInstance`] that only the scoring functions
//! read.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape, Var};
use crate::corpus::{Sentence, TagSet, TagVocabulary};
use crate::metrics::{rank_of, RankEntry};
use crate::nn::{
    mix_seed, read_checkpoint, write_checkpoint, xavier, Adam, AdamConfig, EncoderConfig,
    GradMap, LstmDropout, ParamStore, SentenceEncoder,
};
use crate::obfuscator::{ObfuscationPolicy, ObfuscationResult};
use crate::parser::{excerpt_of, run_with_timeout};
use crate::{Error, Result};

/// Literal token that replaces the queried position in masked-predictor
/// requests.
pub const MASK_TOKEN: &str = "[MASK]";

const BOS: &str = "<s>";
const EOS: &str = "</s>";

// ---------------------------------------------------------------------------
// Instances and predictions
// ---------------------------------------------------------------------------

/// One attack task: an obfuscated sentence, the mask saying which positions
/// were substituted, and — privately — the original forms for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackInstance {
    obfuscated: Sentence,
    mask: Vec<bool>,
    original_forms: Vec<String>,
}

impl AttackInstance {
    pub fn new(obfuscated: Sentence, mask: Vec<bool>, original_forms: Vec<String>) -> Result<Self> {
        if mask.len() != obfuscated.len() || original_forms.len() != obfuscated.len() {
            return Err(Error::Argument(format!(
                "instance with {} tokens, {} mask entries, {} original forms",
                obfuscated.len(),
                mask.len(),
                original_forms.len()
            )));
        }
        Ok(AttackInstance { obfuscated, mask, original_forms })
    }

    pub fn from_result(result: &ObfuscationResult) -> Self {
        AttackInstance {
            obfuscated: result.obfuscated.clone(),
            mask: result.mask.clone(),
            original_forms: result.original.tokens.iter().map(|t| t.form.clone()).collect(),
        }
    }

    /// What the attacker is allowed to see.
    pub fn sentence(&self) -> &Sentence {
        &self.obfuscated
    }

    /// Which positions were substituted (given to the attacker).
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.obfuscated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obfuscated.is_empty()
    }
}

/// The attacker's belief about one masked position: candidate words sorted
/// by non-increasing probability, with `q[i]` the probability of
/// `ranking[i]`. `q` covers the attacker's whole vocabulary and sums to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPrediction {
    pub position: usize,
    pub ranking: Vec<String>,
    pub q: Vec<f64>,
}

impl AttackPrediction {
    fn from_scores(position: usize, words: &[String], probs: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        AttackPrediction {
            position,
            ranking: order.iter().map(|&i| words[i].clone()).collect(),
            q: order.iter().map(|&i| probs[i]).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ranking.len() != self.q.len() {
            return Err(Error::Argument(format!(
                "prediction with {} candidates but {} probabilities",
                self.ranking.len(),
                self.q.len()
            )));
        }
        let sum: f64 = self.q.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Argument(format!("prediction probabilities sum to {sum}")));
        }
        if self.q.iter().any(|&p| p < 0.0) {
            return Err(Error::Argument("negative prediction probability".into()));
        }
        if self.q.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Argument("ranking is not sorted by probability".into()));
        }
        Ok(())
    }
}

/// Scoring result for one masked position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub position: usize,
    /// Rank of the true word under the attacker's distribution.
    pub rank: RankEntry,
    /// Whether the attacker's single best guess was the true word.
    pub top_guess_correct: bool,
}

/// Scores predictions against the instance's hidden ground truth. This is
/// the only code path that reads the original forms.
pub fn score_attack(
    instance: &AttackInstance,
    predictions: &[AttackPrediction],
) -> Result<Vec<AttackOutcome>> {
    let mut out = Vec::with_capacity(predictions.len());
    for p in predictions {
        p.validate()?;
        if p.position >= instance.len() || !instance.mask[p.position] {
            return Err(Error::Argument(format!(
                "prediction at position {} does not match a masked position",
                p.position
            )));
        }
        let truth = &instance.original_forms[p.position];
        let idx = p.ranking.iter().position(|w| w == truth);
        out.push(AttackOutcome {
            position: p.position,
            rank: rank_of(&p.q, idx, p.q.len()),
            top_guess_correct: p.ranking.first() == Some(truth),
        });
    }
    Ok(out)
}

/// Fraction of masked positions where the top guess was right, over many
/// scored instances.
pub fn top1_accuracy(outcomes: &[AttackOutcome]) -> Option<f64> {
    if outcomes.is_empty() {
        return None;
    }
    let hits = outcomes.iter().filter(|o| o.top_guess_correct).count();
    Some(hits as f64 / outcomes.len() as f64)
}

/// Accuracy of the best context-free guesser: at each masked position, pick
/// the most frequent training word of the same tag, excluding the observed
/// substitute. Against a uniform substitution policy no attacker can do
/// better than this prior-only decision rule (up to estimation noise), so it
/// serves as an empirical ceiling.
pub fn best_prior_accuracy(
    train: &[Sentence],
    vocab: &TagVocabulary,
    instances: &[AttackInstance],
) -> Option<f64> {
    let mut counts = vec![0u64; vocab.vocab_size()];
    for s in train {
        for t in &s.tokens {
            if let Some(w) = vocab.word_id(&t.form) {
                counts[w] += 1;
            }
        }
    }
    let mut total = 0usize;
    let mut hits = 0usize;
    for inst in instances {
        for (i, tok) in inst.obfuscated.tokens.iter().enumerate() {
            if !inst.mask[i] {
                continue;
            }
            total += 1;
            let Some(tag) = vocab.tag_id(&tok.tag) else { continue };
            let observed = vocab.word_id(&tok.form);
            let guess = vocab
                .tag_pool(tag)
                .iter()
                .copied()
                .filter(|&w| Some(w) != observed)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)));
            if let Some(g) = guess {
                if vocab.word(g) == inst.original_forms[i] {
                    hits += 1;
                }
            }
        }
    }
    if total == 0 {
        None
    } else {
        Some(hits as f64 / total as f64)
    }
}

// ---------------------------------------------------------------------------
// Masked-token predictors
// ---------------------------------------------------------------------------

/// Anything that can fill in one masked position. `forms[position]` is the
/// literal [`MASK_TOKEN`]; the rest of the sentence is visible. The returned
/// vector is a normalized distribution aligned with `words()`.
pub trait MaskedPredictor: Send + Sync {
    fn predict(&self, forms: &[&str], tags: &[&str], position: usize) -> Result<Vec<f64>>;
    fn words(&self) -> &[String];
}

/// Runs a masked predictor on every masked position of a sentence.
pub fn attack_with_predictor(
    predictor: &dyn MaskedPredictor,
    sentence: &Sentence,
    mask: &[bool],
) -> Result<Vec<AttackPrediction>> {
    if mask.len() != sentence.len() {
        return Err(Error::Argument(format!(
            "{} tokens but {} mask entries",
            sentence.len(),
            mask.len()
        )));
    }
    let tags = sentence.tags();
    let mut out = Vec::new();
    for (i, &masked) in mask.iter().enumerate() {
        if !masked {
            continue;
        }
        let forms: Vec<&str> = sentence
            .tokens
            .iter()
            .enumerate()
            .map(|(j, t)| if j == i { MASK_TOKEN } else { t.form.as_str() })
            .collect();
        let probs = predictor.predict(&forms, &tags, i)?;
        if probs.len() != predictor.words().len() {
            return Err(Error::Contract(format!(
                "predictor returned {} probabilities for {} words",
                probs.len(),
                predictor.words().len()
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("predictor distribution sums to {sum}")));
        }
        out.push(AttackPrediction::from_scores(i, predictor.words(), probs));
    }
    Ok(out)
}

/// Additive smoothing weight of the context-count predictor.
const SMOOTHING: f64 = 0.1;

/// Count-based masked-word model: additively smoothed counts of
/// (left form, right form, tag) contexts, backing off to the tag-conditional
/// unigram and then the global unigram distribution. Cheap to rebuild from a
/// corpus, so it is not serialized.
#[derive(Debug, Clone)]
pub struct ContextCountPredictor {
    words: Vec<String>,
    context: HashMap<(String, String, String), HashMap<usize, u64>>,
    tag_unigram: HashMap<String, Vec<u64>>,
    unigram: Vec<u64>,
}

/// Builds a [`ContextCountPredictor`] from a corpus. Sentence edges count as
/// the pseudo-forms `<s>` and `</s>`.
pub fn context_count_predictor(corpus: &[Sentence]) -> ContextCountPredictor {
    let vocab = TagVocabulary::build(corpus);
    let words = vocab.words().to_vec();
    let word_index: HashMap<String, usize> =
        words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    let mut context: HashMap<(String, String, String), HashMap<usize, u64>> = HashMap::new();
    let mut tag_unigram: HashMap<String, Vec<u64>> = HashMap::new();
    let mut unigram = vec![0u64; words.len()];
    for s in corpus {
        for (i, tok) in s.tokens.iter().enumerate() {
            let Some(&w) = word_index.get(&tok.form) else { continue };
            let left = if i == 0 { BOS.to_string() } else { s.tokens[i - 1].form.clone() };
            let right = if i + 1 == s.len() {
                EOS.to_string()
            } else {
                s.tokens[i + 1].form.clone()
            };
            *context.entry((left, right, tok.tag.clone())).or_default().entry(w).or_insert(0) +=
                1;
            tag_unigram.entry(tok.tag.clone()).or_insert_with(|| vec![0; words.len()])[w] += 1;
            unigram[w] += 1;
        }
    }
    ContextCountPredictor { words, context, tag_unigram, unigram }
}

impl ContextCountPredictor {
    fn smoothed(&self, counts: impl Fn(usize) -> f64) -> Vec<f64> {
        let v = self.words.len();
        let raw: Vec<f64> = (0..v).map(|w| counts(w) + SMOOTHING).collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / z).collect()
    }
}

impl MaskedPredictor for ContextCountPredictor {
    fn predict(&self, forms: &[&str], tags: &[&str], position: usize) -> Result<Vec<f64>> {
        if position >= forms.len() || forms.len() != tags.len() {
            return Err(Error::Argument(format!(
                "masked position {position} in a sentence of {} forms / {} tags",
                forms.len(),
                tags.len()
            )));
        }
        let left = if position == 0 { BOS } else { forms[position - 1] };
        let right = if position + 1 == forms.len() { EOS } else { forms[position + 1] };
        let key = (left.to_string(), right.to_string(), tags[position].to_string());
        if let Some(counts) = self.context.get(&key) {
            return Ok(self.smoothed(|w| counts.get(&w).copied().unwrap_or(0) as f64));
        }
        if let Some(counts) = self.tag_unigram.get(tags[position]) {
            return Ok(self.smoothed(|w| counts[w] as f64));
        }
        Ok(self.smoothed(|w| self.unigram[w] as f64))
    }

    fn words(&self) -> &[String] {
        &self.words
    }
}

// ---------------------------------------------------------------------------
// External masked predictors
// ---------------------------------------------------------------------------

/// Command-line contract for an external masked-token predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackAdapter {
    /// Program and arguments, invoked once per masked query.
    pub command: Vec<String>,
    #[serde(default = "default_adapter_timeout")]
    pub timeout_secs: u64,
}

fn default_adapter_timeout() -> u64 {
    120
}

/// Bridges an external process into the [`MaskedPredictor`] contract.
///
/// Wire format: the request is one line of space-separated tokens with the
/// queried position replaced by the literal `[MASK]`; the response is lines
/// of `word probability`. Response words outside the configured vocabulary
/// are dropped and the rest renormalized. Requests are serialized per
/// adapter instance.
pub struct ExternalMaskedPredictor {
    adapter: AttackAdapter,
    words: Vec<String>,
    word_index: HashMap<String, usize>,
    gate: Mutex<()>,
}

pub fn external_masked_predictor(
    adapter: AttackAdapter,
    words: Vec<String>,
) -> Result<ExternalMaskedPredictor> {
    if adapter.command.is_empty() {
        return Err(Error::Argument("adapter command is empty".into()));
    }
    if words.is_empty() {
        return Err(Error::Argument("adapter vocabulary is empty".into()));
    }
    let word_index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    Ok(ExternalMaskedPredictor { adapter, words, word_index, gate: Mutex::new(()) })
}

impl MaskedPredictor for ExternalMaskedPredictor {
    fn predict(&self, forms: &[&str], tags: &[&str], position: usize) -> Result<Vec<f64>> {
        if position >= forms.len() || forms.len() != tags.len() {
            return Err(Error::Argument(format!(
                "masked position {position} in a sentence of {} forms / {} tags",
                forms.len(),
                tags.len()
            )));
        }
        if forms[position] != MASK_TOKEN {
            return Err(Error::Argument(format!(
                "position {position} holds {:?}, expected the literal {MASK_TOKEN}",
                forms[position]
            )));
        }
        let _serialized = self.gate.lock().expect("adapter gate");
        let request = format!("{}\n", forms.join(" "));
        let at = |msg: String, excerpt: String| Error::Adapter {
            msg: format!("masked position {position}: {msg}"),
            excerpt,
        };
        let (stdout, stderr) =
            run_with_timeout(
                &self.adapter.command,
                request.into_bytes(),
                Duration::from_secs(self.adapter.timeout_secs),
            )
            .map_err(|e| match e {
                Error::Adapter { msg, excerpt } => at(msg, excerpt),
                other => other,
            })?;
        let text = String::from_utf8_lossy(&stdout);
        let mut probs = vec![0.0; self.words.len()];
        let mut mass = 0.0;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let (Some(word), Some(score), None) =
                (fields.next(), fields.next(), fields.next())
            else {
                return Err(at(
                    format!("response line {line:?} is not `word probability`"),
                    excerpt_of(&stdout, &stderr),
                ));
            };
            let p: f64 = score.parse().map_err(|_| {
                at(
                    format!("unparseable probability in line {line:?}"),
                    excerpt_of(&stdout, &stderr),
                )
            })?;
            if !(p.is_finite() && p >= 0.0) {
                return Err(at(
                    format!("probability {p} out of range in line {line:?}"),
                    excerpt_of(&stdout, &stderr),
                ));
            }
            if let Some(&w) = self.word_index.get(word) {
                probs[w] += p;
                mass += p;
            }
        }
        if mass <= 0.0 {
            return Err(at(
                "response carries no probability mass on vocabulary words".into(),
                excerpt_of(&stdout, &stderr),
            ));
        }
        for p in &mut probs {
            *p /= mass;
        }
        Ok(probs)
    }

    fn words(&self) -> &[String] {
        &self.words
    }
}

// ---------------------------------------------------------------------------
// The trained inversion model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerConfig {
    pub encoder: EncoderConfig,
    /// Hidden width of the feed-forward prediction head.
    pub ffn: usize,
    /// Feed the substitution mask to the model (the standard threat model,
    /// where the attacker knows which positions were substituted). Disable
    /// to measure the harder variant.
    pub mask_channel: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl AttackerConfig {
    /// Minutes-scale configuration for tests and fixture experiments.
    pub fn desk() -> Self {
        AttackerConfig {
            encoder: EncoderConfig::desk(),
            ffn: 64,
            mask_channel: true,
            epochs: 10,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            seed: 1,
        }
    }

    /// Full-scale configuration mirroring the substitution policy's encoder
    /// (100-dim channels, 3-layer bidirectional recurrence).
    pub fn large() -> Self {
        AttackerConfig { encoder: EncoderConfig::large(), ffn: 512, ..AttackerConfig::desk() }
    }
}

#[derive(Serialize, Deserialize)]
struct AttackerMeta {
    config: AttackerConfig,
    encoder: SentenceEncoder,
    mask_embed: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    vocab_fingerprint: String,
}

/// The trained inversion attacker: the policy-mirroring encoder over the
/// obfuscated sentence (word + tag + character channels, with a mask
/// embedding added to the word channel when the mask is visible) and a
/// two-layer feed-forward head scoring every vocabulary word at each masked
/// position.
pub struct AttackerModel {
    pub config: AttackerConfig,
    pub vocab_fingerprint: String,
    encoder: SentenceEncoder,
    mask_embed: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    store: ParamStore,
}

struct AttackerLeaves {
    enc: crate::nn::EncoderLeaves,
    mask: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

const ATTACKER_MAGIC: &[u8; 4] = b"SVAT";

impl AttackerModel {
    pub fn init(
        vocab: &TagVocabulary,
        chars: Vec<char>,
        config: AttackerConfig,
        seed: u64,
    ) -> Result<AttackerModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0xa77a]));
        let mut store = ParamStore::new();
        let encoder = SentenceEncoder::init(
            &mut store,
            "enc",
            vocab.words().to_vec(),
            vocab.tags().to_vec(),
            chars,
            config.encoder.clone(),
            None,
            &mut rng,
        )?;
        let h = config.encoder.output_dim();
        let v = vocab.vocab_size();
        let mask_embed =
            store.add("mask_embed", Array2::zeros((2, config.encoder.word_dim)));
        let w1 = store.add("ffn.w1", xavier(&mut rng, h, config.ffn));
        let b1 = store.add("ffn.b1", Array2::zeros((1, config.ffn)));
        let w2 = store.add("ffn.w2", xavier(&mut rng, config.ffn, v));
        let b2 = store.add("ffn.b2", Array2::zeros((1, v)));
        Ok(AttackerModel {
            config,
            vocab_fingerprint: vocab.fingerprint(),
            encoder,
            mask_embed,
            w1,
            b1,
            w2,
            b2,
            store,
        })
    }

    pub fn words(&self) -> &[String] {
        &self.encoder.words
    }

    pub fn checksum(&self) -> String {
        self.store.checksum()
    }

    fn leaves(&self, tape: &mut Tape, trainable: bool) -> AttackerLeaves {
        AttackerLeaves {
            enc: self.encoder.leaves(tape, &self.store, trainable),
            mask: self.store.leaf(tape, self.mask_embed, trainable),
            w1: self.store.leaf(tape, self.w1, trainable),
            b1: self.store.leaf(tape, self.b1, trainable),
            w2: self.store.leaf(tape, self.w2, trainable),
            b2: self.store.leaf(tape, self.b2, trainable),
        }
    }

    /// Vocabulary logits of every masked position.
    fn position_logits(
        &self,
        tape: &mut Tape,
        sentence: &Sentence,
        mask: &[bool],
        dropout: Option<&LstmDropout>,
        trainable: bool,
    ) -> Result<Vec<(usize, Var)>> {
        if sentence.is_empty() {
            return Err(Error::Argument("cannot attack an empty sentence".into()));
        }
        if mask.len() != sentence.len() {
            return Err(Error::Argument(format!(
                "{} tokens but {} mask entries",
                sentence.len(),
                mask.len()
            )));
        }
        let l = self.leaves(tape, trainable);
        let rows: Vec<Var> = sentence
            .tokens
            .iter()
            .enumerate()
            .map(|(i, tok)| {
                let mut wc = self.encoder.word_channel(tape, &l.enc, &tok.form);
                if self.config.mask_channel {
                    let bit = tape.gather_rows(l.mask, &[usize::from(mask[i])]);
                    wc = tape.add(wc, bit);
                }
                self.encoder.token_vector(tape, &l.enc, wc, &tok.form, &tok.tag)
            })
            .collect();
        let hidden = self.encoder.run(tape, &self.store, &rows, dropout, trainable);
        let mut out = Vec::new();
        for (i, &masked) in mask.iter().enumerate() {
            if !masked {
                continue;
            }
            let a = tape.matmul(hidden[i], l.w1);
            let a = tape.add_row(a, l.b1);
            let a = tape.relu(a);
            let logits = tape.matmul(a, l.w2);
            let logits = tape.add_row(logits, l.b2);
            out.push((i, logits));
        }
        Ok(out)
    }

    /// One prediction per masked position, deterministic in eval mode.
    pub fn attack(&self, sentence: &Sentence, mask: &[bool]) -> Result<Vec<AttackPrediction>> {
        let mut tape = Tape::new();
        let scored = self.position_logits(&mut tape, sentence, mask, None, false)?;
        let mut out = Vec::with_capacity(scored.len());
        for (position, logits) in scored {
            let row = tape.value(logits);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let probs: Vec<f64> = exps.into_iter().map(|e| e / z).collect();
            out.push(AttackPrediction::from_scores(position, self.words(), probs));
        }
        Ok(out)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let meta = AttackerMeta {
            config: self.config.clone(),
            encoder: self.encoder.clone(),
            mask_embed: self.mask_embed,
            w1: self.w1,
            b1: self.b1,
            w2: self.w2,
            b2: self.b2,
            vocab_fingerprint: self.vocab_fingerprint.clone(),
        };
        let json = serde_json::to_string(&meta)
            .map_err(|e| Error::Checkpoint(format!("could not serialize attacker: {e}")))?;
        write_checkpoint(path, ATTACKER_MAGIC, &json, &self.store)
    }

    pub fn load(path: &std::path::Path) -> Result<AttackerModel> {
        let (json, store) = read_checkpoint(path, ATTACKER_MAGIC)?;
        let mut meta: AttackerMeta = serde_json::from_str(&json)
            .map_err(|e| Error::Checkpoint(format!("corrupt attacker metadata: {e}")))?;
        meta.encoder.rebuild_index();
        Ok(AttackerModel {
            config: meta.config,
            vocab_fingerprint: meta.vocab_fingerprint,
            encoder: meta.encoder,
            mask_embed: meta.mask_embed,
            w1: meta.w1,
            b1: meta.b1,
            w2: meta.w2,
            b2: meta.b2,
            store,
        })
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackerEpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy per masked position.
    pub train_loss: f64,
    pub masked_positions: usize,
    pub wall_secs: f64,
}

/// Cross-entropy loss and gradients of one instance; `golds` pairs masked
/// positions with original word ids.
fn instance_objective(
    model: &AttackerModel,
    sentence: &Sentence,
    mask: &[bool],
    golds: &[(usize, usize)],
    noise_seed: u64,
    grad_scale: f64,
) -> Result<(f64, GradMap)> {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let dropout = model.encoder.sample_dropout(&mut rng);
    let scored = model.position_logits(&mut tape, sentence, mask, Some(&dropout), true)?;
    let mut total: Option<Var> = None;
    for (position, logits) in scored {
        let Some(&(_, gold)) = golds.iter().find(|(p, _)| *p == position) else {
            return Err(Error::Contract(format!("no gold word for masked position {position}")));
        };
        let lsm = tape.log_softmax_row(logits);
        let ll = tape.select_sum(lsm, &[(0, gold)]);
        total = Some(match total {
            Some(t) => tape.add(t, ll),
            None => ll,
        });
    }
    let Some(total) = total else {
        return Ok((0.0, GradMap::new(0)));
    };
    let loss_var = tape.neg(total);
    let loss = tape.scalar(loss_var);
    let scaled = tape.scale(loss_var, grad_scale);
    let mut grads = tape.backward(scaled);
    let mut map = GradMap::new(model.store.len());
    map.absorb(&tape, &mut grads);
    Ok((loss, map))
}

struct TrainItem {
    sentence: Sentence,
    mask: Vec<bool>,
    golds: Vec<(usize, usize)>,
}

fn prepare_items(model: &AttackerModel, instances: &[ObfuscationResult]) -> Result<Vec<TrainItem>> {
    instances
        .iter()
        .map(|inst| {
            if inst.mask.len() != inst.obfuscated.len()
                || inst.original.len() != inst.obfuscated.len()
            {
                return Err(Error::Argument(format!(
                    "obfuscation result shapes disagree: {} original tokens, {} obfuscated, {} mask entries",
                    inst.original.len(),
                    inst.obfuscated.len(),
                    inst.mask.len()
                )));
            }
            let mut golds = Vec::new();
            for (i, &m) in inst.mask.iter().enumerate() {
                if !m {
                    continue;
                }
                let form = &inst.original.tokens[i].form;
                let Some(w) = model.encoder.word_id(form) else {
                    return Err(Error::Argument(format!(
                        "original word {form:?} is outside the attacker's vocabulary"
                    )));
                };
                golds.push((i, w));
            }
            Ok(TrainItem { sentence: inst.obfuscated.clone(), mask: inst.mask.clone(), golds })
        })
        .collect()
}

/// Trains the inversion model on a fixed corpus of obfuscation results.
pub fn train_attacker(
    instances: &[ObfuscationResult],
    vocab: &TagVocabulary,
    config: &AttackerConfig,
) -> Result<(AttackerModel, Vec<AttackerEpochRecord>)> {
    fit_attacker(vocab, config, |_epoch| Ok(instances.to_vec()))
}

/// Trains the inversion model with fresh obfuscations sampled from the
/// policy under attack at every epoch — the strongest attacker the threat
/// model allows, since the adversary has access to the policy.
pub fn train_attacker_resampled(
    policy: &dyn ObfuscationPolicy,
    corpus: &[Sentence],
    targets: &TagSet,
    vocab: &TagVocabulary,
    config: &AttackerConfig,
) -> Result<(AttackerModel, Vec<AttackerEpochRecord>)> {
    fit_attacker(vocab, config, |epoch| {
        corpus
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                    config.seed,
                    &[0x0b5, epoch as u64, i as u64],
                ));
                policy.sample(s, targets, &mut rng)
            })
            .collect()
    })
}

fn fit_attacker(
    vocab: &TagVocabulary,
    config: &AttackerConfig,
    mut sample: impl FnMut(usize) -> Result<Vec<ObfuscationResult>>,
) -> Result<(AttackerModel, Vec<AttackerEpochRecord>)> {
    let chars: Vec<char> = {
        let set: std::collections::BTreeSet<char> =
            vocab.words().iter().flat_map(|w| w.chars()).collect();
        set.into_iter().collect()
    };
    let mut model = AttackerModel::init(vocab, chars, config.clone(), config.seed)?;
    let mut adam = Adam::new(config.optimizer.clone(), model.store.len());
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        let instances = sample(epoch)?;
        if instances.is_empty() {
            return Err(Error::Argument("attacker training set is empty".into()));
        }
        let items = prepare_items(&model, &instances)?;
        let masked_total: usize = items.iter().map(|it| it.golds.len()).sum();
        if masked_total == 0 {
            return Err(Error::Argument(
                "no substituted positions to train on; the obfuscation is the identity".into(),
            ));
        }
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[0x5f, epoch as u64]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch_masked: usize = chunk.iter().map(|&i| items[i].golds.len()).sum();
            if batch_masked == 0 {
                continue;
            }
            let grad_scale = 1.0 / batch_masked as f64;
            let results: Vec<(f64, GradMap)> = chunk
                .par_iter()
                .map(|&i| {
                    let it = &items[i];
                    instance_objective(
                        &model,
                        &it.sentence,
                        &it.mask,
                        &it.golds,
                        mix_seed(config.seed, &[0xd217, epoch as u64, i as u64]),
                        grad_scale,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = GradMap::new(model.store.len());
            for (loss, g) in results {
                loss_sum += loss;
                grads.merge(g);
            }
            adam.step(&mut model.store, &mut grads);
        }
        let train_loss = loss_sum / masked_total as f64;
        log::info!("attacker epoch {epoch}: loss {train_loss:.4} over {masked_total} positions");
        records.push(AttackerEpochRecord {
            epoch,
            train_loss,
            masked_positions: masked_total,
            wall_secs: t0.elapsed().as_secs_f64(),
        });
    }
    Ok((model, records))
}
