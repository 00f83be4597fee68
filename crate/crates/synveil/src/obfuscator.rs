//! Obfuscation policies: per-position substitution distributions over
//! tag-mates, with a uniform random baseline and a trainable neural policy.
//!
//! Both policies obey the same hard constraints: a position whose tag is
//! outside the target set keeps its original word with probability 1; a
//! targeted position never receives its original word back (the original is
//! excluded from the support); substitutes always share the original's tag.
//! A targeted position with no alternative (singleton pool) keeps its word
//! and is reported as unsubstitutable.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape, Var};
use crate::corpus::{Sentence, TagSet, TagVocabulary, Token};
use crate::nn::{
    self, mix_seed, EncoderConfig, EncoderLeaves, LstmDropout, ParamStore, SentenceEncoder,
};
use crate::{Error, Result};

const OBFUSCATOR_MAGIC: &[u8; 4] = b"SVOB";

// ---------------------------------------------------------------------------
// Distributions and results
// ---------------------------------------------------------------------------

/// Substitution distribution of one position.
///
/// A non-empty `support` lists candidate words (the position's tag-mates,
/// original excluded, in the vocabulary's sorted order) with one probability
/// each. An empty `support` is the degenerate identity distribution — all
/// probability mass on the original word — used for untargeted positions and
/// for targeted positions that have no alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionDistribution {
    pub position: usize,
    pub support: Vec<String>,
    pub probs: Vec<f64>,
}

impl SubstitutionDistribution {
    /// Identity: the position keeps its original word with probability 1.
    pub fn identity(position: usize) -> Self {
        SubstitutionDistribution { position, support: Vec::new(), probs: Vec::new() }
    }

    pub fn is_identity(&self) -> bool {
        self.support.is_empty()
    }

    /// Checks the distribution invariants against the original form:
    /// matching support/probs lengths, non-negative probabilities summing to
    /// 1 ± 1e-9, and the original word absent from the support.
    pub fn validate(&self, original_form: &str) -> Result<()> {
        if self.support.len() != self.probs.len() {
            return Err(Error::Contract(format!(
                "position {}: {} candidates but {} probabilities",
                self.position,
                self.support.len(),
                self.probs.len()
            )));
        }
        if self.is_identity() {
            return Ok(());
        }
        if self.support.iter().any(|w| w == original_form) {
            return Err(Error::Contract(format!(
                "position {}: original word {original_form:?} is in the support",
                self.position
            )));
        }
        if self.probs.iter().any(|&p| p < 0.0) {
            return Err(Error::Contract(format!(
                "position {}: negative probability",
                self.position
            )));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "position {}: probabilities sum to {sum}, expected 1",
                self.position
            )));
        }
        Ok(())
    }
}

/// One sampled obfuscation of a sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObfuscationResult {
    pub original: Sentence,
    pub obfuscated: Sentence,
    /// True at positions whose word was substituted.
    pub mask: Vec<bool>,
    /// Targeted positions where no alternative existed; they keep their
    /// original word (and count as leaked in privacy reports).
    pub unsubstitutable: BTreeSet<usize>,
}

impl ObfuscationResult {
    /// Checks every result invariant: equal length, tags preserved,
    /// substituted forms differ from the original and stay inside the tag's
    /// vocabulary pool, unsubstituted forms are identical.
    pub fn validate(&self, vocab: &TagVocabulary) -> Result<()> {
        let n = self.original.len();
        let fail = |msg: String| Err(Error::Contract(format!("{}: {msg}", self.original.id)));
        if self.obfuscated.len() != n {
            return fail(format!("length changed from {n} to {}", self.obfuscated.len()));
        }
        if self.mask.len() != n {
            return fail(format!("mask covers {} of {n} positions", self.mask.len()));
        }
        if let Some(&p) = self.unsubstitutable.iter().next_back() {
            if p >= n {
                return fail(format!("unsubstitutable position {p} out of range"));
            }
        }
        for (i, (orig, obf)) in
            self.original.tokens.iter().zip(&self.obfuscated.tokens).enumerate()
        {
            if obf.tag != orig.tag {
                return fail(format!("tag changed at position {i}"));
            }
            if self.mask[i] {
                if obf.form == orig.form {
                    return fail(format!("masked position {i} kept its word"));
                }
                let in_pool = vocab
                    .tag_id(&orig.tag)
                    .zip(vocab.word_id(&obf.form))
                    .is_some_and(|(t, w)| vocab.tag_pool(t).contains(&w));
                if !in_pool {
                    return fail(format!(
                        "substitute {:?} at position {i} is not a {} word",
                        obf.form, orig.tag
                    ));
                }
                if self.unsubstitutable.contains(&i) {
                    return fail(format!("position {i} is both masked and unsubstitutable"));
                }
            } else if obf.form != orig.form {
                return fail(format!("unmasked position {i} changed its word"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// The policy contract
// ---------------------------------------------------------------------------

/// An obfuscation policy maps a sentence and a set of targeted tags to one
/// substitution distribution per position, and samples obfuscations from
/// them. Positions outside the target set always keep their word; positions
/// inside it never keep theirs when an alternative exists.
pub trait ObfuscationPolicy {
    fn distribution(
        &self,
        sentence: &Sentence,
        targets: &TagSet,
    ) -> Result<Vec<SubstitutionDistribution>>;

    /// Samples each targeted position independently. Reproducible given the
    /// random source's state; every position draws from its own derived
    /// substream, so the draw at one position does not depend on which other
    /// positions are targeted.
    fn sample(
        &self,
        sentence: &Sentence,
        targets: &TagSet,
        rng: &mut dyn RngCore,
    ) -> Result<ObfuscationResult> {
        let dists = self.distribution(sentence, targets)?;
        sample_from(sentence, targets, &dists, rng)
    }
}

/// Samples an obfuscation from per-position distributions. One master draw
/// from `rng` seeds a per-position substream, keyed by the position index.
pub fn sample_from(
    sentence: &Sentence,
    targets: &TagSet,
    dists: &[SubstitutionDistribution],
    rng: &mut dyn RngCore,
) -> Result<ObfuscationResult> {
    let n = sentence.len();
    if dists.len() != n {
        return Err(Error::Argument(format!(
            "{} distributions for a {n}-token sentence",
            dists.len()
        )));
    }
    let master = rng.next_u64();
    let mut tokens = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    let mut unsubstitutable = BTreeSet::new();
    for (i, (dist, tok)) in dists.iter().zip(&sentence.tokens).enumerate() {
        if dist.position != i {
            return Err(Error::Argument(format!(
                "distribution {i} is for position {}",
                dist.position
            )));
        }
        if dist.is_identity() {
            if targets.contains(&tok.tag) {
                unsubstitutable.insert(i);
            }
            tokens.push(tok.clone());
            mask.push(false);
        } else {
            dist.validate(&tok.form)?;
            let mut sub_rng = ChaCha8Rng::seed_from_u64(mix_seed(master, &[i as u64]));
            let index = WeightedIndex::new(&dist.probs)
                .map_err(|e| Error::Argument(format!("position {i}: bad weights: {e}")))?;
            let pick = index.sample(&mut sub_rng);
            let mut sub = Token::new(dist.support[pick].clone(), tok.tag.clone());
            sub.head = tok.head;
            sub.deprel = tok.deprel.clone();
            tokens.push(sub);
            mask.push(true);
        }
    }
    Ok(ObfuscationResult {
        original: sentence.clone(),
        obfuscated: Sentence::new(sentence.id.clone(), tokens),
        mask,
        unsubstitutable,
    })
}

// ---------------------------------------------------------------------------
// Uniform random baseline
// ---------------------------------------------------------------------------

/// Uniform distribution over each targeted position's candidates.
pub fn random_distribution(
    sentence: &Sentence,
    targets: &TagSet,
    vocab: &TagVocabulary,
) -> Vec<SubstitutionDistribution> {
    sentence
        .tokens
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            if !targets.contains(&tok.tag) {
                return SubstitutionDistribution::identity(i);
            }
            let candidates = match vocab.tag_id(&tok.tag) {
                // Tag never seen: the candidate pool is empty, the position
                // is unsubstitutable (not an error).
                None => return SubstitutionDistribution::identity(i),
                Some(t) => match vocab.word_id(&tok.form) {
                    Some(w) => vocab.candidates(t, w),
                    None => vocab.tag_pool(t).to_vec(),
                },
            };
            if candidates.is_empty() {
                return SubstitutionDistribution::identity(i);
            }
            let m = candidates.len();
            SubstitutionDistribution {
                position: i,
                support: candidates.iter().map(|&w| vocab.word(w).to_string()).collect(),
                probs: vec![1.0 / m as f64; m],
            }
        })
        .collect()
}

/// The uniform random substitution policy over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    pub vocab: TagVocabulary,
}

impl RandomPolicy {
    pub fn new(vocab: TagVocabulary) -> Self {
        RandomPolicy { vocab }
    }
}

impl ObfuscationPolicy for RandomPolicy {
    fn distribution(
        &self,
        sentence: &Sentence,
        targets: &TagSet,
    ) -> Result<Vec<SubstitutionDistribution>> {
        Ok(random_distribution(sentence, targets, &self.vocab))
    }
}

// ---------------------------------------------------------------------------
// Neural policy
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObfuscatorConfig {
    pub encoder: EncoderConfig,
    /// Head parameterization. `false` (default): one score matrix per tag,
    /// rows indexed by the tag's pool — every (tag, word) pair has its own
    /// score vector. `true`: a single matrix over the whole vocabulary,
    /// masked to the pool at scoring time — a memory optimization that ties
    /// a word's score vector across all of its tags.
    pub shared_heads: bool,
}

impl ObfuscatorConfig {
    /// Minutes-scale configuration for tests and fixture experiments.
    pub fn desk() -> Self {
        ObfuscatorConfig { encoder: EncoderConfig::desk(), shared_heads: false }
    }

    /// Full-scale configuration (100-dim channels, 3×512 encoder, so score
    /// vectors have 1024 dimensions).
    pub fn large() -> Self {
        ObfuscatorConfig { encoder: EncoderConfig::large(), shared_heads: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Heads {
    /// `PerTag[t]` is a (|V_t|, 2H) matrix: one score vector per pool word.
    PerTag(Vec<ParamId>),
    /// A (V, 2H) matrix shared by all tags.
    Shared(ParamId),
}

#[derive(Serialize, Deserialize)]
struct ObfuscatorMeta {
    config: ObfuscatorConfig,
    encoder: SentenceEncoder,
    heads: Heads,
    tag_pools: Vec<Vec<usize>>,
    vocab_fingerprint: String,
}

/// The trainable substitution policy: a three-channel sentence encoder with
/// score heads over each tag's candidate pool. Freshly initialized heads are
/// zero, so an untrained model reproduces the uniform random policy exactly.
pub struct NeuralObfuscatorModel {
    pub config: ObfuscatorConfig,
    pub vocab_fingerprint: String,
    encoder: SentenceEncoder,
    heads: Heads,
    /// Word ids of each tag's pool, in the vocabulary's sorted order.
    tag_pools: Vec<Vec<usize>>,
    store: ParamStore,
}

/// One targeted position's candidate scores on a tape, for training.
pub(crate) struct PositionScores {
    pub position: usize,
    /// Candidate word ids (pool order, original excluded).
    pub support: Vec<usize>,
    /// (1, |support|) logits.
    pub logits: Var,
}

impl NeuralObfuscatorModel {
    pub fn init(
        vocab: &TagVocabulary,
        chars: Vec<char>,
        config: ObfuscatorConfig,
        pretrained: Option<&HashMap<String, Vec<f64>>>,
        seed: u64,
    ) -> Result<NeuralObfuscatorModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x0bf5]));
        let mut store = ParamStore::new();
        let encoder = SentenceEncoder::init(
            &mut store,
            "enc",
            vocab.words().to_vec(),
            vocab.tags().to_vec(),
            chars,
            config.encoder.clone(),
            pretrained,
            &mut rng,
        )?;
        let h = config.encoder.output_dim();
        let tag_pools: Vec<Vec<usize>> =
            (0..vocab.tag_count()).map(|t| vocab.tag_pool(t).to_vec()).collect();
        let heads = if config.shared_heads {
            Heads::Shared(store.add("head.shared", ndarray::Array2::zeros((vocab.vocab_size(), h))))
        } else {
            Heads::PerTag(
                tag_pools
                    .iter()
                    .enumerate()
                    .map(|(t, pool)| {
                        store.add(
                            &format!("head.{}", vocab.tag(t)),
                            ndarray::Array2::zeros((pool.len(), h)),
                        )
                    })
                    .collect(),
            )
        };
        Ok(NeuralObfuscatorModel {
            config,
            vocab_fingerprint: vocab.fingerprint(),
            encoder,
            heads,
            tag_pools,
            store,
        })
    }

    pub fn checksum(&self) -> String {
        self.store.checksum()
    }

    pub(crate) fn store(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub(crate) fn set_store(&mut self, store: ParamStore) {
        self.store = store;
    }

    pub fn word_id(&self, form: &str) -> Option<usize> {
        self.encoder.word_id(form)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.encoder.words[id]
    }

    /// Candidate word ids of a token: its tag's pool minus the word itself.
    /// Empty when the tag is unknown or the pool offers no alternative.
    fn candidate_ids(&self, form: &str, tag: &str) -> Vec<usize> {
        let t = self.encoder.tag_row(tag);
        if t >= self.tag_pools.len() {
            return Vec::new();
        }
        let pool = &self.tag_pools[t];
        match self.encoder.word_id(form) {
            Some(w) => pool.iter().copied().filter(|&x| x != w).collect(),
            None => pool.clone(),
        }
    }

    /// Encoder forward pass: leaves plus one hidden vector per token.
    fn hidden(
        &self,
        tape: &mut Tape,
        sentence: &Sentence,
        dropout: Option<&LstmDropout>,
        trainable: bool,
    ) -> Result<(EncoderLeaves, Vec<Var>)> {
        if sentence.is_empty() {
            return Err(Error::Argument("cannot encode an empty sentence".into()));
        }
        let leaves = self.encoder.leaves(tape, &self.store, trainable);
        let rows: Vec<Var> = sentence
            .tokens
            .iter()
            .map(|tok| {
                let w = self.encoder.word_channel(tape, &leaves, &tok.form);
                self.encoder.token_vector(tape, &leaves, w, &tok.form, &tok.tag)
            })
            .collect();
        let hidden = self.encoder.run(tape, &self.store, &rows, dropout, trainable);
        Ok((leaves, hidden))
    }

    /// Hidden vectors of every token (evaluation mode: no dropout,
    /// deterministic).
    pub fn encode(&self, sentence: &Sentence) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let (_, hidden) = self.hidden(&mut tape, sentence, None, false)?;
        Ok(hidden.iter().map(|&h| tape.value(h).iter().copied().collect()).collect())
    }

    /// Hidden vectors under a seeded training-mode dropout draw.
    pub fn encode_with_dropout(&self, sentence: &Sentence, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dropout = self.encoder.sample_dropout(&mut rng);
        let mut tape = Tape::new();
        let (_, hidden) = self.hidden(&mut tape, sentence, Some(&dropout), false)?;
        Ok(hidden.iter().map(|&h| tape.value(h).iter().copied().collect()).collect())
    }

    /// Raw candidate scores of one hidden vector under a tag's head.
    fn candidate_scores(&self, hidden: &[f64], tag_row: usize, candidates: &[usize]) -> Vec<f64> {
        let score = |row: usize, matrix: &ndarray::Array2<f64>| -> f64 {
            hidden.iter().zip(matrix.row(row)).map(|(a, b)| a * b).sum()
        };
        match &self.heads {
            Heads::Shared(id) => {
                let m = self.store.value(*id);
                candidates.iter().map(|&w| score(w, m)).collect()
            }
            Heads::PerTag(ids) => {
                let m = self.store.value(ids[tag_row]);
                let pool = &self.tag_pools[tag_row];
                candidates
                    .iter()
                    .map(|&w| {
                        let r = pool.binary_search(&w).expect("candidate comes from the pool");
                        score(r, m)
                    })
                    .collect()
            }
        }
    }

    /// Candidate logits of every targeted position, as tape variables, for
    /// gradient-based training.
    pub(crate) fn forward_scores(
        &self,
        tape: &mut Tape,
        sentence: &Sentence,
        targets: &TagSet,
        dropout: Option<&LstmDropout>,
        trainable: bool,
    ) -> Result<Vec<PositionScores>> {
        let (_, hidden) = self.hidden(tape, sentence, dropout, trainable)?;
        let mut head_leaves: HashMap<usize, Var> = HashMap::new();
        let mut out = Vec::new();
        for (i, tok) in sentence.tokens.iter().enumerate() {
            if !targets.contains(&tok.tag) {
                continue;
            }
            let support = self.candidate_ids(&tok.form, &tok.tag);
            if support.is_empty() {
                continue;
            }
            let t = self.encoder.tag_row(&tok.tag);
            let (head_id, rows): (ParamId, Vec<usize>) = match &self.heads {
                Heads::Shared(id) => (*id, support.clone()),
                Heads::PerTag(ids) => {
                    let pool = &self.tag_pools[t];
                    let rows = support
                        .iter()
                        .map(|w| pool.binary_search(w).expect("candidate comes from the pool"))
                        .collect();
                    (ids[t], rows)
                }
            };
            let leaf = *head_leaves
                .entry(head_id)
                .or_insert_with(|| self.store.leaf(tape, head_id, trainable));
            let cand_rows = tape.gather_rows(leaf, &rows);
            let logits = tape.matmul_nt(hidden[i], cand_rows);
            out.push(PositionScores { position: i, support, logits });
        }
        Ok(out)
    }

    pub fn sample_dropout<R: rand::Rng>(&self, rng: &mut R) -> LstmDropout {
        self.encoder.sample_dropout(rng)
    }

    // --- persistence -------------------------------------------------------

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = ObfuscatorMeta {
            config: self.config.clone(),
            encoder: self.encoder.clone(),
            heads: self.heads.clone(),
            tag_pools: self.tag_pools.clone(),
            vocab_fingerprint: self.vocab_fingerprint.clone(),
        };
        let json = serde_json::to_string(&meta)
            .map_err(|e| Error::Checkpoint(format!("could not serialize policy meta: {e}")))?;
        nn::write_checkpoint(path, OBFUSCATOR_MAGIC, &json, &self.store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<NeuralObfuscatorModel> {
        let (json, store) = nn::read_checkpoint(path, OBFUSCATOR_MAGIC)?;
        let mut meta: ObfuscatorMeta = serde_json::from_str(&json)
            .map_err(|e| Error::Checkpoint(format!("bad policy meta: {e}")))?;
        meta.encoder.rebuild_index();
        Ok(NeuralObfuscatorModel {
            config: meta.config,
            vocab_fingerprint: meta.vocab_fingerprint,
            encoder: meta.encoder,
            heads: meta.heads,
            tag_pools: meta.tag_pools,
            store,
        })
    }
}

impl ObfuscationPolicy for NeuralObfuscatorModel {
    /// Softmax over each targeted position's candidate scores; identity
    /// distributions elsewhere.
    fn distribution(
        &self,
        sentence: &Sentence,
        targets: &TagSet,
    ) -> Result<Vec<SubstitutionDistribution>> {
        let mut tape = Tape::new();
        let (_, hidden) = self.hidden(&mut tape, sentence, None, false)?;
        let out = sentence
            .tokens
            .iter()
            .enumerate()
            .map(|(i, tok)| {
                if !targets.contains(&tok.tag) {
                    return SubstitutionDistribution::identity(i);
                }
                let support = self.candidate_ids(&tok.form, &tok.tag);
                if support.is_empty() {
                    return SubstitutionDistribution::identity(i);
                }
                let h: Vec<f64> = tape.value(hidden[i]).iter().copied().collect();
                let scores = self.candidate_scores(&h, self.encoder.tag_row(&tok.tag), &support);
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                SubstitutionDistribution {
                    position: i,
                    support: support.iter().map(|&w| self.word(w).to_string()).collect(),
                    probs: exps.iter().map(|&e| e / z).collect(),
                }
            })
            .collect();
        Ok(out)
    }
}
