//! Biaffine-attention dependency parser: the downstream model whose
//! log-likelihood the obfuscator is trained against.
//!
//! The word-input pathway is differentiable: the word channel of every token
//! can be supplied as a probability vector over the vocabulary (or over an
//! explicit candidate support), whose matrix product with the embedding
//! table replaces the ordinary row lookup. Gradients then flow from the
//! parse log-likelihood back into those vectors, which is what
//! straight-through training needs.
//!
//! The module also ships an adapter for external parsers reached as child
//! processes — CoNLL-U over stdin/stdout for dependencies, tokenized lines
//! in and bracketed trees out for constituents.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape, Var};
use crate::corpus::{self, ConstituencyTree, DepTree, Sentence, TagVocabulary};
use crate::metrics::{attachment_scores, ScoringPolicy};
use crate::nn::{
    self, mix_seed, Adam, AdamConfig, EncoderConfig, EncoderLeaves, GradMap, LstmDropout,
    ParamStore, SentenceEncoder,
};
use crate::{Error, Result};

const PARSER_MAGIC: &[u8; 4] = b"SVDP";

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    /// Greedy head selection followed by a repair pass that enforces a
    /// single root and connects every token to it.
    Greedy,
    /// Exact maximum spanning arborescence (Chu-Liu/Edmonds) under the
    /// single-root constraint.
    Mst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParserConfig {
    pub encoder: EncoderConfig,
    /// Width of the arc-scorer projections.
    pub arc_mlp: usize,
    /// Width of the label-scorer projections.
    pub label_mlp: usize,
    pub decoder: DecoderKind,
}

impl ParserConfig {
    /// Minutes-scale configuration for tests and fixture experiments.
    pub fn desk() -> Self {
        ParserConfig {
            encoder: EncoderConfig::desk(),
            arc_mlp: 64,
            label_mlp: 32,
            decoder: DecoderKind::Greedy,
        }
    }

    /// Full-scale configuration (100-dim channels, 3×512 encoder).
    pub fn large() -> Self {
        ParserConfig {
            encoder: EncoderConfig::large(),
            arc_mlp: 512,
            label_mlp: 128,
            decoder: DecoderKind::Greedy,
        }
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScorerIds {
    arc_dep_w: ParamId,
    arc_dep_b: ParamId,
    arc_head_w: ParamId,
    arc_head_b: ParamId,
    arc_u: ParamId,
    arc_v: ParamId,
    lab_dep_w: ParamId,
    lab_dep_b: ParamId,
    lab_head_w: ParamId,
    lab_head_b: ParamId,
    /// One bilinear form per relation label.
    lab_u: Vec<ParamId>,
    lab_bias: ParamId,
}

/// Serializable part of the model (everything except the parameter values).
#[derive(Serialize, Deserialize)]
struct ParserMeta {
    config: ParserConfig,
    labels: Vec<String>,
    encoder: SentenceEncoder,
    scorer: ScorerIds,
    frozen: bool,
    vocab_fingerprint: String,
}

pub struct ParserModel {
    pub config: ParserConfig,
    /// Relation label inventory, sorted; label scores use this order.
    pub labels: Vec<String>,
    pub vocab_fingerprint: String,
    encoder: SentenceEncoder,
    scorer: ScorerIds,
    store: ParamStore,
    frozen: bool,
    label_index: HashMap<String, usize>,
}

/// Arc and label scores of one sentence: `arc[(i, j)]` scores head candidate
/// `j` (0 = root, `k` = token `k`) for token `i+1`; `labels[(i, j, l)]`
/// scores relation `l` on that arc.
pub struct ParseScores {
    pub arc: Array2<f64>,
    pub labels: Array3<f64>,
    pub label_names: Vec<String>,
}

/// How the word channel of each position is supplied to the forward pass.
pub(crate) enum WordInput<'a> {
    /// Ordinary embedding lookup of the surface forms.
    Forms,
    /// Differentiable probability vectors over the full vocabulary.
    Dense(&'a [Vec<f64>]),
    /// Pre-built word-channel variables (the straight-through pathway).
    Channels(&'a [Var]),
}

/// Handles produced by one forward pass.
pub(crate) struct Forward {
    pub n: usize,
    /// Input leaves of the dense word vectors (empty unless `Dense`).
    pub dense_leaves: Vec<Var>,
    pub arc: Var,
    lab_dep: Var,
    lab_head: Var,
}

pub(crate) struct ParserLeaves {
    pub(crate) enc: EncoderLeaves,
    pub(crate) trainable: bool,
    arc_dep_w: Var,
    arc_dep_b: Var,
    arc_head_w: Var,
    arc_head_b: Var,
    arc_u: Var,
    arc_v: Var,
    lab_dep_w: Var,
    lab_dep_b: Var,
    lab_head_w: Var,
    lab_head_b: Var,
    lab_u: Vec<Var>,
    lab_bias: Var,
}

impl ParserModel {
    /// Initializes an untrained parser over a fixed vocabulary, label set
    /// and character inventory. `pretrained` optionally seeds (and freezes)
    /// the word-embedding table.
    pub fn init(
        vocab: &TagVocabulary,
        labels: Vec<String>,
        chars: Vec<char>,
        config: ParserConfig,
        pretrained: Option<&HashMap<String, Vec<f64>>>,
        seed: u64,
    ) -> Result<ParserModel> {
        if labels.is_empty() {
            return Err(Error::Argument("parser needs a non-empty label set".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x9a25]));
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
        let (a, b) = (config.arc_mlp, config.label_mlp);
        let scorer = ScorerIds {
            arc_dep_w: store.add("arc_dep.w", nn::xavier(&mut rng, h, a)),
            arc_dep_b: store.add("arc_dep.b", Array2::zeros((1, a))),
            arc_head_w: store.add("arc_head.w", nn::xavier(&mut rng, h, a)),
            arc_head_b: store.add("arc_head.b", Array2::zeros((1, a))),
            arc_u: store.add("arc.u", nn::xavier(&mut rng, a, a)),
            arc_v: store.add("arc.v", nn::xavier(&mut rng, a, 1)),
            lab_dep_w: store.add("lab_dep.w", nn::xavier(&mut rng, h, b)),
            lab_dep_b: store.add("lab_dep.b", Array2::zeros((1, b))),
            lab_head_w: store.add("lab_head.w", nn::xavier(&mut rng, h, b)),
            lab_head_b: store.add("lab_head.b", Array2::zeros((1, b))),
            lab_u: labels
                .iter()
                .enumerate()
                .map(|(l, _)| store.add(&format!("lab.u{l}"), nn::xavier(&mut rng, b, b)))
                .collect(),
            lab_bias: store.add("lab.bias", Array2::zeros((1, labels.len()))),
        };
        let label_index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Ok(ParserModel {
            config,
            labels,
            vocab_fingerprint: vocab.fingerprint(),
            encoder,
            scorer,
            store,
            frozen: false,
            label_index,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.encoder.vocab_size()
    }

    pub fn words(&self) -> &[String] {
        &self.encoder.words
    }

    pub fn word_id(&self, form: &str) -> Option<usize> {
        self.encoder.word_id(form)
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.label_index.get(label).copied()
    }

    /// Marks every parameter read-only. Training code refuses to touch a
    /// frozen model's parameters; [`ParserModel::checksum`] proves it.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Content hash over all parameter values.
    pub fn checksum(&self) -> String {
        self.store.checksum()
    }

    /// Mutable parameter access, refused once frozen. Kept for the contract
    /// test; production code never mutates a parser after training.
    #[cfg(test)]
    pub(crate) fn store_mut(&mut self) -> Result<&mut ParamStore> {
        if self.frozen {
            return Err(Error::Contract("attempted to mutate a frozen parser".into()));
        }
        Ok(&mut self.store)
    }

    pub(crate) fn encoder(&self) -> &SentenceEncoder {
        &self.encoder
    }

    pub(crate) fn leaves(&self, tape: &mut Tape, trainable: bool) -> ParserLeaves {
        let trainable = trainable && !self.frozen;
        let s = &self.scorer;
        ParserLeaves {
            enc: self.encoder.leaves(tape, &self.store, trainable),
            trainable,
            arc_dep_w: self.store.leaf(tape, s.arc_dep_w, trainable),
            arc_dep_b: self.store.leaf(tape, s.arc_dep_b, trainable),
            arc_head_w: self.store.leaf(tape, s.arc_head_w, trainable),
            arc_head_b: self.store.leaf(tape, s.arc_head_b, trainable),
            arc_u: self.store.leaf(tape, s.arc_u, trainable),
            arc_v: self.store.leaf(tape, s.arc_v, trainable),
            lab_dep_w: self.store.leaf(tape, s.lab_dep_w, trainable),
            lab_dep_b: self.store.leaf(tape, s.lab_dep_b, trainable),
            lab_head_w: self.store.leaf(tape, s.lab_head_w, trainable),
            lab_head_b: self.store.leaf(tape, s.lab_head_b, trainable),
            lab_u: s.lab_u.iter().map(|&id| self.store.leaf(tape, id, trainable)).collect(),
            lab_bias: self.store.leaf(tape, s.lab_bias, trainable),
        }
    }

    /// Builds the scoring graph of one sentence on `tape`. The root position
    /// is prepended internally; `arc` is (n, n+1).
    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        forms: &[&str],
        tags: &[&str],
        word: WordInput,
        dropout: Option<&LstmDropout>,
        trainable: bool,
    ) -> Result<(ParserLeaves, Forward)> {
        let pl = self.leaves(tape, trainable);
        let fwd = self.forward_with_leaves(tape, &pl, forms, tags, word, dropout)?;
        Ok((pl, fwd))
    }

    /// [`ParserModel::forward`] over pre-built leaves, so callers can wire
    /// their own differentiable word channels through `pl.enc` first.
    pub(crate) fn forward_with_leaves(
        &self,
        tape: &mut Tape,
        pl: &ParserLeaves,
        forms: &[&str],
        tags: &[&str],
        word: WordInput,
        dropout: Option<&LstmDropout>,
    ) -> Result<Forward> {
        let n = forms.len();
        if n == 0 {
            return Err(Error::Argument("cannot score an empty sentence".into()));
        }
        if tags.len() != n {
            return Err(Error::Argument(format!("{n} forms but {} tags", tags.len())));
        }
        let mut dense_leaves = Vec::new();
        let mut rows = Vec::with_capacity(n + 1);
        rows.push(self.encoder.root_vector(tape, &pl.enc));
        for i in 0..n {
            let word_channel = match &word {
                WordInput::Forms => self.encoder.word_channel(tape, &pl.enc, forms[i]),
                WordInput::Dense(vecs) => {
                    if vecs.len() != n {
                        return Err(Error::Argument(format!(
                            "{n} tokens but {} word vectors",
                            vecs.len()
                        )));
                    }
                    let (leaf, channel) =
                        self.encoder.word_channel_dense(tape, &pl.enc, &vecs[i])?;
                    dense_leaves.push(leaf);
                    channel
                }
                WordInput::Channels(vars) => {
                    if vars.len() != n {
                        return Err(Error::Argument(format!(
                            "{n} tokens but {} word channels",
                            vars.len()
                        )));
                    }
                    vars[i]
                }
            };
            rows.push(self.encoder.token_vector(tape, &pl.enc, word_channel, forms[i], tags[i]));
        }
        let hidden = self.encoder.run(tape, &self.store, &rows, dropout, pl.trainable);
        let h_all = tape.concat_rows(&hidden); // (n+1, 2H), row 0 = root
        let h_toks = tape.slice_rows(h_all, 1, n + 1); // (n, 2H)

        let mlp = |tape: &mut Tape, x: Var, w: Var, b: Var| {
            let z = tape.matmul(x, w);
            let z = tape.add_row(z, b);
            tape.relu(z)
        };
        let arc_dep = mlp(tape, h_toks, pl.arc_dep_w, pl.arc_dep_b); // (n, a)
        let arc_head = mlp(tape, h_all, pl.arc_head_w, pl.arc_head_b); // (n+1, a)
        let du = tape.matmul(arc_dep, pl.arc_u);
        let bilinear = tape.matmul_nt(du, arc_head); // (n, n+1)
        let head_bias = tape.matmul(arc_head, pl.arc_v); // (n+1, 1)
        let head_bias = tape.transpose(head_bias); // (1, n+1)
        let arc = tape.add_row(bilinear, head_bias);

        let lab_dep = mlp(tape, h_toks, pl.lab_dep_w, pl.lab_dep_b); // (n, b)
        let lab_head = mlp(tape, h_all, pl.lab_head_w, pl.lab_head_b); // (n+1, b)
        Ok(Forward { n, dense_leaves, arc, lab_dep, lab_head })
    }

    /// Log-probability of a gold tree under the scores: per-token
    /// log-softmax of the gold head plus log-softmax of the gold label at
    /// the gold head. Returns a scalar variable.
    pub(crate) fn gold_logprob(
        &self,
        tape: &mut Tape,
        pl: &ParserLeaves,
        fwd: &Forward,
        gold: &DepTree,
    ) -> Result<Var> {
        let n = fwd.n;
        if gold.len() != n {
            return Err(Error::Argument(format!(
                "gold tree has {} tokens, scores cover {n}",
                gold.len()
            )));
        }
        let mut label_ids = Vec::with_capacity(n);
        for (i, (&h, lab)) in gold.heads.iter().zip(&gold.labels).enumerate() {
            if h > n {
                return Err(Error::Argument(format!(
                    "gold head {h} of token {} is out of range",
                    i + 1
                )));
            }
            let id = self.label_id(lab).ok_or_else(|| {
                Error::Argument(format!("relation label {lab:?} is not in the model"))
            })?;
            label_ids.push(id);
        }
        let arc_lp = tape.log_softmax_row(fwd.arc);
        let arc_cells: Vec<(usize, usize)> =
            gold.heads.iter().enumerate().map(|(i, &h)| (i, h)).collect();
        let arc_ll = tape.select_sum(arc_lp, &arc_cells);

        let head_sel = tape.gather_rows(fwd.lab_head, &gold.heads); // (n, b)
        let mut cols = Vec::with_capacity(self.labels.len());
        for &u in &pl.lab_u {
            let t = tape.matmul(fwd.lab_dep, u); // (n, b)
            let m = tape.mul(t, head_sel);
            cols.push(tape.row_sum(m)); // (n, 1)
        }
        let lab_scores = tape.concat_cols(&cols); // (n, L)
        let lab_scores = tape.add_row(lab_scores, pl.lab_bias);
        let lab_lp = tape.log_softmax_row(lab_scores);
        let lab_cells: Vec<(usize, usize)> =
            label_ids.iter().enumerate().map(|(i, &l)| (i, l)).collect();
        let lab_ll = tape.select_sum(lab_lp, &lab_cells);
        Ok(tape.add(arc_ll, lab_ll))
    }

    /// Full arc and label scores of a sentence (evaluation mode).
    pub fn scores(&self, sentence: &Sentence) -> Result<ParseScores> {
        let n = sentence.len();
        let forms = sentence.forms();
        let tags = sentence.tags();
        let mut tape = Tape::new();
        let (pl, fwd) = self.forward(&mut tape, &forms, &tags, WordInput::Forms, None, false)?;
        let arc = tape.value(fwd.arc).to_owned();
        let l_count = self.labels.len();
        let mut labels = Array3::zeros((n, n + 1, l_count));
        let bias = self.store.value(self.scorer.lab_bias).to_owned();
        for (l, &u) in pl.lab_u.iter().enumerate() {
            let t = tape.matmul(fwd.lab_dep, u);
            let full = tape.matmul_nt(t, fwd.lab_head); // (n, n+1)
            let v = tape.value(full);
            for i in 0..n {
                for j in 0..=n {
                    labels[(i, j, l)] = v[(i, j)] + bias[(0, l)];
                }
            }
        }
        Ok(ParseScores { arc, labels, label_names: self.labels.clone() })
    }

    /// Parses a sentence: fills predicted heads and relation labels. The
    /// output tree always satisfies the single-root acyclicity invariant.
    /// Empty sentences pass through unchanged.
    pub fn parse(&self, sentence: &Sentence) -> Result<Sentence> {
        if sentence.is_empty() {
            return Ok(sentence.clone());
        }
        let scores = self.scores(sentence)?;
        let tree = decode_tree(&scores, self.config.decoder);
        let mut out = sentence.clone();
        for (tok, (h, lab)) in
            out.tokens.iter_mut().zip(tree.heads.iter().zip(tree.labels.iter()))
        {
            tok.head = Some(*h);
            tok.deprel = Some(lab.clone());
        }
        Ok(out)
    }

    /// Log-likelihood of a gold tree with the word channel supplied as
    /// probability vectors over the vocabulary (one-hot or relaxed), plus
    /// its gradient with respect to those vectors. The character and tag
    /// channels come from the sentence's surface forms and tags.
    pub fn loglik(
        &self,
        sentence: &Sentence,
        word_inputs: &[Vec<f64>],
        gold: &DepTree,
    ) -> Result<Loglik> {
        let n = sentence.len();
        if word_inputs.len() != n {
            return Err(Error::Argument(format!(
                "sentence has {n} tokens but {} word vectors were given",
                word_inputs.len()
            )));
        }
        for (i, v) in word_inputs.iter().enumerate() {
            if v.len() != self.vocab_size() {
                return Err(Error::Argument(format!(
                    "word vector {} has {} entries, vocabulary has {}",
                    i + 1,
                    v.len(),
                    self.vocab_size()
                )));
            }
            if v.iter().any(|&x| x < 0.0) {
                return Err(Error::Argument(format!(
                    "word vector {} has a negative entry",
                    i + 1
                )));
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > 1e-6 + 1e-9 {
                return Err(Error::Argument(format!(
                    "word vector {} sums to {sum}, expected 1",
                    i + 1
                )));
            }
        }
        let forms = sentence.forms();
        let tags = sentence.tags();
        let mut tape = Tape::new();
        let (pl, fwd) =
            self.forward(&mut tape, &forms, &tags, WordInput::Dense(word_inputs), None, false)?;
        let ll = self.gold_logprob(&mut tape, &pl, &fwd, gold)?;
        let value = tape.scalar(ll);
        let mut grads = tape.backward(ll);
        let word_input_grads = fwd
            .dense_leaves
            .iter()
            .map(|&leaf| {
                grads
                    .take(leaf)
                    .map(|g| g.into_raw_vec())
                    .unwrap_or_else(|| vec![0.0; self.vocab_size()])
            })
            .collect();
        Ok(Loglik { value, word_input_grads })
    }

    // --- persistence -------------------------------------------------------

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = ParserMeta {
            config: self.config.clone(),
            labels: self.labels.clone(),
            encoder: self.encoder.clone(),
            scorer: self.scorer.clone(),
            frozen: self.frozen,
            vocab_fingerprint: self.vocab_fingerprint.clone(),
        };
        let json = serde_json::to_string(&meta)
            .map_err(|e| Error::Checkpoint(format!("could not serialize parser meta: {e}")))?;
        nn::write_checkpoint(path, PARSER_MAGIC, &json, &self.store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ParserModel> {
        let (json, store) = nn::read_checkpoint(path, PARSER_MAGIC)?;
        let mut meta: ParserMeta = serde_json::from_str(&json)
            .map_err(|e| Error::Checkpoint(format!("bad parser meta: {e}")))?;
        meta.encoder.rebuild_index();
        let label_index =
            meta.labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Ok(ParserModel {
            config: meta.config,
            labels: meta.labels,
            vocab_fingerprint: meta.vocab_fingerprint,
            encoder: meta.encoder,
            scorer: meta.scorer,
            store,
            frozen: meta.frozen,
            label_index,
        })
    }
}

/// Value and word-input gradient of one log-likelihood evaluation.
pub struct Loglik {
    pub value: f64,
    /// `word_input_grads[i][w]` = ∂loglik/∂word_inputs[i][w].
    pub word_input_grads: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

/// Decodes scores into a valid tree (single root, acyclic) and labels each
/// arc by its argmax relation.
pub fn decode_tree(scores: &ParseScores, decoder: DecoderKind) -> DepTree {
    let heads = match decoder {
        DecoderKind::Greedy => greedy_decode(&scores.arc),
        DecoderKind::Mst => mst_decode(&scores.arc),
    };
    let labels = heads
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let l_count = scores.labels.dim().2;
            let mut best = 0usize;
            for l in 1..l_count {
                if scores.labels[(i, h, l)] > scores.labels[(i, h, best)] {
                    best = l;
                }
            }
            scores.label_names.get(best).cloned().unwrap_or_else(|| "_".to_string())
        })
        .collect();
    DepTree { heads, labels }
}

/// Greedy argmax heads, then repair: exactly one token attaches to the
/// root, and every other token is (transitively) connected to it. Repairs
/// always pick the highest-scoring edge into the already-connected part, so
/// each pass strictly grows the connected set.
fn greedy_decode(arc: &Array2<f64>) -> Vec<usize> {
    let n = arc.nrows();
    if n == 0 {
        return Vec::new();
    }
    let argmax = |i: usize, allow: &dyn Fn(usize) -> bool| -> usize {
        let mut best = usize::MAX;
        let mut bs = f64::NEG_INFINITY;
        for j in 0..=n {
            if j != i + 1 && allow(j) && arc[(i, j)] > bs {
                bs = arc[(i, j)];
                best = j;
            }
        }
        best
    };
    let mut heads: Vec<usize> = (0..n).map(|i| argmax(i, &|_| true)).collect();

    // Single root: keep the best root attachment, reassign the rest.
    let root_score = |i: &usize| arc[(*i, 0)];
    let keep = (0..n)
        .filter(|&i| heads[i] == 0)
        .max_by(|a, b| root_score(a).total_cmp(&root_score(b)))
        .unwrap_or_else(|| {
            (0..n).max_by(|a, b| root_score(a).total_cmp(&root_score(b))).expect("n >= 1")
        });
    for i in 0..n {
        if i == keep {
            heads[i] = 0;
        } else if heads[i] == 0 {
            heads[i] = argmax(i, &|j| j != 0);
        }
    }

    // Connect everything to the root.
    loop {
        let mut connected = vec![false; n];
        for start in 0..n {
            let mut seen = vec![false; n];
            let mut cur = start;
            loop {
                if seen[cur] {
                    break; // cycle: disconnected
                }
                seen[cur] = true;
                match heads[cur] {
                    0 => {
                        connected[start] = true;
                        break;
                    }
                    h => {
                        if connected[h - 1] {
                            connected[start] = true;
                            break;
                        }
                        cur = h - 1;
                    }
                }
            }
        }
        if connected.iter().all(|&c| c) {
            return heads;
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for u in (0..n).filter(|&u| !connected[u]) {
            for w in 1..=n {
                if w == u + 1 || !connected[w - 1] {
                    continue;
                }
                let s = arc[(u, w)];
                if best.map_or(true, |(_, _, bs)| s > bs) {
                    best = Some((u, w, s));
                }
            }
        }
        let (u, w, _) = best.expect("the connected part always offers a head");
        heads[u] = w;
    }
}

/// Exact maximum spanning arborescence with a single root attachment:
/// Chu-Liu/Edmonds run once per candidate root token, best total score wins.
fn mst_decode(arc: &Array2<f64>) -> Vec<usize> {
    let n = arc.nrows();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![0];
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..n {
        let mut w = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
        for d in 1..=n {
            for h in 0..=n {
                if h == d {
                    continue;
                }
                if h == 0 {
                    if d == r + 1 {
                        w[0][d] = arc[(d - 1, 0)];
                    }
                } else {
                    w[h][d] = arc[(d - 1, h)];
                }
            }
        }
        if let Some(parents) = chu_liu_edmonds(&w) {
            let score: f64 = (1..=n).map(|d| w[parents[d]][d]).sum();
            if best.as_ref().map_or(true, |(bs, _)| score > *bs) {
                best = Some((score, parents));
            }
        }
    }
    let (_, parents) = best.expect("a fully connected score matrix always has a spanning tree");
    (1..=n).map(|d| parents[d]).collect()
}

/// Chu-Liu/Edmonds maximum arborescence rooted at node 0 on a dense weight
/// matrix `w[h][d]` (`-inf` = no edge). Returns `parents` (index 0 unused),
/// or `None` when some node has no incoming edge.
fn chu_liu_edmonds(w: &[Vec<f64>]) -> Option<Vec<usize>> {
    let m = w.len();
    let mut parent = vec![0usize; m];
    for d in 1..m {
        let mut bh = usize::MAX;
        let mut bs = f64::NEG_INFINITY;
        for h in 0..m {
            if h != d && w[h][d] > bs {
                bs = w[h][d];
                bh = h;
            }
        }
        if bh == usize::MAX {
            return None;
        }
        parent[d] = bh;
    }
    let cycle = match find_cycle(&parent) {
        None => return Some(parent),
        Some(c) => c,
    };
    let in_cycle = |x: usize| cycle.contains(&x);

    // Contract the cycle into one supernode and renumber.
    let mut old_of = Vec::with_capacity(m - cycle.len() + 1); // new id -> old id
    let mut new_of = vec![usize::MAX; m];
    for old in 0..m {
        if !in_cycle(old) {
            new_of[old] = old_of.len();
            old_of.push(old);
        }
    }
    let super_id = old_of.len();
    let m2 = super_id + 1;
    let neg = f64::NEG_INFINITY;
    let mut w2 = vec![vec![neg; m2]; m2];
    // enter[h2] = the cycle node whose incoming edge from old h is swapped in
    let mut enter = vec![usize::MAX; m2];
    // leave[d2] = the cycle node supplying the outgoing edge to old d
    let mut leave = vec![usize::MAX; m2];
    for h in 0..m {
        for d in 1..m {
            if h == d || w[h][d] == neg {
                continue;
            }
            match (in_cycle(h), in_cycle(d)) {
                (false, false) => {
                    let (h2, d2) = (new_of[h], new_of[d]);
                    if d2 != 0 && w[h][d] > w2[h2][d2] {
                        w2[h2][d2] = w[h][d];
                    }
                }
                (false, true) => {
                    let h2 = new_of[h];
                    let gain = w[h][d] - w[parent[d]][d];
                    if gain > w2[h2][super_id] {
                        w2[h2][super_id] = gain;
                        enter[h2] = d;
                    }
                }
                (true, false) => {
                    let d2 = new_of[d];
                    if d2 != 0 && w[h][d] > w2[super_id][d2] {
                        w2[super_id][d2] = w[h][d];
                        leave[d2] = h;
                    }
                }
                (true, true) => {}
            }
        }
    }
    let parent2 = chu_liu_edmonds(&w2)?;

    // Expand back to the original node set.
    let mut out = parent.clone(); // cycle nodes keep their cycle parents
    for d2 in 1..m2 {
        if d2 == super_id {
            continue;
        }
        let d = old_of[d2];
        out[d] = if parent2[d2] == super_id { leave[d2] } else { old_of[parent2[d2]] };
    }
    let h2 = parent2[super_id];
    let broken = enter[h2];
    debug_assert_ne!(broken, usize::MAX);
    out[broken] = if h2 == super_id { unreachable!("supernode cannot head itself") } else { old_of[h2] };
    Some(out)
}

/// First cycle (as a node list) in a parent assignment, if any.
fn find_cycle(parent: &[usize]) -> Option<Vec<usize>> {
    let m = parent.len();
    // 0 = unvisited, 1 = on the current path, 2 = done
    let mut state = vec![0u8; m];
    state[0] = 2;
    for start in 1..m {
        if state[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = start;
        while state[cur] == 0 {
            state[cur] = 1;
            path.push(cur);
            cur = parent[cur];
        }
        if state[cur] == 1 {
            let pos = path.iter().position(|&x| x == cur).expect("cur is on the path");
            let cycle: Vec<usize> = path[pos..].to_vec();
            return Some(cycle);
        }
        for x in path {
            state[x] = 2;
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParserTrainConfig {
    pub model: ParserConfig,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Optional pretrained word-vector file; when set, the word table is
    /// initialized from it and frozen.
    pub embeddings: Option<std::path::PathBuf>,
}

impl ParserTrainConfig {
    pub fn desk() -> Self {
        ParserTrainConfig {
            model: ParserConfig::desk(),
            optimizer: AdamConfig::default(),
            epochs: 8,
            batch_size: 32,
            seed: 1,
            embeddings: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParserEpochRecord {
    pub epoch: usize,
    /// Mean per-token negative log-likelihood over the training set.
    pub train_loss: f64,
    pub dev_uas: f64,
    pub dev_las: f64,
    /// True when this epoch's parameters were kept as the final model.
    pub best: bool,
}

/// Trains a parser and returns the epoch whose dev UAS was best, along with
/// the per-epoch training records. Every sentence must carry a gold tree.
pub fn train_parser(
    train: &[Sentence],
    dev: &[Sentence],
    config: &ParserTrainConfig,
) -> Result<(ParserModel, Vec<ParserEpochRecord>)> {
    if train.is_empty() {
        return Err(Error::Argument("training corpus is empty".into()));
    }
    let golds = |corpus: &[Sentence]| -> Result<Vec<DepTree>> {
        corpus
            .iter()
            .map(|s| {
                s.validate()?;
                s.gold_tree().ok_or_else(|| {
                    Error::Argument(format!("sentence {} has no gold tree", s.id))
                })
            })
            .collect()
    };
    let train_gold = golds(train)?;
    let dev_gold = golds(dev)?;

    let vocab = TagVocabulary::build(train);
    let mut labels: Vec<String> = train
        .iter()
        .flat_map(|s| s.tokens.iter().filter_map(|t| t.deprel.clone()))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    labels.sort();
    let chars = nn::corpus_chars(train);
    let pretrained = match &config.embeddings {
        Some(path) => {
            let (dim, table) = nn::read_embeddings_file(path)?;
            if dim != config.model.encoder.word_dim {
                return Err(Error::Argument(format!(
                    "embedding file is {dim}-dimensional, encoder expects {}",
                    config.model.encoder.word_dim
                )));
            }
            Some(table)
        }
        None => None,
    };
    let mut model = ParserModel::init(
        &vocab,
        labels,
        chars,
        config.model.clone(),
        pretrained.as_ref(),
        config.seed,
    )?;
    let mut adam = Adam::new(config.optimizer.clone(), model.store.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=config.epochs {
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[0x5f1e, epoch as u64]));
        order.shuffle(&mut shuffle_rng);
        let mut nll_sum = 0.0;
        let mut token_sum = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch_tokens: usize = chunk.iter().map(|&i| train[i].len()).sum();
            if batch_tokens == 0 {
                continue;
            }
            let results: Vec<(f64, GradMap)> = chunk
                .par_iter()
                .map(|&i| {
                    sentence_gradients(
                        &model,
                        &train[i],
                        &train_gold[i],
                        batch_tokens,
                        mix_seed(config.seed, &[0xd307, epoch as u64, i as u64]),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = GradMap::new(model.store.len());
            for (nll, g) in results {
                nll_sum += nll;
                grads.merge(g);
            }
            token_sum += batch_tokens;
            adam.step(&mut model.store, &mut grads);
        }
        let (dev_uas, dev_las) = evaluate_dev(&model, dev, &dev_gold)?;
        // Ties go to the later epoch: equal dev accuracy, more training.
        let is_best = best.as_ref().map_or(true, |(bu, _, _)| dev_uas >= *bu);
        if is_best {
            best = Some((dev_uas, epoch, model.store.clone()));
        }
        let train_loss = if token_sum == 0 { 0.0 } else { nll_sum / token_sum as f64 };
        log::info!(
            "parser epoch {epoch}: loss {train_loss:.4}, dev UAS {dev_uas:.2}, LAS {dev_las:.2}"
        );
        records.push(ParserEpochRecord { epoch, train_loss, dev_uas, dev_las, best: is_best });
    }
    if let Some((_, best_epoch, store)) = best {
        model.store = store;
        for r in &mut records {
            r.best = r.epoch == best_epoch;
        }
    }
    Ok((model, records))
}

/// Loss and parameter gradients of one sentence; the loss is scaled so
/// summing over the batch gives the mean per-token negative log-likelihood.
fn sentence_gradients(
    model: &ParserModel,
    sentence: &Sentence,
    gold: &DepTree,
    batch_tokens: usize,
    dropout_seed: u64,
) -> Result<(f64, GradMap)> {
    let forms = sentence.forms();
    let tags = sentence.tags();
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let dropout = model.encoder.sample_dropout(&mut rng);
    let (pl, fwd) = model.forward(&mut tape, &forms, &tags, WordInput::Forms, Some(&dropout), true)?;
    let ll = model.gold_logprob(&mut tape, &pl, &fwd, gold)?;
    let nll = tape.neg(ll);
    let loss = tape.scale(nll, 1.0 / batch_tokens as f64);
    let mut grads = tape.backward(loss);
    let mut map = GradMap::new(model.store.len());
    map.absorb(&tape, &mut grads);
    Ok((tape.scalar(nll), map))
}

fn evaluate_dev(
    model: &ParserModel,
    dev: &[Sentence],
    gold: &[DepTree],
) -> Result<(f64, f64)> {
    if dev.is_empty() {
        return Ok((0.0, 0.0));
    }
    let parsed: Vec<Sentence> =
        dev.par_iter().map(|s| model.parse(s)).collect::<Result<Vec<_>>>()?;
    let predicted: Vec<DepTree> =
        parsed.iter().map(|s| s.gold_tree().expect("parse fills heads")).collect();
    let scores = attachment_scores(dev, gold, &predicted, &ScoringPolicy::default())?;
    Ok((scores.uas, scores.las))
}

// ---------------------------------------------------------------------------
// External parser adapter
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdapterMode {
    /// CoNLL-U in, CoNLL-U with heads and relations out.
    Dependency,
    /// One tokenized sentence per line in, one bracketed tree per line out.
    Constituency,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalParserAdapter {
    /// Command and arguments of the external process.
    pub command: Vec<String>,
    pub mode: AdapterMode,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

pub enum ExternalParse {
    Dependencies(Vec<Sentence>),
    Constituencies(Vec<ConstituencyTree>),
}

/// Sends sentences to an external parser process and validates what comes
/// back: token counts and forms must be preserved, and every tree must be
/// well-formed. Protocol violations surface as adapter errors carrying a
/// bounded excerpt of the raw response.
pub fn external_parse(
    adapter: &ExternalParserAdapter,
    sentences: &[Sentence],
) -> Result<ExternalParse> {
    if adapter.command.is_empty() {
        return Err(Error::Argument("external parser command is empty".into()));
    }
    let mut input = Vec::new();
    match adapter.mode {
        AdapterMode::Dependency => corpus::write_conllu(&mut input, sentences)?,
        AdapterMode::Constituency => {
            for s in sentences {
                input.extend_from_slice(s.forms().join(" ").as_bytes());
                input.push(b'\n');
            }
        }
    }
    let (stdout, stderr) = run_with_timeout(
        &adapter.command,
        input,
        Duration::from_secs(adapter.timeout_secs),
    )?;
    let adapter_err = |msg: String| Error::Adapter { msg, excerpt: excerpt_of(&stdout, &stderr) };

    match adapter.mode {
        AdapterMode::Dependency => {
            let parsed = corpus::read_conllu(&stdout[..], &corpus::ConlluConfig::default())
                .map_err(|e| adapter_err(format!("response is not valid CoNLL-U: {e}")))?;
            if parsed.len() != sentences.len() {
                return Err(adapter_err(format!(
                    "sent {} sentences, received {}",
                    sentences.len(),
                    parsed.len()
                )));
            }
            for (orig, got) in sentences.iter().zip(&parsed) {
                if got.forms() != orig.forms() {
                    return Err(adapter_err(format!(
                        "surface forms of sentence {} were altered",
                        orig.id
                    )));
                }
                if got.gold_tree().is_none() {
                    return Err(adapter_err(format!(
                        "sentence {} came back without a complete tree",
                        orig.id
                    )));
                }
                got.validate().map_err(|e| adapter_err(format!("invalid tree: {e}")))?;
            }
            Ok(ExternalParse::Dependencies(parsed))
        }
        AdapterMode::Constituency => {
            let trees = corpus::read_bracketed(&stdout[..])
                .map_err(|e| adapter_err(format!("response is not a bracketed forest: {e}")))?;
            if trees.len() != sentences.len() {
                return Err(adapter_err(format!(
                    "sent {} sentences, received {} trees",
                    sentences.len(),
                    trees.len()
                )));
            }
            for (orig, tree) in sentences.iter().zip(&trees) {
                tree.validate().map_err(|e| adapter_err(format!("invalid tree: {e}")))?;
                let leaves = tree.leaf_forms();
                if leaves != orig.forms() {
                    return Err(adapter_err(format!(
                        "leaves of sentence {} do not match its tokens",
                        orig.id
                    )));
                }
            }
            Ok(ExternalParse::Constituencies(trees))
        }
    }
}

/// Runs a command with the given stdin, enforcing a wall-clock timeout.
/// Returns captured stdout and stderr.
pub(crate) fn run_with_timeout(
    command: &[String],
    input: Vec<u8>,
    timeout: Duration,
) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut cmd = Command::new(&command[0]);
    cmd.args(&command[1..]).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
    let mut child = cmd.spawn().map_err(|e| Error::Adapter {
        msg: format!("could not spawn {:?}: {e}", command[0]),
        excerpt: String::new(),
    })?;

    let mut stdin = child.stdin.take().expect("stdin is piped");
    let writer = std::thread::spawn(move || {
        use std::io::Write;
        let _ = stdin.write_all(&input);
        // Dropping stdin closes the pipe so the child sees end-of-input.
    });
    let stdout_buf = Arc::new(Mutex::new(Vec::new()));
    let stderr_buf = Arc::new(Mutex::new(Vec::new()));
    let mut out_pipe = child.stdout.take().expect("stdout is piped");
    let mut err_pipe = child.stderr.take().expect("stderr is piped");
    let out_clone = Arc::clone(&stdout_buf);
    let err_clone = Arc::clone(&stderr_buf);
    let out_reader = std::thread::spawn(move || {
        let _ = out_pipe.read_to_end(&mut out_clone.lock().expect("reader lock"));
    });
    let err_reader = std::thread::spawn(move || {
        let _ = err_pipe.read_to_end(&mut err_clone.lock().expect("reader lock"));
    });

    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {
                if start.elapsed() > timeout {
                    let _ = child.kill();
                    let _ = child.wait();
                    let _ = writer.join();
                    let _ = out_reader.join();
                    let _ = err_reader.join();
                    let err = stderr_buf.lock().expect("lock").clone();
                    return Err(Error::Adapter {
                        msg: format!(
                            "external process timed out after {} seconds",
                            timeout.as_secs_f64()
                        ),
                        excerpt: excerpt_of(&[], &err),
                    });
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => {
                return Err(Error::Adapter {
                    msg: format!("could not wait on external process: {e}"),
                    excerpt: String::new(),
                })
            }
        }
    };
    let _ = writer.join();
    let _ = out_reader.join();
    let _ = err_reader.join();
    let stdout = stdout_buf.lock().expect("lock").clone();
    let stderr = stderr_buf.lock().expect("lock").clone();
    if !status.success() {
        return Err(Error::Adapter {
            msg: format!("external process exited with {status}"),
            excerpt: excerpt_of(&stdout, &stderr),
        });
    }
    Ok((stdout, stderr))
}

/// Bounded human-readable slice of a raw response for error messages.
pub(crate) fn excerpt_of(stdout: &[u8], stderr: &[u8]) -> String {
    let pick = if stderr.is_empty() { stdout } else { stderr };
    String::from_utf8_lossy(pick).chars().take(400).collect()
}
