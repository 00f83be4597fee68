//! Neural building blocks shared by the parser, the obfuscator and the
//! trained attacker: a named parameter store, initializers, the Adam
//! optimizer with global-norm clipping, LSTM/BiLSTM encoders with
//! variational dropout, a character convolution, embedding-file loading and
//! a versioned binary checkpoint format.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::autodiff::{ParamId, Tape, Var};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

/// A named, ordered collection of trainable matrices.
///
/// Values are held behind `Arc` so a forward pass can register cheap shared
/// leaves on a [`Tape`]; the optimizer mutates them in place between passes
/// (via copy-on-write, which never copies once the tapes are dropped).
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Arc<Array2<f64>>)>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Array2<f64>) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name:?}");
        let id = self.entries.len();
        self.entries.push((name.to_string(), Arc::new(value)));
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id].0
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id].1
    }

    pub fn share(&self, id: ParamId) -> Arc<Array2<f64>> {
        Arc::clone(&self.entries[id].1)
    }

    pub fn set(&mut self, id: ParamId, value: Array2<f64>) {
        self.entries[id].1 = Arc::new(value);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array2<f64>)> {
        self.entries.iter().enumerate().map(|(i, (n, v))| (i, n.as_str(), v.as_ref()))
    }

    /// Content hash over names, shapes and exact bit patterns, in id order.
    /// Two stores with the same checksum hold bit-identical parameters.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, value) in &self.entries {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            hasher.update((value.nrows() as u64).to_le_bytes());
            hasher.update((value.ncols() as u64).to_le_bytes());
            for &x in value.iter() {
                hasher.update(x.to_bits().to_le_bytes());
            }
        }
        crate::corpus::hex_digest(hasher)
    }

    /// Registers the parameter as a tape leaf. Trainable leaves take part in
    /// the backward pass under their [`ParamId`]; frozen leaves never
    /// accumulate gradient.
    pub fn leaf(&self, tape: &mut Tape, id: ParamId, trainable: bool) -> Var {
        if trainable {
            tape.param(self.share(id), id)
        } else {
            tape.shared(self.share(id), false)
        }
    }
}

// ---------------------------------------------------------------------------
// Gradients and the optimizer
// ---------------------------------------------------------------------------

/// Per-parameter gradient accumulator (dense over [`ParamId`]s).
#[derive(Debug, Clone)]
pub struct GradMap {
    grads: Vec<Option<Array2<f64>>>,
}

impl GradMap {
    pub fn new(n_params: usize) -> Self {
        GradMap { grads: (0..n_params).map(|_| None).collect() }
    }

    /// Moves the gradients of every registered parameter leaf of `tape` into
    /// this map, accumulating on repeats.
    pub fn absorb(&mut self, tape: &Tape, grads: &mut crate::autodiff::Gradients) {
        for &(var, id) in tape.param_leaves() {
            if let Some(g) = grads.take(var) {
                self.add(id, g);
            }
        }
    }

    pub fn add(&mut self, id: ParamId, g: Array2<f64>) {
        match &mut self.grads[id] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    /// Accumulates another map into this one (used to reduce per-sentence
    /// gradients in a fixed order, keeping results thread-count independent).
    pub fn merge(&mut self, other: GradMap) {
        for (id, g) in other.grads.into_iter().enumerate() {
            if let Some(g) = g {
                self.add(id, g);
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|x| k * x);
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clip applied before the update, if any.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(5.0) }
    }
}

/// Adam with bias correction; moment buffers are created lazily so one
/// optimizer can drive a store where some parameters never receive gradient
/// (e.g. a frozen pretrained channel).
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Option<Array2<f64>>>,
    v: Vec<Option<Array2<f64>>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n_params: usize) -> Self {
        Adam {
            cfg,
            t: 0,
            m: (0..n_params).map(|_| None).collect(),
            v: (0..n_params).map(|_| None).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &mut GradMap) {
        if let Some(clip) = self.cfg.clip_norm {
            let norm = grads.global_norm();
            if norm > clip {
                grads.scale(clip / norm);
            }
        }
        self.t += 1;
        let lr_t = self.cfg.lr * (1.0 - self.cfg.beta2.powi(self.t as i32)).sqrt()
            / (1.0 - self.cfg.beta1.powi(self.t as i32));
        for id in 0..store.len() {
            let Some(g) = grads.get(id) else { continue };
            let dim = store.value(id).dim();
            let m = self.m[id].get_or_insert_with(|| Array2::zeros(dim));
            let v = self.v[id].get_or_insert_with(|| Array2::zeros(dim));
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = self.cfg.beta1 * *m + (1.0 - self.cfg.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = self.cfg.beta2 * *v + (1.0 - self.cfg.beta2) * g * g;
            });
            let value = Arc::make_mut(&mut store.entries[id].1);
            ndarray::Zip::from(value).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr_t * m / (v.sqrt() + self.cfg.eps);
            });
        }
    }
}

// ---------------------------------------------------------------------------
// Initializers and dropout
// ---------------------------------------------------------------------------

/// Xavier/Glorot uniform initialization for weight matrices.
pub fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Small-variance Gaussian initialization for embedding tables.
pub fn embedding_init<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let dist = Normal::new(0.0, 0.1).expect("valid normal");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Inverted-dropout mask: entries are 0 with probability `p`, else
/// `1/(1-p)`, so the expected value of a masked activation is unchanged.
pub fn dropout_mask<R: Rng>(rng: &mut R, p: f64, dim: (usize, usize)) -> Array2<f64> {
    assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
    if p == 0.0 {
        return Array2::from_elem(dim, 1.0);
    }
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn(dim, |_| if rng.gen::<f64>() < p { 0.0 } else { keep })
}

// ---------------------------------------------------------------------------
// LSTM / BiLSTM
// ---------------------------------------------------------------------------

/// One direction of one LSTM layer. Gate order in the stacked weight
/// matrices is input, forget, cell, output.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LstmParams {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let wx = store.add(&format!("{prefix}.wx"), xavier(rng, input, 4 * hidden));
        let wh = store.add(&format!("{prefix}.wh"), xavier(rng, hidden, 4 * hidden));
        // Forget-gate bias starts at 1 so early training does not forget.
        let mut bias = Array2::zeros((1, 4 * hidden));
        bias.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        let b = store.add(&format!("{prefix}.b"), bias);
        LstmParams { wx, wh, b, input, hidden }
    }
}

/// Per-tape leaf handles for one LSTM direction.
#[derive(Clone, Copy)]
pub struct LstmLeaves {
    wx: Var,
    wh: Var,
    b: Var,
    hidden: usize,
}

impl LstmParams {
    pub fn leaves(&self, tape: &mut Tape, store: &ParamStore, trainable: bool) -> LstmLeaves {
        LstmLeaves {
            wx: store.leaf(tape, self.wx, trainable),
            wh: store.leaf(tape, self.wh, trainable),
            b: store.leaf(tape, self.b, trainable),
            hidden: self.hidden,
        }
    }
}

impl LstmLeaves {
    /// One recurrence step: `x` is (1, input), `h`/`c` are (1, hidden).
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = self.hidden;
        let xs = tape.matmul(x, self.wx);
        let hs = tape.matmul(h, self.wh);
        let pre = tape.add(xs, hs);
        let gates = tape.add_row(pre, self.b);
        let i_raw = tape.slice_cols(gates, 0, hd);
        let f_raw = tape.slice_cols(gates, hd, 2 * hd);
        let g_raw = tape.slice_cols(gates, 2 * hd, 3 * hd);
        let o_raw = tape.slice_cols(gates, 3 * hd, 4 * hd);
        let i = tape.sigmoid(i_raw);
        let f = tape.sigmoid(f_raw);
        let g = tape.tanh(g_raw);
        let o = tape.sigmoid(o_raw);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_next = tape.add(fc, ig);
        let c_act = tape.tanh(c_next);
        let h_next = tape.mul(o, c_act);
        (h_next, c_next)
    }
}

/// Variational-dropout masks for a whole BiLSTM pass: one input mask and one
/// hidden-state mask per (layer, direction), reused at every time step.
pub struct LstmDropout {
    /// `masks[layer][direction]` = (input mask, hidden mask).
    masks: Vec<[(Array2<f64>, Array2<f64>); 2]>,
}

/// A multi-layer bidirectional LSTM. Layer 0 consumes `input`-dimensional
/// vectors; each further layer consumes the previous layer's concatenated
/// `2*hidden` outputs. The encoder output dimension is `2*hidden`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BiLstm {
    pub layers: Vec<[LstmParams; 2]>,
    pub input: usize,
    pub hidden: usize,
}

impl BiLstm {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        assert!(layers >= 1);
        let mut all = Vec::with_capacity(layers);
        for l in 0..layers {
            let in_dim = if l == 0 { input } else { 2 * hidden };
            let fwd = LstmParams::init(store, &format!("{prefix}.l{l}.fwd"), in_dim, hidden, rng);
            let bwd = LstmParams::init(store, &format!("{prefix}.l{l}.bwd"), in_dim, hidden, rng);
            all.push([fwd, bwd]);
        }
        BiLstm { layers: all, input, hidden }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Samples one set of variational masks for a sequence (training mode).
    pub fn sample_dropout<R: Rng>(&self, rng: &mut R, p: f64) -> LstmDropout {
        let masks = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, _)| {
                let in_dim = if l == 0 { self.input } else { 2 * self.hidden };
                [
                    (
                        dropout_mask(rng, p, (1, in_dim)),
                        dropout_mask(rng, p, (1, self.hidden)),
                    ),
                    (
                        dropout_mask(rng, p, (1, in_dim)),
                        dropout_mask(rng, p, (1, self.hidden)),
                    ),
                ]
            })
            .collect();
        LstmDropout { masks }
    }

    /// Runs the encoder over a sequence of (1, input) vectors, returning one
    /// (1, 2*hidden) vector per position. `dropout` enables variational
    /// dropout (training mode); `None` is deterministic evaluation.
    pub fn run(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[Var],
        dropout: Option<&LstmDropout>,
        trainable: bool,
    ) -> Vec<Var> {
        let n = inputs.len();
        let mut seq: Vec<Var> = inputs.to_vec();
        for (l, dirs) in self.layers.iter().enumerate() {
            let mut outputs: Vec<Vec<Var>> = Vec::with_capacity(2);
            for (d, params) in dirs.iter().enumerate() {
                let leaves = params.leaves(tape, store, trainable);
                let masks = dropout.map(|dp| &dp.masks[l][d]);
                let zero_h = tape.constant(Array2::zeros((1, self.hidden)));
                let zero_c = tape.constant(Array2::zeros((1, self.hidden)));
                let (mut h, mut c) = (zero_h, zero_c);
                let mut out = vec![h; n];
                let order: Vec<usize> =
                    if d == 0 { (0..n).collect() } else { (0..n).rev().collect() };
                for t in order {
                    let x = match masks {
                        Some((mx, _)) => tape.mul_const(seq[t], mx.clone()),
                        None => seq[t],
                    };
                    let h_in = match masks {
                        Some((_, mh)) => tape.mul_const(h, mh.clone()),
                        None => h,
                    };
                    let (h2, c2) = leaves.step(tape, x, h_in, c);
                    h = h2;
                    c = c2;
                    out[t] = h;
                }
                outputs.push(out);
            }
            seq = (0..n).map(|t| tape.concat_cols(&[outputs[0][t], outputs[1][t]])).collect();
        }
        seq
    }
}

// ---------------------------------------------------------------------------
// Character convolution
// ---------------------------------------------------------------------------

/// Character-level word encoder: embed characters, slide a width-3
/// convolution (zero-padded), ReLU, then max-pool over positions. Output
/// width equals the kernel count. Unseen characters map to a dedicated row.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CharCnn {
    pub embed: ParamId,
    pub kernel: ParamId,
    pub bias: ParamId,
    pub chars: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, usize>,
    pub dim: usize,
    pub kernels: usize,
}

impl CharCnn {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        mut chars: Vec<char>,
        dim: usize,
        kernels: usize,
        rng: &mut R,
    ) -> Self {
        chars.sort_unstable();
        chars.dedup();
        // Last row of the embedding table is the unknown character.
        let embed =
            store.add(&format!("{prefix}.embed"), embedding_init(rng, chars.len() + 1, dim));
        let kernel = store.add(&format!("{prefix}.kernel"), xavier(rng, 3 * dim, kernels));
        let bias = store.add(&format!("{prefix}.bias"), Array2::zeros((1, kernels)));
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        CharCnn { embed, kernel, bias, chars, index, dim, kernels }
    }

    /// Restores the lookup map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self.chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    }

    fn char_ids(&self, word: &str) -> Vec<usize> {
        word.chars().map(|c| self.index.get(&c).copied().unwrap_or(self.chars.len())).collect()
    }

    /// Per-tape leaf handles (register once, encode many words).
    pub fn leaves(&self, tape: &mut Tape, store: &ParamStore, trainable: bool) -> CharCnnLeaves {
        CharCnnLeaves {
            embed: store.leaf(tape, self.embed, trainable),
            kernel: store.leaf(tape, self.kernel, trainable),
            bias: store.leaf(tape, self.bias, trainable),
        }
    }

    /// Encodes one word to a (1, kernels) vector.
    pub fn encode(&self, tape: &mut Tape, leaves: &CharCnnLeaves, word: &str) -> Var {
        let ids = self.char_ids(word);
        debug_assert!(!ids.is_empty(), "cannot encode an empty word");
        let emb = tape.gather_rows(leaves.embed, &ids);
        let zero = tape.constant(Array2::zeros((1, self.dim)));
        let padded = tape.concat_rows(&[zero, emb, zero]);
        let k = ids.len();
        let left = tape.slice_rows(padded, 0, k);
        let mid = tape.slice_rows(padded, 1, k + 1);
        let right = tape.slice_rows(padded, 2, k + 2);
        let windows = tape.concat_cols(&[left, mid, right]);
        let conv = tape.matmul(windows, leaves.kernel);
        let conv = tape.add_row(conv, leaves.bias);
        let act = tape.relu(conv);
        tape.max_cols(act)
    }
}

#[derive(Clone, Copy)]
pub struct CharCnnLeaves {
    embed: Var,
    kernel: Var,
    bias: Var,
}

/// Collects the distinct characters of a corpus' surface forms (for
/// [`CharCnn::init`]).
pub fn corpus_chars(corpus: &[crate::corpus::Sentence]) -> Vec<char> {
    let mut set: std::collections::BTreeSet<char> = std::collections::BTreeSet::new();
    for s in corpus {
        for t in &s.tokens {
            set.extend(t.form.chars());
        }
    }
    set.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Three-channel sentence encoder
// ---------------------------------------------------------------------------

/// Sizes of the shared sentence encoder: per-word, per-tag and character
/// channels concatenated into a bidirectional recurrent stack whose output
/// is `2 * hidden` per token.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub tag_dim: usize,
    /// Character embedding width and kernel count (the channel output width).
    pub char_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Small sizes for experiments that must finish in minutes.
    pub fn desk() -> Self {
        EncoderConfig { word_dim: 32, tag_dim: 32, char_dim: 32, hidden: 64, layers: 2, dropout: 0.33 }
    }

    /// Full-scale sizes: 100-dim channels and a 3-layer, 512-per-direction
    /// encoder (hidden state 1024). Hours of CPU time, not minutes.
    pub fn large() -> Self {
        EncoderConfig {
            word_dim: 100,
            tag_dim: 100,
            char_dim: 100,
            hidden: 512,
            layers: 3,
            dropout: 0.33,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn channel_dim(&self) -> usize {
        self.word_dim + self.tag_dim + self.char_dim
    }
}

/// The encoder itself: embedding tables (with dedicated unknown and root
/// rows), a character CNN, and the BiLSTM. Sentence models (parser,
/// obfuscator, attacker) each own one.
///
/// Row layout: `word_embed` has `V + 2` rows — vocabulary words in sorted-id
/// order, then the shared unknown-word vector, then the root marker.
/// `pos_embed` mirrors that with `T + 2` rows.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SentenceEncoder {
    pub config: EncoderConfig,
    pub words: Vec<String>,
    pub tags: Vec<String>,
    pub word_embed: ParamId,
    pub pos_embed: ParamId,
    pub char_cnn: CharCnn,
    /// Learned character-channel vector for the artificial root position.
    pub root_char: ParamId,
    pub bilstm: BiLstm,
    /// True when the word table was loaded from a pretrained file and should
    /// stay fixed during training.
    pub word_embed_frozen: bool,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    tag_index: HashMap<String, usize>,
}

/// Per-tape leaf handles for an encoder.
#[derive(Clone, Copy)]
pub struct EncoderLeaves {
    pub word_embed: Var,
    pub pos_embed: Var,
    pub root_char: Var,
    pub char: CharCnnLeaves,
}

impl SentenceEncoder {
    /// Initializes the encoder for a fixed word/tag/character inventory.
    /// When `pretrained` is given, matching rows are copied from it (its
    /// dimension must equal `config.word_dim`) and the table is marked
    /// frozen; all other parameters are randomly initialized.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        words: Vec<String>,
        tags: Vec<String>,
        chars: Vec<char>,
        config: EncoderConfig,
        pretrained: Option<&HashMap<String, Vec<f64>>>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut word_table = embedding_init(rng, words.len() + 2, config.word_dim);
        let mut word_embed_frozen = false;
        if let Some(table) = pretrained {
            for (i, w) in words.iter().enumerate() {
                if let Some(v) = table.get(w) {
                    if v.len() != config.word_dim {
                        return Err(Error::Argument(format!(
                            "pretrained vectors are {}-dimensional, encoder expects {}",
                            v.len(),
                            config.word_dim
                        )));
                    }
                    for (j, &x) in v.iter().enumerate() {
                        word_table[(i, j)] = x;
                    }
                }
            }
            word_embed_frozen = true;
        }
        let word_embed = store.add(&format!("{prefix}.word_embed"), word_table);
        let pos_embed = store.add(
            &format!("{prefix}.pos_embed"),
            embedding_init(rng, tags.len() + 2, config.tag_dim),
        );
        let char_cnn =
            CharCnn::init(store, &format!("{prefix}.char"), chars, config.char_dim, config.char_dim, rng);
        let root_char =
            store.add(&format!("{prefix}.root_char"), embedding_init(rng, 1, config.char_dim));
        let bilstm = BiLstm::init(
            store,
            &format!("{prefix}.lstm"),
            config.channel_dim(),
            config.hidden,
            config.layers,
            rng,
        );
        let word_index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let tag_index = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(SentenceEncoder {
            config,
            words,
            tags,
            word_embed,
            pos_embed,
            char_cnn,
            root_char,
            bilstm,
            word_embed_frozen,
            word_index,
            tag_index,
        })
    }

    /// Restores lookup maps after deserialization.
    pub fn rebuild_index(&mut self) {
        self.word_index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        self.tag_index = self.tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        self.char_cnn.rebuild_index();
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Row of a surface form: its word id, or the unknown-word row.
    pub fn word_row(&self, form: &str) -> usize {
        self.word_index.get(form).copied().unwrap_or(self.words.len())
    }

    pub fn word_id(&self, form: &str) -> Option<usize> {
        self.word_index.get(form).copied()
    }

    /// Row of a tag: its tag id, or the unknown-tag row.
    pub fn tag_row(&self, tag: &str) -> usize {
        self.tag_index.get(tag).copied().unwrap_or(self.tags.len())
    }

    pub fn leaves(&self, tape: &mut Tape, store: &ParamStore, trainable: bool) -> EncoderLeaves {
        EncoderLeaves {
            word_embed: store.leaf(tape, self.word_embed, trainable && !self.word_embed_frozen),
            pos_embed: store.leaf(tape, self.pos_embed, trainable),
            root_char: store.leaf(tape, self.root_char, trainable),
            char: self.char_cnn.leaves(tape, store, trainable),
        }
    }

    /// Word channel of a surface form: one embedding row.
    pub fn word_channel(&self, tape: &mut Tape, leaves: &EncoderLeaves, form: &str) -> Var {
        tape.gather_rows(leaves.word_embed, &[self.word_row(form)])
    }

    /// Differentiable word channel: `dense` is a probability vector over the
    /// vocabulary (not the unknown/root rows); the channel is its matrix
    /// product with the embedding table, so gradients flow back into the
    /// returned input leaf.
    pub fn word_channel_dense(
        &self,
        tape: &mut Tape,
        leaves: &EncoderLeaves,
        dense: &[f64],
    ) -> Result<(Var, Var)> {
        if dense.len() != self.words.len() {
            return Err(Error::Argument(format!(
                "word vector has {} entries, vocabulary has {}",
                dense.len(),
                self.words.len()
            )));
        }
        let leaf = tape.input(Array2::from_shape_vec((1, dense.len()), dense.to_vec()).unwrap());
        let table = tape.slice_rows(leaves.word_embed, 0, self.words.len());
        let channel = tape.matmul(leaf, table);
        Ok((leaf, channel))
    }

    /// Differentiable word channel over an explicit support: `weights` is
    /// (1, m) over `support` word ids.
    pub fn word_channel_support(
        &self,
        tape: &mut Tape,
        leaves: &EncoderLeaves,
        weights: Var,
        support: &[usize],
    ) -> Var {
        let rows = tape.gather_rows(leaves.word_embed, support);
        tape.matmul(weights, rows)
    }

    /// Full input vector of one token: word channel (as provided), tag
    /// channel, character channel of the surface form.
    pub fn token_vector(
        &self,
        tape: &mut Tape,
        leaves: &EncoderLeaves,
        word_channel: Var,
        form: &str,
        tag: &str,
    ) -> Var {
        let tag_channel = tape.gather_rows(leaves.pos_embed, &[self.tag_row(tag)]);
        let char_channel = self.char_cnn.encode(tape, &leaves.char, form);
        tape.concat_cols(&[word_channel, tag_channel, char_channel])
    }

    /// Input vector of the artificial root position.
    pub fn root_vector(&self, tape: &mut Tape, leaves: &EncoderLeaves) -> Var {
        let word = tape.gather_rows(leaves.word_embed, &[self.words.len() + 1]);
        let tag = tape.gather_rows(leaves.pos_embed, &[self.tags.len() + 1]);
        tape.concat_cols(&[word, tag, leaves.root_char])
    }

    pub fn sample_dropout<R: Rng>(&self, rng: &mut R) -> LstmDropout {
        self.bilstm.sample_dropout(rng, self.config.dropout)
    }

    /// Runs the recurrent stack over prepared input vectors.
    pub fn run(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[Var],
        dropout: Option<&LstmDropout>,
        trainable: bool,
    ) -> Vec<Var> {
        self.bilstm.run(tape, store, inputs, dropout, trainable)
    }
}

/// Splitmix-style mixing of a base seed with stream coordinates, for
/// deterministic per-sentence / per-epoch random sources.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base.wrapping_add(0x9e3779b97f4a7c15);
    for &p in parts {
        z ^= p.wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
    }
    z
}

// ---------------------------------------------------------------------------
// Pretrained embedding files
// ---------------------------------------------------------------------------

/// Reads a text embedding file: one `word v1 v2 … vd` line per word. All
/// lines must agree on the dimension; errors name the offending line.
pub fn read_embeddings<R: Read>(reader: R) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let mut dim: Option<usize> = None;
    let mut table = HashMap::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts
            .next()
            .ok_or_else(|| Error::Parse { line: lineno, msg: "empty line".into() })?
            .to_string();
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad number {p:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(Error::Parse { line: lineno, msg: "no vector values".into() });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("dimension {} does not match {}", values.len(), d),
                });
            }
            _ => {}
        }
        table.insert(word, values);
    }
    Ok((dim.unwrap_or(0), table))
}

pub fn read_embeddings_file(path: impl AsRef<Path>) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    read_embeddings(File::open(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_VERSION: u32 = 1;

/// Writes a versioned binary checkpoint: magic, format version, a JSON
/// configuration blob, then every parameter (name, shape, little-endian f64
/// payload) in store order. Bit-exact round trip.
pub fn write_checkpoint(
    path: impl AsRef<Path>,
    magic: &[u8; 4],
    config_json: &str,
    store: &ParamStore,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(magic)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg = config_json.as_bytes();
    w.write_all(&(cfg.len() as u64).to_le_bytes())?;
    w.write_all(cfg)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, name, value) in store.iter() {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&(value.nrows() as u32).to_le_bytes())?;
        w.write_all(&(value.ncols() as u32).to_le_bytes())?;
        for &x in value.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`], verifying magic and
/// version. Returns the configuration JSON and a parameter store with the
/// original names, order and exact values.
pub fn read_checkpoint(path: impl AsRef<Path>, magic: &[u8; 4]) -> Result<(String, ParamStore)> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let bad = |msg: String| Error::Checkpoint(msg);
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(|_| bad("file too short for magic".into()))?;
    if &m != magic {
        return Err(bad(format!("bad magic {m:?}, expected {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let cfg_len = read_u64(&mut r)? as usize;
    let mut cfg = vec![0u8; cfg_len];
    r.read_exact(&mut cfg).map_err(|_| bad("truncated configuration blob".into()))?;
    let config_json =
        String::from_utf8(cfg).map_err(|_| bad("configuration blob is not UTF-8".into()))?;
    let n_params = read_u32(&mut r)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n_params {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| bad("truncated parameter name".into()))?;
        let name =
            String::from_utf8(name).map_err(|_| bad("parameter name is not UTF-8".into()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = vec![0f64; rows * cols];
        let mut buf = [0u8; 8];
        for x in &mut data {
            r.read_exact(&mut buf).map_err(|_| bad(format!("truncated payload of {name:?}")))?;
            *x = f64::from_le_bytes(buf);
        }
        let value = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| bad(format!("bad shape for {name:?}: {e}")))?;
        store.add(&name, value);
    }
    Ok((config_json, store))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::Checkpoint("truncated integer field".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|_| Error::Checkpoint("truncated integer field".into()))?;
    Ok(u64::from_le_bytes(buf))
}
