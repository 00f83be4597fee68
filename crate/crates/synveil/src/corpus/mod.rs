//! Sentences, trees, corpus I/O and tag bookkeeping.
//!
//! Everything downstream (policies, parsers, attackers, metrics) works on the
//! types defined here. A corpus is a list of [`Sentence`]s; each token carries
//! a surface form, a POS tag and optionally a gold dependency head/relation.
//! [`TagVocabulary`] indexes which words occur under which tag — the
//! substitution candidate pools — and [`TagSpectrum`] defines the cumulative
//! five-level hierarchy of sensitive tag classes (names, then common nouns,
//! adjectives, verbs, adverbs).

mod brackets;
mod conllu;

pub use brackets::{
    parse_bracketed, read_bracketed, read_bracketed_file, write_bracketed, write_bracketed_file,
};
pub use conllu::{
    read_conllu, read_conllu_file, write_conllu, write_conllu_file, ConlluConfig, TagColumn,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// A set of POS tags, ordered so iteration is deterministic.
pub type TagSet = BTreeSet<String>;

/// One token of a tagged sentence.
///
/// `head` is a 1-based position of the syntactic head, with `0` meaning the
/// artificial root; `None` means the corpus carries no tree for this token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub form: String,
    pub tag: String,
    pub head: Option<usize>,
    pub deprel: Option<String>,
}

impl Token {
    pub fn new(form: impl Into<String>, tag: impl Into<String>) -> Self {
        Token { form: form.into(), tag: tag.into(), head: None, deprel: None }
    }

    pub fn with_head(mut self, head: usize, deprel: impl Into<String>) -> Self {
        self.head = Some(head);
        self.deprel = Some(deprel.into());
        self
    }
}

/// A tagged sentence, optionally with a gold dependency tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    /// Opaque identifier used in error messages and report records.
    pub id: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>) -> Self {
        Sentence { id: id.into(), tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    pub fn tags(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.tag.as_str()).collect()
    }

    /// The gold tree, if every token carries a head. Tokens without a
    /// relation label get the placeholder label `_`.
    pub fn gold_tree(&self) -> Option<DepTree> {
        let mut heads = Vec::with_capacity(self.len());
        let mut labels = Vec::with_capacity(self.len());
        for tok in &self.tokens {
            heads.push(tok.head?);
            labels.push(tok.deprel.clone().unwrap_or_else(|| "_".to_string()));
        }
        Some(DepTree { heads, labels })
    }

    /// Structural validation: non-empty whitespace-free forms, heads in
    /// range and not self-referential, and — when the sentence is fully
    /// headed — a single root from which every token is reachable.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let fail = |msg: String| -> Result<()> {
            Err(Error::Structure { sentence: self.id.clone(), msg })
        };
        let mut headed = 0usize;
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.form.is_empty() {
                return fail(format!("token {} has an empty form", i + 1));
            }
            if tok.form.chars().any(char::is_whitespace) {
                return fail(format!("token {} contains whitespace: {:?}", i + 1, tok.form));
            }
            if let Some(h) = tok.head {
                headed += 1;
                if h > n {
                    return fail(format!("token {} has out-of-range head {h}", i + 1));
                }
                if h == i + 1 {
                    return fail(format!("token {} is its own head", i + 1));
                }
            }
        }
        if headed == 0 || self.is_empty() {
            return Ok(());
        }
        if headed != n {
            return fail(format!("{headed} of {n} tokens carry heads; expected none or all"));
        }
        let tree = self.gold_tree().expect("all heads present");
        check_tree(&tree.heads).map_err(|msg| Error::Structure { sentence: self.id.clone(), msg })
    }
}

/// A dependency tree over a sentence of `n` tokens: `heads[i]` is the 1-based
/// head position of token `i + 1` (0 = root), `labels[i]` its relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepTree {
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

impl DepTree {
    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// True iff `heads` encodes a well-formed tree: every head in range,
    /// exactly one root, no token its own ancestor.
    pub fn is_well_formed(&self) -> bool {
        check_tree(&self.heads).is_ok()
    }
}

/// Validates a head vector: in-range heads, exactly one root, all tokens
/// reachable from the root (i.e. no cycles). Returns a description of the
/// first violation found.
pub(crate) fn check_tree(heads: &[usize]) -> std::result::Result<(), String> {
    let n = heads.len();
    let mut roots = 0usize;
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(format!("token {} has out-of-range head {h}", i + 1));
        }
        if h == i + 1 {
            return Err(format!("token {} is its own head", i + 1));
        }
        if h == 0 {
            roots += 1;
        }
    }
    if roots != 1 {
        return Err(format!("expected exactly one root, found {roots}"));
    }
    // Walk up from every token; a walk longer than n tokens means a cycle.
    for start in 0..n {
        let mut cur = heads[start];
        let mut steps = 0usize;
        while cur != 0 {
            cur = heads[cur - 1];
            steps += 1;
            if steps > n {
                return Err(format!("cycle reachable from token {}", start + 1));
            }
        }
    }
    Ok(())
}

/// A constituency (phrase-structure) tree. Leaves are token positions,
/// numbered left to right from 0; the surface form is carried along so trees
/// can be serialized without the sentence at hand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstituencyTree {
    Node { label: String, children: Vec<ConstituencyTree> },
    Leaf { index: usize, form: String },
}

impl ConstituencyTree {
    pub fn node(label: impl Into<String>, children: Vec<ConstituencyTree>) -> Self {
        ConstituencyTree::Node { label: label.into(), children }
    }

    pub fn leaf(index: usize, form: impl Into<String>) -> Self {
        ConstituencyTree::Leaf { index, form: form.into() }
    }

    /// Number of leaves under this node.
    pub fn leaf_count(&self) -> usize {
        match self {
            ConstituencyTree::Leaf { .. } => 1,
            ConstituencyTree::Node { children, .. } => {
                children.iter().map(|c| c.leaf_count()).sum()
            }
        }
    }

    /// Leaf forms, left to right.
    pub fn leaf_forms(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            ConstituencyTree::Leaf { form, .. } => out.push(form),
            ConstituencyTree::Node { children, .. } => {
                for c in children {
                    c.collect_leaves(out);
                }
            }
        }
    }

    /// Checks that leaves are numbered 0..n-1 left to right and that every
    /// internal node has at least one child.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0usize;
        self.validate_walk(&mut next)?;
        Ok(())
    }

    fn validate_walk(&self, next: &mut usize) -> Result<()> {
        match self {
            ConstituencyTree::Leaf { index, form } => {
                if *index != *next {
                    return Err(Error::Structure {
                        sentence: String::new(),
                        msg: format!("leaf {form:?} numbered {index}, expected {next}"),
                    });
                }
                *next += 1;
                Ok(())
            }
            ConstituencyTree::Node { label, children } => {
                if children.is_empty() {
                    return Err(Error::Structure {
                        sentence: String::new(),
                        msg: format!("node {label:?} has no children"),
                    });
                }
                for c in children {
                    c.validate_walk(next)?;
                }
                Ok(())
            }
        }
    }
}

/// Word/tag index over a corpus: the full vocabulary `V`, the per-tag pools
/// `V_t` (substitution candidates share the original word's tag), and
/// occurrence counts.
///
/// Word and tag ids are indices into sorted lists, so identical corpora give
/// identical ids regardless of sentence order; [`TagVocabulary::fingerprint`]
/// hashes the contents for checkpoint compatibility checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagVocabulary {
    words: Vec<String>,
    tags: Vec<String>,
    /// `per_tag[t]` = sorted word ids seen under tag `t`.
    per_tag: Vec<Vec<usize>>,
    /// Occurrence counts keyed by (tag id, word id).
    counts: BTreeMap<(usize, usize), u64>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    tag_index: HashMap<String, usize>,
}

impl TagVocabulary {
    /// Builds the vocabulary from a corpus. Empty corpus gives an empty
    /// vocabulary (valid, just useless).
    pub fn build(corpus: &[Sentence]) -> Self {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for sent in corpus {
            for tok in &sent.tokens {
                *counts.entry((tok.tag.clone(), tok.form.clone())).or_insert(0) += 1;
            }
        }
        let mut words: Vec<String> =
            counts.keys().map(|(_, w)| w.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        words.sort();
        let mut tags: Vec<String> =
            counts.keys().map(|(t, _)| t.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        tags.sort();
        let word_index: HashMap<String, usize> =
            words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let tag_index: HashMap<String, usize> =
            tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut per_tag = vec![Vec::new(); tags.len()];
        let mut id_counts = BTreeMap::new();
        for ((tag, word), c) in &counts {
            let t = tag_index[tag];
            let w = word_index[word];
            per_tag[t].push(w);
            id_counts.insert((t, w), *c);
        }
        for pool in &mut per_tag {
            pool.sort_unstable();
            pool.dedup();
        }
        TagVocabulary { words, tags, per_tag, counts: id_counts, word_index, tag_index }
    }

    /// Rebuilds the lookup maps after deserialization (they are not stored).
    pub fn rebuild_index(&mut self) {
        self.word_index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        self.tag_index = self.tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn word_id(&self, form: &str) -> Option<usize> {
        self.word_index.get(form).copied()
    }

    pub fn tag_id(&self, tag: &str) -> Option<usize> {
        self.tag_index.get(tag).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn tag(&self, id: usize) -> &str {
        &self.tags[id]
    }

    /// The pool `V_t`: word ids seen under tag `t`, sorted.
    pub fn tag_pool(&self, tag_id: usize) -> &[usize] {
        &self.per_tag[tag_id]
    }

    /// Substitution candidates for an original word under its tag:
    /// `V_t \ {original}`, preserving the pool's sorted order. The original
    /// is always excluded — substitution may never return the word it hides.
    pub fn candidates(&self, tag_id: usize, original_word_id: usize) -> Vec<usize> {
        self.per_tag[tag_id].iter().copied().filter(|&w| w != original_word_id).collect()
    }

    /// Occurrences of `word` under `tag` in the source corpus.
    pub fn count(&self, tag_id: usize, word_id: usize) -> u64 {
        self.counts.get(&(tag_id, word_id)).copied().unwrap_or(0)
    }

    /// Total occurrences of `word` under any tag.
    pub fn word_count(&self, word_id: usize) -> u64 {
        self.counts.iter().filter(|((_, w), _)| *w == word_id).map(|(_, c)| *c).sum()
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn tag_count(&self) -> usize {
        self.tags.len()
    }

    /// Content hash used to verify that a checkpoint and a corpus agree.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for w in &self.words {
            hasher.update(w.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update([1u8]);
        for t in &self.tags {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update([2u8]);
        for ((t, w), c) in &self.counts {
            hasher.update(t.to_le_bytes());
            hasher.update(w.to_le_bytes());
            hasher.update(c.to_le_bytes());
        }
        hex_digest(hasher)
    }
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    let bytes = hasher.finalize();
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// The cumulative hierarchy of sensitive tag classes.
///
/// Level 1 covers proper nouns only; each further level adds a class:
/// common nouns, adjectives, verbs, adverbs. `cumulative(j)` is the union of
/// the first `j` classes — the target set for obfuscation strength `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSpectrum {
    /// `classes[j]` holds the tags introduced at level `j + 1`.
    classes: Vec<Vec<String>>,
}

impl TagSpectrum {
    /// The standard Penn-Treebank spectrum.
    pub fn ptb() -> Self {
        let classes = [
            vec!["NNP", "NNPS"],
            vec!["NN", "NNS"],
            vec!["JJ", "JJR", "JJS"],
            vec!["VB", "VBN", "VBD", "VBZ", "VBP", "VBG"],
            vec!["RB", "RBR", "RBS"],
        ];
        TagSpectrum {
            classes: classes.iter().map(|c| c.iter().map(|s| s.to_string()).collect()).collect(),
        }
    }

    pub fn from_classes(classes: Vec<Vec<String>>) -> Self {
        TagSpectrum { classes }
    }

    /// Number of levels.
    pub fn levels(&self) -> usize {
        self.classes.len()
    }

    /// Tags introduced at `level` (1-based).
    pub fn class(&self, level: usize) -> Result<&[String]> {
        self.check_level(level)?;
        Ok(&self.classes[level - 1])
    }

    /// The target set for `level`: union of classes 1..=level.
    pub fn cumulative(&self, level: usize) -> Result<TagSet> {
        self.check_level(level)?;
        Ok(self.classes[..level].iter().flatten().cloned().collect())
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.classes.len() {
            return Err(Error::Argument(format!(
                "spectrum level {level} out of range 1..={}",
                self.classes.len()
            )));
        }
        Ok(())
    }
}

/// Positions (0-based) of tokens whose tag belongs to the target set.
pub fn target_positions(sentence: &Sentence, targets: &TagSet) -> Vec<usize> {
    sentence
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| targets.contains(&t.tag))
        .map(|(i, _)| i)
        .collect()
}
