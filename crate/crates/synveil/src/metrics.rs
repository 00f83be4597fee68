//! Evaluation metrics: parsing accuracy (attachment scores, labeled span
//! F1), privacy scores built on mean reciprocal rank, the accuracy/privacy
//! trade-off ratio, subcategorization-frame overlap, and a one-sided Welch
//! t-test for comparing overlap samples.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};

use crate::corpus::{ConstituencyTree, DepTree, Sentence, TagSet};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Attachment scores
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttachmentScores {
    /// Unlabeled attachment score, percent of scored tokens with the
    /// correct head.
    pub uas: f64,
    /// Labeled attachment score: correct head and correct relation.
    pub las: f64,
    /// Number of scored tokens (after any exclusions).
    pub tokens: usize,
}

/// Which tokens to skip when scoring. The default scores everything,
/// punctuation included; callers may exclude tags (e.g. `.` or `,`).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScoringPolicy {
    pub exclude_tags: TagSet,
}

/// Token-level attachment accuracy of predictions against gold trees.
/// Sentences, gold and predicted trees are parallel; any length mismatch is
/// an argument error.
pub fn attachment_scores(
    sentences: &[Sentence],
    gold: &[DepTree],
    predicted: &[DepTree],
    policy: &ScoringPolicy,
) -> Result<AttachmentScores> {
    if sentences.len() != gold.len() || gold.len() != predicted.len() {
        return Err(Error::Argument(format!(
            "attachment_scores: {} sentences, {} gold trees, {} predictions",
            sentences.len(),
            gold.len(),
            predicted.len()
        )));
    }
    let mut scored = 0usize;
    let mut heads_ok = 0usize;
    let mut labeled_ok = 0usize;
    for ((sent, g), p) in sentences.iter().zip(gold).zip(predicted) {
        if g.len() != sent.len() || p.len() != sent.len() {
            return Err(Error::Argument(format!(
                "attachment_scores: tree lengths {}/{} do not match sentence {} of length {}",
                g.len(),
                p.len(),
                sent.id,
                sent.len()
            )));
        }
        for (i, tok) in sent.tokens.iter().enumerate() {
            if policy.exclude_tags.contains(&tok.tag) {
                continue;
            }
            scored += 1;
            if g.heads[i] == p.heads[i] {
                heads_ok += 1;
                if g.labels[i] == p.labels[i] {
                    labeled_ok += 1;
                }
            }
        }
    }
    if scored == 0 {
        return Err(Error::Argument("attachment_scores: no scorable tokens".into()));
    }
    Ok(AttachmentScores {
        uas: 100.0 * heads_ok as f64 / scored as f64,
        las: 100.0 * labeled_ok as f64 / scored as f64,
        tokens: scored,
    })
}

// ---------------------------------------------------------------------------
// Labeled span F1 (constituency)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub gold_spans: usize,
    pub predicted_spans: usize,
}

/// Micro-averaged labeled span precision/recall/F1 over a corpus of tree
/// pairs. Every labeled node counts as a span — the root and single-leaf
/// spans included — and matching is multiset-based per sentence. Pairs whose
/// leaf counts differ are an argument error.
pub fn span_f1(gold: &[ConstituencyTree], predicted: &[ConstituencyTree]) -> Result<SpanF1> {
    if gold.len() != predicted.len() {
        return Err(Error::Argument(format!(
            "span_f1: {} gold trees vs {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    let mut matched = 0usize;
    let mut total_gold = 0usize;
    let mut total_pred = 0usize;
    for (i, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.leaf_count() != p.leaf_count() {
            return Err(Error::Argument(format!(
                "span_f1: tree pair {i} has {} vs {} leaves",
                g.leaf_count(),
                p.leaf_count()
            )));
        }
        let gs = span_multiset(g);
        let ps = span_multiset(p);
        total_gold += gs.values().sum::<usize>();
        total_pred += ps.values().sum::<usize>();
        for (span, &gc) in &gs {
            if let Some(&pc) = ps.get(span) {
                matched += gc.min(pc);
            }
        }
    }
    if total_gold == 0 && total_pred == 0 {
        return Err(Error::Argument("span_f1: no spans to score".into()));
    }
    let precision = if total_pred == 0 { 0.0 } else { 100.0 * matched as f64 / total_pred as f64 };
    let recall = if total_gold == 0 { 0.0 } else { 100.0 * matched as f64 / total_gold as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SpanF1 {
        precision,
        recall,
        f1,
        matched,
        gold_spans: total_gold,
        predicted_spans: total_pred,
    })
}

/// All labeled spans of a tree as (label, start, end-exclusive) with
/// multiplicities.
fn span_multiset(tree: &ConstituencyTree) -> HashMap<(String, usize, usize), usize> {
    let mut out = HashMap::new();
    collect_spans(tree, &mut 0, &mut out);
    out
}

fn collect_spans(
    tree: &ConstituencyTree,
    next_leaf: &mut usize,
    out: &mut HashMap<(String, usize, usize), usize>,
) -> (usize, usize) {
    match tree {
        ConstituencyTree::Leaf { .. } => {
            let pos = *next_leaf;
            *next_leaf += 1;
            (pos, pos + 1)
        }
        ConstituencyTree::Node { label, children } => {
            let mut start = usize::MAX;
            let mut end = 0;
            for child in children {
                let (s, e) = collect_spans(child, next_leaf, out);
                start = start.min(s);
                end = end.max(e);
            }
            *out.entry((label.clone(), start, end)).or_insert(0) += 1;
            (start, end)
        }
    }
}

// ---------------------------------------------------------------------------
// Privacy: ranks, mean reciprocal rank, histogram
// ---------------------------------------------------------------------------

/// Rank of one recovery attempt, as used by the privacy report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankEntry {
    /// 1-based rank of the true word in the attacker's scores.
    pub rank: usize,
    /// True when the attacker's candidate set did not contain the true word
    /// at all (the rank is then the vocabulary size, the worst case).
    pub missing: bool,
}

/// Rank of the true word inside an attacker score vector. Ties are resolved
/// in the attacker's favor: the rank counts only candidates with a strictly
/// greater score. `true_idx = None` (true word outside the candidate set)
/// yields the worst rank, the vocabulary size, flagged as missing.
pub fn rank_of(scores: &[f64], true_idx: Option<usize>, vocab_size: usize) -> RankEntry {
    match true_idx {
        None => RankEntry { rank: vocab_size.max(1), missing: true },
        Some(idx) => {
            let target = scores[idx];
            let rank = 1 + scores.iter().filter(|&&s| s > target).count();
            RankEntry { rank, missing: false }
        }
    }
}

/// Histogram bucket boundaries for rank distributions (inclusive ranges).
const RANK_BUCKETS: &[(usize, usize, &str)] = &[
    (1, 1, "1"),
    (2, 2, "2"),
    (3, 3, "3"),
    (4, 5, "4-5"),
    (6, 10, "6-10"),
    (11, 100, "11-100"),
    (101, usize::MAX, ">100"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    /// Mean reciprocal rank scaled to 0..100: `(100/N) Σ 1/rank`.
    /// High means the attacker recovers originals easily.
    pub mrr: f64,
    /// The privacy score: `100 - mrr`.
    pub attacker_error: f64,
    /// Number of scored positions.
    pub evaluated: usize,
    /// How many scored positions lacked the true word entirely.
    pub missing_true_words: usize,
    /// Per-bucket rank counts (bucket label, count), fixed bucket layout.
    pub histogram: Vec<(String, usize)>,
    /// The raw ranks; the summary statistics above are recomputable from
    /// this field alone.
    pub ranks: Vec<RankEntry>,
}

/// Builds the privacy report from per-position ranks. An empty input is an
/// argument error — privacy over nothing is meaningless.
pub fn privacy_report(ranks: Vec<RankEntry>) -> Result<PrivacyReport> {
    if ranks.is_empty() {
        return Err(Error::Argument("privacy_report: no ranked positions".into()));
    }
    if let Some(bad) = ranks.iter().find(|r| r.rank == 0) {
        return Err(Error::Argument(format!("privacy_report: rank 0 is invalid: {bad:?}")));
    }
    let n = ranks.len() as f64;
    let mrr = 100.0 / n * ranks.iter().map(|r| 1.0 / r.rank as f64).sum::<f64>();
    let mut histogram: Vec<(String, usize)> =
        RANK_BUCKETS.iter().map(|(_, _, label)| (label.to_string(), 0)).collect();
    for r in &ranks {
        let slot = RANK_BUCKETS
            .iter()
            .position(|(lo, hi, _)| r.rank >= *lo && r.rank <= *hi)
            .expect("bucket layout covers all ranks");
        histogram[slot].1 += 1;
    }
    Ok(PrivacyReport {
        mrr,
        attacker_error: 100.0 - mrr,
        evaluated: ranks.len(),
        missing_true_words: ranks.iter().filter(|r| r.missing).count(),
        histogram,
        ranks,
    })
}

/// The parsing-accuracy / recovery trade-off: `accuracy / mrr`. Higher is a
/// better privacy-utility trade. `None` when the attacker never recovers
/// anything (mrr = 0), which would divide by zero.
pub fn accuracy_privacy_ratio(accuracy: f64, mrr: f64) -> Option<f64> {
    if mrr == 0.0 {
        None
    } else {
        Some(accuracy / mrr)
    }
}

// ---------------------------------------------------------------------------
// Subcategorization-frame overlap
// ---------------------------------------------------------------------------

/// Lexicon mapping a word (verb) to its set of frame signatures. File
/// format: one `word sig1,sig2,…` line per word.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameLexicon {
    entries: HashMap<String, BTreeSet<String>>,
}

impl FrameLexicon {
    pub fn new(entries: HashMap<String, BTreeSet<String>>) -> Self {
        FrameLexicon { entries }
    }

    pub fn signatures(&self, word: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Writes a lexicon in the format [`read_frame_lexicon`] accepts
/// (`word sig1,sig2,…`, one word per line, sorted for reproducibility).
pub fn write_frame_lexicon<W: std::io::Write>(
    writer: &mut W,
    lexicon: &FrameLexicon,
) -> Result<()> {
    let mut words: Vec<&String> = lexicon.entries.keys().collect();
    words.sort();
    for word in words {
        let sigs: Vec<&str> = lexicon.entries[word].iter().map(|s| s.as_str()).collect();
        writeln!(writer, "{word} {}", sigs.join(","))?;
    }
    Ok(())
}

pub fn read_frame_lexicon<R: Read>(reader: R) -> Result<FrameLexicon> {
    let mut entries = HashMap::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (word, sigs) = trimmed.split_once(char::is_whitespace).ok_or_else(|| {
            Error::Parse { line: lineno + 1, msg: "expected `word sig1,sig2,…`".into() }
        })?;
        let set: BTreeSet<String> =
            sigs.trim().split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        if set.is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("no signatures for {word:?}"),
            });
        }
        entries.insert(word.to_string(), set);
    }
    Ok(FrameLexicon { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOverlapReport {
    /// Mean signature-set intersection size over scored pairs; `None` when
    /// nothing could be scored (instead of a NaN).
    pub mean_overlap: Option<f64>,
    pub scored_pairs: usize,
    /// Pairs skipped because either word is missing from the lexicon.
    pub skipped_pairs: usize,
    /// Per-pair overlap sizes for the scored pairs, in input order.
    pub overlaps: Vec<usize>,
}

/// Signature overlap `|sig(original) ∩ sig(substitute)|` averaged over word
/// pairs. Pairs with either side missing from the lexicon are skipped and
/// counted, never treated as zero overlap.
pub fn frame_overlap(pairs: &[(String, String)], lexicon: &FrameLexicon) -> FrameOverlapReport {
    let mut overlaps = Vec::new();
    let mut skipped = 0usize;
    for (a, b) in pairs {
        match (lexicon.signatures(a), lexicon.signatures(b)) {
            (Some(sa), Some(sb)) => overlaps.push(sa.intersection(sb).count()),
            _ => skipped += 1,
        }
    }
    let mean_overlap = if overlaps.is_empty() {
        None
    } else {
        Some(overlaps.iter().sum::<usize>() as f64 / overlaps.len() as f64)
    };
    FrameOverlapReport { mean_overlap, scored_pairs: overlaps.len(), skipped_pairs: skipped, overlaps }
}

// ---------------------------------------------------------------------------
// Welch's one-sided t-test
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub degrees_of_freedom: f64,
    /// One-sided p-value for the alternative `mean(a) > mean(b)`.
    pub p_value: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

/// Welch's unequal-variance two-sample t-test, one-sided with the
/// alternative hypothesis that sample `a` has the greater mean. Both samples
/// need at least two observations.
pub fn t_test_one_sided(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Argument(format!(
            "t_test_one_sided: need at least 2 observations per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mean_a = a.iter().sum::<f64>() / na;
    let mean_b = b.iter().sum::<f64>() / nb;
    let var_a = a.iter().map(|x| (x - mean_a).powi(2)).sum::<f64>() / (na - 1.0);
    let var_b = b.iter().map(|x| (x - mean_b).powi(2)).sum::<f64>() / (nb - 1.0);
    let se2 = var_a / na + var_b / nb;
    if se2 == 0.0 {
        // Degenerate but well-defined: identical constant samples.
        let p = if mean_a > mean_b {
            0.0
        } else if mean_a < mean_b {
            1.0
        } else {
            0.5
        };
        return Ok(TTestResult {
            t: if mean_a == mean_b { 0.0 } else { f64::INFINITY * (mean_a - mean_b).signum() },
            degrees_of_freedom: na + nb - 2.0,
            p_value: p,
            mean_a,
            mean_b,
        });
    }
    let t = (mean_a - mean_b) / se2.sqrt();
    let df = se2.powi(2)
        / ((var_a / na).powi(2) / (na - 1.0) + (var_b / nb).powi(2) / (nb - 1.0));
    let dist = statrs::distribution::StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Argument(format!("t distribution: {e}")))?;
    use statrs::distribution::ContinuousCDF;
    let p_value = 1.0 - dist.cdf(t);
    Ok(TTestResult { t, degrees_of_freedom: df, p_value, mean_a, mean_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sent(tags: &[&str]) -> Sentence {
        Sentence::new(
            "s",
            tags.iter().enumerate().map(|(i, t)| Token::new(format!("w{i}"), *t)).collect(),
        )
    }

    fn tree(heads: &[usize], labels: &[&str]) -> DepTree {
        DepTree { heads: heads.to_vec(), labels: labels.iter().map(|s| s.to_string()).collect() }
    }

    #[test]
    fn attachment_scores_hand_example() {
        // 4 tokens; prediction gets 3 heads right, 2 of those labeled right.
        let sentences = vec![sent(&["DT", "NN", "VBZ", "."])];
        let gold = vec![tree(&[2, 3, 0, 3], &["det", "nsubj", "root", "punct"])];
        let pred = vec![tree(&[2, 3, 0, 2], &["det", "dobj", "root", "punct"])];
        let s = attachment_scores(&sentences, &gold, &pred, &ScoringPolicy::default()).unwrap();
        assert_eq!(s.tokens, 4);
        assert!((s.uas - 75.0).abs() < 1e-12);
        assert!((s.las - 50.0).abs() < 1e-12);

        // Excluding punctuation removes the missed token.
        let policy = ScoringPolicy { exclude_tags: [".".to_string()].into_iter().collect() };
        let s = attachment_scores(&sentences, &gold, &pred, &policy).unwrap();
        assert_eq!(s.tokens, 3);
        assert!((s.uas - 100.0).abs() < 1e-12);
        assert!((s.las - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn attachment_scores_rejects_mismatched_lengths() {
        let sentences = vec![sent(&["NN"])];
        let gold = vec![tree(&[0], &["root"])];
        assert!(attachment_scores(&sentences, &gold, &[], &ScoringPolicy::default()).is_err());
        let pred = vec![tree(&[0, 2], &["root", "x"])];
        assert!(attachment_scores(&sentences, &gold, &pred, &ScoringPolicy::default()).is_err());
    }

    // --- span F1 ----------------------------------------------------------

    /// Independent span extraction used as the oracle: an explicit stack
    /// machine rather than the recursive walker in the implementation.
    fn oracle_spans(tree: &ConstituencyTree) -> Vec<(String, usize, usize)> {
        enum Item<'a> {
            Open(&'a ConstituencyTree),
            Close(String, usize),
        }
        let mut stack = vec![Item::Open(tree)];
        let mut leaf = 0usize;
        let mut out = Vec::new();
        while let Some(item) = stack.pop() {
            match item {
                Item::Open(ConstituencyTree::Leaf { .. }) => leaf += 1,
                Item::Open(ConstituencyTree::Node { label, children }) => {
                    stack.push(Item::Close(label.clone(), leaf));
                    for c in children.iter().rev() {
                        stack.push(Item::Open(c));
                    }
                }
                Item::Close(label, start) => out.push((label, start, leaf)),
            }
        }
        out
    }

    fn random_tree<R: Rng>(rng: &mut R, leaf_start: &mut usize, depth: usize) -> ConstituencyTree {
        let labels = ["S", "NP", "VP", "PP", "X"];
        if depth == 0 || rng.gen_bool(0.3) {
            let label = labels[rng.gen_range(0..labels.len())];
            let idx = *leaf_start;
            *leaf_start += 1;
            ConstituencyTree::node(label, vec![ConstituencyTree::leaf(idx, format!("w{idx}"))])
        } else {
            let n_children = rng.gen_range(1..=3);
            let children =
                (0..n_children).map(|_| random_tree(rng, leaf_start, depth - 1)).collect();
            let label = labels[rng.gen_range(0..labels.len())];
            ConstituencyTree::node(label, children)
        }
    }

    #[test]
    fn span_extraction_matches_stack_oracle_on_random_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let mut leaf = 0;
            let t = random_tree(&mut rng, &mut leaf, 4);
            let impl_spans = span_multiset(&t);
            let mut oracle: HashMap<(String, usize, usize), usize> = HashMap::new();
            for s in oracle_spans(&t) {
                *oracle.entry(s).or_insert(0) += 1;
            }
            assert_eq!(impl_spans, oracle);
        }
    }

    #[test]
    fn span_f1_hand_example_three_quarters() {
        // Gold has 4 spans: S[0,2), NP[0,1), VP[1,2), V[1,2).
        let gold = ConstituencyTree::node(
            "S",
            vec![
                ConstituencyTree::node("NP", vec![ConstituencyTree::leaf(0, "John")]),
                ConstituencyTree::node(
                    "VP",
                    vec![ConstituencyTree::node("V", vec![ConstituencyTree::leaf(1, "runs")])],
                ),
            ],
        );
        // Prediction drops the V span and adds a spurious ZP span.
        let pred = ConstituencyTree::node(
            "S",
            vec![
                ConstituencyTree::node("NP", vec![ConstituencyTree::leaf(0, "John")]),
                ConstituencyTree::node(
                    "VP",
                    vec![ConstituencyTree::node("ZP", vec![ConstituencyTree::leaf(1, "runs")])],
                ),
            ],
        );
        let s = span_f1(&[gold.clone()], &[pred.clone()]).unwrap();
        assert_eq!((s.matched, s.gold_spans, s.predicted_spans), (3, 4, 4));
        assert!((s.precision - 75.0).abs() < 1e-12);
        assert!((s.recall - 75.0).abs() < 1e-12);
        assert!((s.f1 - 75.0).abs() < 1e-12);

        // Identity scores perfectly.
        let s = span_f1(&[gold.clone()], &[gold.clone()]).unwrap();
        assert!((s.f1 - 100.0).abs() < 1e-12);

        // Precision and recall swap when the arguments swap.
        let a = span_f1(&[gold.clone()], &[pred.clone()]).unwrap();
        let b = span_f1(&[pred], &[gold]).unwrap();
        assert!((a.precision - b.recall).abs() < 1e-12);
        assert!((a.recall - b.precision).abs() < 1e-12);
        assert!((a.f1 - b.f1).abs() < 1e-12);
    }

    #[test]
    fn span_f1_rejects_leaf_mismatch() {
        let a = ConstituencyTree::node("S", vec![ConstituencyTree::leaf(0, "x")]);
        let b = ConstituencyTree::node(
            "S",
            vec![ConstituencyTree::leaf(0, "x"), ConstituencyTree::leaf(1, "y")],
        );
        assert!(span_f1(&[a], &[b]).is_err());
    }

    // --- ranks and MRR ----------------------------------------------------

    /// Brute-force oracle: rank = 1 + count of strictly greater scores.
    fn oracle_rank(scores: &[f64], idx: usize) -> usize {
        let mut rank = 1;
        for (j, &s) in scores.iter().enumerate() {
            if j != idx && s > scores[idx] {
                rank += 1;
            }
        }
        rank
    }

    #[test]
    fn rank_matches_oracle_on_random_score_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.gen_range(1..30);
            // Coarse grid provokes plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect();
            let idx = rng.gen_range(0..n);
            let got = rank_of(&scores, Some(idx), n);
            assert_eq!(got.rank, oracle_rank(&scores, idx));
            assert!(!got.missing);
        }
    }

    #[test]
    fn ties_resolve_in_the_attackers_favor() {
        let scores = [0.25, 0.25, 0.25, 0.25];
        for idx in 0..4 {
            assert_eq!(rank_of(&scores, Some(idx), 4).rank, 1);
        }
        let scores = [0.4, 0.3, 0.3];
        assert_eq!(rank_of(&scores, Some(2), 3).rank, 2);
    }

    #[test]
    fn missing_true_word_gets_worst_rank() {
        let e = rank_of(&[0.5, 0.5], None, 120);
        assert_eq!(e.rank, 120);
        assert!(e.missing);
    }

    #[test]
    fn mrr_hand_computed_values() {
        // Ranks 1, 2, 4: (100/3)(1 + 1/2 + 1/4) = 58.333…
        let ranks = vec![
            RankEntry { rank: 1, missing: false },
            RankEntry { rank: 2, missing: false },
            RankEntry { rank: 4, missing: false },
        ];
        let report = privacy_report(ranks).unwrap();
        assert!((report.mrr - 58.333333333333336).abs() < 1e-9);
        assert!((report.attacker_error + report.mrr - 100.0).abs() < 1e-9);

        // All rank 1 → attacker recovers everything.
        let report =
            privacy_report(vec![RankEntry { rank: 1, missing: false }; 5]).unwrap();
        assert!((report.mrr - 100.0).abs() < 1e-12);
        assert!(report.attacker_error.abs() < 1e-12);
    }

    #[test]
    fn mrr_matches_direct_formula_on_random_ranks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(1..50);
            let ranks: Vec<RankEntry> = (0..n)
                .map(|_| RankEntry { rank: rng.gen_range(1..200), missing: false })
                .collect();
            let direct =
                100.0 / n as f64 * ranks.iter().map(|r| 1.0 / r.rank as f64).sum::<f64>();
            let report = privacy_report(ranks.clone()).unwrap();
            assert!((report.mrr - direct).abs() < 1e-9);
            // The report is recomputable from its own stored ranks.
            let again = privacy_report(report.ranks.clone()).unwrap();
            assert_eq!(again.mrr, report.mrr);
            assert_eq!(again.histogram, report.histogram);
        }
    }

    #[test]
    fn histogram_buckets_cover_and_sum() {
        let ranks = vec![
            RankEntry { rank: 1, missing: false },
            RankEntry { rank: 3, missing: false },
            RankEntry { rank: 5, missing: false },
            RankEntry { rank: 10, missing: false },
            RankEntry { rank: 100, missing: false },
            RankEntry { rank: 5000, missing: true },
        ];
        let report = privacy_report(ranks).unwrap();
        let total: usize = report.histogram.iter().map(|(_, c)| c).sum();
        assert_eq!(total, 6);
        assert_eq!(report.missing_true_words, 1);
        let get = |label: &str| {
            report.histogram.iter().find(|(l, _)| l == label).map(|(_, c)| *c).unwrap()
        };
        assert_eq!(get("1"), 1);
        assert_eq!(get("3"), 1);
        assert_eq!(get("4-5"), 1);
        assert_eq!(get("6-10"), 1);
        assert_eq!(get("11-100"), 1);
        assert_eq!(get(">100"), 1);
    }

    #[test]
    fn empty_privacy_report_is_an_error() {
        assert!(privacy_report(vec![]).is_err());
    }

    // --- ratio -------------------------------------------------------------

    #[test]
    fn ratio_hand_values_and_zero_guard() {
        // Accuracy 94.1 with privacy (attacker error) 68.3 → mrr 31.7.
        let ratio = accuracy_privacy_ratio(94.1, 100.0 - 68.3).unwrap();
        assert!((ratio - 2.97).abs() < 0.01, "got {ratio}");
        assert_eq!(accuracy_privacy_ratio(50.0, 0.0), None);
    }

    // --- frames -------------------------------------------------------------

    #[test]
    fn frame_overlap_worked_example() {
        let text = "scare 012\nfrighten 012,01\nterrify 2\n";
        let lex = read_frame_lexicon(text.as_bytes()).unwrap();
        // {012} ∩ {012, 01} = {012} → overlap 1.
        let report =
            frame_overlap(&[("scare".into(), "frighten".into())], &lex);
        assert_eq!(report.overlaps, vec![1]);
        assert_eq!(report.mean_overlap, Some(1.0));

        // Exhaustive enumeration over a toy lexicon.
        let pairs = vec![
            ("scare".into(), "frighten".into()),   // 1
            ("scare".into(), "terrify".into()),    // 0
            ("frighten".into(), "terrify".into()), // 0
            ("scare".into(), "scare".into()),      // 1
            ("frighten".into(), "frighten".into()), // 2
            ("terrify".into(), "terrify".into()),  // 1
        ];
        let report = frame_overlap(&pairs, &lex);
        assert_eq!(report.overlaps, vec![1, 0, 0, 1, 2, 1]);
        assert_eq!(report.mean_overlap, Some(5.0 / 6.0));
        assert_eq!(report.skipped_pairs, 0);
    }

    #[test]
    fn unknown_words_are_skipped_not_zeroed() {
        let lex = read_frame_lexicon("walk 0\n".as_bytes()).unwrap();
        let report = frame_overlap(
            &[("walk".into(), "ghost".into()), ("walk".into(), "walk".into())],
            &lex,
        );
        assert_eq!(report.scored_pairs, 1);
        assert_eq!(report.skipped_pairs, 1);
        assert_eq!(report.mean_overlap, Some(1.0));

        let empty = frame_overlap(&[("ghost".into(), "wraith".into())], &lex);
        assert_eq!(empty.mean_overlap, None);
        assert_eq!(empty.scored_pairs, 0);
    }

    // --- t-test -------------------------------------------------------------

    #[test]
    fn t_test_known_value() {
        // Classic check: equal variances, mean difference 1, pooled se 1 →
        // t = 1.0 with Welch df = 8; one-sided p = 0.17331 (t tables).
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0, 1.0, 2.0, 3.0, 4.0];
        let r = t_test_one_sided(&a, &b).unwrap();
        assert!((r.t - 1.0).abs() < 1e-12);
        assert!((r.degrees_of_freedom - 8.0).abs() < 1e-9);
        assert!((r.p_value - 0.17331).abs() < 1e-4, "p = {}", r.p_value);
    }

    #[test]
    fn t_test_direction_and_degenerate_cases() {
        let hi = [5.0, 6.0, 7.0, 8.0];
        let lo = [1.0, 2.0, 3.0, 4.0];
        let r = t_test_one_sided(&hi, &lo).unwrap();
        assert!(r.p_value < 0.01, "clear separation should be significant: {}", r.p_value);
        let r = t_test_one_sided(&lo, &hi).unwrap();
        assert!(r.p_value > 0.99, "wrong-direction alternative: {}", r.p_value);

        // Identical samples: no evidence either way.
        let r = t_test_one_sided(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!(r.p_value, 0.5);
        assert!(t_test_one_sided(&[1.0], &[1.0, 2.0]).is_err());
    }
}
