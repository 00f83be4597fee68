//! Synthetic treebank generator for end-to-end tests and the desk-scale
//! experiments.
//!
//! The grammar is small but adversarial by design: every sentence frame has
//! at most one *pivot* word whose lexical subclass decides an attachment
//! (preposition or adverb), while every other open-class slot is filled from
//! the whole tag vocabulary so it carries no structural signal. A parser
//! trained on this corpus must learn the lexical cues; a substitution policy
//! that ignores them breaks the parse, while one that substitutes within the
//! pivot's subclass preserves it. That is exactly the contrast the spectrum
//! experiments measure.
//!
//! Frames (heads are 1-based, 0 = root):
//!
//! * `F0` — plain transitives in several shapes, no pivot.
//! * `F1` — `NNP V the N in NNP .`; the preposition attaches to the verb
//!   when the second proper noun is a place, to the object otherwise.
//! * `F2` — `NNP V the N in the N .`; same choice driven by whether the
//!   prepositional noun is an event or a physical thing.
//! * `F3` — `the N is JJ of the N .`; the preposition attaches to the
//!   adjective for complement-taking adjectives, else to the copula.
//! * `F4` — same shape as `F2` but the verb decides: placement verbs take
//!   the preposition, depiction verbs leave it on the object.
//! * `F5` — `NNP V the N RB .`; manner adverbs modify the verb, locative
//!   ones the object noun.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, TagSet, TagVocabulary, Token};
use crate::metrics::FrameLexicon;
use crate::{Error, Result};

// --- word pools -------------------------------------------------------------

pub const NNP_PERSON: &[&str] = &[
    "Alice", "Bob", "Carol", "David", "Erica", "Frank", "Grace", "Henry", "Irene", "James",
    "Karen", "Louis",
];
pub const NNP_PLACE: &[&str] = &[
    "Paris", "Berlin", "Madrid", "Oslo", "Cairo", "Lima", "Tokyo", "Delhi", "Quito", "Sofia",
    "Dublin", "Vienna",
];
pub const NN_THING: &[&str] = &[
    "dog", "cat", "box", "lamp", "book", "chair", "table", "wagon", "bottle", "garden", "house",
    "ladder", "mirror", "basket", "engine",
];
pub const NN_EVENT: &[&str] = &[
    "meeting", "storm", "parade", "lecture", "voyage", "festival", "debate", "drought",
    "journey", "concert", "summit", "election", "ceremony", "rehearsal", "auction",
];
pub const NNS_WORDS: &[&str] = &[
    "dogs", "cats", "boxes", "lamps", "books", "chairs", "tables", "wagons", "bottles", "gardens",
];
pub const JJ_PLAIN: &[&str] = &[
    "happy", "big", "small", "quiet", "bright", "heavy", "clean", "sharp", "gentle", "narrow",
    "smooth", "sturdy",
];
pub const JJ_COMPLEMENT: &[&str] = &[
    "afraid", "fond", "aware", "proud", "wary", "tired", "full", "devoid", "capable",
    "suspicious", "envious", "ashamed",
];
/// (present, past) pairs. General transitive verbs: no attachment signal.
pub const V_GENERAL: &[(&str, &str)] = &[
    ("carries", "carried"),
    ("holds", "held"),
    ("moves", "moved"),
    ("lifts", "lifted"),
    ("pushes", "pushed"),
    ("pulls", "pulled"),
    ("watches", "watched"),
    ("finds", "found"),
    ("fetches", "fetched"),
    ("grabs", "grabbed"),
];
/// Placement verbs: the preposition attaches to the verb.
pub const V_PLACEMENT: &[(&str, &str)] = &[
    ("places", "placed"),
    ("keeps", "kept"),
    ("stores", "stored"),
    ("leaves", "left"),
    ("drops", "dropped"),
    ("parks", "parked"),
    ("hides", "hid"),
    ("lays", "laid"),
    ("hauls", "hauled"),
    ("tosses", "tossed"),
];
/// Depiction verbs: the preposition stays on the object.
pub const V_DEPICTION: &[(&str, &str)] = &[
    ("admires", "admired"),
    ("describes", "described"),
    ("paints", "painted"),
    ("praises", "praised"),
    ("notices", "noticed"),
    ("sketches", "sketched"),
    ("recalls", "recalled"),
    ("examines", "examined"),
    ("measures", "measured"),
    ("discusses", "discussed"),
];
pub const V_COPULA: &[(&str, &str)] = &[
    ("is", "was"),
    ("seems", "seemed"),
    ("looks", "looked"),
    ("stays", "stayed"),
];
pub const RB_MANNER: &[&str] = &[
    "quickly", "slowly", "quietly", "eagerly", "gently", "boldly", "calmly", "neatly", "swiftly",
    "barely",
];
pub const RB_LOCATIVE: &[&str] = &[
    "alone", "nearby", "upstairs", "outside", "indoors", "downstairs", "overseas", "abroad",
    "apart", "behind",
];
pub const DT_WORDS: &[&str] = &["the", "a", "this", "every"];
pub const IN_WORDS: &[&str] = &["near", "with", "about", "of"];

/// Lexical subclass of a fixture word, e.g. `"nnp-place"` or `"v-placement"`.
/// `None` for words outside the fixture vocabulary.
pub fn subclass_of(word: &str) -> Option<&'static str> {
    fn in_pool(pool: &[&str], w: &str) -> bool {
        pool.contains(&w)
    }
    fn in_verbs(pool: &[(&str, &str)], w: &str) -> bool {
        pool.iter().any(|(z, d)| *z == w || *d == w)
    }
    if in_pool(NNP_PERSON, word) {
        Some("nnp-person")
    } else if in_pool(NNP_PLACE, word) {
        Some("nnp-place")
    } else if in_pool(NN_THING, word) {
        Some("nn-thing")
    } else if in_pool(NN_EVENT, word) {
        Some("nn-event")
    } else if in_pool(NNS_WORDS, word) {
        Some("nns")
    } else if in_pool(JJ_PLAIN, word) {
        Some("jj-plain")
    } else if in_pool(JJ_COMPLEMENT, word) {
        Some("jj-complement")
    } else if in_verbs(V_GENERAL, word) {
        Some("v-general")
    } else if in_verbs(V_PLACEMENT, word) {
        Some("v-placement")
    } else if in_verbs(V_DEPICTION, word) {
        Some("v-depiction")
    } else if in_verbs(V_COPULA, word) {
        Some("v-copula")
    } else if in_pool(RB_MANNER, word) {
        Some("rb-manner")
    } else if in_pool(RB_LOCATIVE, word) {
        Some("rb-locative")
    } else if in_pool(DT_WORDS, word) {
        Some("dt")
    } else if in_pool(IN_WORDS, word) {
        Some("in")
    } else if word == "." {
        Some("punct")
    } else {
        None
    }
}

// --- generation -------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig { train: 2000, dev: 200, test: 200, seed: 0x5eed }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

impl Fixture {
    /// Tag vocabulary over all three splits.
    pub fn vocabulary(&self) -> TagVocabulary {
        let all: Vec<Sentence> =
            self.train.iter().chain(&self.dev).chain(&self.test).cloned().collect();
        TagVocabulary::build(&all)
    }
}

/// Deterministically generates the three splits from the config seed.
pub fn generate(config: &FixtureConfig) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let split = |name: &str, n: usize, rng: &mut ChaCha8Rng| -> Vec<Sentence> {
        (0..n).map(|i| make_sentence(format!("{name}-{i}"), rng)).collect()
    };
    Fixture {
        train: split("train", config.train, &mut rng),
        dev: split("dev", config.dev, &mut rng),
        test: split("test", config.test, &mut rng),
    }
}

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("pool is non-empty")
}

/// A noun from the full singular-noun vocabulary (no structural signal).
fn any_nn<R: Rng>(rng: &mut R) -> &'static str {
    if rng.gen_bool(0.5) {
        pick(rng, NN_THING)
    } else {
        pick(rng, NN_EVENT)
    }
}

fn any_nnp<R: Rng>(rng: &mut R) -> &'static str {
    if rng.gen_bool(0.5) {
        pick(rng, NNP_PERSON)
    } else {
        pick(rng, NNP_PLACE)
    }
}

fn any_jj<R: Rng>(rng: &mut R) -> &'static str {
    if rng.gen_bool(0.5) {
        pick(rng, JJ_PLAIN)
    } else {
        pick(rng, JJ_COMPLEMENT)
    }
}

/// A verb form with its tense tag. `pools` lists the subclasses to draw from.
fn verb<R: Rng>(rng: &mut R, pools: &[&[(&'static str, &'static str)]]) -> (&'static str, &'static str) {
    let pool = pools[rng.gen_range(0..pools.len())];
    let &(present, past) = pool.choose(rng).expect("verb pool is non-empty");
    if rng.gen_bool(0.5) {
        (present, "VBZ")
    } else {
        (past, "VBD")
    }
}

fn tok(form: &str, tag: &str, head: usize, rel: &str) -> Token {
    Token::new(form, tag).with_head(head, rel)
}

fn period(head: usize) -> Token {
    tok(".", ".", head, "punct")
}

fn make_sentence<R: Rng>(id: String, rng: &mut R) -> Sentence {
    // 15% plain transitives, 17% for each pivoted frame.
    let roll = rng.gen_range(0..100);
    let tokens = match roll {
        0..=14 => frame_plain(rng),
        15..=31 => frame_pp_proper(rng),
        32..=48 => frame_pp_common(rng),
        49..=65 => frame_copula(rng),
        66..=82 => frame_pp_verb(rng),
        _ => frame_adverb(rng),
    };
    Sentence::new(id, tokens)
}

/// `F0`: transitive clauses in assorted shapes; every slot is noise.
fn frame_plain<R: Rng>(rng: &mut R) -> Vec<Token> {
    let (v, vt) = verb(rng, &[V_GENERAL, V_PLACEMENT, V_DEPICTION]);
    match rng.gen_range(0..4) {
        0 => vec![
            // the dog carries a lamp .
            tok(pick(rng, DT_WORDS), "DT", 2, "det"),
            tok(any_nn(rng), "NN", 3, "nsubj"),
            tok(v, vt, 0, "root"),
            tok(pick(rng, DT_WORDS), "DT", 5, "det"),
            tok(any_nn(rng), "NN", 3, "dobj"),
            period(3),
        ],
        1 => vec![
            // Alice carries a bright lamp .
            tok(any_nnp(rng), "NNP", 2, "nsubj"),
            tok(v, vt, 0, "root"),
            tok(pick(rng, DT_WORDS), "DT", 5, "det"),
            tok(any_jj(rng), "JJ", 5, "amod"),
            tok(any_nn(rng), "NN", 2, "dobj"),
            period(2),
        ],
        2 => vec![
            // a quiet dog carries lamps .
            tok(pick(rng, DT_WORDS), "DT", 3, "det"),
            tok(any_jj(rng), "JJ", 3, "amod"),
            tok(any_nn(rng), "NN", 4, "nsubj"),
            tok(v, vt, 0, "root"),
            tok(pick(rng, NNS_WORDS), "NNS", 4, "dobj"),
            period(4),
        ],
        _ => vec![
            // dogs carry the lamp .  (plural subject, singular verb form is
            // fine here: the grammar does not model agreement)
            tok(pick(rng, NNS_WORDS), "NNS", 2, "nsubj"),
            tok(v, vt, 0, "root"),
            tok(pick(rng, DT_WORDS), "DT", 4, "det"),
            tok(any_nn(rng), "NN", 2, "dobj"),
            period(2),
        ],
    }
}

/// `F1`: `NNP V the N in NNP .` — place names hoist the preposition to the
/// verb, person names leave it on the object.
fn frame_pp_proper<R: Rng>(rng: &mut R) -> Vec<Token> {
    let (v, vt) = verb(rng, &[V_GENERAL]);
    let place = rng.gen_bool(0.5);
    let pobj = if place { pick(rng, NNP_PLACE) } else { pick(rng, NNP_PERSON) };
    let prep_head = if place { 2 } else { 4 };
    vec![
        tok(any_nnp(rng), "NNP", 2, "nsubj"),
        tok(v, vt, 0, "root"),
        tok(pick(rng, DT_WORDS), "DT", 4, "det"),
        tok(any_nn(rng), "NN", 2, "dobj"),
        tok(pick(rng, IN_WORDS), "IN", prep_head, "prep"),
        tok(pobj, "NNP", 5, "pobj"),
        period(2),
    ]
}

/// `F2`: `NNP V the N in the N .` — event nouns hoist the preposition to the
/// verb, physical nouns leave it on the object.
fn frame_pp_common<R: Rng>(rng: &mut R) -> Vec<Token> {
    let (v, vt) = verb(rng, &[V_GENERAL]);
    let event = rng.gen_bool(0.5);
    let pobj = if event { pick(rng, NN_EVENT) } else { pick(rng, NN_THING) };
    let prep_head = if event { 2 } else { 4 };
    vec![
        tok(any_nnp(rng), "NNP", 2, "nsubj"),
        tok(v, vt, 0, "root"),
        tok(pick(rng, DT_WORDS), "DT", 4, "det"),
        tok(any_nn(rng), "NN", 2, "dobj"),
        tok(pick(rng, IN_WORDS), "IN", prep_head, "prep"),
        tok(pick(rng, DT_WORDS), "DT", 7, "det"),
        tok(pobj, "NN", 5, "pobj"),
        period(2),
    ]
}

/// `F3`: `the N is JJ of the N .` — complement-taking adjectives pull the
/// preposition onto themselves, plain ones leave it on the copula.
fn frame_copula<R: Rng>(rng: &mut R) -> Vec<Token> {
    let (v, vt) = verb(rng, &[V_COPULA]);
    let complement = rng.gen_bool(0.5);
    let adj = if complement { pick(rng, JJ_COMPLEMENT) } else { pick(rng, JJ_PLAIN) };
    let prep_head = if complement { 4 } else { 3 };
    vec![
        tok(pick(rng, DT_WORDS), "DT", 2, "det"),
        tok(any_nn(rng), "NN", 3, "nsubj"),
        tok(v, vt, 0, "root"),
        tok(adj, "JJ", 3, "acomp"),
        tok(pick(rng, IN_WORDS), "IN", prep_head, "prep"),
        tok(pick(rng, DT_WORDS), "DT", 7, "det"),
        tok(any_nn(rng), "NN", 5, "pobj"),
        period(3),
    ]
}

/// `F4`: shape of `F2`, but the verb decides — placement verbs take the
/// preposition, depiction verbs leave it on the object.
fn frame_pp_verb<R: Rng>(rng: &mut R) -> Vec<Token> {
    let placement = rng.gen_bool(0.5);
    let (v, vt) = verb(rng, &[if placement { V_PLACEMENT } else { V_DEPICTION }]);
    let prep_head = if placement { 2 } else { 4 };
    vec![
        tok(any_nnp(rng), "NNP", 2, "nsubj"),
        tok(v, vt, 0, "root"),
        tok(pick(rng, DT_WORDS), "DT", 4, "det"),
        tok(any_nn(rng), "NN", 2, "dobj"),
        tok(pick(rng, IN_WORDS), "IN", prep_head, "prep"),
        tok(pick(rng, DT_WORDS), "DT", 7, "det"),
        tok(any_nn(rng), "NN", 5, "pobj"),
        period(2),
    ]
}

/// `F5`: `NNP V the N RB .` — manner adverbs modify the verb, locative ones
/// the object noun.
fn frame_adverb<R: Rng>(rng: &mut R) -> Vec<Token> {
    let (v, vt) = verb(rng, &[V_GENERAL]);
    let manner = rng.gen_bool(0.5);
    let adv = if manner { pick(rng, RB_MANNER) } else { pick(rng, RB_LOCATIVE) };
    let adv_head = if manner { 2 } else { 4 };
    vec![
        tok(any_nnp(rng), "NNP", 2, "nsubj"),
        tok(v, vt, 0, "root"),
        tok(pick(rng, DT_WORDS), "DT", 4, "det"),
        tok(any_nn(rng), "NN", 2, "dobj"),
        tok(adv, "RB", adv_head, "advmod"),
        period(2),
    ]
}

// --- attacker fixtures -------------------------------------------------------

/// A deterministic cipher: within each tag, the sorted vocabulary rotated by
/// one position — a derangement whenever the tag has at least two words.
/// Only tags in `targets` are mapped.
pub fn cipher_map(vocab: &TagVocabulary, targets: &TagSet) -> BTreeMap<(String, String), String> {
    let mut map = BTreeMap::new();
    for tag in targets {
        let Some(tid) = vocab.tag_id(tag) else { continue };
        let pool = vocab.tag_pool(tid);
        if pool.len() < 2 {
            continue;
        }
        for (i, &w) in pool.iter().enumerate() {
            let next = pool[(i + 1) % pool.len()];
            map.insert((tag.clone(), vocab.word(w).to_string()), vocab.word(next).to_string());
        }
    }
    map
}

/// Applies a cipher map to one sentence; returns the rewritten sentence and
/// the substitution mask. Targeted words missing from the map are an error —
/// the cipher is supposed to cover the vocabulary.
pub fn apply_cipher(
    sentence: &Sentence,
    map: &BTreeMap<(String, String), String>,
    targets: &TagSet,
) -> Result<(Sentence, Vec<bool>)> {
    let mut out = sentence.clone();
    let mut mask = vec![false; sentence.len()];
    for (i, t) in out.tokens.iter_mut().enumerate() {
        if !targets.contains(&t.tag) {
            continue;
        }
        let key = (t.tag.clone(), t.form.clone());
        match map.get(&key) {
            Some(repl) => {
                t.form = repl.clone();
                mask[i] = true;
            }
            None => {
                return Err(Error::Argument(format!(
                    "cipher map does not cover {:?}/{}",
                    t.form, t.tag
                )))
            }
        }
    }
    Ok((out, mask))
}

/// Frame-signature lexicon for the fixture verbs. Verbs in the same
/// subclass share both signatures (overlap 2); transitives across
/// subclasses share the plain transitive frame (overlap 1); copulas share
/// nothing with transitives (overlap 0).
pub fn frame_lexicon() -> FrameLexicon {
    let mut entries = std::collections::HashMap::new();
    let mut add = |pool: &[(&str, &str)], sigs: &[&str]| {
        for (present, past) in pool {
            for form in [present, past] {
                entries.insert(
                    form.to_string(),
                    sigs.iter().map(|s| s.to_string()).collect::<std::collections::BTreeSet<_>>(),
                );
            }
        }
    };
    add(V_GENERAL, &["01", "01-adv"]);
    add(V_PLACEMENT, &["01", "01-loc"]);
    add(V_DEPICTION, &["01", "01-dep"]);
    add(V_COPULA, &["0p", "0p-comp"]);
    FrameLexicon::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small() -> Fixture {
        generate(&FixtureConfig { train: 300, dev: 40, test: 40, seed: 7 })
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = FixtureConfig { train: 50, dev: 10, test: 10, seed: 123 };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.train, b.train);
        assert_eq!(a.dev, b.dev);
        assert_eq!(a.test, b.test);
        let c = generate(&FixtureConfig { seed: 124, ..cfg });
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn every_sentence_is_a_valid_tree() {
        let fx = small();
        for s in fx.train.iter().chain(&fx.dev).chain(&fx.test) {
            s.validate().unwrap();
            assert!(s.gold_tree().is_some(), "{} lacks a gold tree", s.id);
        }
    }

    #[test]
    fn vocabulary_matches_the_pools() {
        let fx = generate(&FixtureConfig { train: 4000, dev: 0, test: 0, seed: 1 });
        let vocab = fx.vocabulary();
        let pool_len = |tag: &str| vocab.tag_pool(vocab.tag_id(tag).unwrap()).len();
        // With 4000 sentences every pool word should have appeared.
        assert_eq!(pool_len("NNP"), 24);
        assert_eq!(pool_len("NN"), 30);
        assert_eq!(pool_len("NNS"), 10);
        assert_eq!(pool_len("JJ"), 24);
        assert_eq!(pool_len("VBZ"), 34);
        assert_eq!(pool_len("VBD"), 34);
        assert_eq!(pool_len("RB"), 20);
        assert_eq!(pool_len("DT"), 4);
        assert_eq!(pool_len("IN"), 4);
        assert_eq!(pool_len("."), 1);
        // Every generated word has a known subclass.
        for w in vocab.words() {
            assert!(subclass_of(w).is_some(), "{w} has no subclass");
        }
    }

    #[test]
    fn pivot_subclasses_both_occur() {
        let fx = small();
        let mut saw: BTreeSet<&str> = BTreeSet::new();
        for s in &fx.train {
            for t in &s.tokens {
                if let Some(c) = subclass_of(&t.form) {
                    saw.insert(c);
                }
            }
        }
        for class in [
            "nnp-person",
            "nnp-place",
            "nn-thing",
            "nn-event",
            "jj-plain",
            "jj-complement",
            "v-general",
            "v-placement",
            "v-depiction",
            "v-copula",
            "rb-manner",
            "rb-locative",
        ] {
            assert!(saw.contains(class), "missing subclass {class}");
        }
    }

    #[test]
    fn prepositional_attachment_tracks_the_pivot() {
        let fx = small();
        for s in fx.train.iter() {
            let tags = s.tags();
            // F1 shape: NNP V DT NN IN NNP .
            if tags == ["NNP", "VBZ", "DT", "NN", "IN", "NNP", "."]
                || tags == ["NNP", "VBD", "DT", "NN", "IN", "NNP", "."]
            {
                let tree = s.gold_tree().unwrap();
                let expected = match subclass_of(&s.tokens[5].form).unwrap() {
                    "nnp-place" => 2,
                    "nnp-person" => 4,
                    other => panic!("unexpected pivot class {other}"),
                };
                assert_eq!(tree.heads[4], expected, "in {}", s.id);
            }
        }
    }

    #[test]
    fn cipher_is_a_within_tag_derangement() {
        let fx = small();
        let vocab = fx.vocabulary();
        let targets: TagSet =
            ["NN", "NNP", "VBZ"].iter().map(|s| s.to_string()).collect();
        let map = cipher_map(&vocab, &targets);
        let mut images: BTreeMap<&str, BTreeSet<&String>> = BTreeMap::new();
        for ((tag, word), image) in &map {
            assert_ne!(word, image, "cipher fixes {word}");
            let tid = vocab.tag_id(tag).unwrap();
            let image_id = vocab.word_id(image).unwrap();
            assert!(vocab.tag_pool(tid).contains(&image_id), "image leaves the tag pool");
            images.entry(tag.as_str()).or_default().insert(image);
        }
        for tag in &targets {
            // Bijective: every word of the pool is some word's image.
            let tid = vocab.tag_id(tag).unwrap();
            assert_eq!(images[tag.as_str()].len(), vocab.tag_pool(tid).len());
        }

        let (obf, mask) = apply_cipher(&fx.test[0], &map, &targets).unwrap();
        assert_eq!(obf.len(), fx.test[0].len());
        for (i, t) in fx.test[0].tokens.iter().enumerate() {
            assert_eq!(mask[i], targets.contains(&t.tag));
            if mask[i] {
                assert_ne!(obf.tokens[i].form, t.form);
            } else {
                assert_eq!(obf.tokens[i].form, t.form);
            }
            assert_eq!(obf.tokens[i].tag, t.tag);
        }
    }

    #[test]
    fn frame_lexicon_overlaps_encode_verb_subclasses() {
        let lex = frame_lexicon();
        let overlap = |a: &str, b: &str| {
            lex.signatures(a).unwrap().intersection(lex.signatures(b).unwrap()).count()
        };
        assert_eq!(overlap("carries", "holds"), 2);
        assert_eq!(overlap("carries", "places"), 1);
        assert_eq!(overlap("places", "admires"), 1);
        assert_eq!(overlap("carries", "is"), 0);
        assert_eq!(overlap("is", "seems"), 2);
    }
}
