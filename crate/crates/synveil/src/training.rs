//! End-to-end training of the substitution policy against a frozen parser.
//!
//! The policy is trained to maximize the parser's log-likelihood of the
//! original gold tree on *obfuscated* input — a Jensen lower bound on the
//! log marginal likelihood. Each targeted position draws one discrete
//! substitute via the Gumbel-max trick; the forward pass consumes the
//! discrete word while gradients flow through its temperature-relaxed
//! softmax (straight-through estimation), reaching only the policy's
//! parameters — the parser stays bit-identical throughout.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{DepTree, Sentence, TagSet};
use crate::metrics::{attachment_scores, ScoringPolicy};
use crate::nn::{mix_seed, Adam, AdamConfig, GradMap};
use crate::obfuscator::{NeuralObfuscatorModel, ObfuscationPolicy};
use crate::parser::{ParserModel, WordInput};
use crate::{Error, Result};

/// Largest number of whole-sentence obfuscations [`exact_objectives`] will
/// enumerate.
pub const ENUMERATION_LIMIT: u128 = 10_000;

// ---------------------------------------------------------------------------
// Gumbel sampling
// ---------------------------------------------------------------------------

/// Standard Gumbel(0,1) transform of a uniform draw: `−log(−log u)`, with
/// `u` clamped to [1e-10, 1−1e-10] for numerical safety.
pub fn gumbel_transform(u: f64) -> f64 {
    let u = u.clamp(1e-10, 1.0 - 1e-10);
    -(-u.ln()).ln()
}

/// `n` independent Gumbel(0,1) draws.
pub fn gumbel_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| gumbel_transform(rng.gen::<f64>())).collect()
}

/// One Gumbel-softmax draw over a candidate support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GumbelSample {
    /// One-hot at `argmax(logits + noise)` — what the forward pass consumes.
    pub discrete: Vec<f64>,
    /// `softmax((logits + noise)/tau)` — what the gradient flows through.
    pub relaxed: Vec<f64>,
    /// The Gumbel draws used.
    pub noise: Vec<f64>,
}

impl GumbelSample {
    /// Index of the sampled candidate.
    pub fn hot(&self) -> usize {
        self.discrete.iter().position(|&x| x == 1.0).expect("discrete is one-hot")
    }
}

/// Samples from `softmax(logits)` by the Gumbel-max trick and returns both
/// the discrete one-hot and its temperature-`tau` relaxation (same noise).
pub fn gumbel_softmax<R: Rng + ?Sized>(
    logits: &[f64],
    tau: f64,
    rng: &mut R,
) -> Result<GumbelSample> {
    if logits.is_empty() {
        return Err(Error::Argument("gumbel_softmax needs a non-empty support".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("temperature must be positive, got {tau}")));
    }
    let noise = gumbel_noise(logits.len(), rng);
    let noisy: Vec<f64> = logits.iter().zip(&noise).map(|(l, g)| l + g).collect();
    let hot = noisy
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty");
    let mut discrete = vec![0.0; logits.len()];
    discrete[hot] = 1.0;
    let max = noisy[hot];
    let exps: Vec<f64> = noisy.iter().map(|&a| ((a - max) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    let relaxed = exps.into_iter().map(|e| e / z).collect();
    Ok(GumbelSample { discrete, relaxed, noise })
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnealSchedule {
    /// τ(s) = tau_start + (tau_end − tau_start)·s/S over all S steps.
    Linear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub tau_start: f64,
    pub tau_end: f64,
    pub anneal: AnnealSchedule,
    /// Weight λ of the per-position policy-entropy bonus (0 disables it).
    pub entropy_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// The targeted tag set 𝒫.
    pub targets: TagSet,
}

impl TrainingConfig {
    pub fn new(targets: TagSet) -> Self {
        TrainingConfig {
            tau_start: 1.0,
            tau_end: 0.5,
            anneal: AnnealSchedule::Linear,
            entropy_weight: 0.0,
            epochs: 8,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            seed: 1,
            targets,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_end > 0.0 && self.tau_end <= self.tau_start) {
            return Err(Error::Argument(format!(
                "temperatures must satisfy 0 < tau_end ({}) <= tau_start ({})",
                self.tau_end, self.tau_start
            )));
        }
        if self.entropy_weight < 0.0 {
            return Err(Error::Argument(format!(
                "entropy weight must be non-negative, got {}",
                self.entropy_weight
            )));
        }
        Ok(())
    }
}

/// Temperature at optimization step `step` of `total_steps`.
pub fn tau_at(config: &TrainingConfig, step: usize, total_steps: usize) -> f64 {
    match config.anneal {
        AnnealSchedule::Linear => {
            if total_steps == 0 {
                return config.tau_end;
            }
            let s = step.min(total_steps) as f64;
            config.tau_start + (config.tau_end - config.tau_start) * s / total_steps as f64
        }
    }
}

// ---------------------------------------------------------------------------
// The objective
// ---------------------------------------------------------------------------

/// Loss and policy-parameter gradients of one sentence.
///
/// Builds the policy's candidate logits, draws one straight-through Gumbel
/// sample per targeted position, routes the sampled words into the parser
/// (discrete forms for the character/tag channels, relaxed-gradient vectors
/// for the word channel), and scores the original gold tree. The loss is
/// `−(loglik + λ·Σ entropy)`; gradients are pre-scaled by `grad_scale`.
fn sentence_objective(
    obf: &NeuralObfuscatorModel,
    parser: &ParserModel,
    sentence: &Sentence,
    gold: &DepTree,
    targets: &TagSet,
    tau: f64,
    lambda: f64,
    noise_seed: u64,
    trainable: bool,
    grad_scale: f64,
) -> Result<(f64, GradMap)> {
    let mut tape = Tape::new();
    let dropout = if trainable {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(noise_seed, &[0xd0]));
        Some(obf.sample_dropout(&mut rng))
    } else {
        None
    };
    let scored = obf.forward_scores(&mut tape, sentence, targets, dropout.as_ref(), trainable)?;
    let pl = parser.leaves(&mut tape, false);

    let n = sentence.len();
    let mut forms: Vec<String> = sentence.tokens.iter().map(|t| t.form.clone()).collect();
    let mut channels: Vec<Option<Var>> = vec![None; n];
    let mut entropies: Vec<Var> = Vec::new();
    for ps in &scored {
        let m = ps.support.len();
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(noise_seed, &[0x90b, ps.position as u64]));
        let noise = gumbel_noise(m, &mut rng);
        let noise_arr = Array2::from_shape_vec((1, m), noise).expect("shape matches");
        let noisy = tape.add_const(ps.logits, noise_arr);
        let hot = {
            let v = tape.value(noisy);
            (0..m).max_by(|&a, &b| v[(0, a)].total_cmp(&v[(0, b)])).expect("m >= 1")
        };
        let scaled = tape.scale(noisy, 1.0 / tau);
        let relaxed = tape.softmax_row(scaled);
        let mut onehot = Array2::zeros((1, m));
        onehot[(0, hot)] = 1.0;
        let st = tape.straight_through(relaxed, onehot);
        let channel = parser.encoder().word_channel_support(&mut tape, &pl.enc, st, &ps.support);
        channels[ps.position] = Some(channel);
        forms[ps.position] = obf.word(ps.support[hot]).to_string();
        if lambda > 0.0 {
            let p = tape.softmax_row(ps.logits);
            let lp = tape.log_softmax_row(ps.logits);
            let plp = tape.mul(p, lp);
            let neg_h = tape.sum_all(plp);
            entropies.push(tape.neg(neg_h));
        }
    }
    let channels: Vec<Var> = channels
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.unwrap_or_else(|| {
                parser.encoder().word_channel(&mut tape, &pl.enc, &sentence.tokens[i].form)
            })
        })
        .collect();

    let form_refs: Vec<&str> = forms.iter().map(|s| s.as_str()).collect();
    let tags = sentence.tags();
    let fwd = parser.forward_with_leaves(
        &mut tape,
        &pl,
        &form_refs,
        &tags,
        WordInput::Channels(&channels),
        None,
    )?;
    let ll = parser.gold_logprob(&mut tape, &pl, &fwd, gold)?;
    let mut objective = ll;
    for h in entropies {
        let weighted = tape.scale(h, lambda);
        objective = tape.add(objective, weighted);
    }
    let loss_var = tape.neg(objective);
    let loss = tape.scalar(loss_var);
    if !trainable {
        return Ok((loss, GradMap::new(0)));
    }
    let scaled_loss = tape.scale(loss_var, grad_scale);
    let mut grads = tape.backward(scaled_loss);
    let mut map = GradMap::new(obf.store().len());
    map.absorb(&tape, &mut grads);
    Ok((loss, map))
}

/// Mean straight-through training loss of a batch: the average over
/// sentences of `−(log p₀(gold tree | sampled obfuscation) + λ·entropy)`.
/// One discrete sample per targeted position, drawn from per-position
/// substreams of `seed`. The parser must be frozen.
pub fn objective_batch(
    obf: &NeuralObfuscatorModel,
    parser: &ParserModel,
    batch: &[(Sentence, DepTree)],
    config: &TrainingConfig,
    tau: f64,
    seed: u64,
) -> Result<f64> {
    config.validate()?;
    check_pair(obf, parser)?;
    if batch.is_empty() {
        return Err(Error::Argument("objective over an empty batch".into()));
    }
    let mut sum = 0.0;
    for (i, (sentence, gold)) in batch.iter().enumerate() {
        let (loss, _) = sentence_objective(
            obf,
            parser,
            sentence,
            gold,
            &config.targets,
            tau,
            config.entropy_weight,
            mix_seed(seed, &[i as u64]),
            false,
            0.0,
        )?;
        sum += loss;
    }
    Ok(sum / batch.len() as f64)
}

fn check_pair(obf: &NeuralObfuscatorModel, parser: &ParserModel) -> Result<()> {
    if !parser.is_frozen() {
        return Err(Error::Contract(
            "the parser must be frozen before training the policy against it".into(),
        ));
    }
    if obf.vocab_fingerprint != parser.vocab_fingerprint {
        return Err(Error::Argument(
            "policy and parser were built over different vocabularies".into(),
        ));
    }
    Ok(())
}

/// Gold log-likelihood of a tree given explicit surface forms.
fn parser_gold_loglik(
    parser: &ParserModel,
    forms: &[&str],
    tags: &[&str],
    gold: &DepTree,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (pl, fwd) = parser.forward(&mut tape, forms, tags, WordInput::Forms, None, false)?;
    let ll = parser.gold_logprob(&mut tape, &pl, &fwd, gold)?;
    Ok(tape.scalar(ll))
}

/// Exact Jensen pair of one sentence by full enumeration of obfuscations:
/// the training objective `L = Σ_y p(y)·log p₀(z|y)` and the true marginal
/// `L₀ = log Σ_y p(y)·p₀(z|y)`. Always `L ≤ L₀`; equal iff the policy is
/// degenerate (a single possible obfuscation).
pub fn exact_objectives(
    obf: &NeuralObfuscatorModel,
    parser: &ParserModel,
    sentence: &Sentence,
    gold: &DepTree,
    targets: &TagSet,
) -> Result<(f64, f64)> {
    check_pair(obf, parser)?;
    let dists = obf.distribution(sentence, targets)?;
    let open: Vec<_> = dists.iter().filter(|d| !d.is_identity()).collect();
    let mut combinations: u128 = 1;
    for d in &open {
        combinations = combinations.saturating_mul(d.support.len() as u128);
        if combinations > ENUMERATION_LIMIT {
            return Err(Error::Enumeration { combinations, limit: ENUMERATION_LIMIT });
        }
    }
    let tags = sentence.tags();
    let base_forms: Vec<&str> = sentence.forms();

    // Odometer over the open positions' candidate indices.
    let mut idx = vec![0usize; open.len()];
    let mut l_terms: Vec<(f64, f64)> = Vec::new(); // (p(y), loglik(y))
    loop {
        let mut p = 1.0;
        let mut forms = base_forms.clone();
        for (d, &k) in open.iter().zip(&idx) {
            p *= d.probs[k];
            forms[d.position] = &d.support[k];
        }
        if p > 0.0 {
            let ll = parser_gold_loglik(parser, &forms, &tags, gold)?;
            l_terms.push((p, ll));
        }
        // advance
        let mut carry = true;
        for (slot, d) in idx.iter_mut().zip(&open) {
            if !carry {
                break;
            }
            *slot += 1;
            if *slot < d.support.len() {
                carry = false;
            } else {
                *slot = 0;
            }
        }
        if carry {
            break;
        }
    }
    if l_terms.is_empty() {
        return Err(Error::Contract("the policy assigns zero mass to every obfuscation".into()));
    }
    let l_exact: f64 = l_terms.iter().map(|(p, ll)| p * ll).sum();
    let max_a = l_terms.iter().map(|(p, ll)| p.ln() + ll).fold(f64::NEG_INFINITY, f64::max);
    let l0_exact =
        max_a + l_terms.iter().map(|(p, ll)| (p.ln() + ll - max_a).exp()).sum::<f64>().ln();
    Ok((l_exact, l0_exact))
}

// ---------------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObfuscatorEpochRecord {
    /// 0 is the untrained starting point (uniform policy), included in model
    /// selection.
    pub epoch: usize,
    /// Temperature at the start of the epoch.
    pub tau: f64,
    /// Mean per-sentence training loss (absent for epoch 0).
    pub train_loss: Option<f64>,
    /// Parsing accuracy on dev sentences obfuscated by the current policy.
    pub dev_uas: f64,
    pub dev_las: f64,
    pub wall_secs: f64,
    pub best: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<ObfuscatorEpochRecord>,
    pub best_epoch: usize,
    /// Recorded for reproducibility.
    pub optimizer: AdamConfig,
    pub total_steps: usize,
    pub parser_checksum: String,
}

/// Trains the policy against a frozen parser and returns the checkpoint with
/// the best dev parsing accuracy under sampled obfuscation (epoch 0 — the
/// untrained uniform policy — competes too). The parser is never touched;
/// its checksum is verified unchanged.
pub fn train_obfuscator(
    mut obf: NeuralObfuscatorModel,
    parser: &ParserModel,
    train: &[Sentence],
    dev: &[Sentence],
    config: &TrainingConfig,
) -> Result<(NeuralObfuscatorModel, TrainingReport)> {
    config.validate()?;
    check_pair(&obf, parser)?;
    if train.is_empty() {
        return Err(Error::Argument("training corpus is empty".into()));
    }
    let golds = |corpus: &[Sentence]| -> Result<Vec<DepTree>> {
        corpus
            .iter()
            .map(|s| {
                s.gold_tree()
                    .ok_or_else(|| Error::Argument(format!("sentence {} has no gold tree", s.id)))
            })
            .collect()
    };
    let train_gold = golds(train)?;
    let dev_gold = golds(dev)?;
    let parser_checksum = parser.checksum();
    let eval_seed = mix_seed(config.seed, &[0xe7a1]);

    let batch = config.batch_size.max(1);
    let total_steps = config.epochs * train.len().div_ceil(batch);
    let mut records = Vec::with_capacity(config.epochs + 1);

    let t0 = Instant::now();
    let (uas0, las0) = obfuscated_dev_scores(&obf, parser, dev, &dev_gold, config, eval_seed)?;
    records.push(ObfuscatorEpochRecord {
        epoch: 0,
        tau: tau_at(config, 0, total_steps),
        train_loss: None,
        dev_uas: uas0,
        dev_las: las0,
        wall_secs: t0.elapsed().as_secs_f64(),
        best: true,
    });
    let mut best: (f64, usize, crate::nn::ParamStore) = (uas0, 0, obf.store().clone());

    let mut adam = Adam::new(config.optimizer.clone(), obf.store().len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        let t_epoch = Instant::now();
        let epoch_tau = tau_at(config, step, total_steps);
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[0x0e, epoch as u64]));
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let tau = tau_at(config, step, total_steps);
            let grad_scale = 1.0 / chunk.len() as f64;
            let results: Vec<(f64, GradMap)> = chunk
                .par_iter()
                .map(|&i| {
                    sentence_objective(
                        &obf,
                        parser,
                        &train[i],
                        &train_gold[i],
                        &config.targets,
                        tau,
                        config.entropy_weight,
                        mix_seed(config.seed, &[0x57e9, epoch as u64, i as u64]),
                        true,
                        grad_scale,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = GradMap::new(obf.store().len());
            for (loss, g) in results {
                loss_sum += loss;
                grads.merge(g);
            }
            adam.step(obf.store_mut(), &mut grads);
            step += 1;
        }
        let (dev_uas, dev_las) =
            obfuscated_dev_scores(&obf, parser, dev, &dev_gold, config, eval_seed)?;
        let is_best = dev_uas >= best.0;
        if is_best {
            best = (dev_uas, epoch, obf.store().clone());
        }
        let train_loss = loss_sum / train.len() as f64;
        log::info!(
            "policy epoch {epoch}: tau {epoch_tau:.3}, loss {train_loss:.4}, \
             obfuscated dev UAS {dev_uas:.2}"
        );
        records.push(ObfuscatorEpochRecord {
            epoch,
            tau: epoch_tau,
            train_loss: Some(train_loss),
            dev_uas,
            dev_las,
            wall_secs: t_epoch.elapsed().as_secs_f64(),
            best: is_best,
        });
    }
    let (_, best_epoch, store) = best;
    obf.set_store(store);
    for r in &mut records {
        r.best = r.epoch == best_epoch;
    }
    if parser.checksum() != parser_checksum {
        return Err(Error::Contract("the frozen parser's parameters changed".into()));
    }
    let report = TrainingReport {
        epochs: records,
        best_epoch,
        optimizer: config.optimizer.clone(),
        total_steps,
        parser_checksum,
    };
    Ok((obf, report))
}

/// Parsing accuracy of the frozen parser on dev sentences obfuscated by the
/// current policy (one sample per sentence from a per-sentence substream).
fn obfuscated_dev_scores(
    obf: &NeuralObfuscatorModel,
    parser: &ParserModel,
    dev: &[Sentence],
    dev_gold: &[DepTree],
    config: &TrainingConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    if dev.is_empty() {
        return Ok((0.0, 0.0));
    }
    let predicted: Vec<DepTree> = dev
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[i as u64]));
            let sample = obf.sample(s, &config.targets, &mut rng)?;
            let parsed = parser.parse(&sample.obfuscated)?;
            Ok(parsed.gold_tree().expect("parse fills heads"))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = attachment_scores(dev, dev_gold, &predicted, &ScoringPolicy::default())?;
    Ok((scores.uas, scores.las))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TagSpectrum, TagVocabulary, Token};
    use crate::fixture::{self, FixtureConfig};
    use crate::nn::{self, EncoderConfig};
    use crate::obfuscator::ObfuscatorConfig;
    use crate::parser::{DecoderKind, ParserConfig};

    // --- gumbel -------------------------------------------------------------

    #[test]
    fn transform_of_one_over_e_is_zero() {
        let g = gumbel_transform(1.0 / std::f64::consts::E);
        assert!(g.abs() < 1e-12, "got {g}");
    }

    #[test]
    fn noise_mean_matches_the_euler_mascheroni_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 1_000_000;
        let mean: f64 = gumbel_noise(n, &mut rng).iter().sum::<f64>() / n as f64;
        let gamma = 0.577_215_664_901_532_9;
        assert!((mean - gamma).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn noise_is_reproducible_under_a_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(gumbel_noise(100, &mut a), gumbel_noise(100, &mut b));
    }

    #[test]
    fn discrete_samples_follow_the_categorical_distribution() {
        let probs: [f64; 3] = [0.5, 0.3, 0.2];
        let logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let mut counts = [0u64; 3];
        for _ in 0..n {
            let s = gumbel_softmax(&logits, 1.0, &mut rng).unwrap();
            counts[s.hot()] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "total variation {tv}");
    }

    /// Exact failure probability of the two-candidate sharpening event
    /// "max relaxed coordinate ≤ threshold" at temperature `tau`: the gap of
    /// two Gumbels is logistic, so this is a closed form.
    fn two_candidate_blur_probability(p: f64, tau: f64, threshold: f64) -> f64 {
        let theta = (tau * (threshold / (1.0 - threshold)).ln()).exp() - 1.0;
        let term = |pk: f64| pk * theta * (1.0 - pk) / (1.0 + theta * (1.0 - pk));
        term(p) + term(1.0 - p)
    }

    #[test]
    fn low_temperature_relaxation_is_nearly_one_hot() {
        // (0.95, 0.05) at τ = 0.01: the exact blur probability is ≈ 0.44%,
        // so > 99% of draws have a coordinate above 0.99.
        let probs: [f64; 2] = [0.95, 0.05];
        let logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        let blur = two_candidate_blur_probability(0.95, 0.01, 0.99);
        assert!((blur - 0.0043664).abs() < 1e-6, "oracle changed: {blur}");
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 10_000;
        let mut sharp = 0u64;
        for _ in 0..n {
            let s = gumbel_softmax(&logits, 0.01, &mut rng).unwrap();
            if s.relaxed.iter().cloned().fold(0.0, f64::max) > 0.99 {
                sharp += 1;
            }
        }
        let rate = sharp as f64 / n as f64;
        assert!(rate >= 0.99, "sharp rate {rate}");
        // Within 3 binomial standard deviations of the exact value.
        let sd = (blur * (1.0 - blur) / n as f64).sqrt();
        assert!((rate - (1.0 - blur)).abs() <= 3.0 * sd, "rate {rate} vs oracle {}", 1.0 - blur);
    }

    #[test]
    fn flat_categoricals_do_not_sharpen_as_reliably() {
        // Documented counterpoint: (0.5, 0.3, 0.2) at τ = 0.01 sharpens in
        // only ≈ 97.2% of draws — a 99%-of-draws bar needs a more peaked
        // distribution.
        let probs: [f64; 3] = [0.5, 0.3, 0.2];
        let logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let n = 10_000;
        let mut sharp = 0u64;
        for _ in 0..n {
            let s = gumbel_softmax(&logits, 0.01, &mut rng).unwrap();
            if s.relaxed.iter().cloned().fold(0.0, f64::max) > 0.99 {
                sharp += 1;
            }
        }
        let rate = sharp as f64 / n as f64;
        assert!(rate < 0.985 && rate > 0.95, "rate {rate}");
    }

    #[test]
    fn relaxed_and_discrete_agree_on_the_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..1000 {
            let m = rng.gen_range(1..7);
            let logits: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let tau = rng.gen_range(0.05..2.0);
            let s = gumbel_softmax(&logits, tau, &mut rng).unwrap();
            let relaxed_arg = s
                .relaxed
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            assert_eq!(relaxed_arg, s.hot());
            let sum: f64 = s.relaxed.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert_eq!(s.discrete.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(s.discrete.iter().filter(|&&x| x == 0.0).count(), m - 1);
        }
    }

    #[test]
    fn singleton_support_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let s = gumbel_softmax(&[0.7], 0.5, &mut rng).unwrap();
        assert_eq!(s.discrete, vec![1.0]);
        assert_eq!(s.relaxed, vec![1.0]);
    }

    #[test]
    fn config_invariants_are_enforced() {
        let mut c = TrainingConfig::new(TagSet::new());
        c.validate().unwrap();
        c.tau_end = 1.5;
        assert!(c.validate().is_err(), "tau_end > tau_start");
        c.tau_end = 0.0;
        assert!(c.validate().is_err(), "tau_end = 0");
        c.tau_end = 0.5;
        c.entropy_weight = -0.1;
        assert!(c.validate().is_err(), "negative entropy weight");
    }

    #[test]
    fn linear_annealing_is_exact() {
        let config = TrainingConfig::new(TagSet::new());
        let total = 400;
        for step in [0, 1, 57, 200, 399, 400] {
            let expected = 1.0 + (0.5 - 1.0) * step as f64 / total as f64;
            assert_eq!(tau_at(&config, step, total), expected);
        }
        assert_eq!(tau_at(&config, 0, 0), config.tau_end);
    }

    // --- objective ------------------------------------------------------------

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig { word_dim: 8, tag_dim: 4, char_dim: 4, hidden: 6, layers: 1, dropout: 0.33 }
    }

    fn tiny_stack(
        corpus: &[Sentence],
        seed: u64,
    ) -> (NeuralObfuscatorModel, ParserModel, TagVocabulary) {
        let vocab = TagVocabulary::build(corpus);
        let chars = nn::corpus_chars(corpus);
        let labels: Vec<String> = corpus
            .iter()
            .flat_map(|s| s.tokens.iter().filter_map(|t| t.deprel.clone()))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let parser_config = ParserConfig {
            encoder: tiny_encoder(),
            arc_mlp: 6,
            label_mlp: 4,
            decoder: DecoderKind::Greedy,
        };
        let mut parser =
            ParserModel::init(&vocab, labels, chars.clone(), parser_config, None, seed).unwrap();
        parser.freeze();
        let obf_config = ObfuscatorConfig { encoder: tiny_encoder(), shared_heads: false };
        let obf = NeuralObfuscatorModel::init(&vocab, chars, obf_config, None, seed + 1).unwrap();
        (obf, parser, vocab)
    }

    /// Gives the policy non-uniform substitution distributions.
    fn perturb_heads(obf: &mut NeuralObfuscatorModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<usize> = (0..obf.store().len()).collect();
        for id in ids {
            let name_is_head = obf.store().name(id).starts_with("head.");
            if !name_is_head {
                continue;
            }
            let mut v = obf.store().value(id).to_owned();
            for x in v.iter_mut() {
                *x = rng.gen_range(-0.8..0.8);
            }
            obf.store_mut().set(id, v);
        }
    }

    fn micro_sentences() -> Vec<Sentence> {
        let t = |f: &str, g: &str, h: usize, r: &str| Token::new(f, g).with_head(h, r);
        vec![
            Sentence::new(
                "s0",
                vec![
                    t("ax", "A", 2, "dep"),
                    t("bo", "B", 0, "root"),
                    t("cu", "C", 2, "dep"),
                ],
            ),
            Sentence::new(
                "s1",
                vec![
                    t("ay", "A", 2, "dep"),
                    t("bi", "B", 0, "root"),
                    t("cy", "C", 2, "dep"),
                    t("az", "A", 3, "dep"),
                ],
            ),
            Sentence::new("s2", vec![t("az", "A", 2, "dep"), t("bu", "B", 0, "root")]),
        ]
    }

    #[test]
    fn empty_target_set_reduces_to_the_parser_likelihood() {
        let corpus = micro_sentences();
        let (obf, parser, _) = tiny_stack(&corpus, 3);
        let batch: Vec<(Sentence, DepTree)> =
            corpus.iter().map(|s| (s.clone(), s.gold_tree().unwrap())).collect();
        let config = TrainingConfig::new(TagSet::new());
        let loss = objective_batch(&obf, &parser, &batch, &config, 1.0, 5).unwrap();
        let mut expected = 0.0;
        for (s, g) in &batch {
            let forms = s.forms();
            let tags = s.tags();
            expected -= parser_gold_loglik(&parser, &forms, &tags, g).unwrap();
        }
        expected /= batch.len() as f64;
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn unfrozen_parser_is_rejected() {
        let corpus = micro_sentences();
        let vocab = TagVocabulary::build(&corpus);
        let chars = nn::corpus_chars(&corpus);
        let parser_config = ParserConfig {
            encoder: tiny_encoder(),
            arc_mlp: 6,
            label_mlp: 4,
            decoder: DecoderKind::Greedy,
        };
        let parser =
            ParserModel::init(&vocab, vec!["dep".into(), "root".into()], chars.clone(), parser_config, None, 3)
                .unwrap();
        let obf = NeuralObfuscatorModel::init(
            &vocab,
            chars,
            ObfuscatorConfig { encoder: tiny_encoder(), shared_heads: false },
            None,
            4,
        )
        .unwrap();
        let batch = vec![(corpus[0].clone(), corpus[0].gold_tree().unwrap())];
        let config = TrainingConfig::new(TagSet::new());
        match objective_batch(&obf, &parser, &batch, &config, 1.0, 1) {
            Err(Error::Contract(msg)) => assert!(msg.contains("frozen"), "{msg}"),
            other => panic!("expected contract error, got ok={}", other.is_ok()),
        }
    }

    #[test]
    fn jensen_inequality_holds_on_random_micro_instances() {
        let targets: TagSet = ["A", "C"].iter().map(|s| s.to_string()).collect();
        for trial in 0..30 {
            let corpus = micro_sentences();
            let (mut obf, parser, _) = tiny_stack(&corpus, 100 + trial);
            perturb_heads(&mut obf, 200 + trial);
            for s in &corpus {
                let gold = s.gold_tree().unwrap();
                let (l, l0) = exact_objectives(&obf, &parser, s, &gold, &targets).unwrap();
                assert!(
                    l <= l0 + 1e-9,
                    "trial {trial} sentence {}: L {l} > L0 {l0}",
                    s.id
                );
                assert!(l0 < 0.0, "log marginal of a proper model is negative");
            }
        }
    }

    #[test]
    fn degenerate_policies_meet_jensen_with_equality() {
        let corpus = micro_sentences();
        let (obf, parser, _) = tiny_stack(&corpus, 7);
        let s = &corpus[0];
        let gold = s.gold_tree().unwrap();
        // No targets: the only obfuscation is the identity.
        let (l, l0) = exact_objectives(&obf, &parser, s, &gold, &TagSet::new()).unwrap();
        assert!((l - l0).abs() < 1e-12);
        let forms = s.forms();
        let tags = s.tags();
        let direct = parser_gold_loglik(&parser, &forms, &tags, &gold).unwrap();
        assert!((l - direct).abs() < 1e-12);
    }

    #[test]
    fn enumeration_guard_refuses_oversized_supports() {
        let fixture =
            fixture::generate(&FixtureConfig { train: 200, dev: 0, test: 0, seed: 3 });
        let (obf, parser, _) = tiny_stack(&fixture.train, 11);
        // A long sentence with every level targeted easily exceeds the
        // enumeration limit (pools have 10+ words each).
        let targets = TagSpectrum::ptb().cumulative(5).unwrap();
        let s = fixture
            .train
            .iter()
            .max_by_key(|s| s.len())
            .unwrap();
        match exact_objectives(&obf, &parser, s, &s.gold_tree().unwrap(), &targets) {
            Err(Error::Enumeration { combinations, limit }) => {
                assert!(combinations > limit);
                assert_eq!(limit, ENUMERATION_LIMIT);
            }
            other => panic!("expected enumeration error, got ok={}", other.is_ok()),
        }
    }

    #[test]
    fn one_sample_objective_is_unbiased_for_the_exact_expectation() {
        let corpus = micro_sentences();
        let (mut obf, parser, _) = tiny_stack(&corpus, 21);
        perturb_heads(&mut obf, 22);
        let targets: TagSet = ["A", "C"].iter().map(|s| s.to_string()).collect();
        let s = &corpus[1];
        let gold = s.gold_tree().unwrap();
        let (l_exact, _) = exact_objectives(&obf, &parser, s, &gold, &targets).unwrap();
        let config = TrainingConfig::new(targets);
        let batch = vec![(s.clone(), gold)];
        let n = 10_000;
        let losses: Vec<f64> = (0..n)
            .map(|seed| objective_batch(&obf, &parser, &batch, &config, 1.0, seed as u64).unwrap())
            .collect();
        let mean: f64 = losses.iter().sum::<f64>() / n as f64;
        let var: f64 =
            losses.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        // The loss estimates −L_exact.
        assert!(
            (mean - (-l_exact)).abs() <= 2.0 * se,
            "mean {mean} vs exact {} (se {se})",
            -l_exact
        );
    }

    #[test]
    fn gradients_reach_every_policy_parameter_group() {
        let fixture =
            fixture::generate(&FixtureConfig { train: 16, dev: 0, test: 0, seed: 5 });
        let (mut obf, parser, _) = tiny_stack(&fixture.train, 31);
        // Score heads start at zero (the untrained policy is exactly uniform),
        // which blocks the encoder's gradient on the very first step: it flows
        // through ∂logits/∂hidden = heads. Nudge them off zero, as the first
        // optimizer step would.
        perturb_heads(&mut obf, 32);
        let targets = TagSpectrum::ptb().cumulative(5).unwrap();
        let mut reached: Vec<bool> = vec![false; obf.store().len()];
        for (i, s) in fixture.train.iter().enumerate() {
            let gold = s.gold_tree().unwrap();
            let (_, grads) = sentence_objective(
                &obf,
                &parser,
                s,
                &gold,
                &targets,
                1.0,
                0.5, // exercise the entropy path too
                1000 + i as u64,
                true,
                1.0,
            )
            .unwrap();
            for id in 0..obf.store().len() {
                if let Some(g) = grads.get(id) {
                    if g.iter().any(|&x| x != 0.0) {
                        reached[id] = true;
                    }
                }
            }
        }
        let groups = [
            ("word embeddings", "enc.word_embed"),
            ("tag embeddings", "enc.pos_embed"),
            ("character convolution", "enc.char"),
            ("recurrent encoder", "enc.lstm"),
            ("score heads", "head."),
        ];
        for (label, prefix) in groups {
            let hit = (0..obf.store().len())
                .any(|id| obf.store().name(id).starts_with(prefix) && reached[id]);
            assert!(hit, "{label} received no gradient on any sentence");
        }
    }

    #[test]
    fn training_improves_or_keeps_dev_accuracy_and_never_touches_the_parser() {
        let fixture =
            fixture::generate(&FixtureConfig { train: 60, dev: 20, test: 0, seed: 8 });
        let all: Vec<Sentence> =
            fixture.train.iter().chain(&fixture.dev).cloned().collect();
        let (obf, parser, _) = tiny_stack(&all, 41);
        let before = parser.checksum();
        let mut config = TrainingConfig::new(TagSpectrum::ptb().cumulative(5).unwrap());
        config.epochs = 2;
        config.batch_size = 16;
        config.seed = 77;
        let obf_before = obf.checksum();
        let (trained, report) =
            train_obfuscator(obf, &parser, &fixture.train, &fixture.dev, &config).unwrap();
        assert_eq!(parser.checksum(), before, "parser parameters changed");
        assert_eq!(report.parser_checksum, before);
        assert_eq!(report.epochs.len(), 3, "epoch 0 plus two training epochs");
        assert!(report.epochs[0].train_loss.is_none());
        assert!(report.epochs[1].train_loss.is_some());
        let epoch0 = report.epochs[0].dev_uas;
        let selected = report.epochs[report.best_epoch].dev_uas;
        assert!(selected >= epoch0, "selected {selected} vs epoch 0 {epoch0}");
        assert_eq!(
            report.epochs.iter().filter(|r| r.best).count(),
            1,
            "exactly one record is marked best"
        );
        if report.best_epoch > 0 {
            assert_ne!(trained.checksum(), obf_before, "training should update the policy");
        }
        // Temperatures decrease along the linear schedule.
        for pair in report.epochs.windows(2) {
            assert!(pair[1].tau <= pair[0].tau);
        }
    }
}
