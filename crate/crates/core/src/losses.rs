//! Objectives for both training stages.
//!
//! Each divergence exists twice: a plain `f64` version over [`ProbDist`]s and
//! a tape version over batched probability rows. The tape versions are what
//! training differentiates; the plain ones are what reports and tests compare
//! against.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{softmax_row, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::{DetachedForward, ForwardResult};

/// Probabilities are clamped to `[PROB_EPSILON, 1 - PROB_EPSILON]` before any
/// logarithm inside a divergence, and floored at it inside cross-entropy.
pub const PROB_EPSILON: f64 = 1e-7;

/// A class distribution: entries in `[0, 1]` summing to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Data(format!("not a probability vector: {probs:?}")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("probabilities sum to {s}")));
        }
        Ok(ProbDist(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    pub fn argmax(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    }
}

/// Which Bregman generator the distillation divergence uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceKind {
    /// `F(p) = p^2`: squared Euclidean distance, symmetric.
    Mse,
    /// `F(p) = p ln p + (1 - p) ln(1 - p)` applied to each class entry.
    Logistic,
    /// `F(p) = sum p ln p`: Kullback-Leibler divergence.
    Kl,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 3] = [DivergenceKind::Mse, DivergenceKind::Kl, DivergenceKind::Logistic];

    pub fn name(self) -> &'static str {
        match self {
            DivergenceKind::Mse => "mse",
            DivergenceKind::Logistic => "logistic",
            DivergenceKind::Kl => "kl",
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(DivergenceKind::Mse),
            "logistic" => Ok(DivergenceKind::Logistic),
            "kl" => Ok(DivergenceKind::Kl),
            other => Err(Error::Parameter(format!("unknown divergence '{other}' (expected mse, kl or logistic)"))),
        }
    }
}

/// Which model a joint objective is being computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Pool,
    Cus,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Pool => Role::Cus,
            Role::Cus => Role::Pool,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Pool => "pool",
            Role::Cus => "cus",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Nonnegative weight per tapped feature map, keyed by tap name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureLossWeights(BTreeMap<String, f64>);

impl FeatureLossWeights {
    pub fn new(weights: BTreeMap<String, f64>) -> Result<Self> {
        if let Some((k, v)) = weights.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Parameter(format!("feature weight for '{k}' must be nonnegative, got {v}")));
        }
        Ok(FeatureLossWeights(weights))
    }

    /// `1 / n` on each of the `n` taps.
    pub fn uniform(names: &[String]) -> Self {
        let w = 1.0 / names.len().max(1) as f64;
        FeatureLossWeights(names.iter().map(|n| (n.clone(), w)).collect())
    }

    pub fn zeros(names: &[String]) -> Self {
        FeatureLossWeights(names.iter().map(|n| (n.clone(), 0.0)).collect())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn is_all_zero(&self) -> bool {
        self.0.values().all(|&v| v == 0.0)
    }

    /// Checks that the keys are exactly `names`.
    pub fn validate(&self, names: &[String]) -> Result<()> {
        let mut sorted: Vec<&String> = names.iter().collect();
        sorted.sort();
        if !self.0.keys().eq(sorted.iter().copied()) {
            return Err(Error::Contract(format!(
                "feature weights {:?} do not match model taps {names:?}",
                self.0.keys().collect::<Vec<_>>()
            )));
        }
        Ok(())
    }
}

/// `softmax(logits / temperature)`.
pub fn softmax_temperature(logits: &[f64], temperature: f64) -> Result<ProbDist> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Parameter(format!("temperature must be positive, got {temperature}")));
    }
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("logits must be finite and non-empty: {logits:?}")));
    }
    ProbDist::new(softmax_row(logits, temperature))
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::Data(format!("label {label} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean of `-ln p[label]` over rows. Class ids are zero-based.
pub fn cross_entropy(probs: &[ProbDist], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::Contract(format!("{} distributions for {} labels", probs.len(), labels.len())));
    }
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        check_label(y, p.len())?;
        total -= p.probs()[y].max(PROB_EPSILON).ln();
    }
    Ok(total / probs.len() as f64)
}

/// Tape cross-entropy over probability rows `[batch, classes]`.
pub fn cross_entropy_probs(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    let floored = tape.clamp(probs, PROB_EPSILON, 1.0)?;
    let logp = tape.ln(floored)?;
    let picked = tape.gather(logp, labels)?;
    let m = tape.mean(picked)?;
    tape.scale(m, -1.0)
}

/// Tape cross-entropy computed from logits through a log-softmax at
/// temperature 1. Equal to [`cross_entropy_probs`] of the softmax away from
/// saturation, and keeps its gradient `p - onehot` when a row saturates.
pub fn cross_entropy_logits(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let logp = tape.log_softmax(logits, 1.0)?;
    let picked = tape.gather(logp, labels)?;
    let m = tape.mean(picked)?;
    tape.scale(m, -1.0)
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

/// `D(target, own)` for two distributions. The first argument fixes the
/// direction of the asymmetric kinds.
pub fn bregman_divergence(target: &ProbDist, own: &ProbDist, kind: DivergenceKind) -> Result<f64> {
    if target.len() != own.len() {
        return Err(Error::Dimension(format!("distributions of length {} and {}", target.len(), own.len())));
    }
    let pairs = target.probs().iter().zip(own.probs());
    Ok(match kind {
        DivergenceKind::Mse => pairs.map(|(p, q)| (p - q) * (p - q)).sum(),
        DivergenceKind::Kl => pairs
            .map(|(&p, &q)| {
                let (p, q) = (clamp_prob(p), clamp_prob(q));
                p * (p.ln() - q.ln())
            })
            .sum(),
        DivergenceKind::Logistic => pairs.map(|(&p, &q)| logistic_term(p, q)).sum(),
    })
}

/// Logistic loss of one probability entry: `p ln(p / q) + (1 - p) ln((1 - p) / (1 - q))`,
/// after clamping both to `[PROB_EPSILON, 1 - PROB_EPSILON]`.
pub fn logistic_term(p: f64, q: f64) -> f64 {
    let (p, q) = (clamp_prob(p), clamp_prob(q));
    p * (p.ln() - q.ln()) + (1.0 - p) * ((1.0 - p).ln() - (1.0 - q).ln())
}

/// Tape divergence between probability rows, averaged over the batch.
/// Gradients flow into whichever arguments require them.
pub fn divergence(tape: &mut Tape, target: Var, own: Var, kind: DivergenceKind) -> Result<Var> {
    let per_row = match kind {
        DivergenceKind::Mse => {
            let d = tape.sub(target, own)?;
            let sq = tape.mul(d, d)?;
            tape.sum_last_axis(sq)?
        }
        DivergenceKind::Kl | DivergenceKind::Logistic => {
            let p = tape.clamp(target, PROB_EPSILON, 1.0 - PROB_EPSILON)?;
            let q = tape.clamp(own, PROB_EPSILON, 1.0 - PROB_EPSILON)?;
            let mut terms = xlogx_ratio(tape, p, q)?;
            if kind == DivergenceKind::Logistic {
                let p1 = tape.affine(p, -1.0, 1.0)?;
                let q1 = tape.affine(q, -1.0, 1.0)?;
                let comp = xlogx_ratio(tape, p1, q1)?;
                terms = tape.add(terms, comp)?;
            }
            tape.sum_last_axis(terms)?
        }
    };
    tape.mean(per_row)
}

/// Elementwise `p * (ln p - ln q)`.
fn xlogx_ratio(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let lp = tape.ln(p)?;
    let lq = tape.ln(q)?;
    let d = tape.sub(lp, lq)?;
    tape.mul(p, d)
}

fn check_taps<A, B>(a: &[(String, A)], b: &[(String, B)], shape_a: impl Fn(&A) -> Vec<usize>, shape_b: impl Fn(&B) -> Vec<usize>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("{} taps vs {} taps", a.len(), b.len())));
    }
    for ((na, va), (nb, vb)) in a.iter().zip(b) {
        if na != nb || shape_a(va) != shape_b(vb) {
            return Err(Error::Contract(format!(
                "tap mismatch: {na} {:?} vs {nb} {:?}",
                shape_a(va),
                shape_b(vb)
            )));
        }
    }
    Ok(())
}

/// `sum_i alpha_i * ||a_i - b_i||^2` over matching taps, summed over every
/// element (batch included).
pub fn feature_difference(
    tape: &mut Tape,
    taps_a: &[(String, Var)],
    taps_b: &[(String, Var)],
    weights: &FeatureLossWeights,
) -> Result<Var> {
    {
        let t: &Tape = tape;
        check_taps(taps_a, taps_b, |v| t.value(*v).shape().to_vec(), |v| t.value(*v).shape().to_vec())?;
    }
    let names: Vec<String> = taps_a.iter().map(|(n, _)| n.clone()).collect();
    weights.validate(&names)?;
    let mut total: Option<Var> = None;
    for ((name, a), (_, b)) in taps_a.iter().zip(taps_b) {
        let alpha = weights.get(name).expect("validated");
        if alpha == 0.0 {
            continue;
        }
        let d = tape.sub(*a, *b)?;
        let sq = tape.mul(d, d)?;
        let s = tape.sum(sq)?;
        let term = tape.scale(s, alpha)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(tape.constant(Tensor::scalar(0.0)?)),
    }
}

/// Plain-value twin of [`feature_difference`].
pub fn feature_difference_values(
    taps_a: &[(String, Tensor)],
    taps_b: &[(String, Tensor)],
    weights: &FeatureLossWeights,
) -> Result<f64> {
    check_taps(taps_a, taps_b, |t| t.shape().to_vec(), |t| t.shape().to_vec())?;
    let names: Vec<String> = taps_a.iter().map(|(n, _)| n.clone()).collect();
    weights.validate(&names)?;
    Ok(taps_a
        .iter()
        .zip(taps_b)
        .map(|((name, a), (_, b))| {
            let sq: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
            weights.get(name).expect("validated") * sq
        })
        .sum())
}

/// Everything the joint objective needs besides the two forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLossConfig {
    pub temperature: f64,
    pub divergence: DivergenceKind,
    pub feature_weights: FeatureLossWeights,
    /// Multiplier on the feature term.
    pub dif_weight: f64,
    /// Multiplier on the divergence term.
    pub div_weight: f64,
    /// Multiply the divergence by `T^2`.
    pub temperature_squared: bool,
}

/// Joint objective value. `pred`, `dif` and `div` are the weighted terms whose
/// sum is `total`.
#[derive(Debug, Clone, Copy)]
pub struct JointLoss {
    pub role: Role,
    pub total: Var,
    pub pred: f64,
    pub dif: f64,
    pub div: f64,
}

/// Joint objective for the model in `role`:
///
/// `CE(own, labels) + dif_weight * L_dif / B + div_weight * D(p_other, p_own)`
///
/// where `D` is averaged over the batch and both distributions use
/// `cfg.temperature`. The other model enters only through detached values, so
/// gradients reach `own`'s parameters alone. The feature term is divided by the
/// batch size to stay on the same per-sample scale as the other two.
pub fn joint_loss(
    tape: &mut Tape,
    role: Role,
    own: &ForwardResult,
    other: &DetachedForward,
    labels: &[usize],
    cfg: &JointLossConfig,
) -> Result<JointLoss> {
    let own_logits = tape.value(own.logits).clone();
    if own_logits.shape() != other.logits.shape() {
        return Err(Error::Contract(format!(
            "{role} logits {:?} vs other {:?}",
            own_logits.shape(),
            other.logits.shape()
        )));
    }
    let batch = own_logits.shape()[0];
    let classes = own_logits.shape()[1];

    let pred = cross_entropy_logits(tape, own.logits, labels)?;
    let mut total = pred;

    let dif_value = if cfg.dif_weight != 0.0 && !cfg.feature_weights.is_all_zero() {
        let other_taps: Vec<(String, Var)> =
            other.taps.iter().map(|(n, t)| (n.clone(), tape.constant(t.clone()))).collect();
        let raw = feature_difference(tape, &own.taps, &other_taps, &cfg.feature_weights)?;
        let dif = tape.scale(raw, cfg.dif_weight / batch as f64)?;
        total = tape.add(total, dif)?;
        tape.value(dif).item()?
    } else {
        0.0
    };

    let div_value = if cfg.div_weight != 0.0 {
        let target: Vec<f64> =
            other.logits.data().chunks(classes).flat_map(|r| softmax_row(r, cfg.temperature)).collect();
        let target = tape.constant(Tensor::new(vec![batch, classes], target)?);
        let own_p = tape.softmax(own.logits, cfg.temperature)?;
        let raw = divergence(tape, target, own_p, cfg.divergence)?;
        let t2 = if cfg.temperature_squared { cfg.temperature * cfg.temperature } else { 1.0 };
        let div = tape.scale(raw, cfg.div_weight * t2)?;
        total = tape.add(total, div)?;
        tape.value(div).item()?
    } else {
        0.0
    };

    Ok(JointLoss { role, total, pred: tape.value(pred).item()?, dif: dif_value, div: div_value })
}
