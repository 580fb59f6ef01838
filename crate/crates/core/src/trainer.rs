//! Pool pretraining and alternating two-model distillation.
//!
//! In stage 2 both models see the same mini-batch. The *active* model takes a
//! full Adam step on its joint objective; the *passive* one is moved by a
//! [`PassiveRule`] computed from its own objective on that batch. Roles swap
//! after every batch, across epoch boundaries too.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor};
use crate::data::{batch_tensor, labels_of, StateLabel, SubjectDataset, WindowedSample};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, predict_samples, Metrics};
use crate::losses::{
    cross_entropy_logits, joint_loss, DivergenceKind, FeatureLossWeights, JointLossConfig, Role,
};
use crate::models::{build_model, Model, ModelConfig};
use crate::rng::{self, derive_seed};

/// How the passive model moves on its batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PassiveRule {
    /// `θ ← θ − (1 − φ)·lr·g`
    #[default]
    #[serde(rename = "damped")]
    DampedGradient,
    /// `θ ← φ·θ + (1 − φ)·θ_other`, with the other model's weights taken at
    /// the start of the batch.
    #[serde(rename = "ema")]
    ParameterEma,
    /// `θ ← φ·θ + (1 − φ)·lr·g`, read literally. It shrinks the weights
    /// toward a gradient-sized vector and is kept only for comparison runs.
    #[serde(rename = "literal")]
    LiteralPaper,
}

impl PassiveRule {
    pub fn name(self) -> &'static str {
        match self {
            PassiveRule::DampedGradient => "damped",
            PassiveRule::ParameterEma => "ema",
            PassiveRule::LiteralPaper => "literal",
        }
    }
}

impl std::str::FromStr for PassiveRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "damped" => Ok(PassiveRule::DampedGradient),
            "ema" => Ok(PassiveRule::ParameterEma),
            "literal" => Ok(PassiveRule::LiteralPaper),
            other => Err(Error::Parameter(format!("unknown passive rule {other:?} (damped, ema, literal)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Learning rate for stage 2 and for patient-specific training.
    pub lr: f64,
    pub batch_size: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    /// Learning rate and batch size of pool pretraining.
    pub pretrain_lr: f64,
    pub pretrain_batch_size: usize,
    pub temperature: f64,
    pub momentum: f64,
    pub divergence: DivergenceKind,
    /// Per-tap feature weights; `None` gives each of the `n` taps weight `1 / n`.
    pub feature_weights: Option<FeatureLossWeights>,
    pub dif_weight: f64,
    pub div_weight: f64,
    pub temperature_squared: bool,
    pub passive_rule: PassiveRule,
    pub initial_role: Role,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            lr: 5e-4,
            batch_size: 32,
            epochs_stage1: 150,
            epochs_stage2: 150,
            pretrain_lr: 5e-4,
            pretrain_batch_size: 32,
            temperature: 4.0,
            momentum: 0.995,
            divergence: DivergenceKind::Logistic,
            feature_weights: None,
            dif_weight: 1.0,
            div_weight: 1.0,
            temperature_squared: false,
            passive_rule: PassiveRule::DampedGradient,
            initial_role: Role::Pool,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.pretrain_lr > 0.0 && self.pretrain_lr.is_finite()) {
            return bad(format!("learning rates must be positive (lr {}, pretrain_lr {})", self.lr, self.pretrain_lr));
        }
        if self.batch_size == 0 || self.pretrain_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad(format!("momentum {} not in [0, 1]", self.momentum));
        }
        if !(self.dif_weight >= 0.0 && self.div_weight >= 0.0) {
            return bad("loss weights must be nonnegative".into());
        }
        Ok(())
    }

    pub fn joint_loss_config(&self, taps: &[String]) -> Result<JointLossConfig> {
        let feature_weights = match &self.feature_weights {
            Some(w) => {
                w.validate(taps)?;
                w.clone()
            }
            None => FeatureLossWeights::uniform(taps),
        };
        Ok(JointLossConfig {
            temperature: self.temperature,
            divergence: self.divergence,
            feature_weights,
            dif_weight: self.dif_weight,
            div_weight: self.div_weight,
            temperature_squared: self.temperature_squared,
        })
    }
}

/// Adam with `β = (0.9, 0.999)` and `ε = 1e-8`.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(model: &Model, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.numel()]).collect();
        Adam { lr, t: 0, m: zeros.clone(), v: zeros }
    }

    /// Applies one step and returns the L2 norm of the parameter change.
    pub fn step(&mut self, model: &mut Model, grads: &[Vec<f64>]) -> Result<f64> {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let mut sq = 0.0;
        for (i, p) in model.params_mut().iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            let data: Vec<f64> = p
                .data()
                .iter()
                .enumerate()
                .map(|(j, &w)| {
                    m[j] = Self::BETA1 * m[j] + (1.0 - Self::BETA1) * g[j];
                    v[j] = Self::BETA2 * v[j] + (1.0 - Self::BETA2) * g[j] * g[j];
                    let delta = self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + Self::EPS);
                    sq += delta * delta;
                    w - delta
                })
                .collect();
            p.set_data(data)?;
        }
        Ok(sq.sqrt())
    }
}

/// Applies the passive rule in place and returns the L2 norm of the change.
///
/// `other` is required by [`PassiveRule::ParameterEma`] only.
pub fn passive_update(
    model: &mut Model,
    grads: &[Vec<f64>],
    other: Option<&[Tensor]>,
    rule: PassiveRule,
    lr: f64,
    momentum: f64,
) -> Result<f64> {
    if grads.len() != model.params().len() {
        return Err(Error::Contract(format!("{} gradients for {} parameters", grads.len(), model.params().len())));
    }
    let phi = momentum;
    let other = match (rule, other) {
        (PassiveRule::ParameterEma, Some(o)) if o.len() == grads.len() => Some(o),
        (PassiveRule::ParameterEma, _) => {
            return Err(Error::Contract("the ema rule needs the other model's parameters".into()))
        }
        _ => None,
    };
    let mut sq = 0.0;
    for (i, p) in model.params_mut().iter_mut().enumerate() {
        let g = &grads[i];
        let data: Vec<f64> = p
            .data()
            .iter()
            .enumerate()
            .map(|(j, &w)| match rule {
                PassiveRule::DampedGradient => w - (1.0 - phi) * lr * g[j],
                PassiveRule::ParameterEma => phi * w + (1.0 - phi) * other.expect("checked")[i].data()[j],
                PassiveRule::LiteralPaper => phi * w + (1.0 - phi) * lr * g[j],
            })
            .collect();
        sq += data.iter().zip(p.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        p.set_data(data)?;
    }
    Ok(sq.sqrt())
}

/// Fisher-Yates order for one epoch.
pub fn epoch_order(n: usize, shuffle_seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng(derive_seed(shuffle_seed, "epoch", epoch as u64)));
    idx
}

fn check_classes(samples: &[&WindowedSample], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Data(format!("{what}: no samples")));
    }
    let pos = samples.iter().filter(|s| s.label == StateLabel::Preictal).count();
    if pos == 0 || pos == samples.len() {
        return Err(Error::Data(format!("{what}: only one class present")));
    }
    Ok(())
}

fn grads_of(tape: &Tape, grads: &crate::autograd::Gradients, params: &[crate::autograd::Var]) -> Vec<Vec<f64>> {
    params
        .iter()
        .map(|&v| grads.get(v).map_or_else(|| vec![0.0; tape.value(v).numel()], <[f64]>::to_vec))
        .collect()
}

/// Outcome of plain cross-entropy training.
#[derive(Debug, Clone)]
pub struct NaiveRun {
    pub model: Model,
    /// Mean loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Source subjects of every batch, in order.
    pub batch_subjects: Vec<Vec<u32>>,
}

/// Mini-batch Adam on cross-entropy, starting from `model`.
pub fn train_naive(
    mut model: Model,
    samples: &[&WindowedSample],
    lr: f64,
    batch_size: usize,
    epochs: usize,
    shuffle_seed: u64,
) -> Result<NaiveRun> {
    if batch_size == 0 || !(lr > 0.0) {
        return Err(Error::Parameter("batch size and learning rate must be positive".into()));
    }
    check_classes(samples, "training data")?;
    let mut adam = Adam::new(&model, lr);
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut batch_subjects = Vec::new();
    for epoch in 0..epochs {
        let order = epoch_order(samples.len(), shuffle_seed, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&WindowedSample> = chunk.iter().map(|&i| samples[i]).collect();
            let x = batch_tensor(&batch)?;
            let labels = labels_of(&batch);
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &x)?;
            let loss = cross_entropy_logits(&mut tape, out.logits, &labels)?;
            let g = tape.backward(loss)?;
            let grads = grads_of(&tape, &g, &out.params);
            adam.step(&mut model, &grads)?;
            total += tape.value(loss).item()? * batch.len() as f64;
            batch_subjects.push(batch.iter().map(|s| s.subject).collect());
        }
        epoch_losses.push(total / samples.len() as f64);
    }
    Ok(NaiveRun { model, epoch_losses, batch_subjects })
}

pub fn pool_init_seed(cfg: &DistillConfig) -> u64 {
    derive_seed(cfg.seed, "pool-init", 0)
}

/// Initialization seed of the customized model (and of the matched
/// patient-specific baseline) for `subject`.
pub fn cus_init_seed(cfg: &DistillConfig, subject: u32) -> u64 {
    derive_seed(cfg.seed, "cus-init", u64::from(subject))
}

/// Stage-2 shuffle seed for `subject`, shared by every training scheme run on
/// that subject.
pub fn subject_shuffle_seed(cfg: &DistillConfig, subject: u32) -> u64 {
    derive_seed(cfg.seed, "subject-shuffle", u64::from(subject))
}

/// Stage 1: trains a fresh model on the pooled data for `epochs_stage1`
/// epochs with `pretrain_lr` and `pretrain_batch_size`.
pub fn pretrain_pool(config: &ModelConfig, data: &[SubjectDataset], cfg: &DistillConfig) -> Result<NaiveRun> {
    cfg.validate()?;
    let pooled: Vec<&WindowedSample> = data.iter().flat_map(|d| d.samples.iter()).collect();
    check_classes(&pooled, "pooled pretraining data")?;
    let model = build_model(config, pool_init_seed(cfg))?;
    train_naive(
        model,
        &pooled,
        cfg.pretrain_lr,
        cfg.pretrain_batch_size,
        cfg.epochs_stage1,
        derive_seed(cfg.seed, "pool-shuffle", 0),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub batch: usize,
    pub role: Role,
    /// Terms of the active model's objective.
    pub l_pred: f64,
    pub l_dif: f64,
    pub l_div: f64,
    pub pool_update_norm: f64,
    pub cus_update_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn roles(&self) -> Vec<Role> {
        self.records.iter().map(|r| r.role).collect()
    }

    /// Mean total objective of the active model per epoch.
    pub fn epoch_mean_loss(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.records {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.l_pred + r.l_dif + r.l_div;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wr.write_record(["epoch", "batch", "role", "l_pred", "l_dif", "l_div", "pool_update_norm", "cus_update_norm"])
            .map_err(io)?;
        for r in &self.records {
            wr.write_record([
                r.epoch.to_string(),
                r.batch.to_string(),
                r.role.name().to_string(),
                format!("{:.9e}", r.l_pred),
                format!("{:.9e}", r.l_dif),
                format!("{:.9e}", r.l_div),
                format!("{:.9e}", r.pool_update_norm),
                format!("{:.9e}", r.cus_update_norm),
            ])
            .map_err(io)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    /// The customized model, used as the final classifier.
    pub cus: Model,
    /// The pool model after stage 2.
    pub pool: Model,
    pub log: TrainLog,
}

/// Stage 2 on one subject's samples.
///
/// Both objectives of a batch are computed from the same pair of forward
/// passes, so each model learns from the other's pre-update outputs.
pub fn distill(pool: &Model, subject: &SubjectDataset, cfg: &DistillConfig) -> Result<DistillOutcome> {
    cfg.validate()?;
    let samples: Vec<&WindowedSample> = subject.samples.iter().collect();
    check_classes(&samples, &format!("subject {}", subject.subject))?;
    let mut cus = pool.clone_architecture(cus_init_seed(cfg, subject.subject))?;
    let mut pool = pool.clone();
    let taps = pool.tap_names();
    if taps != cus.tap_names() {
        return Err(Error::Contract("pool and customized models expose different taps".into()));
    }
    let loss_cfg = cfg.joint_loss_config(&taps)?;
    let mut adam_pool = Adam::new(&pool, cfg.lr);
    let mut adam_cus = Adam::new(&cus, cfg.lr);
    let shuffle = subject_shuffle_seed(cfg, subject.subject);
    let mut role = cfg.initial_role;
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs_stage2 {
        let order = epoch_order(samples.len(), shuffle, epoch);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&WindowedSample> = chunk.iter().map(|&i| samples[i]).collect();
            let x = batch_tensor(&batch)?;
            let labels = labels_of(&batch);

            let mut tape = Tape::new();
            let fp = pool.forward(&mut tape, &x)?;
            let fc = cus.forward(&mut tape, &x)?;
            let (dp, dc) = (fp.detach(&tape), fc.detach(&tape));
            let lp = joint_loss(&mut tape, Role::Pool, &fp, &dc, &labels, &loss_cfg)?;
            let lc = joint_loss(&mut tape, Role::Cus, &fc, &dp, &labels, &loss_cfg)?;
            let gp = grads_of(&tape, &tape.backward(lp.total)?, &fp.params);
            let gc = grads_of(&tape, &tape.backward(lc.total)?, &fc.params);

            let (active_loss, pool_norm, cus_norm) = match role {
                Role::Pool => {
                    let snapshot = pool.params().to_vec();
                    let pn = adam_pool.step(&mut pool, &gp)?;
                    let cn = passive_update(&mut cus, &gc, Some(&snapshot), cfg.passive_rule, cfg.lr, cfg.momentum)?;
                    (lp, pn, cn)
                }
                Role::Cus => {
                    let snapshot = cus.params().to_vec();
                    let cn = adam_cus.step(&mut cus, &gc)?;
                    let pn = passive_update(&mut pool, &gp, Some(&snapshot), cfg.passive_rule, cfg.lr, cfg.momentum)?;
                    (lc, pn, cn)
                }
            };
            log.records.push(TrainRecord {
                epoch,
                batch: b,
                role,
                l_pred: active_loss.pred,
                l_dif: active_loss.dif,
                l_div: active_loss.div,
                pool_update_norm: pool_norm,
                cus_update_norm: cus_norm,
            });
            role = role.other();
        }
    }
    Ok(DistillOutcome { cus, pool, log })
}

/// Patient-specific training on one subject, from the same initialization
/// and shuffle order the customized model gets in [`distill`].
pub fn train_baseline(config: &ModelConfig, subject: &SubjectDataset, cfg: &DistillConfig) -> Result<Model> {
    cfg.validate()?;
    let samples: Vec<&WindowedSample> = subject.samples.iter().collect();
    let model = build_model(config, cus_init_seed(cfg, subject.subject))?;
    let shuffle = subject_shuffle_seed(cfg, subject.subject);
    Ok(train_naive(model, &samples, cfg.lr, cfg.batch_size, cfg.epochs_stage2, shuffle)?.model)
}

/// Plain fine-tuning of `pool` on one subject with stage-2 settings.
pub fn fine_tune(pool: &Model, subject: &SubjectDataset, cfg: &DistillConfig) -> Result<Model> {
    cfg.validate()?;
    let samples: Vec<&WindowedSample> = subject.samples.iter().collect();
    let shuffle = subject_shuffle_seed(cfg, subject.subject);
    Ok(train_naive(pool.clone(), &samples, cfg.lr, cfg.batch_size, cfg.epochs_stage2, shuffle)?.model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub lr: Vec<f64>,
    pub batch_size: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid { lr: vec![1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2], batch_size: vec![4, 8, 16, 32] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub lr: f64,
    pub batch_size: usize,
    pub metrics: Metrics,
}

/// Picks the cell with the highest accuracy, then the lowest FPR, then the
/// lowest learning rate. Remaining ties keep the earlier cell.
pub fn select_cell(cells: &[GridCell]) -> Option<&GridCell> {
    cells.iter().reduce(|best, c| {
        let key = |x: &GridCell| (x.metrics.accuracy, -x.metrics.fpr_per_hour, -x.lr);
        let (a, b) = (key(c), key(best));
        if a.0 > b.0 || (a.0 == b.0 && (a.1 > b.1 || (a.1 == b.1 && a.2 > b.2))) {
            c
        } else {
            best
        }
    })
}

/// Patient-specific grid search: trains a baseline per `(lr, batch_size)`
/// cell on `train`, scores it on `val`, and returns `cfg` with the winning
/// cell's values.
pub fn grid_search(
    config: &ModelConfig,
    train: &SubjectDataset,
    val: &[WindowedSample],
    grid: &Grid,
    cfg: &DistillConfig,
    window_s: f64,
) -> Result<(DistillConfig, Vec<GridCell>)> {
    if grid.lr.is_empty() || grid.batch_size.is_empty() {
        return Err(Error::Parameter("empty hyper-parameter grid".into()));
    }
    if val.is_empty() {
        return Err(Error::Data(format!("subject {}: empty validation split", train.subject)));
    }
    let mut cells = Vec::new();
    for &lr in &grid.lr {
        for &batch_size in &grid.batch_size {
            let cell_cfg = DistillConfig { lr, batch_size, ..cfg.clone() };
            let model = train_baseline(config, train, &cell_cfg)?;
            let preds = predict_samples(&model, val)?;
            cells.push(GridCell { lr, batch_size, metrics: compute_metrics(&preds, val, window_s)? });
        }
    }
    let best = select_cell(&cells).expect("non-empty grid");
    let chosen = DistillConfig { lr: best.lr, batch_size: best.batch_size, ..cfg.clone() };
    Ok((chosen, cells))
}
