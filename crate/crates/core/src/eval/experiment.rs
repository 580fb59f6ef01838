use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::metrics::{accuracy_on, compute_metrics, predict_samples, Metrics};
use crate::data::{split_by_time, SplitFractions, SubjectDataset, WindowedSample};
use crate::error::{Error, Result};
use crate::losses::DivergenceKind;
use crate::models::{Model, ModelConfig};
use crate::trainer::{distill, fine_tune, pretrain_pool, train_baseline, DistillConfig};

/// Training scheme of a result row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Patient-specific training from scratch.
    Baseline,
    /// The customized model after two-stage distillation.
    Distilled,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Baseline => "baseline",
            Scheme::Distilled => "distilled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectResult {
    pub subject: u32,
    pub baseline: Metrics,
    pub distilled: Metrics,
}

impl SubjectResult {
    pub fn get(&self, scheme: Scheme) -> &Metrics {
        match scheme {
            Scheme::Baseline => &self.baseline,
            Scheme::Distilled => &self.distilled,
        }
    }
}

/// Unweighted mean over subjects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub accuracy: f64,
    /// Mean over the subjects where sensitivity is defined.
    pub sensitivity: Option<f64>,
    pub fpr_per_hour: f64,
}

impl Summary {
    pub fn of<'a>(metrics: impl IntoIterator<Item = &'a Metrics>) -> Summary {
        let (mut n, mut acc, mut fpr, mut sens, mut ns) = (0usize, 0.0, 0.0, 0.0, 0usize);
        for m in metrics {
            n += 1;
            acc += m.accuracy;
            fpr += m.fpr_per_hour;
            if let Some(s) = m.sensitivity {
                sens += s;
                ns += 1;
            }
        }
        let d = n.max(1) as f64;
        Summary { accuracy: acc / d, sensitivity: (ns > 0).then(|| sens / ns as f64), fpr_per_hour: fpr / d }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentResult {
    /// One row per subject, in subject-id order.
    pub rows: Vec<SubjectResult>,
}

impl ExperimentResult {
    pub fn summary(&self, scheme: Scheme) -> Summary {
        Summary::of(self.rows.iter().map(|r| r.get(scheme)))
    }
}

/// One subject's time-ordered splits.
#[derive(Debug, Clone)]
pub struct Fold {
    pub subject: u32,
    pub train: SubjectDataset,
    pub val: Vec<WindowedSample>,
    pub test: Vec<WindowedSample>,
}

/// A pool model for one fold plus the subjects its pretraining batches
/// drew from.
#[derive(Debug, Clone)]
pub struct PoolFold {
    pub model: Model,
    pub seen_subjects: BTreeSet<u32>,
}

type PoolKey = (f64, usize, usize, u64);
type BaselineKey = (f64, usize, usize, u64);

fn pool_key(c: &DistillConfig) -> PoolKey {
    (c.pretrain_lr, c.pretrain_batch_size, c.epochs_stage1, c.seed)
}

fn baseline_key(c: &DistillConfig) -> BaselineKey {
    (c.lr, c.batch_size, c.epochs_stage2, c.seed)
}

/// Leave-one-out state over a cohort. Pool models and baseline metrics
/// depend on fewer settings than distillation does, so they are cached and
/// reused across runs that only change distillation settings.
pub struct LooContext {
    model: ModelConfig,
    window_s: f64,
    folds: Vec<Fold>,
    pools: Option<(PoolKey, Vec<PoolFold>)>,
    baselines: Option<(BaselineKey, Vec<Metrics>)>,
    results: Vec<(DistillConfig, ExperimentResult)>,
}

impl LooContext {
    pub fn new(cohort: &[SubjectDataset], model: &ModelConfig, fractions: SplitFractions, window_s: f64) -> Result<Self> {
        if cohort.len() < 2 {
            return Err(Error::Data(format!("leave-one-out needs at least 2 subjects, got {}", cohort.len())));
        }
        let mut folds = cohort
            .iter()
            .map(|d| {
                let s = split_by_time(d.subject, &d.samples, fractions)?;
                Ok(Fold {
                    subject: d.subject,
                    train: SubjectDataset { subject: d.subject, samples: s.train },
                    val: s.val,
                    test: s.test,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        folds.sort_by_key(|f| f.subject);
        if folds.windows(2).any(|w| w[0].subject == w[1].subject) {
            return Err(Error::Data("duplicate subject ids in cohort".into()));
        }
        Ok(LooContext { model: model.clone(), window_s, folds, pools: None, baselines: None, results: Vec::new() })
    }

    pub fn folds(&self) -> &[Fold] {
        &self.folds
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model
    }

    fn fold_index(&self, subject: u32) -> Result<usize> {
        self.folds
            .binary_search_by_key(&subject, |f| f.subject)
            .map_err(|_| Error::Data(format!("subject {subject} is not in the cohort")))
    }

    fn train_pool(&self, excluded: usize, cfg: &DistillConfig) -> Result<PoolFold> {
        let others: Vec<SubjectDataset> =
            self.folds.iter().enumerate().filter(|(j, _)| *j != excluded).map(|(_, f)| f.train.clone()).collect();
        let run = pretrain_pool(&self.model, &others, cfg)?;
        let seen_subjects = run.batch_subjects.iter().flatten().copied().collect();
        Ok(PoolFold { model: run.model, seen_subjects })
    }

    /// Pool models for every fold, trained on the other subjects' training
    /// splits.
    pub fn pools(&mut self, cfg: &DistillConfig) -> Result<&[PoolFold]> {
        let key = pool_key(cfg);
        if self.pools.as_ref().is_none_or(|(k, _)| *k != key) {
            let pools = (0..self.folds.len())
                .into_par_iter()
                .map(|i| self.train_pool(i, cfg))
                .collect::<Result<Vec<_>>>()?;
            self.pools = Some((key, pools));
        }
        Ok(&self.pools.as_ref().expect("just set").1)
    }

    fn baselines(&mut self, cfg: &DistillConfig) -> Result<Vec<Metrics>> {
        let key = baseline_key(cfg);
        if self.baselines.as_ref().is_none_or(|(k, _)| *k != key) {
            let metrics = self
                .folds
                .par_iter()
                .map(|f| {
                    let model = train_baseline(&self.model, &f.train, cfg)?;
                    compute_metrics(&predict_samples(&model, &f.test)?, &f.test, self.window_s)
                })
                .collect::<Result<Vec<_>>>()?;
            self.baselines = Some((key, metrics));
        }
        Ok(self.baselines.as_ref().expect("just set").1.clone())
    }

    /// Runs every fold: pool on the other subjects, distillation on the
    /// subject's training split, both schemes scored on its test split.
    /// Results are remembered per configuration.
    pub fn evaluate(&mut self, cfg: &DistillConfig) -> Result<ExperimentResult> {
        cfg.validate()?;
        if let Some((_, r)) = self.results.iter().find(|(c, _)| c == cfg) {
            return Ok(r.clone());
        }
        let baselines = self.baselines(cfg)?;
        self.pools(cfg)?;
        let pools = &self.pools.as_ref().expect("trained").1;
        let rows = self
            .folds
            .par_iter()
            .zip(pools.par_iter())
            .zip(baselines.into_par_iter())
            .map(|((f, pool), baseline)| {
                let out = distill(&pool.model, &f.train, cfg)?;
                let distilled = compute_metrics(&predict_samples(&out.cus, &f.test)?, &f.test, self.window_s)?;
                Ok(SubjectResult { subject: f.subject, baseline, distilled })
            })
            .collect::<Result<Vec<_>>>()?;
        let result = ExperimentResult { rows };
        self.results.push((cfg.clone(), result.clone()));
        Ok(result)
    }

    /// Held-out data of every subject except `subject`: their test splits,
    /// which no pool model trains on.
    pub fn other_subjects_test(&self, subject: u32) -> Vec<WindowedSample> {
        self.folds.iter().filter(|f| f.subject != subject).flat_map(|f| f.test.iter().cloned()).collect()
    }

    /// Accuracy of the pool model for `subject` on the other subjects'
    /// held-out data before stage 2, after distillation (the updated pool),
    /// and after plain fine-tuning with the same stage-2 settings.
    pub fn forgetting(&mut self, subject: u32, cfg: &DistillConfig) -> Result<ForgettingRow> {
        cfg.validate()?;
        let i = self.fold_index(subject)?;
        let pool = match &self.pools {
            Some((k, pools)) if *k == pool_key(cfg) => pools[i].model.clone(),
            _ => self.train_pool(i, cfg)?.model,
        };
        let fold = &self.folds[i];
        let held_out = self.other_subjects_test(subject);
        let distilled = distill(&pool, &fold.train, cfg)?;
        let tuned = fine_tune(&pool, &fold.train, cfg)?;
        Ok(ForgettingRow {
            subject,
            before: accuracy_on(&pool, &held_out)?,
            after_distill: accuracy_on(&distilled.pool, &held_out)?,
            after_fine_tune: accuracy_on(&tuned, &held_out)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForgettingRow {
    pub subject: u32,
    pub before: f64,
    pub after_distill: f64,
    pub after_fine_tune: f64,
}

impl ForgettingRow {
    pub fn distill_drop(&self) -> f64 {
        self.before - self.after_distill
    }

    pub fn fine_tune_drop(&self) -> f64 {
        self.before - self.after_fine_tune
    }
}

pub fn leave_one_out(
    cohort: &[SubjectDataset],
    model: &ModelConfig,
    cfg: &DistillConfig,
    fractions: SplitFractions,
    window_s: f64,
) -> Result<ExperimentResult> {
    LooContext::new(cohort, model, fractions, window_s)?.evaluate(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    /// Divergence only, feature term only, both.
    Loss,
    Divergence,
    Temperature,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 3] = [AblationAxis::Loss, AblationAxis::Divergence, AblationAxis::Temperature];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Loss => "loss",
            AblationAxis::Divergence => "divergence",
            AblationAxis::Temperature => "temperature",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" | "loss-components" => Ok(AblationAxis::Loss),
            "divergence" | "divergence-kind" => Ok(AblationAxis::Divergence),
            "temperature" => Ok(AblationAxis::Temperature),
            other => Err(Error::Parameter(format!("unknown ablation axis {other:?} (loss, divergence, temperature)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub summary: Summary,
    /// `None` for the baseline row itself.
    pub result: Option<ExperimentResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub axis: AblationAxis,
    /// Patient-specific reference the deltas are taken against.
    pub baseline: Summary,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

pub const TEMPERATURES: [f64; 3] = [1.0, 4.0, 8.0];

/// Settings of each cell on `axis`, derived from `cfg`.
pub fn ablation_cells(cfg: &DistillConfig, axis: AblationAxis) -> Vec<(String, DistillConfig)> {
    match axis {
        AblationAxis::Loss => vec![
            ("L_div only".into(), DistillConfig { dif_weight: 0.0, ..cfg.clone() }),
            ("L_dif only".into(), DistillConfig { div_weight: 0.0, ..cfg.clone() }),
            ("both".into(), cfg.clone()),
        ],
        AblationAxis::Divergence => [DivergenceKind::Mse, DivergenceKind::Kl, DivergenceKind::Logistic]
            .into_iter()
            .map(|d| (d.name().to_string(), DistillConfig { divergence: d, ..cfg.clone() }))
            .collect(),
        AblationAxis::Temperature => TEMPERATURES
            .into_iter()
            .map(|t| (format!("T={t}"), DistillConfig { temperature: t, ..cfg.clone() }))
            .collect(),
    }
}

/// Runs leave-one-out for every cell on `axis`. The temperature table also
/// lists the naive patient-specific row first.
pub fn ablate(ctx: &mut LooContext, cfg: &DistillConfig, axis: AblationAxis) -> Result<AblationTable> {
    let mut rows = Vec::new();
    let mut baseline = None;
    for (label, cell) in ablation_cells(cfg, axis) {
        let result = ctx.evaluate(&cell)?;
        baseline.get_or_insert(result.summary(Scheme::Baseline));
        rows.push(AblationRow { label, summary: result.summary(Scheme::Distilled), result: Some(result) });
    }
    let baseline = baseline.expect("every axis has cells");
    if axis == AblationAxis::Temperature {
        rows.insert(0, AblationRow { label: "naive".into(), summary: baseline, result: None });
    }
    Ok(AblationTable { axis, baseline, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::StateLabel;

    #[test]
    fn axis_names_parse() {
        for a in AblationAxis::ALL {
            assert_eq!(a.name().parse::<AblationAxis>().unwrap(), a);
        }
        assert!(matches!("depth".parse::<AblationAxis>(), Err(Error::Parameter(_))));
    }

    #[test]
    fn temperature_cells() {
        let cells = ablation_cells(&DistillConfig::default(), AblationAxis::Temperature);
        let ts: Vec<f64> = cells.iter().map(|(_, c)| c.temperature).collect();
        assert_eq!(ts, vec![1.0, 4.0, 8.0]);
        let loss = ablation_cells(&DistillConfig::default(), AblationAxis::Loss);
        assert_eq!(loss[2].1, DistillConfig::default());
    }

    #[test]
    fn summary_is_unweighted() {
        let m = |acc: f64, sens: Option<f64>| Metrics {
            accuracy: acc,
            sensitivity: sens,
            fpr_per_hour: 1.0,
            counts: Default::default(),
            interictal_hours: 1.0,
        };
        let s = Summary::of(&[m(1.0, Some(0.5)), m(0.5, None)]);
        assert_eq!(s.accuracy, 0.75);
        assert_eq!(s.sensitivity, Some(0.5));
    }

    #[test]
    fn one_subject_is_rejected() {
        let d = SubjectDataset {
            subject: 1,
            samples: vec![WindowedSample {
                subject: 1,
                label: StateLabel::Preictal,
                start_s: 0.0,
                channels: 1,
                len: 1,
                window: vec![0.0],
            }],
        };
        let cfg = ModelConfig::from_toml_str(
            "name = \"m\"\ninput_channels = 1\ninput_len = 1\nclasses = 2\n[[layers]]\nkind = \"flatten\"\n[[layers]]\nkind = \"dense\"\nout_features = 2\n",
        )
        .unwrap();
        assert!(matches!(
            LooContext::new(&[d], &cfg, SplitFractions::default(), 20.0),
            Err(Error::Data(_))
        ));
    }
}
