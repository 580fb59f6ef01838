//! Oracles and fixtures shared by the integration suites and the acceptance
//! runner.

#![allow(dead_code)]

use bikd::autograd::{grad_check_detailed, Tape, Tensor, Var};
use bikd::losses::ProbDist;
use bikd::Result;
use bikd::data::{CohortConfig, SeizureEvent, StateLabel, TimelineParams, WindowedSample};
use bikd::eval::Counts;
use bikd::losses::{joint_loss, DivergenceKind, FeatureLossWeights, JointLossConfig, Role};
use bikd::models::{build_model, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small conv net with two taps, 2 x 12 input.
pub const TOY_MODEL: &str = r#"
name = "toy"
input_channels = 2
input_len = 12
classes = 2
[[layers]]
kind = "conv1d"
out_channels = 3
kernel = 3
stride = 2
tap = true
[[layers]]
kind = "relu"
[[layers]]
kind = "global-avg-pool"
tap = true
[[layers]]
kind = "dense"
out_features = 2
"#;

pub fn toy_model_config() -> ModelConfig {
    ModelConfig::from_toml_str(TOY_MODEL).unwrap()
}

/// Conv net matching [`small_cohort`] windows (2 channels x 40 samples).
pub const SMALL_MODEL: &str = r#"
name = "small"
input_channels = 2
input_len = 40
classes = 2
[[layers]]
kind = "conv1d"
out_channels = 6
kernel = 5
stride = 2
[[layers]]
kind = "relu"
[[layers]]
kind = "global-avg-pool"
tap = true
[[layers]]
kind = "dense"
out_features = 2
"#;

pub fn small_model_config() -> ModelConfig {
    ModelConfig::from_toml_str(SMALL_MODEL).unwrap()
}

/// A few short recordings at 4 Hz, 10 s windows.
pub fn small_cohort(subjects: usize, seed: u64) -> CohortConfig {
    CohortConfig::from_toml_str(&format!(
        r#"
subjects = {subjects}
fs = 4.0
channels = 2
mechanism_freqs_hz = [0.5, 1.0]
amplitude = 2.0
burst_rate_hz = 0.1
lead_seizures = 3
seizure_gap_s = 600.0
seizure_duration_s = 30.0
tail_s = 300.0
seed = {seed}

[timeline]
sph_s = 30.0
pil_s = 200.0
lead_gap_s = 600.0
interictal_guard_s = 60.0
window_s = 10.0
preictal_overlap = 0.25
"#
    ))
    .unwrap()
}

/// Confusion counts by explicit case analysis, preictal as positive.
pub fn confusion_oracle(preds: &[usize], labels: &[usize]) -> Counts {
    let mut c = Counts::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (p == 1, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Label of the whole second `[t, t + 1)` from first principles: ictal and
/// guard seconds are unlabeled; seconds inside `[o - pil - sph, o - sph)` of a
/// lead seizure are preictal; seconds with no seizure onset within
/// `pil + sph` ahead and no seizure ending within `guard` behind are
/// interictal.
pub fn second_label(t: usize, events: &[SeizureEvent], duration: usize, p: &TimelineParams) -> Option<StateLabel> {
    let (a, b) = (t as f64, t as f64 + 1.0);
    if b > duration as f64 {
        return None;
    }
    let mut prev_end = 0.0;
    let mut lead = Vec::new();
    for e in events {
        if e.onset_s - prev_end >= p.lead_gap_s {
            lead.push(e.onset_s);
        }
        prev_end = e.offset_s;
    }
    if events.iter().any(|e| a < e.offset_s && b > e.onset_s) {
        return None;
    }
    if lead.iter().any(|&o| a >= o - p.pil_s - p.sph_s && b <= o - p.sph_s) {
        return Some(StateLabel::Preictal);
    }
    let near_onset = events.iter().any(|e| b > e.onset_s - p.pil_s - p.sph_s && a < e.onset_s);
    let near_offset = events.iter().any(|e| a < e.offset_s + p.interictal_guard_s && b > e.onset_s);
    if near_onset || near_offset {
        None
    } else {
        Some(StateLabel::Interictal)
    }
}

/// Random sorted, non-overlapping events on an integer grid.
pub fn random_timeline(rng: &mut impl Rng) -> (Vec<SeizureEvent>, usize) {
    let duration = rng.random_range(500..4000);
    let n = rng.random_range(0..5);
    let mut t = 0usize;
    let mut events = Vec::new();
    for _ in 0..n {
        t += rng.random_range(0..900);
        let len = rng.random_range(5..60);
        if t + len >= duration {
            break;
        }
        events.push(SeizureEvent { onset_s: t as f64, offset_s: (t + len) as f64 });
        t += len;
    }
    (events, duration)
}

pub fn oracle_params() -> TimelineParams {
    TimelineParams {
        sph_s: 30.0,
        pil_s: 120.0,
        lead_gap_s: 400.0,
        interictal_guard_s: 60.0,
        window_s: 20.0,
        preictal_overlap: 0.25,
    }
}

pub fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_windows(rng: &mut impl Rng, cfg: &ModelConfig, n: usize) -> (Tensor, Vec<usize>) {
    let x = random_tensor(rng, vec![n, cfg.input_channels, cfg.input_len]);
    let labels = (0..n).map(|_| rng.random_range(0..cfg.classes)).collect();
    (x, labels)
}

/// Value of the joint objective of `own` against the detached outputs of
/// `other`.
pub fn objective_value(
    own: &Model,
    other: &Model,
    x: &Tensor,
    labels: &[usize],
    role: Role,
    cfg: &JointLossConfig,
) -> (f64, Option<f64>, Vec<Vec<f64>>) {
    let mut t = Tape::new();
    let o = other.forward(&mut t, x).unwrap().detach(&t);
    let mut tape = Tape::new();
    let f = own.forward(&mut tape, x).unwrap();
    let l = joint_loss(&mut tape, role, &f, &o, labels, cfg).unwrap();
    let grads = tape.backward(l.total).unwrap();
    let g = f.params.iter().map(|&p| grads.get(p).unwrap().to_vec()).collect();
    (tape.value(l.total).item().unwrap(), tape.relu_margin(), g)
}

pub struct ObjectiveCheck {
    pub max_rel_error: f64,
    pub relu_margin: Option<f64>,
}

/// Central differences (h = 1e-5) of the joint objective over every
/// parameter of `own`, against the tape gradient.
pub fn objective_grad_check(
    own: &Model,
    other: &Model,
    x: &Tensor,
    labels: &[usize],
    role: Role,
    cfg: &JointLossConfig,
) -> ObjectiveCheck {
    const H: f64 = 1e-5;
    let (_, margin, analytic) = objective_value(own, other, x, labels, role, cfg);
    let mut worst = 0.0_f64;
    for (k, g) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let at = |delta: f64| {
                let mut m = own.clone();
                let p = &mut m.params_mut()[k];
                let mut data = p.data().to_vec();
                data[i] += delta;
                p.set_data(data).unwrap();
                objective_value(&m, other, x, labels, role, cfg).0
            };
            let numeric = (at(H) - at(-H)) / (2.0 * H);
            let err = (g[i] - numeric).abs() / 1.0_f64.max(g[i].abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    ObjectiveCheck { max_rel_error: worst, relu_margin: margin }
}

/// The `i`-th seeded toy configuration for the objective gradient check:
/// divergence, temperature, role and weights vary with `i`. Input draws are
/// repeated until no ReLU input sits within 1e-3 of its kink.
pub fn objective_case(i: u64) -> (Model, Model, Tensor, Vec<usize>, Role, JointLossConfig, ObjectiveCheck) {
    let cfg = toy_model_config();
    let kinds = [DivergenceKind::Mse, DivergenceKind::Kl, DivergenceKind::Logistic];
    let temps = [1.0, 2.0, 4.0, 8.0];
    let own = build_model(&cfg, 100 + i).unwrap();
    let other = build_model(&cfg, 200 + i).unwrap();
    let taps = own.tap_names();
    let mut r = rng(300 + i);
    let weights = FeatureLossWeights::new(taps.iter().map(|n| (n.clone(), r.random_range(0.0..1.0))).collect()).unwrap();
    let jl = JointLossConfig {
        temperature: temps[(i % 4) as usize],
        divergence: kinds[(i % 3) as usize],
        feature_weights: weights,
        dif_weight: r.random_range(0.1..2.0),
        div_weight: r.random_range(0.1..2.0),
        temperature_squared: i % 5 == 0,
    };
    let role = if i % 2 == 0 { Role::Cus } else { Role::Pool };
    loop {
        let (x, labels) = random_windows(&mut r, &cfg, 4);
        let check = objective_grad_check(&own, &other, &x, &labels, role, &jl);
        if check.relu_margin.is_none_or(|m| m > 1e-3) {
            return (own, other, x, labels, role, jl, check);
        }
    }
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half.
pub fn auc(scores: &[f64], labels: &[usize]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == 0).map(|(s, _)| *s).collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

pub fn labels(samples: &[WindowedSample]) -> Vec<usize> {
    samples.iter().map(|s| s.label.class()).collect()
}

type Op = fn(&mut Tape, Var, &[Tensor]) -> Result<Var>;

/// Every primitive as a scalar function of its first operand; any extra
/// operands are fixed constants.
pub fn primitives() -> Vec<(&'static str, Op)> {
    fn konst(t: &mut Tape, x: &Tensor) -> Var {
        t.constant(x.clone())
    }
    vec![
        ("matmul", |t, x, c| {
            let b = konst(t, &c[0]);
            let y = t.matmul(x, b)?;
            let y = t.mul(y, y)?;
            t.sum(y)
        }),
        ("matmul-rhs", |t, x, c| {
            let a = konst(t, &c[1]);
            let y = t.matmul(a, x)?;
            let y = t.mul(y, y)?;
            t.sum(y)
        }),
        ("conv1d", |t, x, c| {
            let w = konst(t, &c[2]);
            let y = t.conv1d(x, w, 2, 1)?;
            let y = t.mul(y, y)?;
            t.sum(y)
        }),
        ("conv1d-weights", |t, x, c| {
            let inp = konst(t, &c[3]);
            let y = t.conv1d(inp, x, 1, 1)?;
            let y = t.mul(y, y)?;
            t.sum(y)
        }),
        ("relu", |t, x, _| {
            let y = t.relu(x)?;
            let y = t.mul(y, y)?;
            t.sum(y)
        }),
        ("mean", |t, x, _| {
            let y = t.mul(x, x)?;
            t.mean(y)
        }),
        ("add", |t, x, c| {
            let k = konst(t, &c[4]);
            let y = t.add(x, k)?;
            let y = t.mul(y, y)?;
            t.sum(y)
        }),
        ("mul", |t, x, c| {
            let k = konst(t, &c[4]);
            let y = t.mul(x, k)?;
            let y = t.mul(y, x)?;
            t.sum(y)
        }),
        ("softmax", |t, x, c| {
            let k = konst(t, &c[4]);
            let y = t.softmax(x, 1.7)?;
            let y = t.mul(y, k)?;
            t.sum(y)
        }),
        ("log-softmax", |t, x, c| {
            let k = konst(t, &c[4]);
            let y = t.log_softmax(x, 0.8)?;
            let y = t.mul(y, k)?;
            t.sum(y)
        }),
        ("ln", |t, x, _| {
            let y = t.mul(x, x)?;
            let y = t.affine(y, 1.0, 0.5)?;
            let y = t.ln(y)?;
            t.sum(y)
        }),
    ]
}

pub fn check_all(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let (m, k, n) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
    let (batch, cin, cout, len, kern) =
        (r.random_range(1..3), r.random_range(1..3), r.random_range(1..4), r.random_range(6..12), r.random_range(1..4));
    let mat = random_tensor(&mut r, vec![m, k]);
    let rhs = random_tensor(&mut r, vec![k, n]);
    let lhs = random_tensor(&mut r, vec![n, m]);
    let signal = random_tensor(&mut r, vec![batch, cin, len]);
    let kernels = random_tensor(&mut r, vec![cout, cin, kern]);
    let consts = vec![rhs, lhs, kernels.clone(), signal.clone(), random_tensor(&mut r, vec![m, k])];
    let mut out = Vec::new();
    for (name, op) in primitives() {
        let x = match name {
            "conv1d" => signal.clone(),
            "conv1d-weights" => kernels.clone(),
            _ => mat.clone(),
        };
        let f = |t: &mut Tape, v: Var| op(t, v, &consts);
        let check = grad_check_detailed(f, &x);
        if name == "relu" && check.relu_margin.is_some_and(|mg| mg < 1e-4) {
            continue;
        }
        out.push((name, check.max_rel_error));
    }
    out
}

/// Random distribution with heavy mass differences between classes.
pub fn random_dist(r: &mut impl Rng, n: usize) -> ProbDist {
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0_f64).powi(3) + 1e-12).collect();
    let s: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let rest: f64 = p[1..].iter().sum();
    p[0] = 1.0 - rest;
    ProbDist::new(p).unwrap()
}
