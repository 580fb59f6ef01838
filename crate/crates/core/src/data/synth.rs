//! Synthetic EEG-like cohorts.
//!
//! Every subject shares a small set of oscillatory "mechanisms". Before each
//! planted seizure, bursts of those oscillations appear on top of AR(1) noise,
//! drawn according to the subject's mixture weights and projected onto the
//! channels through a subject-specific mixing matrix. Outside the preictal
//! zones the signal is noise only; seizures themselves carry a strong
//! rhythm on every channel.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::timeline::{label_timeline, segment_windows, TimelineParams};
use super::{Recording, SeizureEvent, SubjectDataset, WindowedSample};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed};

/// One oscillation generator. An amplitude of zero makes a null mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub name: String,
    pub freq_hz: f64,
    pub amplitude: f64,
    /// Burst length; each burst has a Hann envelope.
    pub burst_s: f64,
    /// Spatial pattern over channels, before subject mixing.
    pub pattern: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject: u32,
    /// Probability of each mechanism per burst. Nonnegative, sums to 1.
    pub mixture: Vec<f64>,
    /// `channels x channels`, row-major.
    pub mixing: Vec<f64>,
    /// Burst amplitude multiplier.
    pub gain: f64,
    /// Added to every mechanism frequency.
    pub freq_shift_hz: f64,
    /// AR(1) coefficient of the background noise.
    pub noise_ar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub fs: f64,
    pub channels: usize,
    pub mechanisms: Vec<Mechanism>,
    pub subjects: Vec<SubjectProfile>,
    /// Stationary standard deviation of the background noise.
    pub noise_sigma: f64,
    /// Mean burst rate inside preictal zones.
    pub burst_rate_hz: f64,
    pub lead_seizures: usize,
    /// Seizure-free time before each seizure; at least `timeline.lead_gap_s`.
    pub seizure_gap_s: f64,
    pub seizure_duration_s: f64,
    /// Recording time after the last seizure.
    pub tail_s: f64,
    pub ictal_amplitude: f64,
    pub timeline: TimelineParams,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.timeline.validate()?;
        if !(self.fs > 0.0) || self.channels == 0 || self.subjects.is_empty() || self.mechanisms.is_empty() {
            return bad("synthetic spec needs fs > 0, channels, subjects and mechanisms".into());
        }
        if !(self.noise_sigma > 0.0 && self.burst_rate_hz >= 0.0 && self.seizure_duration_s > 0.0 && self.tail_s >= 0.0)
        {
            return bad("noise sigma and seizure duration must be positive, rates and tail nonnegative".into());
        }
        if self.lead_seizures == 0 {
            return bad("at least one lead seizure is required".into());
        }
        if self.seizure_gap_s < self.timeline.lead_gap_s {
            return bad(format!(
                "seizure gap {} s is shorter than the lead gap {} s, so no seizure would be a lead seizure",
                self.seizure_gap_s, self.timeline.lead_gap_s
            ));
        }
        let window = (self.timeline.window_s * self.fs).round();
        if window < 2.0 {
            return bad(format!("a {} s window at {} Hz holds fewer than 2 samples", self.timeline.window_s, self.fs));
        }
        for m in &self.mechanisms {
            if m.pattern.len() != self.channels || !(m.amplitude >= 0.0) || !(m.burst_s > 0.0) || !(m.freq_hz > 0.0) {
                return bad(format!("mechanism {:?} is malformed", m.name));
            }
        }
        for s in &self.subjects {
            let sum: f64 = s.mixture.iter().sum();
            if s.mixture.len() != self.mechanisms.len() || s.mixture.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9
            {
                return bad(format!("subject {}: mixture weights must be nonnegative and sum to 1", s.subject));
            }
            if s.mixing.len() != self.channels * self.channels {
                return bad(format!("subject {}: mixing matrix must be {0} x {0}", self.channels));
            }
            if !(s.noise_ar.abs() < 1.0) || !(s.gain >= 0.0) {
                return bad(format!("subject {}: noise_ar must be in (-1, 1) and gain nonnegative", s.subject));
            }
            for m in &self.mechanisms {
                let f = m.freq_hz + s.freq_shift_hz;
                if !(f > 0.0 && f < self.fs / 2.0) {
                    return bad(format!("subject {}: mechanism {:?} at {f} Hz is outside (0, fs/2)", s.subject, m.name));
                }
            }
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.lead_seizures as f64 * (self.seizure_gap_s + self.seizure_duration_s) + self.tail_s
    }

    pub fn events(&self) -> Vec<SeizureEvent> {
        (0..self.lead_seizures)
            .map(|i| {
                let onset = self.seizure_gap_s + i as f64 * (self.seizure_gap_s + self.seizure_duration_s);
                SeizureEvent { onset_s: onset, offset_s: onset + self.seizure_duration_s }
            })
            .collect()
    }
}

/// Recording of the subject at `index` in `spec.subjects`.
pub fn generate_recording(spec: &SyntheticSpec, index: usize) -> Result<Recording> {
    spec.validate()?;
    let profile = spec
        .subjects
        .get(index)
        .ok_or_else(|| Error::Config(format!("no subject at index {index}")))?;
    let c = spec.channels;
    let n = (spec.duration_s() * spec.fs).round() as usize;
    let mut rng = rng::rng(derive_seed(spec.seed, "recording", u64::from(profile.subject)));
    let mut x = vec![0.0f64; c * n];

    let innovation = spec.noise_sigma * (1.0 - profile.noise_ar * profile.noise_ar).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for ch in 0..c {
        let row = &mut x[ch * n..(ch + 1) * n];
        let mut prev = spec.noise_sigma * normal.sample(&mut rng);
        for v in row.iter_mut() {
            prev = profile.noise_ar * prev + innovation * normal.sample(&mut rng);
            *v = prev;
        }
    }

    let projected: Vec<Vec<f64>> = spec
        .mechanisms
        .iter()
        .map(|m| {
            (0..c)
                .map(|i| (0..c).map(|j| profile.mixing[i * c + j] * m.pattern[j]).sum())
                .collect()
        })
        .collect();
    let events = spec.events();
    let lead = spec.timeline.pil_s + spec.timeline.sph_s;
    for e in &events {
        let zone_start = (e.onset_s - lead).max(0.0);
        if spec.burst_rate_hz > 0.0 {
            let gaps = Exp::new(spec.burst_rate_hz).expect("positive rate");
            let mut t = zone_start + gaps.sample(&mut rng);
            while t < e.onset_s {
                let m = pick(&profile.mixture, rng.random::<f64>());
                let mech = &spec.mechanisms[m];
                let phase = rng.random::<f64>() * 2.0 * PI;
                let amp = mech.amplitude * profile.gain;
                let f = mech.freq_hz + profile.freq_shift_hz;
                add_burst(&mut x, n, spec.fs, t, mech.burst_s.min(e.onset_s - t), f, phase, amp, &projected[m]);
                t += gaps.sample(&mut rng);
            }
        }
        let phase = rng.random::<f64>() * 2.0 * PI;
        let ictal = vec![1.0; c];
        add_burst(&mut x, n, spec.fs, e.onset_s, spec.seizure_duration_s, 3.0f64.min(spec.fs / 4.0), phase, spec.ictal_amplitude, &ictal);
    }

    Ok(Recording {
        subject: profile.subject,
        fs: spec.fs,
        channels: c,
        samples: x.into_iter().map(|v| v as f32).collect(),
        events,
    })
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

#[allow(clippy::too_many_arguments)]
fn add_burst(x: &mut [f64], n: usize, fs: f64, t0: f64, dur: f64, f: f64, phase: f64, amp: f64, pattern: &[f64]) {
    if amp == 0.0 || dur <= 0.0 {
        return;
    }
    let first = (t0 * fs).round() as usize;
    let len = ((dur * fs).round() as usize).min(n.saturating_sub(first));
    for k in 0..len {
        let env = 0.5 - 0.5 * (2.0 * PI * k as f64 / len as f64).cos();
        let s = amp * env * (2.0 * PI * f * k as f64 / fs + phase).sin();
        for (ch, w) in pattern.iter().enumerate() {
            x[ch * n + first + k] += w * s;
        }
    }
}

pub fn generate_cohort(spec: &SyntheticSpec) -> Result<Vec<Recording>> {
    spec.validate()?;
    (0..spec.subjects.len()).into_par_iter().map(|i| generate_recording(spec, i)).collect()
}

/// Labels and segments one recording.
pub fn window_recording(rec: &Recording, p: &TimelineParams) -> Result<Vec<WindowedSample>> {
    rec.validate()?;
    segment_windows(rec, &label_timeline(rec, p), p)
}

/// Generates, labels and windows every subject. Recordings are dropped once
/// windowed.
pub fn prepare_cohort(spec: &SyntheticSpec) -> Result<Vec<SubjectDataset>> {
    spec.validate()?;
    (0..spec.subjects.len())
        .into_par_iter()
        .map(|i| {
            let rec = generate_recording(spec, i)?;
            Ok(SubjectDataset { subject: rec.subject, samples: window_recording(&rec, &spec.timeline)? })
        })
        .collect()
}

/// Compact cohort description that expands into a [`SyntheticSpec`].
///
/// Subject `s` favours mechanism `s mod mechanisms` with weight
/// `dominant_weight` and splits the rest evenly. Subjects listed in
/// `null_subjects` put all weight on an extra zero-amplitude mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub subjects: usize,
    pub fs: f64,
    pub channels: usize,
    pub mechanism_freqs_hz: Vec<f64>,
    pub amplitude: f64,
    pub burst_s: f64,
    pub dominant_weight: f64,
    pub null_subjects: Vec<u32>,
    /// Standard deviation of the off-identity mixing entries.
    pub mixing_jitter: f64,
    /// Subject frequency shifts are uniform in `[-freq_jitter_hz, freq_jitter_hz]`.
    pub freq_jitter_hz: f64,
    /// Subject gains are uniform in this range.
    pub gain_range: [f64; 2],
    pub noise_ar_range: [f64; 2],
    pub noise_sigma: f64,
    pub burst_rate_hz: f64,
    pub lead_seizures: usize,
    pub seizure_gap_s: f64,
    pub seizure_duration_s: f64,
    pub tail_s: f64,
    pub ictal_amplitude: f64,
    pub timeline: TimelineParams,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            subjects: 10,
            fs: 64.0,
            channels: 8,
            mechanism_freqs_hz: vec![5.0, 9.0, 14.0, 22.0],
            amplitude: 1.0,
            burst_s: 4.0,
            dominant_weight: 0.7,
            null_subjects: Vec::new(),
            mixing_jitter: 0.3,
            freq_jitter_hz: 0.5,
            gain_range: [0.8, 1.2],
            noise_ar_range: [0.85, 0.95],
            noise_sigma: 1.0,
            burst_rate_hz: 0.1,
            lead_seizures: 3,
            seizure_gap_s: 14_400.0,
            seizure_duration_s: 60.0,
            tail_s: 3600.0,
            ictal_amplitude: 4.0,
            timeline: TimelineParams::default(),
            seed: 0,
        }
    }
}

impl CohortConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("cohort config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_spec(&self) -> Result<SyntheticSpec> {
        if self.mechanism_freqs_hz.is_empty() || self.subjects == 0 || self.channels == 0 {
            return Err(Error::Config("cohort needs subjects, channels and mechanism frequencies".into()));
        }
        if !(0.0..=1.0).contains(&self.dominant_weight) {
            return Err(Error::Config(format!("dominant weight {} not in [0, 1]", self.dominant_weight)));
        }
        for (lo, hi, what) in [
            (self.gain_range[0], self.gain_range[1], "gain_range"),
            (self.noise_ar_range[0], self.noise_ar_range[1], "noise_ar_range"),
        ] {
            if !(lo <= hi) {
                return Err(Error::Config(format!("{what} [{lo}, {hi}] is empty")));
            }
        }
        let c = self.channels;
        let mut rng = rng::rng(derive_seed(self.seed, "cohort", 0));
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut mechanisms: Vec<Mechanism> = self
            .mechanism_freqs_hz
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let raw: Vec<f64> = (0..c).map(|_| normal.sample(&mut rng)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                Mechanism {
                    name: format!("m{i}"),
                    freq_hz: f,
                    amplitude: self.amplitude,
                    burst_s: self.burst_s,
                    pattern: raw.iter().map(|v| v * (c as f64).sqrt() / norm).collect(),
                }
            })
            .collect();
        let k = mechanisms.len();
        let any_null = !self.null_subjects.is_empty();
        if any_null {
            mechanisms.push(Mechanism {
                name: "null".into(),
                freq_hz: mechanisms[0].freq_hz,
                amplitude: 0.0,
                burst_s: self.burst_s,
                pattern: vec![0.0; c],
            });
        }
        let subjects = (0..self.subjects)
            .map(|s| {
                let id = s as u32;
                let mut mixture = vec![0.0; mechanisms.len()];
                if self.null_subjects.contains(&id) {
                    mixture[k] = 1.0;
                } else if k == 1 {
                    mixture[0] = 1.0;
                } else {
                    for (m, w) in mixture.iter_mut().take(k).enumerate() {
                        *w = if m == s % k { self.dominant_weight } else { (1.0 - self.dominant_weight) / (k - 1) as f64 };
                    }
                }
                let mixing = (0..c * c)
                    .map(|i| f64::from(u8::from(i / c == i % c)) + self.mixing_jitter * normal.sample(&mut rng))
                    .collect();
                SubjectProfile {
                    subject: id,
                    mixture,
                    mixing,
                    gain: uniform(&mut rng, self.gain_range),
                    freq_shift_hz: uniform(&mut rng, [-self.freq_jitter_hz, self.freq_jitter_hz]),
                    noise_ar: uniform(&mut rng, self.noise_ar_range),
                }
            })
            .collect();
        let spec = SyntheticSpec {
            fs: self.fs,
            channels: c,
            mechanisms,
            subjects,
            noise_sigma: self.noise_sigma,
            burst_rate_hz: self.burst_rate_hz,
            lead_seizures: self.lead_seizures,
            seizure_gap_s: self.seizure_gap_s,
            seizure_duration_s: self.seizure_duration_s,
            tail_s: self.tail_s,
            ictal_amplitude: self.ictal_amplitude,
            timeline: self.timeline,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn uniform(rng: &mut rng::Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}
