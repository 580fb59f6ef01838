//! Seizure timeline labeling and window segmentation.
//!
//! Times are seconds from the start of the recording.

use serde::{Deserialize, Serialize};

use super::{Recording, SeizureEvent, StateLabel, WindowedSample};
use crate::error::{Error, Result};

/// Interval lengths that define the preictal and interictal states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimelineParams {
    /// Seizure prediction horizon: gap between the preictal window and onset.
    pub sph_s: f64,
    /// Preictal interval length.
    pub pil_s: f64,
    /// Seizure-free time required before a seizure for it to count as lead.
    pub lead_gap_s: f64,
    /// Time after a seizure offset excluded from the interictal state.
    pub interictal_guard_s: f64,
    pub window_s: f64,
    /// Fractional overlap between consecutive preictal windows.
    pub preictal_overlap: f64,
}

impl Default for TimelineParams {
    fn default() -> Self {
        TimelineParams {
            sph_s: 300.0,
            pil_s: 1800.0,
            lead_gap_s: 14_400.0,
            interictal_guard_s: 1800.0,
            window_s: 20.0,
            preictal_overlap: 0.25,
        }
    }
}

impl TimelineParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.sph_s, self.pil_s, self.lead_gap_s, self.interictal_guard_s, self.window_s];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("timeline durations must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.preictal_overlap) {
            return Err(Error::Config(format!("preictal overlap {} not in [0, 1)", self.preictal_overlap)));
        }
        Ok(())
    }

    pub fn stride_s(&self, label: StateLabel) -> f64 {
        match label {
            StateLabel::Interictal => self.window_s,
            StateLabel::Preictal => self.window_s * (1.0 - self.preictal_overlap),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub label: StateLabel,
}

impl LabeledInterval {
    pub fn len_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Indices of lead seizures: those preceded by at least `lead_gap_s` without
/// a seizure. For the first event the recording start bounds the gap.
pub fn lead_seizures(events: &[SeizureEvent], p: &TimelineParams) -> Vec<usize> {
    (0..events.len())
        .filter(|&i| {
            let prev_end = if i == 0 { 0.0 } else { events[i - 1].offset_s };
            events[i].onset_s - prev_end >= p.lead_gap_s
        })
        .collect()
}

/// Labeled intervals for a sorted event list over `[0, duration_s]`.
///
/// - preictal, per lead seizure at onset `o`: `[o - pil - sph, o - sph]`
/// - interictal, between consecutive events: `[offset + guard, next_onset - pil - sph]`,
///   with the recording start and end standing in for a missing neighbour
///
/// Intervals are clipped to the recording, empty ones dropped, and the rest
/// returned in start order.
pub fn label_events(events: &[SeizureEvent], duration_s: f64, p: &TimelineParams) -> Vec<LabeledInterval> {
    let mut out = Vec::new();
    let mut push = |start: f64, end: f64, label| {
        let (start, end) = (start.max(0.0), end.min(duration_s));
        if end > start {
            out.push(LabeledInterval { start_s: start, end_s: end, label });
        }
    };
    for i in lead_seizures(events, p) {
        let o = events[i].onset_s;
        push(o - p.pil_s - p.sph_s, o - p.sph_s, StateLabel::Preictal);
    }
    for i in 0..=events.len() {
        let start = if i == 0 { 0.0 } else { events[i - 1].offset_s + p.interictal_guard_s };
        let end = if i == events.len() { duration_s } else { events[i].onset_s - p.pil_s - p.sph_s };
        push(start, end, StateLabel::Interictal);
    }
    out.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    out
}

pub fn label_timeline(rec: &Recording, p: &TimelineParams) -> Vec<LabeledInterval> {
    label_events(&rec.events, rec.duration_s(), p)
}

/// Number of whole windows of `window_s` placed every `stride_s` inside an
/// interval of `len_s`.
pub fn window_count(len_s: f64, window_s: f64, stride_s: f64) -> usize {
    const TOL: f64 = 1e-9;
    if len_s + TOL < window_s {
        return 0;
    }
    ((len_s - window_s) / stride_s + TOL).floor() as usize + 1
}

/// Start times of the windows cut from `interval`.
pub fn window_starts(interval: &LabeledInterval, p: &TimelineParams) -> Vec<f64> {
    let stride = p.stride_s(interval.label);
    (0..window_count(interval.len_s(), p.window_s, stride))
        .map(|i| interval.start_s + i as f64 * stride)
        .collect()
}

/// Zero-mean, unit-variance per channel, using the population standard
/// deviation. A channel with standard deviation at or below 1e-12 is an error.
pub fn normalize(window: &[f64], channels: usize, len: usize) -> Result<Vec<f64>> {
    if window.len() != channels * len || len == 0 {
        return Err(Error::Dimension(format!("window of {} values is not {channels} x {len}", window.len())));
    }
    let mut out = Vec::with_capacity(window.len());
    for (c, row) in window.chunks(len).enumerate() {
        let mean = row.iter().sum::<f64>() / len as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
        let std = var.sqrt();
        if std <= 1e-12 {
            return Err(Error::Data(format!("degenerate window: channel {c} is constant")));
        }
        out.extend(row.iter().map(|v| (v - mean) / std));
    }
    Ok(out)
}

/// Cuts and normalizes every window of every interval.
pub fn segment_windows(
    rec: &Recording,
    intervals: &[LabeledInterval],
    p: &TimelineParams,
) -> Result<Vec<WindowedSample>> {
    let len = (p.window_s * rec.fs).round() as usize;
    let total = rec.samples_per_channel();
    let mut out = Vec::new();
    for interval in intervals {
        for start_s in window_starts(interval, p) {
            let first = (start_s * rec.fs).round() as usize;
            if first + len > total {
                continue;
            }
            let mut raw = Vec::with_capacity(rec.channels * len);
            for c in 0..rec.channels {
                let row = &rec.samples[c * total + first..c * total + first + len];
                raw.extend(row.iter().map(|&v| f64::from(v)));
            }
            out.push(WindowedSample {
                subject: rec.subject,
                label: interval.label,
                start_s,
                channels: rec.channels,
                len,
                window: normalize(&raw, rec.channels, len)?,
            });
        }
    }
    Ok(out)
}

/// Subject selection rule for real cohorts: enough lead seizures and enough
/// total preictal time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InclusionRule {
    pub min_lead_seizures: usize,
    pub min_preictal_s: f64,
}

impl Default for InclusionRule {
    fn default() -> Self {
        InclusionRule { min_lead_seizures: 2, min_preictal_s: 3600.0 }
    }
}

impl InclusionRule {
    pub fn admits(&self, rec: &Recording, p: &TimelineParams) -> bool {
        let leads = lead_seizures(&rec.events, p).len();
        let preictal: f64 = label_timeline(rec, p)
            .iter()
            .filter(|i| i.label == StateLabel::Preictal)
            .map(LabeledInterval::len_s)
            .sum();
        leads >= self.min_lead_seizures && preictal >= self.min_preictal_s
    }
}
