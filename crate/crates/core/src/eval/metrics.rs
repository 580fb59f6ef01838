use crate::autograd::Tensor;
use crate::data::{batch_tensor, StateLabel, WindowedSample};
use crate::error::{Error, Result};
use crate::models::Model;

/// Confusion counts with preictal as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` when there are no preictal samples.
    pub sensitivity: Option<f64>,
    /// False positives per interictal hour; 0 when there is no interictal time.
    pub fpr_per_hour: f64,
    pub counts: Counts,
    pub interictal_hours: f64,
}

impl Metrics {
    pub fn from_counts(counts: Counts, window_s: f64) -> Self {
        let n = counts.total();
        let positives = counts.tp + counts.fn_;
        let interictal_hours = (counts.tn + counts.fp) as f64 * window_s / 3600.0;
        Metrics {
            accuracy: if n == 0 { 0.0 } else { (counts.tp + counts.tn) as f64 / n as f64 },
            sensitivity: (positives > 0).then(|| counts.tp as f64 / positives as f64),
            fpr_per_hour: if interictal_hours > 0.0 { counts.fp as f64 / interictal_hours } else { 0.0 },
            counts,
            interictal_hours,
        }
    }
}

/// Scores window-level predictions. Interictal windows tile their intervals
/// without overlap, so interictal time is `count * window_s`.
pub fn compute_metrics(predictions: &[usize], samples: &[WindowedSample], window_s: f64) -> Result<Metrics> {
    if predictions.len() != samples.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} samples",
            predictions.len(),
            samples.len()
        )));
    }
    let mut c = Counts::default();
    for (&p, s) in predictions.iter().zip(samples) {
        let predicted_pos = p == StateLabel::Preictal.class();
        match (s.label, predicted_pos) {
            (StateLabel::Preictal, true) => c.tp += 1,
            (StateLabel::Preictal, false) => c.fn_ += 1,
            (StateLabel::Interictal, true) => c.fp += 1,
            (StateLabel::Interictal, false) => c.tn += 1,
        }
    }
    Ok(Metrics::from_counts(c, window_s))
}

const PREDICT_CHUNK: usize = 256;

/// Arg-max predictions for every sample, in order.
pub fn predict_samples(model: &Model, samples: &[WindowedSample]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(PREDICT_CHUNK) {
        let refs: Vec<&WindowedSample> = chunk.iter().collect();
        let x: Tensor = batch_tensor(&refs)?;
        out.extend(model.predict(&x)?);
    }
    Ok(out)
}

pub fn accuracy_on(model: &Model, samples: &[WindowedSample]) -> Result<f64> {
    let preds = predict_samples(model, samples)?;
    let hits = preds.iter().zip(samples).filter(|(p, s)| **p == s.label.class()).count();
    Ok(hits as f64 / samples.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(label: StateLabel) -> WindowedSample {
        WindowedSample { subject: 0, label, start_s: 0.0, channels: 1, len: 1, window: vec![0.0] }
    }

    #[test]
    fn all_correct() {
        let samples = vec![s(StateLabel::Preictal), s(StateLabel::Interictal)];
        let m = compute_metrics(&[1, 0], &samples, 20.0).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.sensitivity, Some(1.0));
        assert_eq!(m.fpr_per_hour, 0.0);
    }

    #[test]
    fn one_hour_two_false_alarms() {
        let samples: Vec<_> = (0..180).map(|_| s(StateLabel::Interictal)).collect();
        let mut preds = vec![0; 180];
        preds[3] = 1;
        preds[77] = 1;
        let m = compute_metrics(&preds, &samples, 20.0).unwrap();
        assert_eq!(m.interictal_hours, 1.0);
        assert_eq!(m.fpr_per_hour, 2.0);
        assert_eq!(m.sensitivity, None);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(compute_metrics(&[0], &[], 20.0), Err(Error::Contract(_))));
    }
}
