use serde::{Deserialize, Serialize};

use super::{StateLabel, WindowedSample};
use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Train and validation shares; the remainder is the test share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.6, val: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<WindowedSample>,
    pub val: Vec<WindowedSample>,
    pub test: Vec<WindowedSample>,
}

/// Splits one subject's windows into contiguous time blocks, class by class:
/// the earliest windows of each class go to train, the next to validation and
/// the latest to test. Each split ends up holding both classes.
pub fn split_by_time(subject: u32, samples: &[WindowedSample], f: SplitFractions) -> Result<Splits> {
    if !(f.train > 0.0 && f.val >= 0.0 && f.train + f.val < 1.0) {
        return Err(Error::Config(format!("invalid split fractions {f:?}")));
    }
    let mut out = Splits::default();
    for label in [StateLabel::Interictal, StateLabel::Preictal] {
        let mut class: Vec<&WindowedSample> = samples.iter().filter(|s| s.label == label).collect();
        class.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        let n = class.len();
        let n_train = (n as f64 * f.train).round() as usize;
        let n_val = (n as f64 * f.val).round() as usize;
        if n_train == 0 || n_train + n_val >= n || (f.val > 0.0 && n_val == 0) {
            return Err(Error::Data(format!(
                "subject {subject}: {n} {label:?} windows cannot fill every split"
            )));
        }
        out.train.extend(class[..n_train].iter().map(|s| (*s).clone()));
        out.val.extend(class[n_train..n_train + n_val].iter().map(|s| (*s).clone()));
        out.test.extend(class[n_train + n_val..].iter().map(|s| (*s).clone()));
    }
    for part in [&mut out.train, &mut out.val, &mut out.test] {
        part.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    }
    Ok(out)
}

/// Stacks windows into a `[batch, channels, len]` tensor.
pub fn batch_tensor(samples: &[&WindowedSample]) -> Result<Tensor> {
    let first = samples.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let (c, l) = (first.channels, first.len);
    let mut data = Vec::with_capacity(samples.len() * c * l);
    for s in samples {
        if s.channels != c || s.len != l || s.window.len() != c * l {
            return Err(Error::Dimension(format!(
                "window {}x{} in a batch of {c}x{l}",
                s.channels, s.len
            )));
        }
        data.extend_from_slice(&s.window);
    }
    Tensor::new(vec![samples.len(), c, l], data)
}

pub fn labels_of(samples: &[&WindowedSample]) -> Vec<usize> {
    samples.iter().map(|s| s.label.class()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(label: StateLabel, t: f64) -> WindowedSample {
        WindowedSample { subject: 0, label, start_s: t, channels: 1, len: 2, window: vec![-1.0, 1.0] }
    }

    #[test]
    fn blocks_are_contiguous_in_time() {
        let mut v: Vec<_> = (0..10).map(|i| s(StateLabel::Interictal, i as f64 * 20.0)).collect();
        v.extend((0..5).map(|i| s(StateLabel::Preictal, 1000.0 + i as f64 * 15.0)));
        v.reverse();
        let sp = split_by_time(0, &v, SplitFractions::default()).unwrap();
        let inter_max_train = sp.train.iter().filter(|x| x.label == StateLabel::Interictal).map(|x| x.start_s).fold(0.0, f64::max);
        let inter_min_test = sp.test.iter().filter(|x| x.label == StateLabel::Interictal).map(|x| x.start_s).fold(f64::MAX, f64::min);
        assert!(inter_max_train < inter_min_test);
        assert_eq!(sp.train.len() + sp.val.len() + sp.test.len(), 15);
        for part in [&sp.train, &sp.val, &sp.test] {
            assert!(part.iter().any(|x| x.label == StateLabel::Preictal));
            assert!(part.iter().any(|x| x.label == StateLabel::Interictal));
        }
    }

    #[test]
    fn too_few_windows_names_the_subject() {
        let v = vec![s(StateLabel::Interictal, 0.0), s(StateLabel::Preictal, 20.0)];
        let err = split_by_time(42, &v, SplitFractions::default()).unwrap_err();
        assert!(matches!(&err, Error::Data(m) if m.contains("subject 42")));
    }
}
