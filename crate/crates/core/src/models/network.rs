use rand::Rng as _;

use super::config::{FeatureShape, InputTransform, LayerPlan, LayerSpec, ModelConfig};
use crate::autograd::{softmax_row, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;

/// A network instance: config, parameters and the seed that initialized them.
///
/// Parameters are stored layer by layer as (weight, bias) pairs for conv1d
/// and dense layers, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    seed: u64,
    params: Vec<Tensor>,
    plan: Vec<LayerPlan>,
}

/// Outputs of one forward pass, as nodes on the caller's tape.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// `[batch, classes]`, before softmax.
    pub logits: Var,
    /// Tapped feature maps in declaration order.
    pub taps: Vec<(String, Var)>,
    /// Parameter leaves, aligned with [`Model::params`].
    pub params: Vec<Var>,
}

/// Values of a [`ForwardResult`] copied off the tape, for use as a fixed
/// signal inside another model's objective.
#[derive(Debug, Clone, PartialEq)]
pub struct DetachedForward {
    pub logits: Tensor,
    pub taps: Vec<(String, Tensor)>,
}

impl ForwardResult {
    pub fn detach(&self, tape: &Tape) -> DetachedForward {
        DetachedForward {
            logits: tape.value(self.logits).clone(),
            taps: self.taps.iter().map(|(n, v)| (n.clone(), tape.value(*v).clone())).collect(),
        }
    }
}

/// Builds a model with He fan-in uniform weights, `U(-sqrt(6 / fan_in),
/// sqrt(6 / fan_in))`, and zero biases.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    let plan = config.plan()?;
    let mut rng = rng::rng(seed);
    let mut params = Vec::new();
    for layer in &plan {
        if let [wshape, bshape] = &layer.param_shapes[..] {
            let fan_in: usize = match layer.spec {
                LayerSpec::Conv1d { .. } => wshape[1] * wshape[2],
                _ => wshape[0],
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = wshape.iter().product();
            let w = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            params.push(Tensor::new(wshape.clone(), w)?.with_requires_grad(true));
            params.push(Tensor::zeros(bshape.clone())?.with_requires_grad(true));
        }
    }
    Ok(Model { config: config.clone(), seed, params, plan })
}

/// Per-sample Pearson correlation between channels; constant channels
/// correlate 0 with everything but themselves.
pub(crate) fn channel_correlation(window: &[f64], channels: usize, len: usize) -> Vec<f64> {
    let mut centered = Vec::with_capacity(window.len());
    let mut norms = Vec::with_capacity(channels);
    for row in window.chunks(len) {
        let mean = row.iter().sum::<f64>() / len as f64;
        let c: Vec<f64> = row.iter().map(|v| v - mean).collect();
        norms.push(c.iter().map(|v| v * v).sum::<f64>().sqrt());
        centered.extend(c);
    }
    let mut out = vec![0.0; channels * channels];
    for i in 0..channels {
        out[i * channels + i] = 1.0;
        for j in (i + 1)..channels {
            let denom = norms[i] * norms[j];
            let r = if denom > 0.0 {
                let a = &centered[i * len..(i + 1) * len];
                let b = &centered[j * len..(j + 1) * len];
                a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / denom
            } else {
                0.0
            };
            out[i * channels + j] = r;
            out[j * channels + i] = r;
        }
    }
    out
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn tap_names(&self) -> Vec<String> {
        self.plan.iter().filter_map(|p| p.tap_name.clone()).collect()
    }

    /// `(layer kind, per-sample output dims)` for each layer.
    pub fn layer_signature(&self) -> Vec<(&'static str, Vec<usize>)> {
        self.plan.iter().map(|p| (p.spec.kind(), p.output.dims())).collect()
    }

    /// Fresh model with the same config and a new seeded initialization.
    pub fn clone_architecture(&self, seed: u64) -> Result<Model> {
        build_model(&self.config, seed)
    }

    /// Replaces every parameter value, keeping shapes. Used by checkpoint
    /// loading and by tests.
    pub(crate) fn from_parts(config: ModelConfig, seed: u64, params: Vec<Tensor>) -> Result<Model> {
        let plan = config.plan()?;
        let expected: Vec<&Vec<usize>> = plan.iter().flat_map(|p| p.param_shapes.iter()).collect();
        if expected.len() != params.len()
            || expected.iter().zip(&params).any(|(s, p)| s.as_slice() != p.shape())
        {
            return Err(Error::Format("parameter shapes do not match the stored config".into()));
        }
        let params = params.into_iter().map(|p| p.with_requires_grad(true)).collect();
        Ok(Model { config, seed, params, plan })
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        match *batch.shape() {
            [b, c, l] if c == self.config.input_channels && l == self.config.input_len => Ok(b),
            ref s => Err(Error::Dimension(format!(
                "batch shape {s:?} does not match model input [B, {}, {}]",
                self.config.input_channels, self.config.input_len
            ))),
        }
    }

    /// Runs the layer stack on `batch` (`[B, channels, len]`), recording every
    /// operation on `tape`.
    pub fn forward(&self, tape: &mut Tape, batch: &Tensor) -> Result<ForwardResult> {
        let b = self.check_batch(batch)?;
        let input = match self.config.input_transform {
            InputTransform::None => batch.clone().with_requires_grad(false),
            InputTransform::ChannelCorrelation => {
                let (c, l) = (self.config.input_channels, self.config.input_len);
                let data: Vec<f64> =
                    batch.data().chunks(c * l).flat_map(|w| channel_correlation(w, c, l)).collect();
                Tensor::new(vec![b, c, c], data)?
            }
        };
        let param_vars: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let mut x = tape.constant(input);
        let mut next_param = 0;
        let mut taps = Vec::new();
        for layer in &self.plan {
            x = match layer.spec {
                LayerSpec::Conv1d { stride, groups, .. } => {
                    let (w, bias) = (param_vars[next_param], param_vars[next_param + 1]);
                    next_param += 2;
                    let y = tape.conv1d(x, w, stride, groups)?;
                    tape.bias_add(y, bias)?
                }
                LayerSpec::Dense { .. } => {
                    let (w, bias) = (param_vars[next_param], param_vars[next_param + 1]);
                    next_param += 2;
                    let y = tape.matmul(x, w)?;
                    tape.bias_add(y, bias)?
                }
                LayerSpec::Relu { .. } => tape.relu(x)?,
                LayerSpec::Flatten { .. } => tape.flatten(x)?,
                LayerSpec::GlobalAvgPool { .. } => tape.global_avg_pool(x)?,
            };
            debug_assert_eq!(&tape.value(x).shape()[1..], layer.output.dims().as_slice());
            if let Some(name) = &layer.tap_name {
                taps.push((name.clone(), x));
            }
        }
        debug_assert!(matches!(self.plan.last().map(|p| p.output), Some(FeatureShape::Flat(_))));
        Ok(ForwardResult { logits: x, taps, params: param_vars })
    }

    /// Logits for every row of `batch`, without keeping a tape around.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, batch)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Class probabilities at temperature 1, one row per sample.
    pub fn predict_proba(&self, batch: &Tensor) -> Result<Vec<Vec<f64>>> {
        let logits = self.logits(batch)?;
        Ok(logits.data().chunks(self.config.classes).map(|r| softmax_row(r, 1.0)).collect())
    }

    /// Arg-max class per row; ties resolve to the lower class id.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        Ok(logits
            .data()
            .chunks(self.config.classes)
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }
}
