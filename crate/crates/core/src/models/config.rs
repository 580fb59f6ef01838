use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> usize {
    1
}

/// One entry of a layer stack. `tap` marks the layer output as a named
/// feature map for feature matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv1d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "one")]
        groups: usize,
        #[serde(default)]
        tap: bool,
    },
    Dense {
        out_features: usize,
        #[serde(default)]
        tap: bool,
    },
    Relu {
        #[serde(default)]
        tap: bool,
    },
    Flatten {
        #[serde(default)]
        tap: bool,
    },
    GlobalAvgPool {
        #[serde(default)]
        tap: bool,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu { .. } => "relu",
            LayerSpec::Flatten { .. } => "flatten",
            LayerSpec::GlobalAvgPool { .. } => "global-avg-pool",
        }
    }

    pub fn is_tap(&self) -> bool {
        match *self {
            LayerSpec::Conv1d { tap, .. }
            | LayerSpec::Dense { tap, .. }
            | LayerSpec::Relu { tap }
            | LayerSpec::Flatten { tap }
            | LayerSpec::GlobalAvgPool { tap } => tap,
        }
    }
}

/// Fixed, parameter-free transform applied to each input window before the
/// layer stack.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputTransform {
    #[default]
    None,
    /// Pearson correlation between every pair of channels, giving a
    /// `channels x channels` map.
    ChannelCorrelation,
}

/// Per-sample feature shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureShape {
    Map { channels: usize, len: usize },
    Flat(usize),
}

impl FeatureShape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            FeatureShape::Map { channels, len } => vec![channels, len],
            FeatureShape::Flat(n) => vec![n],
        }
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }
}

/// Shape bookkeeping for one layer of a validated config.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    pub spec: LayerSpec,
    pub input: FeatureShape,
    pub output: FeatureShape,
    pub param_shapes: Vec<Vec<usize>>,
    pub tap_name: Option<String>,
}

/// Declarative network description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub input_channels: usize,
    pub input_len: usize,
    pub classes: usize,
    #[serde(default)]
    pub input_transform: InputTransform,
    pub layers: Vec<LayerSpec>,
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))?;
        cfg.plan()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read model config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("model config: {e}")))
    }

    /// Shape seen by the first layer.
    pub fn stack_input(&self) -> FeatureShape {
        match self.input_transform {
            InputTransform::None => FeatureShape::Map { channels: self.input_channels, len: self.input_len },
            InputTransform::ChannelCorrelation => {
                FeatureShape::Map { channels: self.input_channels, len: self.input_channels }
            }
        }
    }

    /// Validates that the layer shapes compose and end in `classes` logits.
    pub fn plan(&self) -> Result<Vec<LayerPlan>> {
        let bad = |msg: String| Error::Config(format!("model '{}': {msg}", self.name));
        if self.input_channels == 0 || self.input_len == 0 {
            return Err(bad("input shape must be positive".into()));
        }
        if self.classes < 2 {
            return Err(bad(format!("need at least 2 classes, got {}", self.classes)));
        }
        let mut shape = self.stack_input();
        let mut plans = Vec::with_capacity(self.layers.len());
        for (idx, spec) in self.layers.iter().enumerate() {
            let (output, param_shapes) = match (*spec, shape) {
                (
                    LayerSpec::Conv1d { out_channels, kernel, stride, groups, .. },
                    FeatureShape::Map { channels, len },
                ) => {
                    if out_channels == 0 || kernel == 0 || stride == 0 || groups == 0 {
                        return Err(bad(format!("layer {idx}: conv1d sizes must be positive")));
                    }
                    if channels % groups != 0 || out_channels % groups != 0 {
                        return Err(bad(format!(
                            "layer {idx}: {groups} groups do not divide {channels} -> {out_channels} channels"
                        )));
                    }
                    if kernel > len {
                        return Err(bad(format!("layer {idx}: kernel {kernel} longer than input {len}")));
                    }
                    let lout = (len - kernel) / stride + 1;
                    (
                        FeatureShape::Map { channels: out_channels, len: lout },
                        vec![vec![out_channels, channels / groups, kernel], vec![out_channels]],
                    )
                }
                (LayerSpec::Dense { out_features, .. }, FeatureShape::Flat(n)) => {
                    if out_features == 0 {
                        return Err(bad(format!("layer {idx}: dense needs positive width")));
                    }
                    (FeatureShape::Flat(out_features), vec![vec![n, out_features], vec![out_features]])
                }
                (LayerSpec::Relu { .. }, s) => (s, vec![]),
                (LayerSpec::Flatten { .. }, s) => (FeatureShape::Flat(s.numel()), vec![]),
                (LayerSpec::GlobalAvgPool { .. }, FeatureShape::Map { channels, .. }) => {
                    (FeatureShape::Flat(channels), vec![])
                }
                (s, input) => {
                    return Err(bad(format!("layer {idx}: {} cannot consume shape {:?}", s.kind(), input.dims())))
                }
            };
            let tap_name = spec.is_tap().then(|| format!("layer{idx}.{}", spec.kind()));
            plans.push(LayerPlan { spec: *spec, input: shape, output, param_shapes, tap_name });
            shape = output;
        }
        if shape != FeatureShape::Flat(self.classes) {
            return Err(bad(format!(
                "final layer produces {:?}, expected {} logits",
                shape.dims(),
                self.classes
            )));
        }
        Ok(plans)
    }

    pub fn tap_names(&self) -> Result<Vec<String>> {
        Ok(self.plan()?.into_iter().filter_map(|p| p.tap_name).collect())
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self
            .plan()?
            .iter()
            .flat_map(|p| p.param_shapes.iter())
            .map(|s| s.iter().product::<usize>())
            .sum())
    }
}
