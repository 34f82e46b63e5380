mod layers;
mod ops;

pub use layers::{cross_entropy_loss, cross_entropy_loss_and_dlogits, softmax_rows};
pub use ops::{
    accuracy, batch_loss, dataset_loss, finite_diff_grad, finite_diff_of, forward, gradcheck_model,
    init_params, loss_and_grad, max_grad_rel_err, sgd_step, GradcheckReport,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Shape of a single input sample; batches prepend a leading dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid (no padding) convolution with a square kernel, stride 1.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    /// Non-overlapping max pooling; the window must divide both spatial dims.
    MaxPool2d { window: usize },
    Relu,
    Flatten,
    Dense { inputs: usize, outputs: usize },
}

/// Activation shape between layers during the validation walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationShape {
    Map {
        channels: usize,
        height: usize,
        width: usize,
    },
    Vector {
        len: usize,
    },
}

impl ActivationShape {
    fn describe(&self) -> String {
        match self {
            ActivationShape::Map {
                channels,
                height,
                width,
            } => format!("feature map [{channels}, {height}, {width}]"),
            ActivationShape::Vector { len } => format!("vector [{len}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Walks the layer chain and returns each layer's output shape.
    ///
    /// Errors name the first inconsistent layer by index.
    pub fn validate(&self) -> Result<Vec<ActivationShape>> {
        if self.input.channels == 0 || self.input.height == 0 || self.input.width == 0 {
            return Err(Error::config("model input shape has a zero dimension"));
        }
        if self.layers.is_empty() {
            return Err(Error::config("model has no layers"));
        }
        let mut state = ActivationShape::Map {
            channels: self.input.channels,
            height: self.input.height,
            width: self.input.width,
        };
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            state = layer_output_shape(idx, layer, state)?;
            shapes.push(state);
        }
        match shapes.last() {
            Some(ActivationShape::Vector { .. })
                if matches!(self.layers.last(), Some(LayerSpec::Dense { .. })) => {}
            _ => {
                return Err(Error::config(
                    "model must end with a dense layer producing class logits",
                ))
            }
        }
        Ok(shapes)
    }

    /// Number of output classes (the final dense layer's width).
    pub fn num_classes(&self) -> Result<usize> {
        self.validate()?;
        match self.layers.last() {
            Some(LayerSpec::Dense { outputs, .. }) => Ok(*outputs),
            _ => Err(Error::config("model must end with a dense layer")),
        }
    }

    /// Expected parameter tensor shapes in layer order, weight before bias.
    pub fn param_shapes(&self) -> Result<Vec<(usize, ParamRole, Vec<usize>)>> {
        self.validate()?;
        let mut out = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    out.push((
                        idx,
                        ParamRole::Weight,
                        vec![*out_channels, *in_channels, *kernel, *kernel],
                    ));
                    out.push((idx, ParamRole::Bias, vec![*out_channels]));
                }
                LayerSpec::Dense { inputs, outputs } => {
                    out.push((idx, ParamRole::Weight, vec![*outputs, *inputs]));
                    out.push((idx, ParamRole::Bias, vec![*outputs]));
                }
                _ => {}
            }
        }
        Ok(out)
    }
}

fn layer_output_shape(
    idx: usize,
    layer: &LayerSpec,
    input: ActivationShape,
) -> Result<ActivationShape> {
    let fail = |msg: String| Err(Error::config(format!("layer {idx}: {msg}")));
    match *layer {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
        } => {
            if in_channels == 0 || out_channels == 0 || kernel == 0 {
                return fail("conv2d dimensions must be positive".into());
            }
            match input {
                ActivationShape::Map {
                    channels,
                    height,
                    width,
                } => {
                    if channels != in_channels {
                        return fail(format!(
                            "conv2d expects {in_channels} input channels, got {channels}"
                        ));
                    }
                    if height < kernel || width < kernel {
                        return fail(format!(
                            "conv2d kernel {kernel} exceeds input {height}x{width}"
                        ));
                    }
                    Ok(ActivationShape::Map {
                        channels: out_channels,
                        height: height - kernel + 1,
                        width: width - kernel + 1,
                    })
                }
                other => fail(format!("conv2d expects a feature map, got {}", other.describe())),
            }
        }
        LayerSpec::MaxPool2d { window } => {
            if window == 0 {
                return fail("max pool window must be positive".into());
            }
            match input {
                ActivationShape::Map {
                    channels,
                    height,
                    width,
                } => {
                    if height % window != 0 || width % window != 0 {
                        return fail(format!(
                            "pool window {window} does not divide input {height}x{width}"
                        ));
                    }
                    Ok(ActivationShape::Map {
                        channels,
                        height: height / window,
                        width: width / window,
                    })
                }
                other => fail(format!("max pool expects a feature map, got {}", other.describe())),
            }
        }
        LayerSpec::Relu => Ok(input),
        LayerSpec::Flatten => match input {
            ActivationShape::Map {
                channels,
                height,
                width,
            } => Ok(ActivationShape::Vector {
                len: channels * height * width,
            }),
            other => fail(format!("flatten expects a feature map, got {}", other.describe())),
        },
        LayerSpec::Dense { inputs, outputs } => {
            if inputs == 0 || outputs == 0 {
                return fail("dense dimensions must be positive".into());
            }
            match input {
                ActivationShape::Vector { len } => {
                    if len != inputs {
                        return fail(format!("dense expects {inputs} inputs, got {len}"));
                    }
                    Ok(ActivationShape::Vector { len: outputs })
                }
                other => fail(format!("dense expects a vector, got {}", other.describe())),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamRole {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub layer: usize,
    pub role: ParamRole,
    pub tensor: Tensor,
}

/// Full parameter set of a model, ordered by layer with weight before bias.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    entries: Vec<ParamTensor>,
}

impl ModelParams {
    pub fn from_entries(entries: Vec<ParamTensor>) -> Self {
        ModelParams { entries }
    }

    /// All-zero parameters laid out per the model spec.
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        let entries = spec
            .param_shapes()?
            .into_iter()
            .map(|(layer, role, shape)| ParamTensor {
                layer,
                role,
                tensor: Tensor::zeros(shape),
            })
            .collect();
        Ok(ModelParams { entries })
    }

    pub fn entries(&self) -> &[ParamTensor] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.entries
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            entries: self
                .entries
                .iter()
                .map(|e| ParamTensor {
                    layer: e.layer,
                    role: e.role,
                    tensor: e.tensor.zeros_like(),
                })
                .collect(),
        }
    }

    /// Checks that entries match the model spec's parameter layout exactly.
    pub fn check_matches(&self, spec: &ModelSpec) -> Result<()> {
        let expected = spec.param_shapes()?;
        if expected.len() != self.entries.len() {
            return Err(Error::shape(format!(
                "model expects {} parameter tensors, got {}",
                expected.len(),
                self.entries.len()
            )));
        }
        for ((layer, role, shape), entry) in expected.iter().zip(&self.entries) {
            if entry.layer != *layer || entry.role != *role || entry.tensor.shape() != shape {
                return Err(Error::shape(format!(
                    "parameter tensor for layer {layer} {role:?} has shape {:?}, expected {:?}",
                    entry.tensor.shape(),
                    shape
                )));
            }
        }
        Ok(())
    }

    /// Elementwise combination of two aligned parameter sets.
    pub fn zip_map(&self, other: &ModelParams, f: impl Fn(f64, f64) -> f64) -> Result<ModelParams> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::shape(format!(
                "parameter sets have {} and {} tensors",
                self.entries.len(),
                other.entries.len()
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| {
                if a.layer != b.layer || a.role != b.role {
                    return Err(Error::shape(format!(
                        "parameter entry mismatch: layer {} {:?} vs layer {} {:?}",
                        a.layer, a.role, b.layer, b.role
                    )));
                }
                Ok(ParamTensor {
                    layer: a.layer,
                    role: a.role,
                    tensor: a.tensor.zip_map(&b.tensor, &f)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelParams { entries })
    }

    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.layer == b.layer && a.role == b.role && a.tensor.bit_eq(&b.tensor))
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.all_finite())
    }

    /// Weight tensor of the first parameterized layer, if any.
    pub fn first_weight_mut(&mut self) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|e| e.role == ParamRole::Weight)
            .map(|e| &mut e.tensor)
    }

    /// Reads the idx-th scalar across all tensors in storage order.
    pub fn scalar(&self, mut idx: usize) -> Option<f64> {
        for e in &self.entries {
            if idx < e.tensor.len() {
                return Some(e.tensor.data()[idx]);
            }
            idx -= e.tensor.len();
        }
        None
    }

    pub fn set_scalar(&mut self, mut idx: usize, value: f64) -> bool {
        for e in &mut self.entries {
            if idx < e.tensor.len() {
                e.tensor.data_mut()[idx] = value;
                return true;
            }
            idx -= e.tensor.len();
        }
        false
    }
}

/// Two-conv CNN sized for 28x28 grayscale inputs.
pub fn paper_cnn(classes: usize) -> ModelSpec {
    ModelSpec {
        input: InputShape {
            channels: 1,
            height: 28,
            width: 28,
        },
        layers: vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 32,
                kernel: 5,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { window: 2 },
            LayerSpec::Conv2d {
                in_channels: 32,
                out_channels: 32,
                kernel: 5,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { window: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: 512,
                outputs: 1024,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 1024,
                outputs: classes,
            },
        ],
    }
}

/// One-hidden-layer MLP for 28x28 inputs; cheap enough for dense gradient
/// checks and desk-scale federation runs on a single core.
pub fn small_mlp(classes: usize) -> ModelSpec {
    ModelSpec {
        input: InputShape {
            channels: 1,
            height: 28,
            width: 28,
        },
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: 784,
                outputs: 16,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 16,
                outputs: classes,
            },
        ],
    }
}

/// Shrunk variant of the CNN (8x8 inputs, 4 channels) that keeps every layer
/// kind in play while staying small enough for exhaustive gradient checks.
pub fn reduced_paper_cnn(classes: usize) -> ModelSpec {
    ModelSpec {
        input: InputShape {
            channels: 1,
            height: 8,
            width: 8,
        },
        layers: vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 4,
                kernel: 3,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { window: 2 },
            LayerSpec::Conv2d {
                in_channels: 4,
                out_channels: 4,
                kernel: 2,
            },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: 16,
                outputs: 16,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 16,
                outputs: classes,
            },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_cnn_shape_walk() {
        let spec = paper_cnn(10);
        let shapes = spec.validate().unwrap();
        assert_eq!(
            shapes[2],
            ActivationShape::Map {
                channels: 32,
                height: 12,
                width: 12
            }
        );
        assert_eq!(
            shapes[5],
            ActivationShape::Map {
                channels: 32,
                height: 4,
                width: 4
            }
        );
        assert_eq!(shapes[6], ActivationShape::Vector { len: 512 });
        assert_eq!(*shapes.last().unwrap(), ActivationShape::Vector { len: 10 });
        assert_eq!(spec.num_classes().unwrap(), 10);
    }

    #[test]
    fn preset_param_counts() {
        let count = |spec: &ModelSpec| {
            ModelParams::zeros(spec).unwrap().num_scalars()
        };
        assert_eq!(count(&small_mlp(10)), 784 * 16 + 16 + 16 * 10 + 10);
        assert_eq!(count(&reduced_paper_cnn(10)), 550);
        assert_eq!(count(&paper_cnn(10)), 832 + 25_632 + 525_312 + 10_250);
    }

    #[test]
    fn validation_names_offending_layer() {
        let spec = ModelSpec {
            input: InputShape {
                channels: 1,
                height: 28,
                width: 28,
            },
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 100,
                    outputs: 10,
                },
            ],
        };
        let err = spec.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layer 1"), "{msg}");
        assert!(msg.contains("expects 100 inputs, got 784"), "{msg}");
    }

    #[test]
    fn pool_window_must_divide() {
        let spec = ModelSpec {
            input: InputShape {
                channels: 1,
                height: 5,
                width: 5,
            },
            layers: vec![
                LayerSpec::MaxPool2d { window: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 4,
                    outputs: 2,
                },
            ],
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn model_must_end_with_dense() {
        let spec = ModelSpec {
            input: InputShape {
                channels: 1,
                height: 4,
                width: 4,
            },
            layers: vec![LayerSpec::Flatten],
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn scalar_indexing_round_trips() {
        let spec = reduced_paper_cnn(10);
        let mut params = ModelParams::zeros(&spec).unwrap();
        let n = params.num_scalars();
        assert_eq!(n, 550);
        assert!(params.set_scalar(0, 1.5));
        assert!(params.set_scalar(n - 1, -2.5));
        assert!(!params.set_scalar(n, 0.0));
        assert_eq!(params.scalar(0), Some(1.5));
        assert_eq!(params.scalar(n - 1), Some(-2.5));
        assert_eq!(params.scalar(n), None);
    }

    #[test]
    fn check_matches_flags_wrong_shape() {
        let spec = small_mlp(10);
        let mut params = ModelParams::zeros(&spec).unwrap();
        params.entries_mut()[0].tensor = Tensor::zeros(vec![16, 783]);
        assert!(params.check_matches(&spec).is_err());
    }
}
