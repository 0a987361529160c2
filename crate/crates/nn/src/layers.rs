//! Declarative layer specs and the network container that materializes them:
//! parameters are created in a [`ParamStore`], shapes are traced at build
//! time, and forward passes are recorded on a [`Tape`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Mode, NodeId, Tape};
use crate::tensor::Tensor;

/// One layer of a network, declaratively.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv3d {
        filters: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    },
    MaxPool3d {
        kernel: [usize; 3],
        stride: [usize; 3],
    },
    ConvTranspose3d {
        filters: usize,
        kernel: usize,
        stride: usize,
    },
    BatchNorm {
        momentum: f64,
        eps: f64,
    },
    ReLU,
    Dropout {
        rate: f64,
    },
    FullyConnected {
        units: usize,
    },
    AdaptiveAvgPool3d {
        output: usize,
    },
    /// Residual block: runs `body` and adds the block input to its output.
    /// On a channel mismatch a 1x1x1 projection convolution is placed on the
    /// skip path (the projection is not one of the network's declared
    /// convolutional layers).
    ResidualAdd {
        body: Vec<LayerSpec>,
    },
}

impl LayerSpec {
    /// 3x3x3 convolution, stride 1, padding 1.
    pub fn conv3(filters: usize) -> Self {
        LayerSpec::Conv3d {
            filters,
            kernel: [3; 3],
            stride: [1; 3],
            padding: [1; 3],
        }
    }

    /// 1x1x1 convolution.
    pub fn conv1(filters: usize) -> Self {
        LayerSpec::Conv3d {
            filters,
            kernel: [1; 3],
            stride: [1; 3],
            padding: [0; 3],
        }
    }

    /// 2x2x2 max pooling with stride 2.
    pub fn pool2() -> Self {
        LayerSpec::MaxPool3d {
            kernel: [2; 3],
            stride: [2; 3],
        }
    }

    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm {
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

enum LayerInst {
    Conv3d {
        w: ParamId,
        b: ParamId,
        stride: [usize; 3],
        pad: [usize; 3],
    },
    MaxPool3d {
        kernel: [usize; 3],
        stride: [usize; 3],
    },
    ConvTranspose3d {
        w: ParamId,
        b: ParamId,
        kernel: usize,
        stride: usize,
    },
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
        run_mean: ParamId,
        run_var: ParamId,
        momentum: f64,
        eps: f64,
    },
    ReLU,
    Dropout {
        rate: f64,
    },
    Flatten,
    FullyConnected {
        w: ParamId,
        b: ParamId,
    },
    AdaptiveAvgPool3d {
        output: usize,
    },
    Residual {
        body: Vec<LayerInst>,
        proj: Option<(ParamId, ParamId)>,
    },
}

/// Shape after a layer: channels-first spatial or flattened features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceShape {
    Spatial { channels: usize, dims: [usize; 3] },
    Flat { features: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeStep {
    pub label: String,
    pub shape: TraceShape,
}

/// Weight initialization: zero-mean normal with the given sigma for conv and
/// fully-connected weights, zeros for biases, gamma 1 / beta 0 for batch
/// norm.
#[derive(Debug, Clone, Copy)]
pub struct InitConfig {
    pub sigma: f64,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            sigma: 0.005,
            seed: 0,
        }
    }
}

pub struct Network<S> {
    pub store: ParamStore<S>,
    layers: Vec<LayerInst>,
    input_shape: [usize; 4],
    trace: Vec<ShapeStep>,
}

#[derive(Clone, Copy)]
enum BuildShape {
    Spatial { c: usize, dims: [usize; 3] },
    Flat { features: usize },
}

impl BuildShape {
    fn trace(&self) -> TraceShape {
        match self {
            BuildShape::Spatial { c, dims } => TraceShape::Spatial {
                channels: *c,
                dims: *dims,
            },
            BuildShape::Flat { features } => TraceShape::Flat {
                features: *features,
            },
        }
    }
}

struct Builder<'a, S, R: Rng> {
    store: &'a mut ParamStore<S>,
    sigma: f64,
    rng: &'a mut R,
}

impl<S: Scalar, R: Rng> Builder<'_, S, R> {
    fn build_layers(
        &mut self,
        specs: &[LayerSpec],
        prefix: &str,
        mut shape: BuildShape,
        trace: Option<&mut Vec<ShapeStep>>,
    ) -> Result<(Vec<LayerInst>, BuildShape)> {
        let mut out = Vec::with_capacity(specs.len());
        let mut trace = trace;
        for (i, spec) in specs.iter().enumerate() {
            let name = format!("{prefix}l{i:02}");
            let (insts, next) = self.build_one(spec, &name, shape)?;
            out.extend(insts);
            shape = next;
            if let Some(t) = trace.as_deref_mut() {
                t.push(ShapeStep {
                    label: spec_label(spec),
                    shape: shape.trace(),
                });
            }
        }
        Ok((out, shape))
    }

    fn build_one(
        &mut self,
        spec: &LayerSpec,
        name: &str,
        shape: BuildShape,
    ) -> Result<(Vec<LayerInst>, BuildShape)> {
        match spec {
            LayerSpec::Conv3d {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let BuildShape::Spatial { c, dims } = shape else {
                    return Err(NnError::InvalidConfig(format!(
                        "{name}: convolution needs a spatial input"
                    )));
                };
                if *filters == 0 || kernel.iter().any(|k| *k == 0) || stride.iter().any(|s| *s == 0)
                {
                    return Err(NnError::InvalidConfig(format!(
                        "{name}: filters, kernel and stride must be positive"
                    )));
                }
                let mut out_dims = [0usize; 3];
                for a in 0..3 {
                    out_dims[a] = crate::ops::conv3d::out_extent(
                        dims[a], kernel[a], stride[a], padding[a],
                    )
                    .ok_or_else(|| {
                        NnError::InvalidConfig(format!(
                            "{name}: kernel does not fit extent {}",
                            dims[a]
                        ))
                    })?;
                }
                let w = self.store.add_normal(
                    format!("{name}.weight"),
                    vec![*filters, c, kernel[0], kernel[1], kernel[2]],
                    self.sigma,
                    self.rng,
                );
                let b = self.store.add_zeros(format!("{name}.bias"), vec![*filters]);
                Ok((
                    vec![LayerInst::Conv3d {
                        w,
                        b,
                        stride: *stride,
                        pad: *padding,
                    }],
                    BuildShape::Spatial {
                        c: *filters,
                        dims: out_dims,
                    },
                ))
            }
            LayerSpec::MaxPool3d { kernel, stride } => {
                let BuildShape::Spatial { c, dims } = shape else {
                    return Err(NnError::InvalidConfig(format!(
                        "{name}: pooling needs a spatial input"
                    )));
                };
                let mut out_dims = [0usize; 3];
                for a in 0..3 {
                    if kernel[a] == 0 || stride[a] == 0 || dims[a] < kernel[a] {
                        return Err(NnError::InvalidConfig(format!(
                            "{name}: pool kernel {:?} does not fit {:?}",
                            kernel, dims
                        )));
                    }
                    out_dims[a] = (dims[a] - kernel[a]) / stride[a] + 1;
                }
                Ok((
                    vec![LayerInst::MaxPool3d {
                        kernel: *kernel,
                        stride: *stride,
                    }],
                    BuildShape::Spatial { c, dims: out_dims },
                ))
            }
            LayerSpec::ConvTranspose3d {
                filters,
                kernel,
                stride,
            } => {
                let BuildShape::Spatial { c, dims } = shape else {
                    return Err(NnError::InvalidConfig(format!(
                        "{name}: transposed convolution needs a spatial input"
                    )));
                };
                if *filters == 0 || *kernel == 0 || *stride == 0 {
                    return Err(NnError::InvalidConfig(format!(
                        "{name}: filters, kernel and stride must be positive"
                    )));
                }
                let out = |i: usize| (i - 1) * stride + kernel;
                let w = self.store.add_normal(
                    format!("{name}.weight"),
                    vec![c, *filters, *kernel, *kernel, *kernel],
                    self.sigma,
                    self.rng,
                );
                let b = self.store.add_zeros(format!("{name}.bias"), vec![*filters]);
                Ok((
                    vec![LayerInst::ConvTranspose3d {
                        w,
                        b,
                        kernel: *kernel,
                        stride: *stride,
                    }],
                    BuildShape::Spatial {
                        c: *filters,
                        dims: [out(dims[0]), out(dims[1]), out(dims[2])],
                    },
                ))
            }
            LayerSpec::BatchNorm { momentum, eps } => {
                let BuildShape::Spatial { c, dims } = shape else {
                    return Err(NnError::InvalidConfig(format!(
                        "{name}: batch norm needs a spatial input"
                    )));
                };
                let gamma = self
                    .store
                    .add_const(format!("{name}.gamma"), vec![c], S::ONE, true);
                let beta = self.store.add_zeros(format!("{name}.beta"), vec![c]);
                let run_mean =
                    self.store
                        .add_const(format!("{name}.running_mean"), vec![c], S::ZERO, false);
                let run_var =
                    self.store
                        .add_const(format!("{name}.running_var"), vec![c], S::ONE, false);
                Ok((
                    vec![LayerInst::BatchNorm {
                        gamma,
                        beta,
                        run_mean,
                        run_var,
                        momentum: *momentum,
                        eps: *eps,
                    }],
                    BuildShape::Spatial { c, dims },
                ))
            }
            LayerSpec::ReLU => Ok((vec![LayerInst::ReLU], shape)),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(NnError::InvalidConfig(format!(
                        "{name}: dropout rate must be in [0, 1)"
                    )));
                }
                Ok((vec![LayerInst::Dropout { rate: *rate }], shape))
            }
            LayerSpec::FullyConnected { units } => {
                if *units == 0 {
                    return Err(NnError::InvalidConfig(format!(
                        "{name}: zero output units"
                    )));
                }
                let (mut insts, features) = match shape {
                    BuildShape::Flat { features } => (vec![], features),
                    BuildShape::Spatial { c, dims } => (
                        vec![LayerInst::Flatten],
                        c * dims[0] * dims[1] * dims[2],
                    ),
                };
                // Fully-connected layers are initialized at fan-scaled
                // width. Unlike the convolutions, no normalization follows
                // them; at a flat sigma the stacked affine head starts so
                // close to the zero map that its gradient vanishes and
                // regression stalls at the mean target.
                let glorot = if self.sigma == 0.0 {
                    0.0
                } else {
                    (2.0 / (features + *units) as f64).sqrt()
                };
                let w = self.store.add_normal(
                    format!("{name}.weight"),
                    vec![features, *units],
                    glorot,
                    self.rng,
                );
                let b = self.store.add_zeros(format!("{name}.bias"), vec![*units]);
                insts.push(LayerInst::FullyConnected { w, b });
                Ok((insts, BuildShape::Flat { features: *units }))
            }
            LayerSpec::AdaptiveAvgPool3d { output } => {
                let BuildShape::Spatial { c, dims } = shape else {
                    return Err(NnError::InvalidConfig(format!(
                        "{name}: adaptive pooling needs a spatial input"
                    )));
                };
                if *output == 0 || dims.iter().any(|d| d < output) {
                    return Err(NnError::InvalidConfig(format!(
                        "{name}: adaptive pool target {output} does not fit {dims:?}"
                    )));
                }
                Ok((
                    vec![LayerInst::AdaptiveAvgPool3d { output: *output }],
                    BuildShape::Spatial {
                        c,
                        dims: [*output; 3],
                    },
                ))
            }
            LayerSpec::ResidualAdd { body } => {
                let BuildShape::Spatial { c, dims } = shape else {
                    return Err(NnError::InvalidConfig(format!(
                        "{name}: residual block needs a spatial input"
                    )));
                };
                let (body_insts, body_shape) =
                    self.build_layers(body, &format!("{name}.b"), shape, None)?;
                let BuildShape::Spatial {
                    c: oc,
                    dims: odims,
                } = body_shape
                else {
                    return Err(NnError::InvalidConfig(format!(
                        "{name}: residual body must stay spatial"
                    )));
                };
                if odims != dims {
                    return Err(NnError::InvalidConfig(format!(
                        "{name}: residual body changes spatial dims {dims:?} -> {odims:?}"
                    )));
                }
                let proj = if oc != c {
                    let w = self.store.add_normal(
                        format!("{name}.proj.weight"),
                        vec![oc, c, 1, 1, 1],
                        self.sigma,
                        self.rng,
                    );
                    let b = self.store.add_zeros(format!("{name}.proj.bias"), vec![oc]);
                    Some((w, b))
                } else {
                    None
                };
                Ok((
                    vec![LayerInst::Residual {
                        body: body_insts,
                        proj,
                    }],
                    body_shape,
                ))
            }
        }
    }
}

fn spec_label(spec: &LayerSpec) -> String {
    match spec {
        LayerSpec::Conv3d { filters, kernel, .. } => format!("conv3d[{}x{:?}]", filters, kernel),
        LayerSpec::MaxPool3d { .. } => "maxpool3d".into(),
        LayerSpec::ConvTranspose3d { filters, .. } => format!("convtranspose3d[{filters}]"),
        LayerSpec::BatchNorm { .. } => "batchnorm".into(),
        LayerSpec::ReLU => "relu".into(),
        LayerSpec::Dropout { .. } => "dropout".into(),
        LayerSpec::FullyConnected { units } => format!("fc[{units}]"),
        LayerSpec::AdaptiveAvgPool3d { output } => format!("adaptiveavgpool[{output}]"),
        LayerSpec::ResidualAdd { .. } => "residual".into(),
    }
}

impl<S: Scalar> Network<S> {
    /// Materializes a layer stack for inputs of shape (N, C, D, H, W), where
    /// `input` gives (C, D, H, W).
    pub fn build(input: [usize; 4], specs: &[LayerSpec], init: &InitConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(init.seed);
        let mut builder = Builder {
            store: &mut store,
            sigma: init.sigma,
            rng: &mut rng,
        };
        let mut trace = vec![ShapeStep {
            label: "input".into(),
            shape: TraceShape::Spatial {
                channels: input[0],
                dims: [input[1], input[2], input[3]],
            },
        }];
        let shape = BuildShape::Spatial {
            c: input[0],
            dims: [input[1], input[2], input[3]],
        };
        let (layers, _) = builder.build_layers(specs, "", shape, Some(&mut trace))?;
        Ok(Self {
            store,
            layers,
            input_shape: input,
            trace,
        })
    }

    pub fn input_shape(&self) -> [usize; 4] {
        self.input_shape
    }

    /// Shape after the input and after every top-level layer.
    pub fn shape_trace(&self) -> &[ShapeStep] {
        &self.trace
    }

    /// Number of declared Conv3d layers, including residual-block bodies but
    /// not the skip projections.
    pub fn conv3d_layer_count(&self) -> usize {
        fn count(layers: &[LayerInst]) -> usize {
            layers
                .iter()
                .map(|l| match l {
                    LayerInst::Conv3d { .. } => 1,
                    LayerInst::Residual { body, .. } => count(body),
                    _ => 0,
                })
                .sum()
        }
        count(&self.layers)
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn total_parameter_count(&self) -> usize {
        self.store.total_count()
    }

    /// Training/recording forward pass. Batch-norm running statistics are
    /// updated in train mode.
    pub fn forward<R: Rng>(
        &mut self,
        tape: &mut Tape<S>,
        input: NodeId,
        mode: Mode,
        rng: &mut R,
    ) -> Result<NodeId> {
        let mut updates = Vec::new();
        let out = run_layers(&self.store, &self.layers, tape, input, mode, rng, &mut updates)?;
        for (id, data) in updates {
            self.store.set_value(id, data)?;
        }
        Ok(out)
    }

    /// Eval-mode forward pass: running statistics, identity dropout, no
    /// mutation. Safe to call from multiple threads on a shared network with
    /// per-thread tapes.
    pub fn infer(&self, tape: &mut Tape<S>, input: NodeId) -> Result<NodeId> {
        let mut updates = Vec::new();
        let mut rng = NoRng;
        run_layers(
            &self.store,
            &self.layers,
            tape,
            input,
            Mode::Eval,
            &mut rng,
            &mut updates,
        )
    }

    /// Checks that the input tensor matches the built (C, D, H, W).
    pub fn check_input(&self, t: &Tensor<S>) -> Result<()> {
        let dims = t.dims5()?;
        if dims[1..] != self.input_shape {
            return Err(NnError::ShapeMismatch(format!(
                "input {:?} does not match network input {:?}",
                &dims[1..],
                self.input_shape
            )));
        }
        Ok(())
    }
}

impl Network<f32> {
    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        crate::checkpoint::save_params_to_path(&self.store, path)
    }

    pub fn load_checkpoint(&mut self, path: &std::path::Path) -> Result<()> {
        crate::checkpoint::load_params_into_from_path(&mut self.store, path)
    }
}

/// Rng stub for eval-mode forward passes, where no randomness is consumed.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval-mode forward must not consume randomness")
    }

    fn next_u64(&mut self) -> u64 {
        unreachable!("eval-mode forward must not consume randomness")
    }

    fn fill_bytes(&mut self, _dest: &mut [u8]) {
        unreachable!("eval-mode forward must not consume randomness")
    }
}

#[allow(clippy::too_many_arguments)]
fn run_layers<S: Scalar, R: Rng>(
    store: &ParamStore<S>,
    layers: &[LayerInst],
    tape: &mut Tape<S>,
    mut x: NodeId,
    mode: Mode,
    rng: &mut R,
    updates: &mut Vec<(ParamId, Vec<S>)>,
) -> Result<NodeId> {
    for layer in layers {
        x = match layer {
            LayerInst::Conv3d { w, b, stride, pad } => {
                let wn = tape.param(store, *w);
                let bn = tape.param(store, *b);
                tape.conv3d(x, wn, bn, *stride, *pad)?
            }
            LayerInst::MaxPool3d { kernel, stride } => tape.maxpool3d(x, *kernel, *stride)?,
            LayerInst::ConvTranspose3d {
                w,
                b,
                kernel,
                stride,
            } => {
                let wn = tape.param(store, *w);
                let bn = tape.param(store, *b);
                tape.conv_transpose3d(x, wn, bn, *kernel, *stride)?
            }
            LayerInst::BatchNorm {
                gamma,
                beta,
                run_mean,
                run_var,
                momentum,
                eps,
            } => {
                let gn = tape.param(store, *gamma);
                let bn = tape.param(store, *beta);
                let (node, updated) = tape.batch_norm(
                    x,
                    gn,
                    bn,
                    store.value(*run_mean).data(),
                    store.value(*run_var).data(),
                    mode,
                    *momentum,
                    *eps,
                )?;
                if let Some((m, v)) = updated {
                    updates.push((*run_mean, m));
                    updates.push((*run_var, v));
                }
                node
            }
            LayerInst::ReLU => tape.relu(x),
            LayerInst::Dropout { rate } => match mode {
                Mode::Train => tape.dropout(x, *rate, rng)?,
                Mode::Eval => x,
            },
            LayerInst::Flatten => tape.flatten(x)?,
            LayerInst::FullyConnected { w, b } => {
                let wn = tape.param(store, *w);
                let bn = tape.param(store, *b);
                tape.linear(x, wn, bn)?
            }
            LayerInst::AdaptiveAvgPool3d { output } => tape.adaptive_avg_pool3d(x, *output)?,
            LayerInst::Residual { body, proj } => {
                let skip = match proj {
                    Some((w, b)) => {
                        let wn = tape.param(store, *w);
                        let bn = tape.param(store, *b);
                        tape.conv3d(x, wn, bn, [1; 3], [0; 3])?
                    }
                    None => x,
                };
                let body_out = run_layers(store, body, tape, x, mode, rng, updates)?;
                tape.add(body_out, skip)?
            }
        };
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv3(4),
            LayerSpec::batch_norm(),
            LayerSpec::ReLU,
            LayerSpec::pool2(),
            LayerSpec::ResidualAdd {
                body: vec![
                    LayerSpec::conv3(8),
                    LayerSpec::batch_norm(),
                    LayerSpec::ReLU,
                ],
            },
            LayerSpec::AdaptiveAvgPool3d { output: 2 },
            LayerSpec::FullyConnected { units: 6 },
        ]
    }

    #[test]
    fn build_traces_shapes() {
        let net = Network::<f32>::build([1, 8, 8, 8], &tiny_specs(), &InitConfig::default())
            .unwrap();
        let spatial: Vec<usize> = net
            .shape_trace()
            .iter()
            .filter_map(|s| match s.shape {
                TraceShape::Spatial { dims, .. } => Some(dims[0]),
                _ => None,
            })
            .collect();
        assert_eq!(spatial, vec![8, 8, 8, 8, 4, 4, 2]);
        assert_eq!(net.conv3d_layer_count(), 2);
    }

    #[test]
    fn forward_produces_flat_output() {
        let mut net =
            Network::<f32>::build([1, 8, 8, 8], &tiny_specs(), &InitConfig::default()).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::full(vec![2, 1, 8, 8, 8], 0.5));
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let out = net.forward(&mut tape, x, Mode::Train, &mut rng).unwrap();
        assert_eq!(tape.value(out).shape(), &[2, 6]);
    }

    #[test]
    fn eval_forward_is_deterministic_and_immutable() {
        let net =
            Network::<f32>::build([1, 8, 8, 8], &tiny_specs(), &InitConfig::default()).unwrap();
        let run = || {
            let mut tape = Tape::new();
            let x = tape.input(Tensor::full(vec![1, 1, 8, 8, 8], 1.0));
            let out = net.infer(&mut tape, x).unwrap();
            tape.value(out).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn residual_projection_created_on_channel_mismatch() {
        let net =
            Network::<f32>::build([1, 8, 8, 8], &tiny_specs(), &InitConfig::default()).unwrap();
        assert!(net.store.find("l04.proj.weight").is_some());
    }

    #[test]
    fn invalid_dropout_rate_rejected() {
        let specs = vec![LayerSpec::Dropout { rate: 1.5 }];
        assert!(matches!(
            Network::<f32>::build([1, 4, 4, 4], &specs, &InitConfig::default()),
            Err(NnError::InvalidConfig(_))
        ));
    }

    #[test]
    fn same_seed_builds_identical_weights() {
        let a = Network::<f32>::build([1, 8, 8, 8], &tiny_specs(), &InitConfig::default())
            .unwrap();
        let b = Network::<f32>::build([1, 8, 8, 8], &tiny_specs(), &InitConfig::default())
            .unwrap();
        for (pa, pb) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(pa.value.data(), pb.value.data());
        }
    }
}
