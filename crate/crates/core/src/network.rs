//! A sequential network instantiated from an [`ArchitectureSpec`].

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, Extent, Layer};
use crate::engine::{
    self, argmax_rows, conv2d_backward, conv2d_forward, fc_backward, fc_forward, flatten_backward,
    flatten_forward, init_uniform_bound, maxpool_backward, maxpool_forward, mix_seed, relu_backward,
    relu_forward, softmax_xent, softmax_xent_backward, ConvLayerParams, FcLayerParams, SgdState,
};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams<F = f32> {
    Conv(ConvLayerParams<F>),
    Fc(FcLayerParams<F>),
}

/// What `n` means in the `1/sqrt(n)` initialisation bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitRule {
    /// All weights of the layer.
    #[default]
    LayerCount,
    /// Weights feeding one output unit.
    FanIn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<F = f32> {
    arch: ArchitectureSpec,
    /// Aligned with `arch.layers`; `None` for parameter-free layers.
    params: Vec<Option<LayerParams<F>>>,
}

/// Activations recorded by [`Network::forward`]: the input of every layer,
/// then the logits.
pub struct ForwardTrace<F> {
    inputs: Vec<Tensor<F>>,
    pub logits: Tensor<F>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub batch: usize,
}

impl<F: Scalar> Network<F> {
    /// Fresh weights: every parameter tensor uniform on `[-1/sqrt(n), 1/sqrt(n)]`
    /// where `n` is the layer's weight count; biases share their layer's bound.
    pub fn init(arch: &ArchitectureSpec, seed: u64) -> Result<Self> {
        Self::init_with(arch, seed, InitRule::LayerCount)
    }

    /// [`Network::init`] with the bound's `n` picked by `rule`.
    pub fn init_with(arch: &ArchitectureSpec, seed: u64, rule: InitRule) -> Result<Self> {
        let extents = arch.extents()?;
        let mut params = Vec::with_capacity(arch.layers.len());
        for (i, layer) in arch.layers.iter().enumerate() {
            let weight_seed = mix_seed(seed, 2 * i as u64);
            let bias_seed = mix_seed(seed, 2 * i as u64 + 1);
            let p = match (*layer, extents[i]) {
                (Layer::Conv { c_out, k, stride, pad }, Extent::Map { c, .. }) => {
                    let shape = [c_out, c, k, k];
                    let n = match rule {
                        InitRule::LayerCount => c_out * c * k * k,
                        InitRule::FanIn => c * k * k,
                    };
                    let bound = 1.0 / (n as f64).sqrt();
                    Some(LayerParams::Conv(ConvLayerParams::new(
                        init_uniform_bound(&shape, bound, weight_seed),
                        init_uniform_bound(&[c_out], bound, bias_seed),
                        stride,
                        pad,
                    )?))
                }
                (Layer::Fc { n_out }, Extent::Vector(d)) => {
                    let shape = [d, n_out];
                    let n = match rule {
                        InitRule::LayerCount => d * n_out,
                        InitRule::FanIn => d,
                    };
                    let bound = 1.0 / (n as f64).sqrt();
                    Some(LayerParams::Fc(FcLayerParams::new(
                        init_uniform_bound(&shape, bound, weight_seed),
                        init_uniform_bound(&[n_out], bound, bias_seed),
                    )?))
                }
                _ => None,
            };
            params.push(p);
        }
        Ok(Network {
            arch: arch.clone(),
            params,
        })
    }

    /// Builds a network from explicit parameters, checking every slot.
    pub fn from_params(arch: ArchitectureSpec, params: Vec<Option<LayerParams<F>>>) -> Result<Self> {
        let extents = arch.extents()?;
        if params.len() != arch.layers.len() {
            return Err(Error::shape(
                "network",
                format!("{} parameter slots for {} layers", params.len(), arch.layers.len()),
            ));
        }
        for (i, (layer, p)) in arch.layers.iter().zip(&params).enumerate() {
            let ok = match (layer, p, extents[i]) {
                (Layer::Conv { c_out, k, stride, pad }, Some(LayerParams::Conv(cp)), Extent::Map { c, .. }) => {
                    cp.kernels.shape() == [*c_out, c, *k, *k]
                        && cp.bias.shape() == [*c_out]
                        && cp.stride == *stride
                        && cp.pad == *pad
                }
                (Layer::Fc { n_out }, Some(LayerParams::Fc(fp)), Extent::Vector(d)) => {
                    fp.weights.shape() == [d, *n_out] && fp.bias.shape() == [*n_out]
                }
                (Layer::Conv { .. } | Layer::Fc { .. }, _, _) => false,
                (_, None, _) => true,
                (_, Some(_), _) => false,
            };
            if !ok {
                return Err(Error::shape(
                    "network",
                    format!("parameters of layer {i} ({layer:?}) do not match the architecture"),
                ));
            }
        }
        Ok(Network { arch, params })
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn layer_params(&self) -> &[Option<LayerParams<F>>] {
        &self.params
    }

    pub fn into_parts(self) -> (ArchitectureSpec, Vec<Option<LayerParams<F>>>) {
        (self.arch, self.params)
    }

    /// Parameter tensors in canonical order with stable names.
    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            match p {
                Some(LayerParams::Conv(c)) => {
                    out.push((format!("layer{i}.kernels"), &c.kernels));
                    out.push((format!("layer{i}.bias"), &c.bias));
                }
                Some(LayerParams::Fc(f)) => {
                    out.push((format!("layer{i}.weights"), &f.weights));
                    out.push((format!("layer{i}.bias"), &f.bias));
                }
                None => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = Vec::new();
        for p in self.params.iter_mut().flatten() {
            match p {
                LayerParams::Conv(c) => {
                    out.push(&mut c.kernels);
                    out.push(&mut c.bias);
                }
                LayerParams::Fc(f) => {
                    out.push(&mut f.weights);
                    out.push(&mut f.bias);
                }
            }
        }
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.named_params().iter().map(|(_, t)| t.shape().to_vec()).collect()
    }

    /// Zero-velocity optimizer state matching this network.
    pub fn sgd_state(&self, momentum: F, weight_decay: F, lr: F) -> Result<SgdState<F>> {
        let shapes = self.param_shapes();
        let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
        SgdState::new(&refs, momentum, weight_decay, lr)
    }

    fn preprocess(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        let (_, c, h, w) = input.dims4()?;
        let spec = self.arch.input;
        if (c, h, w) != (spec.channels, spec.height, spec.width) {
            return Err(Error::shape(
                "network input",
                format!(
                    "got {c}x{h}x{w}, architecture expects {}x{}x{}",
                    spec.channels, spec.height, spec.width
                ),
            ));
        }
        let mut x = input.clone();
        if let Some(mean) = &self.arch.mean {
            for (i, plane) in x.data_mut().chunks_mut(h * w).enumerate() {
                let m = F::from_f64(mean[i % c] as f64);
                for v in plane {
                    *v = *v - m;
                }
            }
        }
        Ok(x)
    }

    pub fn forward(&self, input: &Tensor<F>) -> Result<ForwardTrace<F>> {
        let mut x = self.preprocess(input)?;
        let mut inputs = Vec::with_capacity(self.arch.layers.len());
        for (layer, p) in self.arch.layers.iter().zip(&self.params) {
            let y = match (layer, p) {
                (Layer::Conv { .. }, Some(LayerParams::Conv(cp))) => conv2d_forward(&x, cp)?,
                (Layer::Fc { .. }, Some(LayerParams::Fc(fp))) => fc_forward(&x, fp)?,
                (Layer::MaxPool { window, stride }, _) => maxpool_forward(&x, *window, *stride)?,
                (Layer::Relu, _) => relu_forward(&x),
                (Layer::Adjust(pc), _) => pc.forward(&x)?,
                (Layer::Flatten, _) => flatten_forward(&x)?,
                (Layer::Softmax, _) => x.clone(),
                _ => return Err(Error::Corrupt(format!("missing parameters for {layer:?}"))),
            };
            inputs.push(std::mem::replace(&mut x, y));
        }
        Ok(ForwardTrace { inputs, logits: x })
    }

    pub fn logits(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.forward(input)?.logits)
    }

    /// Gradients of every parameter tensor (canonical order) given the
    /// gradient of the loss with respect to the logits. Also returns the
    /// gradient with respect to the network input.
    pub fn backward(&self, trace: &ForwardTrace<F>, grad_logits: &Tensor<F>) -> Result<(Vec<Tensor<F>>, Tensor<F>)> {
        let mut g = grad_logits.clone();
        let mut grads_rev: Vec<Tensor<F>> = Vec::new();
        for ((layer, p), x) in self
            .arch
            .layers
            .iter()
            .zip(&self.params)
            .zip(&trace.inputs)
            .rev()
        {
            g = match (layer, p) {
                (Layer::Conv { .. }, Some(LayerParams::Conv(cp))) => {
                    let cg = conv2d_backward(x, cp, &g)?;
                    grads_rev.push(cg.bias);
                    grads_rev.push(cg.kernels);
                    cg.input
                }
                (Layer::Fc { .. }, Some(LayerParams::Fc(fp))) => {
                    let fg = fc_backward(x, fp, &g)?;
                    grads_rev.push(fg.bias);
                    grads_rev.push(fg.weights);
                    fg.input
                }
                (Layer::MaxPool { window, stride }, _) => maxpool_backward(x, *window, *stride, &g)?,
                (Layer::Relu, _) => relu_backward(x, &g)?,
                (Layer::Adjust(pc), _) => pc.backward(x.shape(), &g)?,
                (Layer::Flatten, _) => flatten_backward(x.shape(), &g)?,
                (Layer::Softmax, _) => g,
                _ => return Err(Error::Corrupt(format!("missing parameters for {layer:?}"))),
            };
        }
        grads_rev.reverse();
        Ok((grads_rev, g))
    }

    /// One SGD step on a mini-batch. The learning rate and weight decay in
    /// `sgd` are used as-is.
    pub fn train_step(&mut self, input: &Tensor<F>, labels: &[usize], sgd: &mut SgdState<F>) -> Result<StepStats> {
        let trace = self.forward(input)?;
        let out = softmax_xent(&trace.logits, labels)?;
        if !out.loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss {}", out.loss)));
        }
        let predicted = argmax_rows(&trace.logits)?;
        let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
        let grad_logits = softmax_xent_backward(&out.probs, labels)?;
        let (grads, _) = self.backward(&trace, &grad_logits)?;
        drop(trace);
        let grad_refs: Vec<&Tensor<F>> = grads.iter().collect();
        let mut params = self.params_mut();
        engine::sgd_step(&mut params, &grad_refs, sgd)?;
        Ok(StepStats {
            loss: out.loss.as_f64(),
            correct,
            batch: labels.len(),
        })
    }

    /// Predicted class per sample, evaluated in chunks of `chunk` samples.
    pub fn predict(&self, images: &Tensor<F>, chunk: usize) -> Result<Vec<usize>> {
        let n = images.shape()[0];
        let mut out = Vec::with_capacity(n);
        let chunk = chunk.max(1);
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let batch = images.gather_batch(&idx)?;
            out.extend(argmax_rows(&self.logits(&batch)?)?);
            start = end;
        }
        Ok(out)
    }

    pub fn cast<G: Scalar>(&self) -> Network<G> {
        let params = self
            .params
            .iter()
            .map(|p| {
                p.as_ref().map(|p| match p {
                    LayerParams::Conv(c) => LayerParams::Conv(ConvLayerParams {
                        kernels: c.kernels.cast(),
                        bias: c.bias.cast(),
                        stride: c.stride,
                        pad: c.pad,
                    }),
                    LayerParams::Fc(f) => LayerParams::Fc(FcLayerParams {
                        weights: f.weights.cast(),
                        bias: f.bias.cast(),
                    }),
                })
            })
            .collect();
        Network {
            arch: self.arch.clone(),
            params,
        }
    }
}
