//! Structure-changing transforms between a target network and its
//! reduced-resolution pre-train counterpart.
//!
//! Derivation shrinks every conv kernel, picks a smaller input resolution and
//! inserts pad/crop layers so each later conv layer sees roughly its target
//! input side divided by its own scale factor. Resizing goes the other way:
//! kernels and the first fully-connected layer are upsampled bilinearly with
//! an amplitude gain, everything else is copied.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, Extent, InputSpec, Layer};
use crate::cost::suggest_pretrain_kernel;
use crate::data::Checkpoint;
use crate::engine::{output_side, ConvLayerParams, FcLayerParams, PadCrop};
use crate::error::{Error, Result};
use crate::network::{LayerParams, Network};
use crate::resample::{resample_maps, resample_plane};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvScale {
    /// Index into the target architecture's layer list.
    pub layer: usize,
    pub k_target: usize,
    pub k_pretrain: usize,
    /// `k_target / k_pretrain`.
    pub s: f64,
    pub pad_target: usize,
    pub pad_pretrain: usize,
}

/// Pad/crop inserted in the pre-train network right before target layer `before`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjustment {
    pub before: usize,
    pub pad_crop: PadCrop,
}

/// Gain applied to upsampled kernels and interface weights, as a function of
/// the area ratio `a` between the upsampled and original grids.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Amplitude {
    /// Multiply by `a` (`s^2` for a kernel).
    #[default]
    Scale,
    /// Divide by `a`, keeping the layer's response to a smooth input unchanged.
    Preserve,
}

impl Amplitude {
    pub fn gain(self, area_ratio: f64) -> f64 {
        match self {
            Amplitude::Scale => area_ratio,
            Amplitude::Preserve => 1.0 / area_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalePlan {
    /// `(height, width)` of the target input.
    pub target_input: (usize, usize),
    pub pretrain_input: (usize, usize),
    pub convs: Vec<ConvScale>,
    pub adjustments: Vec<Adjustment>,
    #[serde(default)]
    pub amplitude: Amplitude,
}

impl ScalePlan {
    /// The plan that changes nothing.
    pub fn identity(arch: &ArchitectureSpec) -> Result<Self> {
        arch.validate()?;
        let convs = arch
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match *l {
                Layer::Conv { k, pad, .. } => Some(ConvScale {
                    layer: i,
                    k_target: k,
                    k_pretrain: k,
                    s: 1.0,
                    pad_target: pad,
                    pad_pretrain: pad,
                }),
                _ => None,
            })
            .collect();
        let input = (arch.input.height, arch.input.width);
        Ok(ScalePlan {
            target_input: input,
            pretrain_input: input,
            convs,
            adjustments: Vec::new(),
            amplitude: Amplitude::default(),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.target_input == self.pretrain_input
            && self.adjustments.iter().all(|a| a.pad_crop.is_identity())
            && self
                .convs
                .iter()
                .all(|c| c.k_target == c.k_pretrain && c.pad_target == c.pad_pretrain)
    }

    /// Checks that the plan describes `arch`'s conv layers and input.
    pub fn check_target(&self, arch: &ArchitectureSpec) -> Result<()> {
        let mismatch = |msg: String| Err(Error::InvalidArgument(format!("plan does not fit architecture: {msg}")));
        if self.target_input != (arch.input.height, arch.input.width) {
            return mismatch(format!(
                "plan input {:?}, architecture input {}x{}",
                self.target_input, arch.input.height, arch.input.width
            ));
        }
        let conv = arch.conv_indices();
        if conv.len() != self.convs.len() {
            return mismatch(format!(
                "{} conv entries for {} conv layers",
                self.convs.len(),
                conv.len()
            ));
        }
        for (&i, cs) in conv.iter().zip(&self.convs) {
            let Layer::Conv { k, pad, .. } = arch.layers[i] else { unreachable!() };
            if cs.layer != i || cs.k_target != k || cs.pad_target != pad {
                return mismatch(format!("entry {cs:?} vs layer {i} (k {k}, pad {pad})"));
            }
            if cs.k_pretrain == 0 || cs.k_pretrain > cs.k_target {
                return mismatch(format!("layer {i}: pre-train kernel {} not in 1..={k}", cs.k_pretrain));
            }
        }
        for a in &self.adjustments {
            if a.before >= arch.layers.len() {
                return mismatch(format!("adjustment before layer {} past the end", a.before));
            }
        }
        Ok(())
    }

    /// Builds the pre-train architecture this plan describes.
    pub fn apply(&self, target: &ArchitectureSpec) -> Result<ArchitectureSpec> {
        self.check_target(target)?;
        let mut layers = Vec::with_capacity(target.layers.len() + self.adjustments.len());
        let mut convs = self.convs.iter();
        for (i, layer) in target.layers.iter().enumerate() {
            for a in self.adjustments.iter().filter(|a| a.before == i) {
                layers.push(Layer::Adjust(a.pad_crop));
            }
            layers.push(match *layer {
                Layer::Conv { c_out, stride, .. } => {
                    let cs = convs.next().expect("checked");
                    Layer::Conv {
                        c_out,
                        k: cs.k_pretrain,
                        stride,
                        pad: cs.pad_pretrain,
                    }
                }
                other => other,
            });
        }
        let (height, width) = self.pretrain_input;
        let arch = ArchitectureSpec {
            name: if self.is_identity() {
                target.name.clone()
            } else {
                format!("{}-pretrain", target.name)
            },
            input: InputSpec {
                channels: target.input.channels,
                height,
                width,
            },
            mean: target.mean.clone(),
            layers,
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Shapes on either side of the flatten boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FcInterfaceSpec {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub h_pre: usize,
    pub w_pre: usize,
    pub n_out: usize,
}

impl FcInterfaceSpec {
    pub fn between(target: &ArchitectureSpec, pretrain: &ArchitectureSpec) -> Result<Self> {
        let side = |arch: &ArchitectureSpec| -> Result<(usize, usize, usize, usize)> {
            let extents = arch.extents()?;
            let f = arch.flatten_index().expect("validated");
            let Extent::Map { c, h, w } = extents[f] else { unreachable!() };
            let n_out = arch.layers[f..]
                .iter()
                .find_map(|l| match *l {
                    Layer::Fc { n_out } => Some(n_out),
                    _ => None,
                })
                .ok_or_else(|| Error::Architecture("no fully-connected layer after flatten".into()))?;
            Ok((c, h, w, n_out))
        };
        let (c, h, w, n_out) = side(target)?;
        let (c_pre, h_pre, w_pre, n_pre) = side(pretrain)?;
        if c != c_pre || n_out != n_pre {
            return Err(Error::Architecture(format!(
                "fully-connected interface differs: {c} channels/{n_out} outputs vs {c_pre}/{n_pre}"
            )));
        }
        Ok(FcInterfaceSpec {
            c,
            h,
            w,
            h_pre,
            w_pre,
            n_out,
        })
    }

    pub fn target_rows(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn pretrain_rows(&self) -> usize {
        self.c * self.h_pre * self.w_pre
    }
}

/// The side `x` minimising `|side / x - s|`, ties toward the larger `x`.
pub fn choose_input_side(side: usize, s: f64) -> usize {
    let mut best = side;
    let mut best_err = f64::INFINITY;
    for x in (1..=side).rev() {
        let err = (side as f64 / x as f64 - s).abs();
        if err < best_err {
            best = x;
            best_err = err;
        }
    }
    best
}

fn step_map(layer: Layer, (c, h, w): (usize, usize, usize)) -> Option<(usize, usize, usize)> {
    match layer {
        Layer::Conv { c_out, k, stride, pad } => {
            Some((c_out, output_side(h, k, stride, pad)?, output_side(w, k, stride, pad)?))
        }
        Layer::MaxPool { window, stride } => {
            Some((c, output_side(h, window, stride, 0)?, output_side(w, window, stride, 0)?))
        }
        Layer::Adjust(pc) => pc.output_side(h, w).map(|(h, w)| (c, h, w)),
        _ => Some((c, h, w)),
    }
}

/// Derives the pre-train network of `target` and the plan linking the two.
pub fn derive_pretrain_architecture(target: &ArchitectureSpec) -> Result<(ArchitectureSpec, ScalePlan)> {
    let extents = target.extents()?;
    let conv = target.conv_indices();
    let mut convs = Vec::with_capacity(conv.len());
    for &i in &conv {
        let Layer::Conv { k, pad, .. } = target.layers[i] else { unreachable!() };
        let (k_pretrain, s) = suggest_pretrain_kernel(k).map_err(|e| Error::UnsatisfiablePlan {
            layer: i,
            msg: e.to_string(),
        })?;
        convs.push(ConvScale {
            layer: i,
            k_target: k,
            k_pretrain,
            s,
            pad_target: pad,
            pad_pretrain: (pad as f64 / s).round() as usize,
        });
    }
    let s1 = convs.first().map_or(1.0, |c| c.s);
    let (h0, w0) = (target.input.height, target.input.width);
    let pretrain_input = (choose_input_side(h0, s1), choose_input_side(w0, s1));

    let flatten = target.flatten_index().expect("validated");
    let mut adjustments = Vec::new();
    let mut cur = (target.input.channels, pretrain_input.0, pretrain_input.1);
    let mut next_conv = convs.iter().peekable();
    for (i, layer) in target.layers.iter().enumerate().take(flatten) {
        let mut layer = *layer;
        if let Some(cs) = next_conv.next_if(|cs| cs.layer == i) {
            let Extent::Map { h, w, .. } = extents[i] else { unreachable!() };
            if i != conv[0] {
                let want_h = (h as f64 / cs.s).round() as usize;
                let want_w = (w as f64 / cs.s).round() as usize;
                if want_h + 2 * cs.pad_pretrain < cs.k_pretrain || want_w + 2 * cs.pad_pretrain < cs.k_pretrain || want_h == 0 || want_w == 0 {
                    return Err(Error::UnsatisfiablePlan {
                        layer: i,
                        msg: format!(
                            "pre-train input {want_h}x{want_w} cannot hold a {0}x{0} kernel",
                            cs.k_pretrain
                        ),
                    });
                }
                let pc = PadCrop::from_deltas(want_h as isize - cur.1 as isize, want_w as isize - cur.2 as isize);
                if !pc.is_identity() {
                    adjustments.push(Adjustment { before: i, pad_crop: pc });
                    cur = step_map(Layer::Adjust(pc), cur).ok_or_else(|| Error::UnsatisfiablePlan {
                        layer: i,
                        msg: "adjustment removes the whole feature-map".into(),
                    })?;
                }
            }
            if let Layer::Conv { k, pad, .. } = &mut layer {
                *k = cs.k_pretrain;
                *pad = cs.pad_pretrain;
            }
        }
        cur = step_map(layer, cur).ok_or_else(|| Error::UnsatisfiablePlan {
            layer: i,
            msg: format!("pre-train feature-map {}x{} vanishes", cur.1, cur.2),
        })?;
    }
    let Extent::Map { h, w, .. } = extents[flatten] else { unreachable!() };
    if cur.1 > h || cur.2 > w {
        return Err(Error::UnsatisfiablePlan {
            layer: flatten,
            msg: format!("pre-train map {}x{} exceeds target {h}x{w} at flatten", cur.1, cur.2),
        });
    }
    let plan = ScalePlan {
        target_input: (h0, w0),
        pretrain_input,
        convs,
        adjustments,
        amplitude: Amplitude::default(),
    };
    let pretrain = plan.apply(target).map_err(|e| Error::UnsatisfiablePlan {
        layer: flatten,
        msg: e.to_string(),
    })?;
    Ok((pretrain, plan))
}

/// Bilinear upsampling of a `k̃`×`k̃` kernel to `k_target`, scaled by `s^2`.
pub fn upscale_kernel<F: Scalar>(kernel: &Tensor<F>, k_target: usize) -> Result<Tensor<F>> {
    upscale_kernel_with(kernel, k_target, Amplitude::Scale)
}

/// [`upscale_kernel`] with a chosen amplitude rule.
pub fn upscale_kernel_with<F: Scalar>(kernel: &Tensor<F>, k_target: usize, amplitude: Amplitude) -> Result<Tensor<F>> {
    let (r, c) = kernel.dims2()?;
    if r != c {
        return Err(Error::shape("upscale_kernel", format!("kernel {r}x{c} is not square")));
    }
    if k_target < r {
        return Err(Error::InvalidArgument(format!(
            "cannot upscale a {r}x{r} kernel to {k_target}x{k_target}"
        )));
    }
    if k_target == r {
        return Ok(kernel.clone());
    }
    let s = k_target as f64 / r as f64;
    let mut out = vec![F::zero(); k_target * k_target];
    resample_plane(kernel.data(), (r, r), (k_target, k_target), F::from_f64(amplitude.gain(s * s)), &mut out);
    Tensor::new(vec![k_target, k_target], out)
}

/// Upscales every kernel slice; bias and stride are kept, pad becomes `pad_target`.
pub fn upscale_conv_layer<F: Scalar>(
    params: &ConvLayerParams<F>,
    k_target: usize,
    pad_target: usize,
    amplitude: Amplitude,
) -> Result<ConvLayerParams<F>> {
    let k = params.k();
    if k_target < k {
        return Err(Error::InvalidArgument(format!(
            "cannot upscale a {k}x{k} kernel to {k_target}x{k_target}"
        )));
    }
    let kernels = if k_target == k {
        params.kernels.clone()
    } else {
        let s = k_target as f64 / k as f64;
        resample_maps(&params.kernels, (k_target, k_target), F::from_f64(amplitude.gain(s * s)))?
    };
    ConvLayerParams::new(kernels, params.bias.clone(), params.stride, pad_target)
}

/// Maps the first fully-connected weight matrix across the flatten boundary:
/// each column is reshaped to `(c, h_pre, w_pre)`, upsampled per channel with
/// gain `(h/h_pre)(w/w_pre)` and flattened again.
pub fn upscale_fc_interface<F: Scalar>(weights: &Tensor<F>, spec: &FcInterfaceSpec) -> Result<Tensor<F>> {
    upscale_fc_interface_with(weights, spec, Amplitude::Scale)
}

/// [`upscale_fc_interface`] with a chosen amplitude rule.
pub fn upscale_fc_interface_with<F: Scalar>(
    weights: &Tensor<F>,
    spec: &FcInterfaceSpec,
    amplitude: Amplitude,
) -> Result<Tensor<F>> {
    let (rows, cols) = weights.dims2()?;
    if rows != spec.pretrain_rows() || cols != spec.n_out {
        return Err(Error::shape(
            "upscale_fc_interface",
            format!(
                "weights {rows}x{cols}, interface expects {}x{}",
                spec.pretrain_rows(),
                spec.n_out
            ),
        ));
    }
    if spec.h < spec.h_pre || spec.w < spec.w_pre {
        return Err(Error::InvalidArgument(format!(
            "interface would shrink {}x{} to {}x{}",
            spec.h_pre, spec.w_pre, spec.h, spec.w
        )));
    }
    if (spec.h, spec.w) == (spec.h_pre, spec.w_pre) {
        return Ok(weights.clone());
    }
    // Transpose so every column is a contiguous (c, h_pre, w_pre) block.
    let mut cols_major = vec![F::zero(); rows * cols];
    for (r, row) in weights.data().chunks(cols).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            cols_major[j * rows + r] = v;
        }
    }
    let blocks = Tensor::new(vec![cols, spec.c, spec.h_pre, spec.w_pre], cols_major)?;
    let gain = (spec.h as f64 / spec.h_pre as f64) * (spec.w as f64 / spec.w_pre as f64);
    let up = resample_maps(&blocks, (spec.h, spec.w), F::from_f64(amplitude.gain(gain)))?;
    let out_rows = spec.target_rows();
    let mut out = vec![F::zero(); out_rows * cols];
    for (j, block) in up.data().chunks(out_rows).enumerate() {
        for (r, &v) in block.iter().enumerate() {
            out[r * cols + j] = v;
        }
    }
    Tensor::new(vec![out_rows, cols], out)
}

/// Bilinear downsampling of `(n, c, h, w)` or `(c, h, w)` images; no gain.
pub fn downscale_image<F: Scalar>(image: &Tensor<F>, (h, w): (usize, usize)) -> Result<Tensor<F>> {
    let shape = image.shape();
    if shape.len() < 3 {
        return Err(Error::shape("downscale_image", format!("expected image planes, got {shape:?}")));
    }
    let (sh, sw) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h > sh || w > sw {
        return Err(Error::InvalidArgument(format!(
            "downscale_image cannot enlarge {sh}x{sw} to {h}x{w}"
        )));
    }
    if (h, w) == (sh, sw) {
        return Ok(image.clone());
    }
    resample_maps(image, (h, w), F::one())
}

/// Carries pre-train weights over to the target architecture.
pub fn resize_network<F: Scalar>(
    pretrain: &Network<F>,
    target: &ArchitectureSpec,
    plan: &ScalePlan,
) -> Result<Network<F>> {
    let expected = plan.apply(target)?;
    if pretrain.arch().layers != expected.layers || pretrain.arch().input != expected.input {
        return Err(Error::Architecture(format!(
            "network '{}' is not the pre-train side of this plan",
            pretrain.arch().name
        )));
    }
    let fc = FcInterfaceSpec::between(target, pretrain.arch())?;
    let flatten = target.flatten_index().expect("validated");
    let mut convs = plan.convs.iter();
    let mut interface_done = false;
    let source = pretrain
        .arch()
        .layers
        .iter()
        .zip(pretrain.layer_params())
        .filter(|(l, _)| !matches!(l, Layer::Adjust(_)))
        .map(|(_, p)| p);
    let mut params = Vec::with_capacity(target.layers.len());
    for (i, p) in source.enumerate() {
        params.push(match p {
            Some(LayerParams::Conv(c)) => {
                let cs = convs.next().expect("plan checked");
                Some(LayerParams::Conv(upscale_conv_layer(c, cs.k_target, cs.pad_target, plan.amplitude)?))
            }
            Some(LayerParams::Fc(f)) if i > flatten && !interface_done => {
                interface_done = true;
                Some(LayerParams::Fc(FcLayerParams::new(
                    upscale_fc_interface_with(&f.weights, &fc, plan.amplitude)?,
                    f.bias.clone(),
                )?))
            }
            other => other.clone(),
        });
    }
    Network::from_params(target.clone(), params)
}

/// Resizes a pre-train checkpoint to the target. Optimizer velocity restarts
/// from zero unless the plan is the identity, in which case the checkpoint
/// carries over unchanged.
pub fn resize_checkpoint(ckpt: &Checkpoint, target: &ArchitectureSpec, plan: &ScalePlan) -> Result<Checkpoint> {
    let network = resize_network(&ckpt.network, target, plan)?;
    let velocity = if plan.is_identity() {
        ckpt.velocity.clone()
    } else {
        network.param_shapes().iter().map(|s| Tensor::zeros(s)).collect()
    };
    Ok(Checkpoint {
        network,
        velocity,
        ..ckpt.clone()
    })
}
