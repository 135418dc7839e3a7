//! Architecture descriptions and their line-oriented text format.
//!
//! ```text
//! # comments and blank lines are ignored
//! name cifar-mini
//! input 3 32 32            # channels height width
//! mean 0.49 0.48 0.45      # optional per-channel mean subtraction
//! conv 32 5 1 0            # c_out k stride pad
//! relu
//! maxpool 2 2              # window stride
//! adjust 0 1 0 1           # signed pad(+)/crop(-): top bottom left right
//! flatten
//! fc 10                    # n_out
//! softmax
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::{output_side, PadCrop};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Conv {
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Relu,
    /// Feature-map border adjustment, produced by pre-train derivation.
    Adjust(PadCrop),
    Flatten,
    Fc {
        n_out: usize,
    },
    Softmax,
}

impl Layer {
    pub fn is_conv(&self) -> bool {
        matches!(self, Layer::Conv { .. })
    }

    fn keyword(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Relu => "relu",
            Layer::Adjust(_) => "adjust",
            Layer::Flatten => "flatten",
            Layer::Fc { .. } => "fc",
            Layer::Softmax => "softmax",
        }
    }
}

/// Activation shape between layers, batch axis excluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Extent {
    Map { c: usize, h: usize, w: usize },
    Vector(usize),
}

impl Extent {
    pub fn numel(&self) -> usize {
        match *self {
            Extent::Map { c, h, w } => c * h * w,
            Extent::Vector(n) => n,
        }
    }

    /// Shape with a leading batch axis.
    pub fn batched(&self, n: usize) -> Vec<usize> {
        match *self {
            Extent::Map { c, h, w } => vec![n, c, h, w],
            Extent::Vector(d) => vec![n, d],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input: InputSpec,
    pub mean: Option<Vec<f32>>,
    pub layers: Vec<Layer>,
}

impl ArchitectureSpec {
    /// Checks the structural rules and returns the extent entering every
    /// layer, followed by the final output extent.
    pub fn extents(&self) -> Result<Vec<Extent>> {
        let InputSpec {
            channels,
            height,
            width,
        } = self.input;
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Architecture("input extents must be positive".into()));
        }
        if let Some(mean) = &self.mean {
            if mean.len() != channels {
                return Err(Error::Architecture(format!(
                    "mean has {} values for {channels} channels",
                    mean.len()
                )));
            }
        }
        let flattens = self.layers.iter().filter(|l| **l == Layer::Flatten).count();
        if flattens != 1 {
            return Err(Error::Architecture(format!(
                "expected exactly one flatten, found {flattens}"
            )));
        }
        let mut cur = Extent::Map {
            c: channels,
            h: height,
            w: width,
        };
        let mut out = vec![cur];
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| Error::Architecture(format!("layer {i} ({}): {msg}", layer.keyword()));
            cur = match (*layer, cur) {
                (Layer::Conv { c_out, k, stride, pad }, Extent::Map { h, w, .. }) => {
                    if c_out == 0 || k == 0 || stride == 0 {
                        return Err(bad("c_out, k and stride must be positive".into()));
                    }
                    match (output_side(h, k, stride, pad), output_side(w, k, stride, pad)) {
                        (Some(oh), Some(ow)) => Extent::Map { c: c_out, h: oh, w: ow },
                        _ => return Err(bad(format!("input {h}x{w} (pad {pad}) smaller than kernel {k}"))),
                    }
                }
                (Layer::MaxPool { window, stride }, Extent::Map { c, h, w }) => {
                    if window == 0 || stride == 0 {
                        return Err(bad("window and stride must be positive".into()));
                    }
                    match (output_side(h, window, stride, 0), output_side(w, window, stride, 0)) {
                        (Some(oh), Some(ow)) => Extent::Map { c, h: oh, w: ow },
                        _ => return Err(bad(format!("window {window} exceeds input {h}x{w}"))),
                    }
                }
                (Layer::Adjust(pc), Extent::Map { c, h, w }) => match pc.output_side(h, w) {
                    Some((oh, ow)) => Extent::Map { c, h: oh, w: ow },
                    None => return Err(bad(format!("adjustment removes all of {h}x{w}"))),
                },
                (Layer::Relu, e) => e,
                (Layer::Flatten, e @ Extent::Map { .. }) => Extent::Vector(e.numel()),
                (Layer::Fc { n_out }, Extent::Vector(_)) => {
                    if n_out == 0 {
                        return Err(bad("n_out must be positive".into()));
                    }
                    Extent::Vector(n_out)
                }
                (Layer::Softmax, e @ Extent::Vector(_)) => {
                    if i + 1 != self.layers.len() {
                        return Err(bad("softmax must be the last layer".into()));
                    }
                    e
                }
                (_, Extent::Vector(_)) => return Err(bad("spatial layer after flatten".into())),
                (_, Extent::Map { .. }) => return Err(bad("vector layer before flatten".into())),
            };
            out.push(cur);
        }
        if !matches!(cur, Extent::Vector(_)) {
            return Err(Error::Architecture("network must end in a vector output".into()));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.extents().map(|_| ())
    }

    /// Number of classes produced by the final fully-connected layer.
    pub fn classes(&self) -> Result<usize> {
        match self.extents()?.last() {
            Some(Extent::Vector(n)) => Ok(*n),
            _ => Err(Error::Architecture("no vector output".into())),
        }
    }

    /// Indices of conv layers, in order.
    pub fn conv_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_conv())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn flatten_index(&self) -> Option<usize> {
        self.layers.iter().position(|l| *l == Layer::Flatten)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut input = None;
        let mut mean = None;
        let mut layers = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let keyword = fields.next().unwrap_or_default();
            let args: Vec<&str> = fields.collect();
            let err = |msg: String| Error::Parse { line: line_no, msg };
            let expect_args = |names: &[&str]| -> Result<()> {
                if args.len() != names.len() {
                    return Err(err(format!(
                        "`{keyword}` takes {} field(s) ({}), got {}",
                        names.len(),
                        names.join(" "),
                        args.len()
                    )));
                }
                Ok(())
            };
            let uint = |pos: usize, field: &str| -> Result<usize> {
                args[pos].parse::<usize>().map_err(|_| {
                    err(format!(
                        "field `{field}` of `{keyword}`: expected non-negative integer, got `{}`",
                        args[pos]
                    ))
                })
            };
            let sint = |pos: usize, field: &str| -> Result<isize> {
                args[pos].parse::<isize>().map_err(|_| {
                    err(format!(
                        "field `{field}` of `{keyword}`: expected integer, got `{}`",
                        args[pos]
                    ))
                })
            };
            match keyword {
                "name" => {
                    expect_args(&["identifier"])?;
                    name = Some(args[0].to_string());
                }
                "input" => {
                    expect_args(&["C", "H", "W"])?;
                    if input.is_some() {
                        return Err(err("duplicate `input`".into()));
                    }
                    input = Some(InputSpec {
                        channels: uint(0, "C")?,
                        height: uint(1, "H")?,
                        width: uint(2, "W")?,
                    });
                }
                "mean" => {
                    if args.is_empty() {
                        return Err(err("`mean` needs one value per channel".into()));
                    }
                    let values = args
                        .iter()
                        .map(|a| {
                            a.parse::<f32>()
                                .map_err(|_| err(format!("field of `mean`: expected number, got `{a}`")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    mean = Some(values);
                }
                "conv" => {
                    expect_args(&["C_out", "k", "stride", "pad"])?;
                    layers.push(Layer::Conv {
                        c_out: uint(0, "C_out")?,
                        k: uint(1, "k")?,
                        stride: uint(2, "stride")?,
                        pad: uint(3, "pad")?,
                    });
                }
                "maxpool" => {
                    expect_args(&["window", "stride"])?;
                    layers.push(Layer::MaxPool {
                        window: uint(0, "window")?,
                        stride: uint(1, "stride")?,
                    });
                }
                "adjust" => {
                    expect_args(&["top", "bottom", "left", "right"])?;
                    layers.push(Layer::Adjust(PadCrop {
                        top: sint(0, "top")?,
                        bottom: sint(1, "bottom")?,
                        left: sint(2, "left")?,
                        right: sint(3, "right")?,
                    }));
                }
                "fc" => {
                    expect_args(&["n"])?;
                    layers.push(Layer::Fc { n_out: uint(0, "n")? });
                }
                "relu" | "flatten" | "softmax" => {
                    expect_args(&[])?;
                    layers.push(match keyword {
                        "relu" => Layer::Relu,
                        "flatten" => Layer::Flatten,
                        _ => Layer::Softmax,
                    });
                }
                other => return Err(err(format!("unknown keyword `{other}`"))),
            }
        }
        let input = input.ok_or(Error::Parse {
            line: 0,
            msg: "missing `input` line".into(),
        })?;
        let spec = ArchitectureSpec {
            name: name.unwrap_or_else(|| "unnamed".into()),
            input,
            mean,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name {}", self.name)?;
        let InputSpec {
            channels,
            height,
            width,
        } = self.input;
        writeln!(f, "input {channels} {height} {width}")?;
        if let Some(mean) = &self.mean {
            let vals: Vec<String> = mean.iter().map(|v| v.to_string()).collect();
            writeln!(f, "mean {}", vals.join(" "))?;
        }
        for layer in &self.layers {
            match layer {
                Layer::Conv { c_out, k, stride, pad } => writeln!(f, "conv {c_out} {k} {stride} {pad}")?,
                Layer::MaxPool { window, stride } => writeln!(f, "maxpool {window} {stride}")?,
                Layer::Adjust(p) => writeln!(f, "adjust {} {} {} {}", p.top, p.bottom, p.left, p.right)?,
                Layer::Fc { n_out } => writeln!(f, "fc {n_out}")?,
                other => writeln!(f, "{}", other.keyword())?,
            }
        }
        Ok(())
    }
}

/// Desk-scale reference network: 3x32x32 input, two conv layers (5x5, 3x3),
/// two fully-connected layers.
pub const CIFAR_MINI: &str = include_str!("../../../archs/cifar-mini.arch");

/// Five-conv network with OverFeat-fast layer geometry on 231x231 input.
pub const OVERFEAT_FAST: &str = include_str!("../../../archs/overfeat-fast.arch");

pub fn cifar_mini() -> ArchitectureSpec {
    ArchitectureSpec::parse(CIFAR_MINI).expect("bundled architecture parses")
}

pub fn overfeat_fast() -> ArchitectureSpec {
    ArchitectureSpec::parse(OVERFEAT_FAST).expect("bundled architecture parses")
}
