//! Multiplication counts of convolutional layers under spatial scaling.
//!
//! For a layer with `c_in` input channels, `c_out` output channels, a
//! `k`×`k` kernel over an `h`×`h` input, scaled down by `s`:
//!
//! ```text
//! M(s) = c_in * (k/s)^2 * (h/s - k/s + 1)^2 * c_out
//! M(1)/s^4 < M(s) <= M(1)/s^2
//! ```
//!
//! The analytic value uses real-valued `k/s` and `h/s`. The realized value
//! counts what an integer implementation performs: the actual kernel side
//! times the actual output extent, including stride and padding.

use serde::Serialize;

use crate::arch::{ArchitectureSpec, Extent, Layer};
use crate::engine::output_side;
use crate::error::{Error, Result};
use crate::surgery::ScalePlan;

/// Target→pre-train kernel sides that the analysis is calibrated for.
pub const KERNEL_TABLE: [(usize, usize); 5] = [(1, 1), (3, 2), (5, 3), (7, 5), (11, 7)];

/// Largest scale factor the fallback rule accepts for kernels outside the table.
pub const MAX_FALLBACK_SCALE: f64 = 1.7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LayerCostQuery {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub h: usize,
    pub s: f64,
}

impl LayerCostQuery {
    fn check(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.k == 0 {
            return Err(Error::InvalidArgument(format!(
                "channels and kernel side must be positive: {self:?}"
            )));
        }
        if self.h < self.k {
            return Err(Error::InvalidArgument(format!(
                "input side {} smaller than kernel {}",
                self.h, self.k
            )));
        }
        if !(self.s >= 1.0) || !self.s.is_finite() {
            return Err(Error::Domain(format!("scale must be >= 1, got {}", self.s)));
        }
        Ok(())
    }

    pub fn unscaled(&self) -> Self {
        LayerCostQuery { s: 1.0, ..*self }
    }
}

pub fn multiplications(q: &LayerCostQuery) -> Result<f64> {
    q.check()?;
    let (k, h) = (q.k as f64 / q.s, q.h as f64 / q.s);
    let positions = h - k + 1.0;
    if positions <= 0.0 {
        return Err(Error::Domain(format!(
            "h/s - k/s + 1 = {positions} is not positive"
        )));
    }
    Ok(q.c_in as f64 * k * k * positions * positions * q.c_out as f64)
}

/// `(M(1)/s^4, M(1)/s^2)`.
pub fn reduction_bounds(q: &LayerCostQuery) -> Result<(f64, f64)> {
    q.check()?;
    if q.s <= 1.0 {
        return Err(Error::Domain(format!(
            "bounds need s > 1, got {}",
            q.s
        )));
    }
    let m1 = multiplications(&q.unscaled())?;
    let s2 = q.s * q.s;
    Ok((m1 / (s2 * s2), m1 / s2))
}

/// Pre-train kernel side for an odd target side, and `s = k_target / k_pretrain`.
///
/// Sides outside the table take the strongest reduction whose ratio stays at
/// or below [`MAX_FALLBACK_SCALE`]; that rule also reproduces every table row.
pub fn suggest_pretrain_kernel(k_target: usize) -> Result<(usize, f64)> {
    if k_target == 0 || k_target % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel side must be odd and positive, got {k_target}"
        )));
    }
    let k_pre = match KERNEL_TABLE.iter().find(|(t, _)| *t == k_target) {
        Some(&(_, p)) => p,
        None => (1..k_target)
            .find(|&p| k_target as f64 / p as f64 <= MAX_FALLBACK_SCALE)
            .unwrap_or(k_target),
    };
    Ok((k_pre, k_target as f64 / k_pre as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCost {
    /// Index into the target architecture's layer list.
    pub layer: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub k_target: usize,
    pub k_pretrain: usize,
    pub s: f64,
    pub s2: f64,
    pub s4: f64,
    pub mults_target: f64,
    pub mults_pretrain: f64,
    /// `(M(1)/s^4, M(1)/s^2)`; absent when `s == 1`.
    pub bounds: Option<(f64, f64)>,
    pub realized_target: u64,
    pub realized_pretrain: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NetworkCost {
    pub layers: Vec<LayerCost>,
    pub total_target: f64,
    pub total_pretrain: f64,
    /// Convolution-multiplication speedup, analytic.
    pub predicted_speedup: f64,
    pub realized_total_target: u64,
    pub realized_total_pretrain: u64,
    pub realized_speedup: f64,
    /// `total_target / sum(M_l(1)/s_l^2)`: the guaranteed minimum reduction.
    pub speedup_lower_bound: f64,
    /// `total_target / sum(M_l(1)/s_l^4)`: no layer can do better than `s^4`.
    pub speedup_upper_bound: f64,
}

fn realized(arch: &ArchitectureSpec) -> Result<Vec<u64>> {
    let extents = arch.extents()?;
    let mut out = Vec::new();
    for (i, layer) in arch.layers.iter().enumerate() {
        if let (Layer::Conv { c_out, k, stride, pad }, Extent::Map { c, h, w }) = (*layer, extents[i]) {
            let oh = output_side(h, k, stride, pad).expect("validated");
            let ow = output_side(w, k, stride, pad).expect("validated");
            out.push((c * k * k * oh * ow * c_out) as u64);
        }
    }
    Ok(out)
}

/// Per-layer and total costs of `arch` against its pre-train counterpart
/// described by `plan`. Use [`ScalePlan::identity`] for the unit plan.
pub fn network_cost(arch: &ArchitectureSpec, plan: &ScalePlan) -> Result<NetworkCost> {
    plan.check_target(arch)?;
    let extents = arch.extents()?;
    let pretrain = plan.apply(arch)?;
    let real_t = realized(arch)?;
    let real_p = realized(&pretrain)?;
    let mut layers = Vec::with_capacity(plan.convs.len());
    for (j, cs) in plan.convs.iter().enumerate() {
        let (c_out, c_in, h) = match (arch.layers[cs.layer], extents[cs.layer]) {
            (Layer::Conv { c_out, .. }, Extent::Map { c, h, .. }) => (c_out, c, h),
            _ => unreachable!("checked by check_target"),
        };
        let q = LayerCostQuery {
            c_in,
            c_out,
            k: cs.k_target,
            h,
            s: cs.s,
        };
        let s2 = cs.s * cs.s;
        layers.push(LayerCost {
            layer: cs.layer,
            c_in,
            c_out,
            h,
            k_target: cs.k_target,
            k_pretrain: cs.k_pretrain,
            s: cs.s,
            s2,
            s4: s2 * s2,
            mults_target: multiplications(&q.unscaled())?,
            mults_pretrain: multiplications(&q)?,
            bounds: if cs.s > 1.0 {
                Some(reduction_bounds(&q)?)
            } else {
                None
            },
            realized_target: real_t[j],
            realized_pretrain: real_p[j],
        });
    }
    let total_target: f64 = layers.iter().map(|l| l.mults_target).sum();
    let total_pretrain: f64 = layers.iter().map(|l| l.mults_pretrain).sum();
    let realized_total_target: u64 = real_t.iter().sum();
    let realized_total_pretrain: u64 = real_p.iter().sum();
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 1.0 };
    let sum_s2: f64 = layers.iter().map(|l| l.mults_target / l.s2).sum();
    let sum_s4: f64 = layers.iter().map(|l| l.mults_target / l.s4).sum();
    Ok(NetworkCost {
        predicted_speedup: ratio(total_target, total_pretrain),
        realized_speedup: ratio(realized_total_target as f64, realized_total_pretrain as f64),
        speedup_lower_bound: ratio(total_target, sum_s2),
        speedup_upper_bound: ratio(total_target, sum_s4),
        layers,
        total_target,
        total_pretrain,
        realized_total_target,
        realized_total_pretrain,
    })
}
