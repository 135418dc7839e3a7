//! Corner-aligned bilinear resampling of 2-D planes.
//!
//! Destination sample `i` of `d` reads the source at `i * (s - 1) / (d - 1)`,
//! so the first and last samples of both grids coincide. A single
//! destination sample reads the source centre; a single source sample is
//! replicated.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Lower source index and interpolation weight of the upper neighbour, per
/// destination sample.
pub fn sample_positions(src: usize, dst: usize) -> Vec<(usize, f64)> {
    assert!(src > 0 && dst > 0, "empty resampling axis");
    if src == 1 {
        return vec![(0, 0.0); dst];
    }
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                (src - 1) as f64 / 2.0
            } else {
                (i * (src - 1)) as f64 / (dst - 1) as f64
            };
            let i0 = (pos.floor() as usize).min(src - 1);
            (i0, pos - i0 as f64)
        })
        .collect()
}

/// Exact when `a == b`.
fn lerp<F: Scalar>(a: F, b: F, t: F) -> F {
    a + t * (b - a)
}

/// Resamples one row-major `sh`×`sw` plane to `dh`×`dw`, multiplying every
/// output by `gain`.
pub fn resample_plane<F: Scalar>(
    src: &[F],
    (sh, sw): (usize, usize),
    (dh, dw): (usize, usize),
    gain: F,
    dst: &mut [F],
) {
    assert_eq!(src.len(), sh * sw);
    assert_eq!(dst.len(), dh * dw);
    let rows = sample_positions(sh, dh);
    let cols = sample_positions(sw, dw);
    for (y, &(y0, fy)) in rows.iter().enumerate() {
        let fy = F::from_f64(fy);
        let y1 = (y0 + 1).min(sh - 1);
        for (x, &(x0, fx)) in cols.iter().enumerate() {
            let fx = F::from_f64(fx);
            let x1 = (x0 + 1).min(sw - 1);
            let top = lerp(src[y0 * sw + x0], src[y0 * sw + x1], fx);
            let bottom = lerp(src[y1 * sw + x0], src[y1 * sw + x1], fx);
            dst[y * dw + x] = gain * lerp(top, bottom, fy);
        }
    }
}

/// Resamples every plane of an `(n, c, h, w)` or `(c, h, w)` tensor.
pub fn resample_maps<F: Scalar>(input: &Tensor<F>, (dh, dw): (usize, usize), gain: F) -> Result<Tensor<F>> {
    let shape = input.shape();
    if shape.len() < 3 {
        return Err(Error::shape(
            "resample",
            format!("expected (n, c, h, w) or (c, h, w), got {shape:?}"),
        ));
    }
    if dh == 0 || dw == 0 {
        return Err(Error::InvalidArgument("resample target must be positive".into()));
    }
    let (sh, sw) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let mut out_shape = shape.to_vec();
    let r = out_shape.len();
    out_shape[r - 2] = dh;
    out_shape[r - 1] = dw;
    let planes = input.len() / (sh * sw);
    let mut out = vec![F::zero(); planes * dh * dw];
    for (src, dst) in input.data().chunks(sh * sw).zip(out.chunks_mut(dh * dw)) {
        resample_plane(src, (sh, sw), (dh, dw), gain, dst);
    }
    Tensor::new(out_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_coincide() {
        let p = sample_positions(4, 7);
        assert_eq!(p[0], (0, 0.0));
        assert_eq!(p[6], (3, 0.0));
        assert_eq!(p[2], (1, 0.0));
    }

    #[test]
    fn single_destination_reads_centre() {
        assert_eq!(sample_positions(5, 1), vec![(2, 0.0)]);
        assert_eq!(sample_positions(4, 1), vec![(1, 0.5)]);
    }

    #[test]
    fn ramp_downsample_keeps_corners() {
        let src: Vec<f64> = (0..16).map(|i| (i % 4) as f64).collect();
        let mut dst = vec![0.0; 4];
        resample_plane(&src, (4, 4), (2, 2), 1.0, &mut dst);
        assert_eq!(dst, vec![0.0, 3.0, 0.0, 3.0]);
    }

    #[test]
    fn same_size_is_exact() {
        let src: Vec<f32> = (0..12).map(|i| (i as f32).sin()).collect();
        let mut dst = vec![0.0; 12];
        resample_plane(&src, (3, 4), (3, 4), 1.0, &mut dst);
        assert_eq!(src, dst);
    }
}
