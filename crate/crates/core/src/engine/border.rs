//! Zero padding and cropping of feature-maps by a signed amount per side.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Positive values pad with zeros, negative values crop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadCrop {
    pub top: isize,
    pub bottom: isize,
    pub left: isize,
    pub right: isize,
}

impl PadCrop {
    /// Splits a total change of `delta` rows (or columns) over two sides:
    /// symmetric, with the odd remainder on the bottom/right side.
    pub fn split(delta: isize) -> (isize, isize) {
        let near = delta / 2;
        (near, delta - near)
    }

    pub fn from_deltas(dh: isize, dw: isize) -> Self {
        let (top, bottom) = Self::split(dh);
        let (left, right) = Self::split(dw);
        PadCrop {
            top,
            bottom,
            left,
            right,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == PadCrop::default()
    }

    pub fn output_side(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let oh = h as isize + self.top + self.bottom;
        let ow = w as isize + self.left + self.right;
        if oh <= 0 || ow <= 0 || -self.top >= h as isize || -self.left >= w as isize {
            return None;
        }
        Some((oh as usize, ow as usize))
    }

    fn geometry<F: Scalar>(&self, input: &Tensor<F>) -> Result<(usize, usize, usize, usize, usize, usize)> {
        let (n, c, h, w) = input.dims4()?;
        let (oh, ow) = self.output_side(h, w).ok_or_else(|| {
            Error::shape("pad_crop", format!("{self:?} leaves nothing of a {h}x{w} map"))
        })?;
        Ok((n, c, h, w, oh, ow))
    }

    pub fn forward<F: Scalar>(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        let (n, c, h, w, oh, ow) = self.geometry(input)?;
        let mut out = vec![F::zero(); n * c * oh * ow];
        for (src, dst) in input.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
            for oy in 0..oh {
                let iy = oy as isize - self.top;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for ox in 0..ow {
                    let ix = ox as isize - self.left;
                    if ix >= 0 && ix < w as isize {
                        dst[oy * ow + ox] = src[iy as usize * w + ix as usize];
                    }
                }
            }
        }
        Tensor::new(vec![n, c, oh, ow], out)
    }

    pub fn backward<F: Scalar>(&self, input_shape: &[usize], grad_out: &Tensor<F>) -> Result<Tensor<F>> {
        let probe = Tensor::<F>::zeros(input_shape);
        let (n, c, h, w, oh, ow) = self.geometry(&probe)?;
        if grad_out.shape() != [n, c, oh, ow] {
            return Err(Error::shape(
                "pad_crop_backward",
                format!("grad_out {:?}, forward output {:?}", grad_out.shape(), [n, c, oh, ow]),
            ));
        }
        let mut gi = probe.into_data();
        for (dst, src) in gi.chunks_mut(h * w).zip(grad_out.data().chunks(oh * ow)) {
            for oy in 0..oh {
                let iy = oy as isize - self.top;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for ox in 0..ow {
                    let ix = ox as isize - self.left;
                    if ix >= 0 && ix < w as isize {
                        dst[iy as usize * w + ix as usize] = src[oy * ow + ox];
                    }
                }
            }
        }
        Tensor::new(input_shape.to_vec(), gi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_puts_remainder_bottom_right() {
        assert_eq!(PadCrop::split(1), (0, 1));
        assert_eq!(PadCrop::split(3), (1, 2));
        assert_eq!(PadCrop::split(-1), (0, -1));
        assert_eq!(PadCrop::split(-3), (-1, -2));
        assert_eq!(PadCrop::split(0), (0, 0));
    }

    #[test]
    fn pad_then_crop_roundtrips() {
        let x = Tensor::<f32>::from_fn(&[1, 2, 3, 3], |i| i as f32 + 1.0);
        let pad = PadCrop::from_deltas(1, 2);
        let y = pad.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 5]);
        // top 0, left 1
        assert_eq!(&y.data()[..5], &[0.0, 1.0, 2.0, 3.0, 0.0]);
        let crop = PadCrop::from_deltas(-1, -2);
        assert_eq!(crop.forward(&y).unwrap(), x);
    }

    #[test]
    fn crop_removes_bottom_right_first() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 3, 3], |i| i as f32);
        let y = PadCrop::from_deltas(-1, -1).forward(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn cropping_everything_is_an_error() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(PadCrop::from_deltas(-2, 0).forward(&x).is_err());
    }
}
