use crate::engine::conv::output_side;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn pool_geometry<F: Scalar>(
    input: &Tensor<F>,
    window: usize,
    stride: usize,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    if window > h || window > w {
        return Err(Error::shape(
            "maxpool",
            format!("window {window} exceeds input {h}x{w}"),
        ));
    }
    let oh = output_side(h, window, stride, 0);
    let ow = output_side(w, window, stride, 0);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok((n, c, h, w, oh, ow)),
        _ => Err(Error::InvalidArgument(format!(
            "maxpool window {window} stride {stride} invalid"
        ))),
    }
}

/// Index (within the plane) of the first maximum of each pooling window.
fn argmax_plane<F: Scalar>(
    plane: &[F],
    w: usize,
    window: usize,
    stride: usize,
    oy: usize,
    ox: usize,
) -> usize {
    let mut best = (oy * stride) * w + ox * stride;
    for dy in 0..window {
        for dx in 0..window {
            let idx = (oy * stride + dy) * w + ox * stride + dx;
            if plane[idx] > plane[best] {
                best = idx;
            }
        }
    }
    best
}

pub fn maxpool_forward<F: Scalar>(input: &Tensor<F>, window: usize, stride: usize) -> Result<Tensor<F>> {
    let (n, c, h, w, oh, ow) = pool_geometry(input, window, stride)?;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in input.data().chunks(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                out.push(plane[argmax_plane(plane, w, window, stride, oy, ox)]);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Routes each upstream gradient to the first maximum of its window.
pub fn maxpool_backward<F: Scalar>(
    input: &Tensor<F>,
    window: usize,
    stride: usize,
    grad_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    let (n, c, h, w, oh, ow) = pool_geometry(input, window, stride)?;
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(Error::shape(
            "maxpool_backward",
            format!("grad_out {:?}, forward output {:?}", grad_out.shape(), [n, c, oh, ow]),
        ));
    }
    let mut gi = vec![F::zero(); input.len()];
    for (pi, plane) in input.data().chunks(h * w).enumerate() {
        let go = &grad_out.data()[pi * oh * ow..(pi + 1) * oh * ow];
        let gplane = &mut gi[pi * h * w..(pi + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let idx = argmax_plane(plane, w, window, stride, oy, ox);
                gplane[idx] = gplane[idx] + go[oy * ow + ox];
            }
        }
    }
    Tensor::new(input.shape().to_vec(), gi)
}
