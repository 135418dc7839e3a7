//! Fully-connected layers and the flatten boundary.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Weights are stored as a `(rows = inputs, columns = outputs)` matrix, so
/// each column holds the incoming weights of one output neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct FcLayerParams<F = f32> {
    pub weights: Tensor<F>,
    pub bias: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcGrads<F = f32> {
    pub input: Tensor<F>,
    pub weights: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Scalar> FcLayerParams<F> {
    pub fn new(weights: Tensor<F>, bias: Tensor<F>) -> Result<Self> {
        let (_, cols) = weights.dims2()?;
        if bias.shape() != [cols] {
            return Err(Error::shape(
                "fc",
                format!("bias shape {:?} does not match {cols} outputs", bias.shape()),
            ));
        }
        Ok(FcLayerParams { weights, bias })
    }

    pub fn n_in(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn n_out(&self) -> usize {
        self.weights.shape()[1]
    }

    fn check_input(&self, input: &Tensor<F>) -> Result<usize> {
        let (n, d) = input.dims2()?;
        if d != self.n_in() {
            return Err(Error::shape(
                "fc",
                format!("input width {d}, weight rows {}", self.n_in()),
            ));
        }
        Ok(n)
    }
}

pub fn fc_forward<F: Scalar>(input: &Tensor<F>, params: &FcLayerParams<F>) -> Result<Tensor<F>> {
    let n = params.check_input(input)?;
    let (d, m) = (params.n_in(), params.n_out());
    let mut out: Vec<F> = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(params.bias.data());
    }
    F::gemm(
        n,
        d,
        m,
        F::one(),
        input.data(),
        (d as isize, 1),
        params.weights.data(),
        (m as isize, 1),
        F::one(),
        &mut out,
    );
    Tensor::new(vec![n, m], out)
}

pub fn fc_backward<F: Scalar>(
    input: &Tensor<F>,
    params: &FcLayerParams<F>,
    grad_out: &Tensor<F>,
) -> Result<FcGrads<F>> {
    let n = params.check_input(input)?;
    let (d, m) = (params.n_in(), params.n_out());
    if grad_out.shape() != [n, m] {
        return Err(Error::shape(
            "fc_backward",
            format!("grad_out {:?}, forward output {:?}", grad_out.shape(), [n, m]),
        ));
    }
    let mut gw = vec![F::zero(); d * m];
    F::gemm(
        d,
        n,
        m,
        F::one(),
        input.data(),
        (1, d as isize),
        grad_out.data(),
        (m as isize, 1),
        F::zero(),
        &mut gw,
    );
    let mut gi = vec![F::zero(); n * d];
    F::gemm(
        n,
        m,
        d,
        F::one(),
        grad_out.data(),
        (m as isize, 1),
        params.weights.data(),
        (1, m as isize),
        F::zero(),
        &mut gi,
    );
    let mut gb = vec![F::zero(); m];
    for row in grad_out.data().chunks(m) {
        for (acc, &g) in gb.iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }
    Ok(FcGrads {
        input: Tensor::new(vec![n, d], gi)?,
        weights: Tensor::new(vec![d, m], gw)?,
        bias: Tensor::new(vec![m], gb)?,
    })
}

/// `(n, c, h, w)` to `(n, c*h*w)`, channel-major with width fastest.
pub fn flatten_forward<F: Scalar>(input: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, c, h, w) = input.dims4()?;
    input.clone().reshape(vec![n, c * h * w])
}

pub fn flatten_backward<F: Scalar>(input_shape: &[usize], grad_out: &Tensor<F>) -> Result<Tensor<F>> {
    grad_out.clone().reshape(input_shape.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_is_row_times_matrix_plus_bias() {
        let w = Tensor::new(vec![2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![3], vec![0.5, 0.0, -0.5]).unwrap();
        let p = FcLayerParams::new(w, b).unwrap();
        let x = Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        let y = fc_forward(&x, &p).unwrap();
        assert_eq!(y.data(), &[-2.5, -3.0, -3.5]);
    }

    #[test]
    fn flatten_order_is_channel_major() {
        let x = Tensor::<f32>::from_fn(&[1, 2, 2, 2], |i| i as f32);
        let y = flatten_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 8]);
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn width_mismatch_is_reported() {
        let p = FcLayerParams::new(Tensor::<f32>::zeros(&[4, 2]), Tensor::zeros(&[2])).unwrap();
        let err = fc_forward(&Tensor::zeros(&[1, 3]), &p).unwrap_err().to_string();
        assert!(err.contains("input width 3, weight rows 4"), "{err}");
    }
}
