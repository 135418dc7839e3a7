//! SGD with classic momentum; weight decay is added to the gradient.
//!
//! ```text
//! v <- momentum * v - lr * (g + weight_decay * w)
//! w <- w + v
//! ```

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SgdState<F = f32> {
    /// One velocity tensor per parameter tensor, same shapes.
    pub velocity: Vec<Tensor<F>>,
    pub momentum: F,
    pub weight_decay: F,
    pub lr: F,
}

impl<F: Scalar> SgdState<F> {
    pub fn new(shapes: &[&[usize]], momentum: F, weight_decay: F, lr: F) -> Result<Self> {
        if !(momentum >= F::zero() && momentum < F::one()) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        if !(weight_decay >= F::zero()) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        if !(lr > F::zero()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {lr}"
            )));
        }
        Ok(SgdState {
            velocity: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            momentum,
            weight_decay,
            lr,
        })
    }

    pub fn reset_velocity(&mut self) {
        for v in &mut self.velocity {
            v.data_mut().fill(F::zero());
        }
    }
}

pub fn sgd_step<F: Scalar>(
    params: &mut [&mut Tensor<F>],
    grads: &[&Tensor<F>],
    state: &mut SgdState<F>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::shape(
            "sgd_step",
            format!(
                "{} parameters, {} gradients, {} velocities",
                params.len(),
                grads.len(),
                state.velocity.len()
            ),
        ));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocity) {
        p.same_shape(g, "sgd_step")?;
        p.same_shape(v, "sgd_step")?;
    }
    let (mu, lr, wd) = (state.momentum, state.lr, state.weight_decay);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((w, &gv), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vel = mu * *vel - lr * (gv + wd * *w);
            *w = *w + *vel;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn reduces_to_plain_gradient_descent() {
        let mut w = Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let g = Tensor::new(vec![3], vec![0.5, 0.25, -1.0]).unwrap();
        let mut st = SgdState::new(&[&[3]], 0.0, 0.0, 0.1).unwrap();
        sgd_step(&mut [&mut w], &[&g], &mut st).unwrap();
        assert_eq!(w.data(), &[1.0 - 0.05, -2.0 - 0.025, 0.5 + 0.1]);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut w = scalar(3.0);
        let mut st = SgdState::new(&[&[1]], 0.9, 0.0, 0.1).unwrap();
        sgd_step(&mut [&mut w], &[&scalar(0.0)], &mut st).unwrap();
        assert_eq!(w.data(), &[3.0]);
    }

    #[test]
    fn decay_only_step() {
        let mut w = scalar(1.0);
        let mut st = SgdState::new(&[&[1]], 0.9, 1e-4, 0.01).unwrap();
        sgd_step(&mut [&mut w], &[&scalar(0.0)], &mut st).unwrap();
        assert!((st.velocity[0].data()[0] - -1e-6).abs() < 1e-18);
        assert!((w.data()[0] - 0.999999).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let mut w = scalar(0.0);
        let mut st = SgdState::new(&[&[1]], 0.5, 0.0, 1.0).unwrap();
        sgd_step(&mut [&mut w], &[&scalar(1.0)], &mut st).unwrap();
        sgd_step(&mut [&mut w], &[&scalar(1.0)], &mut st).unwrap();
        // v1 = -1, v2 = -1.5
        assert_eq!(w.data(), &[-2.5]);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut w = scalar(0.0);
        let mut st = SgdState::new(&[&[1]], 0.5, 0.0, 1.0).unwrap();
        let g = Tensor::zeros(&[2]);
        assert!(sgd_step(&mut [&mut w], &[&g], &mut st).is_err());
        assert!(SgdState::<f64>::new(&[&[1]], 1.0, 0.0, 1.0).is_err());
        assert!(SgdState::<f64>::new(&[&[1]], 0.0, 0.0, 0.0).is_err());
    }
}
