//! Adam optimizer with bias correction.

use super::{real, Scalar, Tensor};
use crate::{Error, Result};

/// Optimizer state: first/second moment estimates per parameter tensor,
/// a shared step counter, and the hyperparameters.
pub struct AdamState<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    step: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    /// Creates zeroed moments for parameters with the given shapes, in the
    /// order `update` will be called with.
    pub fn new(shapes: impl IntoIterator<Item = Vec<usize>>, lr: F, beta1: F, beta2: F) -> Self {
        let m: Vec<Tensor<F>> = shapes.into_iter().map(Tensor::zeros).collect();
        let v = m.clone();
        AdamState {
            lr,
            beta1,
            beta2,
            eps: real(1e-8),
            step: 0,
            m,
            v,
        }
    }

    /// Advances the shared step counter; call once per optimization step,
    /// before the per-tensor updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one Adam update to parameter tensor `idx` in place.
    ///
    /// A zero gradient from zeroed moments leaves the parameter unchanged.
    pub fn update(&mut self, idx: usize, param: &mut Tensor<F>, grad: &Tensor<F>) -> Result<()> {
        if param.shape() != grad.shape() || param.shape() != self.m[idx].shape() {
            return Err(Error::ShapeMismatch {
                name: format!("adam parameter {idx}"),
                expected: param.shape().to_vec(),
                actual: grad.shape().to_vec(),
            });
        }
        debug_assert!(self.step >= 1, "begin_step must precede update");
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = F::one() - b1.powi(self.step as i32);
        let bc2 = F::one() - b2.powi(self.step as i32);
        let m = self.m[idx].data_mut();
        let v = self.v[idx].data_mut();
        for ((p, &g), (mi, vi)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = b1 * *mi + (F::one() - b1) * g;
            *vi = b2 * *vi + (F::one() - b2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *p = *p - self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut adam = AdamState::<f64>::new([vec![3]], 0.1, 0.9, 0.999);
        let mut p = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let before = p.clone();
        adam.begin_step();
        adam.update(0, &mut p, &Tensor::zeros(vec![3])).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // p = 0, g = 1, lr = 0.1: bias-corrected step is lr/(1+eps) ≈ 0.1.
        let mut adam = AdamState::<f64>::new([vec![1]], 0.1, 0.9, 0.999);
        let mut p = Tensor::vector(vec![0.0]);
        adam.begin_step();
        adam.update(0, &mut p, &Tensor::vector(vec![1.0])).unwrap();
        assert!((p.data()[0] + 0.1).abs() < 1e-6, "got {}", p.data()[0]);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        // Minimize f(p) = p², gradient 2p, from p = 3.
        let mut adam = AdamState::<f64>::new([vec![1]], 0.05, 0.9, 0.999);
        let mut p = Tensor::vector(vec![3.0]);
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let g = Tensor::vector(vec![2.0 * p.data()[0]]);
            adam.begin_step();
            adam.update(0, &mut p, &g).unwrap();
            let f = p.data()[0] * p.data()[0];
            assert!(f <= last + 1e-12, "objective increased: {f} > {last}");
            last = f;
        }
        assert!(last < 0.5);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut adam = AdamState::<f64>::new([vec![2]], 0.1, 0.9, 0.999);
        let mut p = Tensor::vector(vec![0.0, 0.0]);
        adam.begin_step();
        let err = adam.update(0, &mut p, &Tensor::zeros(vec![3]));
        assert!(err.is_err());
    }
}
