use crate::scalar::Scalar;

use super::Tensor;

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (first, second): (Vec<_>, Vec<_>) = shapes
            .into_iter()
            .map(|(r, c)| (Tensor::zeros(r, c), Tensor::zeros(r, c)))
            .unzip();
        Self {
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. `params` and `grads` are parallel to the
    /// shapes the state was created with.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: T) {
        assert_eq!(
            params.len(),
            self.first.len(),
            "adam: parameter count changed"
        );
        assert_eq!(grads.len(), params.len(), "adam: gradient count mismatch");
        self.step += 1;
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            assert_eq!(p.shape(), g.shape(), "adam: gradient shape mismatch");
            for (((p, &g), m), v) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::<f64>::from_f64(1, 3, &[1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut st = AdamState::new([(1, 3)]);
        st.step(&mut p, &[Tensor::zeros(1, 3)], 0.1);
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![Tensor::<f64>::zeros(2, 2)];
        let mut st = AdamState::new([(2, 2)]);
        st.step(&mut p, &[Tensor::filled(2, 2, 0.3)], 0.01);
        for &x in p[0].as_slice() {
            assert!((x + 0.01).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn minimizes_shifted_square() {
        let mut p = vec![Tensor::<f64>::scalar(0.0)];
        let mut st = AdamState::new([(1, 1)]);
        for _ in 0..200 {
            let x = p[0].item();
            st.step(&mut p, &[Tensor::scalar(2.0 * (x - 3.0))], 0.1);
        }
        assert!((p[0].item() - 3.0).abs() < 1e-2, "{}", p[0].item());
    }
}
