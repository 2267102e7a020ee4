use super::Tensor;

/// Bias-corrected Adam over a fixed, ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `params` and `grads` must keep the same order and shapes
    /// across calls.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape(), "gradient shape for parameter {i}");
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, (w, gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::new([1, 3], vec![1.0, -2.0, 0.5]);
        let before = p.clone();
        let mut adam = Adam::new(0.01);
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Tensor::zeros([1, 3])]);
        }
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::new([1, 2], vec![0.0, 0.0]);
        let mut adam = Adam::new(0.005);
        adam.step(&mut [&mut p], &[Tensor::new([1, 2], vec![3.0, -0.2])]);
        assert!((p.data()[0] + 0.005).abs() < 1e-9);
        assert!((p.data()[1] - 0.005).abs() < 1e-9);
    }

    #[test]
    fn minimizes_convex_quadratic() {
        // f(x) = sum (x_i - c_i)^2
        let c = [3.0, -1.0, 0.5];
        let mut p = Tensor::zeros([1, 3]);
        let mut adam = Adam::new(0.05);
        let loss = |p: &Tensor| p.data().iter().zip(c).map(|(x, ci)| (x - ci) * (x - ci)).sum::<f64>();
        let mut history = vec![loss(&p)];
        for _ in 0..100 {
            let g = Tensor::new([1, 3], p.data().iter().zip(c).map(|(x, ci)| 2.0 * (x - ci)).collect());
            adam.step(&mut [&mut p], &[g]);
            history.push(loss(&p));
        }
        // strictly decreasing once past the first few steps
        for w in history[..40].windows(2) {
            assert!(w[1] < w[0], "{history:?}");
        }
        assert!(history[100] < history[0] * 0.05);
    }
}
