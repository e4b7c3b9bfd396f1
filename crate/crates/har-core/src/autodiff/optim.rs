//! Adaptive-moment gradient descent.

use ndarray::Array2;

/// Adam with bias correction. One instance per trained model; slot order
/// must match the model's parameter order across steps.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update. `params` and `grads` are parallel slices.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Array2::zeros(p.dim())).collect();
            self.v = params.iter().map(|p| Array2::zeros(p.dim())).collect();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            m.zip_mut_with(g, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            for ((pi, &mi), &vi) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *pi -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn adam_minimizes_quadratic() {
        // f(p) = 0.5 * ||p - target||^2, grad = p - target
        let target = Array2::from_shape_fn((2, 2), |(r, c)| (r * 2 + c) as f64);
        let mut p = Array2::zeros((2, 2));
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let g = &p - &target;
            opt.step(&mut [&mut p], &[g]);
        }
        let err = (&p - &target).mapv(f64::abs).sum();
        assert!(err < 1e-3, "residual {err}");
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = Array2::from_elem((1, 3), 1.0);
            let mut opt = Adam::new(0.01);
            for i in 0..50 {
                let g = p.mapv(|x| x * (1.0 + i as f64 * 0.01));
                opt.step(&mut [&mut p], &[g]);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
