/// Adam with bias correction over a flat parameter slice.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step_count(&self) -> i32 {
        self.t
    }

    /// One update of `params` against `grads`; both must match the optimizer length.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let step = self.lr / bc1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / ((*v / bc2).sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first step is lr·sign(g) (up to eps)
        let mut opt = Adam::new(2, 0.1, 0.9, 0.999, 1e-8);
        let mut p = [1.0, -2.0];
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Adam::new(3, 0.05, 0.9, 0.999, 1e-8);
        let target = [1.5, -0.25, 4.0];
        let mut p = [0.0; 3];
        for _ in 0..3000 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            opt.step(&mut p, &g);
        }
        for (x, t) in p.iter().zip(&target) {
            assert!((x - t).abs() < 1e-3, "{x} vs {t}");
        }
        assert_eq!(opt.step_count(), 3000);
    }

    #[test]
    fn zero_gradient_from_rest_is_a_no_op() {
        let mut opt = Adam::new(1, 0.1, 0.9, 0.999, 1e-8);
        let mut p = [2.0];
        opt.step(&mut p, &[0.0]);
        assert_eq!(p, [2.0]);
    }
}
