/// Adam optimizer with optional step-wise learning-rate halving.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiply `lr` by `decay_factor` every `decay_every` steps.
    pub decay_every: Option<usize>,
    pub decay_factor: f64,
    pub step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_every: None,
            decay_factor: 0.5,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn with_decay(mut self, every: usize, factor: f64) -> Self {
        self.decay_every = Some(every).filter(|&e| e > 0);
        self.decay_factor = factor;
        self
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        if let Some(every) = self.decay_every {
            if self.step % every == 0 {
                self.lr *= self.decay_factor;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut a = Adam::new(3, 1e-3);
        let mut p = vec![1.0, -2.0, 3.0];
        a.update(&mut p, &[0.0; 3]);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(a.step, 1);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut a = Adam::new(1, 1e-3);
        let mut p = vec![0.0];
        let mut last = 0.0;
        for _ in 0..1000 {
            last = p[0];
            a.update(&mut p, &[0.37]);
        }
        assert!(((last - p[0]) / 1e-3 - 1.0).abs() < 0.01);
    }

    #[test]
    fn halves_every_400() {
        let mut a = Adam::new(1, 1e-3).with_decay(400, 0.5);
        let mut p = vec![0.0];
        for _ in 0..399 {
            a.update(&mut p, &[1.0]);
        }
        assert_eq!(a.lr, 1e-3);
        a.update(&mut p, &[1.0]);
        assert_eq!(a.lr, 5e-4);
    }
}
