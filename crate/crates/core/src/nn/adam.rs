/// Adam optimizer over a fixed list of parameter slices.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// `sizes` are the lengths of the parameter slices passed to each step.
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[&[f32]]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[i] as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = (p[i] as f64 - self.lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_weights() {
        let mut w = vec![0.3f32, -1.2, 5.0];
        let before = w.clone();
        let mut opt = Adam::new(0.001, &[3]);
        for _ in 0..5 {
            opt.step(&mut [&mut w], &[&[0.0, 0.0, 0.0]]);
        }
        assert_eq!(w, before);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut w = vec![1.0f32, 1.0, 1.0];
        let mut opt = Adam::new(0.001, &[3]);
        opt.step(&mut [&mut w], &[&[0.5, -3.0, 1e-3]]);
        for (wi, s) in w.iter().zip([-1.0, 1.0, -1.0]) {
            assert!(((*wi as f64 - 1.0) - s * 0.001).abs() < 1e-6, "{wi}");
        }
    }

    #[test]
    fn minimizes_scalar_quadratic() {
        // f(w) = (w - 3)^2
        let mut w = vec![0.0f32];
        let mut opt = Adam::new(0.05, &[1]);
        let mut losses = Vec::new();
        for _ in 0..100 {
            let g = 2.0 * (w[0] - 3.0);
            opt.step(&mut [&mut w], &[&[g]]);
            losses.push((w[0] as f64 - 3.0).powi(2));
        }
        // Monotone decrease once the first moment has built up.
        for pair in losses[..40].windows(2) {
            assert!(pair[1] < pair[0]);
        }
        assert!(losses[99] < losses[0]);
    }
}
