use super::model::ModelParams;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators shaped like the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, like: &[&Tensor]) -> Self {
        Self {
            config,
            step: 0,
            first_moment: like.iter().map(|t| t.zeros_like()).collect(),
            second_moment: like.iter().map(|t| t.zeros_like()).collect(),
        }
    }

    pub fn for_params(config: AdamConfig, params: &ModelParams) -> Self {
        Self::new(config, &params.tensors())
    }

    /// One bias-corrected step over parallel lists of parameters and
    /// gradients.
    pub fn update_tensors(&mut self, params: Vec<&mut Tensor>, grads: Vec<&Tensor>) {
        assert_eq!(params.len(), self.first_moment.len(), "parameter count changed");
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((p, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.update_tensors(params.tensors_mut(), grads.tensors());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(0.7);
        let mut s = AdamState::new(AdamConfig::default(), &[&p]);
        for _ in 0..5 {
            s.update_tensors(vec![&mut p], vec![&scalar(0.0)]);
        }
        assert_eq!(p.data()[0], 0.7);
        assert_eq!(s.step, 5);
    }

    #[test]
    fn first_step_closed_form() {
        // After one step m_hat = g and v_hat = g^2, so the update is
        // -lr * g / (|g| + eps).
        for g in [0.3, -2.0, 1e-6] {
            let mut p = scalar(1.0);
            let mut s = AdamState::new(AdamConfig::default(), &[&p]);
            s.update_tensors(vec![&mut p], vec![&scalar(g)]);
            let want = 1.0 - 1e-3 * g / (f64::abs(g) + 1e-8);
            assert!((p.data()[0] - want).abs() < 1e-15, "g={g}");
        }
    }

    #[test]
    fn minimizes_scalar_quadratic() {
        // f(x) = (x - 3)^2, gradient 2(x - 3).
        let mut x = scalar(0.0);
        let mut s = AdamState::new(
            AdamConfig {
                learning_rate: 0.1,
                ..Default::default()
            },
            &[&x],
        );
        let mut losses = Vec::new();
        for _ in 0..100 {
            let v = x.data()[0];
            losses.push((v - 3.0) * (v - 3.0));
            s.update_tensors(vec![&mut x], vec![&scalar(2.0 * (v - 3.0))]);
        }
        assert!(losses[99] < 0.05 * losses[0]);
        // Monotone once past the initial approach.
        assert!(losses[..20].windows(2).all(|w| w[1] <= w[0]));
    }
}
