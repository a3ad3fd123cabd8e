use super::param::{Module, Parameter};
use super::tensor::Real;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl<T: Real> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` and resets their gradients.
    ///
    /// Parameters must be passed in the same order on every call. Nothing is
    /// updated when any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Parameter<T>], learning_rate: f64) -> Result<()> {
        if !(learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if let Some(bad) = params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFiniteGradient {
                name: bad.name().to_string(),
            });
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len()
            || params.iter().zip(&self.first).any(|(p, m)| p.len() != m.len())
        {
            return Err(Error::invalid(
                "adam_step",
                "parameter set changed between optimizer steps",
            ));
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let step_size = T::lit(learning_rate / bias1);
        let inv_bias2 = T::lit(1.0 / bias2);
        let eps = T::lit(self.eps);

        for ((p, m), v) in params
            .iter_mut()
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                let denom = (v[i] * inv_bias2).sqrt() + eps;
                p.value[i] -= step_size * m[i] / denom;
            }
            p.zero_grad();
        }
        Ok(())
    }

    /// Convenience wrapper collecting the parameters of a [`Module`].
    pub fn step_module(&mut self, module: &mut dyn Module<T>, learning_rate: f64) -> Result<()> {
        let mut params = module.params_mut();
        self.step(&mut params, learning_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Parameter<f64> {
        Parameter::new("w", vec![1], vec![v])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(1.5);
        let mut adam = Adam::default();
        for _ in 0..5 {
            adam.step(&mut [&mut p], 0.1).unwrap();
        }
        assert_eq!(p.value[0], 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1 after bias correction: delta = lr / (1 + eps).
        let mut p = scalar(0.0);
        p.grad[0] = 1.0;
        let mut adam = Adam::default();
        adam.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
        assert_eq!(p.grad[0], 0.0);
    }

    #[test]
    fn joint_update_matches_separate() {
        let grads = [[0.3, -1.2], [0.5, 0.7], [-2.0, 0.1]];
        let (mut a, mut b) = (scalar(1.0), scalar(-1.0));
        let mut joint = Adam::default();
        let (mut a2, mut b2) = (scalar(1.0), scalar(-1.0));
        let (mut sa, mut sb) = (Adam::default(), Adam::default());
        for g in grads {
            a.grad[0] = g[0];
            b.grad[0] = g[1];
            joint.step(&mut [&mut a, &mut b], 0.01).unwrap();
            a2.grad[0] = g[0];
            b2.grad[0] = g[1];
            sa.step(&mut [&mut a2], 0.01).unwrap();
            sb.step(&mut [&mut b2], 0.01).unwrap();
        }
        assert_eq!(a.value, a2.value);
        assert_eq!(b.value, b2.value);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut ok = scalar(0.0);
        let mut bad = Parameter::new("head.bias", vec![1], vec![0.0]);
        bad.grad[0] = f64::NAN;
        let err = Adam::default().step(&mut [&mut ok, &mut bad], 0.1).unwrap_err();
        match err {
            Error::NonFiniteGradient { name } => assert_eq!(name, "head.bias"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(ok.value[0], 0.0);
    }
}
