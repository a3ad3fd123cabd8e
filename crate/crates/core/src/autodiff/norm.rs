use super::param::{Buffer, Module, Parameter};
use super::tensor::{Real, Tensor4};
use crate::error::{ensure_dim, Result};

/// Per-channel batch normalization with running statistics.
///
/// Running statistics follow `running = momentum * running + (1 - momentum) * batch`;
/// the running variance uses the unbiased batch variance.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub scale: Parameter<T>,
    pub shift: Parameter<T>,
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    pub momentum: f64,
    pub eps: f64,
}

/// Saved state of a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    normalized: Tensor4<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            scale: Parameter::filled(format!("{name}.scale"), vec![channels], T::one()),
            shift: Parameter::zeros(format!("{name}.shift"), vec![channels]),
            running_mean: Buffer::filled(format!("{name}.running_mean"), channels, T::zero()),
            running_var: Buffer::filled(format!("{name}.running_var"), channels, T::one()),
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Normalizes with batch statistics and updates the running statistics.
    pub fn forward_train(&mut self, input: &Tensor4<T>) -> Result<(Tensor4<T>, BatchNormCache<T>)> {
        let c = self.channels();
        ensure_dim("batch_norm", "channels", c, input.shape().channels)?;
        let m = input.shape().pixels();
        let mut mean = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for px in input.data().chunks_exact(c) {
            for (i, &v) in px.iter().enumerate() {
                mean[i] += v.to_f64().unwrap_or(0.0);
            }
        }
        let inv_m = 1.0 / m.max(1) as f64;
        for v in mean.iter_mut() {
            *v *= inv_m;
        }
        for px in input.data().chunks_exact(c) {
            for (i, &v) in px.iter().enumerate() {
                let d = v.to_f64().unwrap_or(0.0) - mean[i];
                sq[i] += d * d;
            }
        }
        let var: Vec<f64> = sq.iter().map(|s| s * inv_m).collect();
        let inv_std: Vec<T> = var.iter().map(|v| T::lit(1.0 / (v + self.eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&v| T::lit(v)).collect();

        let mut normalized = input.clone();
        let mut out = input.clone();
        for (xh, y) in normalized
            .data_mut()
            .chunks_exact_mut(c)
            .zip(out.data_mut().chunks_exact_mut(c))
        {
            for i in 0..c {
                let n = (xh[i] - mean_t[i]) * inv_std[i];
                xh[i] = n;
                y[i] = self.scale.value[i] * n + self.shift.value[i];
            }
        }

        let mom = T::lit(self.momentum);
        let rest = T::lit(1.0 - self.momentum);
        let bessel = if m > 1 { m as f64 / (m - 1) as f64 } else { 1.0 };
        for i in 0..c {
            self.running_mean.value[i] = mom * self.running_mean.value[i] + rest * mean_t[i];
            self.running_var.value[i] =
                mom * self.running_var.value[i] + rest * T::lit(var[i] * bessel);
        }
        Ok((out, BatchNormCache { normalized, inv_std }))
    }

    /// Normalizes with the running statistics.
    pub fn forward_eval(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        let c = self.channels();
        ensure_dim("batch_norm", "channels", c, input.shape().channels)?;
        let eps = T::lit(self.eps);
        let (mul, add): (Vec<T>, Vec<T>) = (0..c)
            .map(|i| {
                let inv = T::one() / (self.running_var.value[i] + eps).sqrt();
                let mul = self.scale.value[i] * inv;
                (mul, self.shift.value[i] - self.running_mean.value[i] * mul)
            })
            .unzip();
        let mut out = input.clone();
        for px in out.data_mut().chunks_exact_mut(c) {
            for i in 0..c {
                px[i] = px[i] * mul[i] + add[i];
            }
        }
        Ok(out)
    }

    /// Accumulates scale/shift gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &BatchNormCache<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let c = self.channels();
        let shape = cache.normalized.shape();
        super::tensor::ensure_same_shape("batch_norm_backward", shape, grad_out.shape())?;
        let m = T::lit(shape.pixels() as f64);
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xh = vec![T::zero(); c];
        for (g, xh) in grad_out
            .data()
            .chunks_exact(c)
            .zip(cache.normalized.data().chunks_exact(c))
        {
            for i in 0..c {
                sum_dy[i] += g[i];
                sum_dy_xh[i] += g[i] * xh[i];
            }
        }
        for i in 0..c {
            self.scale.grad[i] += sum_dy_xh[i];
            self.shift.grad[i] += sum_dy[i];
        }
        // dx = scale * inv_std / m * (m * dy - sum(dy) - xh * sum(dy * xh))
        let coef: Vec<T> = (0..c)
            .map(|i| self.scale.value[i] * cache.inv_std[i] / m)
            .collect();
        let mut dx = grad_out.clone();
        for (g, xh) in dx
            .data_mut()
            .chunks_exact_mut(c)
            .zip(cache.normalized.data().chunks_exact(c))
        {
            for i in 0..c {
                g[i] = coef[i] * (m * g[i] - sum_dy[i] - xh[i] * sum_dy_xh[i]);
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for BatchNorm<T> {
    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.scale, &mut self.shift]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}
