use super::tensor::{ensure_same_shape, Real, Tensor4};
use crate::error::{Error, Result};

pub fn relu<T: Real>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`] given its output; zero at the kink.
pub fn relu_backward<T: Real>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    ensure_same_shape("relu_backward", output.shape(), grad_out.shape())?;
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(output.shape(), data)
}

#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(sigmoid_scalar)
}

/// Gradient of [`sigmoid`] given its output.
pub fn sigmoid_backward<T: Real>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    ensure_same_shape("sigmoid_backward", output.shape(), grad_out.shape())?;
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * y * (T::one() - y))
        .collect();
    Tensor4::from_vec(output.shape(), data)
}

/// Per-pixel softmax over the channel axis.
pub fn softmax_channels<T: Real>(input: &Tensor4<T>) -> Result<Tensor4<T>> {
    let c = input.shape().channels;
    if c < 2 {
        return Err(Error::invalid(
            "softmax_channels",
            format!("needs at least 2 channels, got {c}"),
        ));
    }
    let mut out = input.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        let max = px.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in px.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in px.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Gradient of [`softmax_channels`] given its output:
/// `dx = y * (dy - sum_c dy_c * y_c)`.
pub fn softmax_channels_backward<T: Real>(
    output: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    ensure_same_shape("softmax_backward", output.shape(), grad_out.shape())?;
    let c = output.shape().channels;
    let mut dx = grad_out.clone();
    for (g, y) in dx.data_mut().chunks_exact_mut(c).zip(output.data().chunks_exact(c)) {
        let dot: T = g.iter().zip(y).map(|(&a, &b)| a * b).sum();
        for (gi, &yi) in g.iter_mut().zip(y) {
            *gi = yi * (*gi - dot);
        }
    }
    Ok(dx)
}
