use rand::Rng;

use super::param::{Module, Parameter};
use super::tensor::{Real, Shape4, Tensor4};
use crate::error::{ensure_dim, Error, Result};

/// Saved state of a convolution forward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    input: Tensor4<T>,
}

fn kernel_dims(weight: &Parameter<impl Real>) -> Result<(usize, usize, usize)> {
    let s = weight.shape();
    if s.len() != 4 || s[0] != s[1] || s[0] % 2 == 0 {
        return Err(Error::invalid(
            "conv2d",
            format!("weight shape {s:?} is not an odd square kernel (k, k, cin, cout)"),
        ));
    }
    Ok((s[0], s[2], s[3]))
}

/// Pixels per im2col block; keeps the column buffer cache-resident.
const BLOCK: usize = 256;

/// Fills `col` with the im2col rows of pixels `start..start + rows` (flat
/// pixel order), zeroing out-of-image taps.
fn im2col_rows<T: Real>(input: &Tensor4<T>, k: usize, start: usize, rows: usize, col: &mut [T]) {
    let s = input.shape();
    let cin = s.channels;
    let row = k * k * cin;
    let pad = (k / 2) as isize;
    let data = input.data();
    col[..rows * row].fill(T::zero());
    for r in 0..rows {
        let p = start + r;
        let (n, rem) = (p / (s.height * s.width), p % (s.height * s.width));
        let (y, x) = (rem / s.width, rem % s.width);
        for ky in 0..k {
            let iy = y as isize + ky as isize - pad;
            if iy < 0 || iy >= s.height as isize {
                continue;
            }
            for kx in 0..k {
                let ix = x as isize + kx as isize - pad;
                if ix < 0 || ix >= s.width as isize {
                    continue;
                }
                let src = s.offset(n, iy as usize, ix as usize, 0);
                let dst = r * row + (ky * k + kx) * cin;
                col[dst..dst + cin].copy_from_slice(&data[src..src + cin]);
            }
        }
    }
}

/// Adds the im2col rows in `col` back onto the pixels they were read from.
fn col2im_rows<T: Real>(col: &[T], shape: Shape4, k: usize, start: usize, rows: usize, out: &mut [T]) {
    let cin = shape.channels;
    let row = k * k * cin;
    let pad = (k / 2) as isize;
    for r in 0..rows {
        let p = start + r;
        let (n, rem) = (p / (shape.height * shape.width), p % (shape.height * shape.width));
        let (y, x) = (rem / shape.width, rem % shape.width);
        for ky in 0..k {
            let iy = y as isize + ky as isize - pad;
            if iy < 0 || iy >= shape.height as isize {
                continue;
            }
            for kx in 0..k {
                let ix = x as isize + kx as isize - pad;
                if ix < 0 || ix >= shape.width as isize {
                    continue;
                }
                let dst = shape.offset(n, iy as usize, ix as usize, 0);
                let src = r * row + (ky * k + kx) * cin;
                for (d, &g) in out[dst..dst + cin].iter_mut().zip(&col[src..src + cin]) {
                    *d += g;
                }
            }
        }
    }
}

/// Same-padded, stride-1 convolution with an odd square kernel.
///
/// `weight` has shape `(k, k, cin, cout)`, `bias` has shape `(cout)`.
pub fn conv2d<T: Real>(
    input: &Tensor4<T>,
    weight: &Parameter<T>,
    bias: &Parameter<T>,
) -> Result<(Tensor4<T>, ConvCache<T>)> {
    let (k, cin, cout) = kernel_dims(weight)?;
    let s = input.shape();
    ensure_dim("conv2d", "input channels", cin, s.channels)?;
    ensure_dim("conv2d", "bias length", cout, bias.len())?;

    let m = s.pixels();
    let kk = k * k * cin;
    let mut out = vec![T::zero(); m * cout];
    for px in out.chunks_exact_mut(cout) {
        px.copy_from_slice(&bias.value);
    }
    if k == 1 {
        T::gemm(m, kk, cout, input.data(), false, &weight.value, false, T::one(), &mut out);
    } else {
        let mut col = vec![T::zero(); BLOCK * kk];
        for start in (0..m).step_by(BLOCK) {
            let rows = BLOCK.min(m - start);
            im2col_rows(input, k, start, rows, &mut col);
            let dst = &mut out[start * cout..(start + rows) * cout];
            T::gemm(rows, kk, cout, &col[..rows * kk], false, &weight.value, false, T::one(), dst);
        }
    }
    let out = Tensor4::from_vec(s.with_channels(cout), out)?;
    Ok((out, ConvCache { input: input.clone() }))
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `input_grad` is set.
pub fn conv2d_backward<T: Real>(
    cache: &ConvCache<T>,
    grad_out: &Tensor4<T>,
    weight: &mut Parameter<T>,
    bias: &mut Parameter<T>,
    input_grad: bool,
) -> Result<Option<Tensor4<T>>> {
    let (k, cin, cout) = kernel_dims(weight)?;
    let s = cache.input.shape();
    let g = grad_out.shape();
    ensure_dim("conv2d_backward", "grad channels", cout, g.channels)?;
    ensure_dim("conv2d_backward", "grad pixels", s.pixels(), g.pixels())?;
    let m = s.pixels();
    let kk = k * k * cin;
    let dy = grad_out.data();

    for px in dy.chunks_exact(cout) {
        for (b, &v) in bias.grad.iter_mut().zip(px) {
            *b += v;
        }
    }
    if k == 1 {
        let x = cache.input.data();
        T::gemm(kk, m, cout, x, true, dy, false, T::one(), &mut weight.grad);
        if !input_grad {
            return Ok(None);
        }
        let mut dx = vec![T::zero(); m * kk];
        T::gemm(m, cout, kk, dy, false, &weight.value, true, T::zero(), &mut dx);
        return Ok(Some(Tensor4::from_vec(s, dx)?));
    }
    let mut col = vec![T::zero(); BLOCK * kk];
    let mut dcol = vec![T::zero(); BLOCK * kk];
    let mut dx = input_grad.then(|| vec![T::zero(); s.len()]);
    for start in (0..m).step_by(BLOCK) {
        let rows = BLOCK.min(m - start);
        let gy = &dy[start * cout..(start + rows) * cout];
        im2col_rows(&cache.input, k, start, rows, &mut col);
        T::gemm(kk, rows, cout, &col[..rows * kk], true, gy, false, T::one(), &mut weight.grad);
        if let Some(dx) = dx.as_mut() {
            T::gemm(rows, cout, kk, gy, false, &weight.value, true, T::zero(), &mut dcol[..rows * kk]);
            col2im_rows(&dcol, s, k, start, rows, dx);
        }
    }
    dx.map(|d| Tensor4::from_vec(s, d)).transpose()
}

/// Convolution layer owning its parameters.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Real> Conv2d<T> {
    /// He-uniform weights, zero bias.
    pub fn new(name: &str, k: usize, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (k * k * cin) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let values = (0..k * k * cin * cout)
            .map(|_| T::lit(rng.gen_range(-limit..limit)))
            .collect();
        Self {
            weight: Parameter::new(format!("{name}.weight"), vec![k, k, cin, cout], values),
            bias: Parameter::zeros(format!("{name}.bias"), vec![cout]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.bias.len()
    }

    pub fn forward(&self, input: &Tensor4<T>) -> Result<(Tensor4<T>, ConvCache<T>)> {
        conv2d(input, &self.weight, &self.bias)
    }

    pub fn backward(
        &mut self,
        cache: &ConvCache<T>,
        grad_out: &Tensor4<T>,
        input_grad: bool,
    ) -> Result<Option<Tensor4<T>>> {
        conv2d_backward(cache, grad_out, &mut self.weight, &mut self.bias, input_grad)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
