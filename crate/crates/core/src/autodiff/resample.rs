use super::tensor::{Real, Shape4, Tensor4};
use crate::error::{ensure_dim, Error, Result};

/// Argmax positions recorded by [`max_pool2`].
#[derive(Clone, Debug)]
pub struct PoolCache {
    input_shape: Shape4,
    argmax: Vec<usize>,
}

/// 2x2 max pooling with stride 2. Ties resolve to the first position in
/// row-major window order.
pub fn max_pool2<T: Real>(input: &Tensor4<T>) -> Result<(Tensor4<T>, PoolCache)> {
    let s = input.shape();
    if s.height % 2 != 0 || s.width % 2 != 0 {
        return Err(Error::invalid(
            "max_pool2",
            format!("spatial dims {}x{} must be even", s.height, s.width),
        ));
    }
    let os = Shape4::new(s.batch, s.height / 2, s.width / 2, s.channels);
    let mut out = Tensor4::zeros(os);
    let mut argmax = vec![0usize; os.len()];
    let data = input.data();
    for n in 0..os.batch {
        for y in 0..os.height {
            for x in 0..os.width {
                for c in 0..s.channels {
                    let mut best = s.offset(n, 2 * y, 2 * x, c);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = s.offset(n, 2 * y + dy, 2 * x + dx, c);
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    let o = os.offset(n, y, x, c);
                    argmax[o] = best;
                    out.data_mut()[o] = data[best];
                }
            }
        }
    }
    Ok((
        out,
        PoolCache {
            input_shape: s,
            argmax,
        },
    ))
}

pub fn max_pool2_backward<T: Real>(cache: &PoolCache, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    ensure_dim("max_pool2_backward", "gradient size", cache.argmax.len(), grad_out.data().len())?;
    let mut dx = Tensor4::zeros(cache.input_shape);
    let d = dx.data_mut();
    for (&i, &g) in cache.argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(dx)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Real>(input: &Tensor4<T>) -> Tensor4<T> {
    let s = input.shape();
    let os = Shape4::new(s.batch, s.height * 2, s.width * 2, s.channels);
    let mut out = Tensor4::zeros(os);
    let c = s.channels;
    for n in 0..s.batch {
        for y in 0..os.height {
            for x in 0..os.width {
                let src = s.offset(n, y / 2, x / 2, 0);
                let dst = os.offset(n, y, x, 0);
                out.data_mut()[dst..dst + c].copy_from_slice(&input.data()[src..src + c]);
            }
        }
    }
    out
}

/// Sums each 2x2 replication group back onto its source pixel.
pub fn upsample2_backward<T: Real>(grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let gs = grad_out.shape();
    if gs.height % 2 != 0 || gs.width % 2 != 0 {
        return Err(Error::invalid(
            "upsample2_backward",
            format!("gradient dims {}x{} must be even", gs.height, gs.width),
        ));
    }
    let s = Shape4::new(gs.batch, gs.height / 2, gs.width / 2, gs.channels);
    let mut dx = Tensor4::zeros(s);
    let c = s.channels;
    for n in 0..gs.batch {
        for y in 0..gs.height {
            for x in 0..gs.width {
                let src = gs.offset(n, y, x, 0);
                let dst = s.offset(n, y / 2, x / 2, 0);
                for k in 0..c {
                    let g = grad_out.data()[src + k];
                    dx.data_mut()[dst + k] += g;
                }
            }
        }
    }
    Ok(dx)
}

/// Concatenates along channels with `a`'s channels first.
pub fn concat_channels<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    ensure_dim("concat_channels", "batch", sa.batch, sb.batch)?;
    ensure_dim("concat_channels", "height", sa.height, sb.height)?;
    ensure_dim("concat_channels", "width", sa.width, sb.width)?;
    let (ca, cb) = (sa.channels, sb.channels);
    let mut data = Vec::with_capacity(sa.len() + sb.len());
    for p in 0..sa.pixels() {
        data.extend_from_slice(&a.data()[p * ca..(p + 1) * ca]);
        data.extend_from_slice(&b.data()[p * cb..(p + 1) * cb]);
    }
    Tensor4::from_vec(sa.with_channels(ca + cb), data)
}

/// Splits a concatenated gradient into the parts for the first `a_channels`
/// channels and the rest.
pub fn concat_channels_backward<T: Real>(
    grad_out: &Tensor4<T>,
    a_channels: usize,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let s = grad_out.shape();
    if a_channels > s.channels {
        return Err(Error::invalid(
            "concat_channels_backward",
            format!("split {a_channels} exceeds {} channels", s.channels),
        ));
    }
    let cb = s.channels - a_channels;
    let mut da = Vec::with_capacity(s.pixels() * a_channels);
    let mut db = Vec::with_capacity(s.pixels() * cb);
    for px in grad_out.data().chunks_exact(s.channels.max(1)) {
        da.extend_from_slice(&px[..a_channels]);
        db.extend_from_slice(&px[a_channels..]);
    }
    Ok((
        Tensor4::from_vec(s.with_channels(a_channels), da)?,
        Tensor4::from_vec(s.with_channels(cb), db)?,
    ))
}
