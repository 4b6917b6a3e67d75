//! Non-overlapping max pooling and repeat upsampling along time.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pooled values plus, per output cell, the time index (within the row) of the
/// selected input. Ties resolve to the first occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub output: Tensor,
    pub indices: Vec<usize>,
}

pub(crate) fn maxpool_raw(
    x: &[f64],
    rows: usize,
    t: usize,
    w: usize,
    out: &mut [f64],
    idx: &mut [usize],
) {
    let p = t / w;
    for r in 0..rows {
        let xr = &x[r * t..(r + 1) * t];
        for q in 0..p {
            let start = q * w;
            let mut best = start;
            for i in start + 1..start + w {
                if xr[i] > xr[best] {
                    best = i;
                }
            }
            out[r * p + q] = xr[best];
            idx[r * p + q] = best;
        }
    }
}

pub fn maxpool1d(input: &Tensor, window: usize) -> Result<Pooled> {
    input.expect_rank("maxpool1d", 2)?;
    let (f, t) = (input.dim(0), input.dim(1));
    if window == 0 {
        return Err(Error::InvalidArgument(
            "maxpool1d: window must be >= 1".into(),
        ));
    }
    if window > t {
        return Err(Error::shape(
            "maxpool1d",
            "window vs. time",
            format!("<= {t}"),
            window,
        ));
    }
    let p = t / window;
    let mut output = Tensor::zeros(&[f, p]);
    let mut indices = vec![0; f * p];
    maxpool_raw(input.data(), f, t, window, output.data_mut(), &mut indices);
    Ok(Pooled { output, indices })
}

/// Routes each pooled gradient back to its argmax position; `t` is the
/// unpooled row length.
pub fn maxpool1d_backward(dout: &Tensor, indices: &[usize], t: usize) -> Result<Tensor> {
    dout.expect_rank("maxpool1d_backward", 2)?;
    if indices.len() != dout.len() {
        return Err(Error::shape(
            "maxpool1d_backward",
            "indices",
            dout.len(),
            indices.len(),
        ));
    }
    let (f, p) = (dout.dim(0), dout.dim(1));
    let mut dx = Tensor::zeros(&[f, t]);
    maxpool_backward_raw(dout.data(), indices, f, p, t, dx.data_mut());
    Ok(dx)
}

pub(crate) fn maxpool_backward_raw(
    dout: &[f64],
    idx: &[usize],
    rows: usize,
    p: usize,
    t: usize,
    dx: &mut [f64],
) {
    dx.fill(0.0);
    for r in 0..rows {
        for q in 0..p {
            dx[r * t + idx[r * p + q]] += dout[r * p + q];
        }
    }
}

pub fn upsample1d(input: &Tensor, factor: usize) -> Result<Tensor> {
    input.expect_rank("upsample1d", 2)?;
    if factor == 0 {
        return Err(Error::InvalidArgument(
            "upsample1d: factor must be >= 1".into(),
        ));
    }
    let (f, t) = (input.dim(0), input.dim(1));
    let mut out = Tensor::zeros(&[f, t * factor]);
    upsample_raw(input.data(), f * t, factor, out.data_mut());
    Ok(out)
}

pub(crate) fn upsample_raw(x: &[f64], n: usize, w: usize, out: &mut [f64]) {
    for i in 0..n {
        out[i * w..(i + 1) * w].fill(x[i]);
    }
}

pub(crate) fn upsample_backward_raw(dout: &[f64], n: usize, w: usize, dx: &mut [f64]) {
    for i in 0..n {
        dx[i] = dout[i * w..(i + 1) * w].iter().sum();
    }
}

pub fn upsample1d_backward(dout: &Tensor, factor: usize) -> Result<Tensor> {
    dout.expect_rank("upsample1d_backward", 2)?;
    if factor == 0 || dout.dim(1) % factor != 0 {
        return Err(Error::shape(
            "upsample1d_backward",
            "time",
            format!("multiple of {factor}"),
            dout.dim(1),
        ));
    }
    let (f, t) = (dout.dim(0), dout.dim(1) / factor);
    let mut dx = Tensor::zeros(&[f, t]);
    upsample_backward_raw(dout.data(), f * t, factor, dx.data_mut());
    Ok(dx)
}
