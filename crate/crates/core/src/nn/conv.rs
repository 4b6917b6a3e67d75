//! Valid (unpadded, stride 1) temporal convolution and its transpose.
//!
//! Kernels are laid out `F×C×k`: each filter spans every input channel over a
//! `k`-sample time window. The transposed convolution uses the same layout and
//! is the exact adjoint of the forward map before bias.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

fn kernel_dims(op: &'static str, kernels: &Tensor) -> Result<(usize, usize, usize)> {
    kernels.expect_rank(op, 3)?;
    Ok((kernels.dim(0), kernels.dim(1), kernels.dim(2)))
}

fn check_conv(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
) -> Result<(usize, usize, usize, usize)> {
    input.expect_rank("conv1d", 2)?;
    let (f, c, k) = kernel_dims("conv1d", kernels)?;
    let (ci, t) = (input.dim(0), input.dim(1));
    if ci != c {
        return Err(Error::shape("conv1d", "input channels", c, ci));
    }
    if k > t {
        return Err(Error::shape(
            "conv1d",
            "kernel length vs. time",
            format!("<= {t}"),
            k,
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [f] {
            return Err(Error::shape(
                "conv1d",
                "bias",
                f,
                format!("{:?}", b.shape()),
            ));
        }
    }
    Ok((f, c, k, t))
}

pub(crate) fn conv1d_raw(
    x: &[f64],
    c: usize,
    t: usize,
    kern: &[f64],
    bias: Option<&[f64]>,
    f: usize,
    k: usize,
    out: &mut [f64],
) {
    let to = t - k + 1;
    for fi in 0..f {
        let row = &mut out[fi * to..(fi + 1) * to];
        row.fill(bias.map_or(0.0, |b| b[fi]));
        for ci in 0..c {
            let xr = &x[ci * t..(ci + 1) * t];
            let kr = &kern[(fi * c + ci) * k..(fi * c + ci + 1) * k];
            for (ti, o) in row.iter_mut().enumerate() {
                let win = &xr[ti..ti + k];
                *o += win.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
}

/// `out[f][t] = bias[f] + Σ_c Σ_j kernels[f][c][j] · input[c][t + j]`.
pub fn conv1d(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (f, c, k, t) = check_conv(input, kernels, Some(bias))?;
    let mut out = Tensor::zeros(&[f, t - k + 1]);
    conv1d_raw(
        input.data(),
        c,
        t,
        kernels.data(),
        Some(bias.data()),
        f,
        k,
        out.data_mut(),
    );
    Ok(out)
}

/// Accumulates kernel/bias gradients and writes the input gradient.
pub(crate) fn conv1d_backward_raw(
    x: &[f64],
    c: usize,
    t: usize,
    kern: &[f64],
    f: usize,
    k: usize,
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dk: &mut [f64],
    db: &mut [f64],
) {
    let to = t - k + 1;
    for fi in 0..f {
        let drow = &dout[fi * to..(fi + 1) * to];
        db[fi] += drow.iter().sum::<f64>();
        for ci in 0..c {
            let xr = &x[ci * t..(ci + 1) * t];
            let dkr = &mut dk[(fi * c + ci) * k..(fi * c + ci + 1) * k];
            for (j, g) in dkr.iter_mut().enumerate() {
                *g += drow
                    .iter()
                    .zip(&xr[j..j + to])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
    }
    if let Some(dx) = dx {
        dx.fill(0.0);
        for fi in 0..f {
            let drow = &dout[fi * to..(fi + 1) * to];
            for ci in 0..c {
                let kr = &kern[(fi * c + ci) * k..(fi * c + ci + 1) * k];
                let dxr = &mut dx[ci * t..(ci + 1) * t];
                for (ti, &g) in drow.iter().enumerate() {
                    for (j, &kv) in kr.iter().enumerate() {
                        dxr[ti + j] += g * kv;
                    }
                }
            }
        }
    }
}

pub fn conv1d_backward(input: &Tensor, kernels: &Tensor, dout: &Tensor) -> Result<ConvGrads> {
    let (f, c, k, t) = check_conv(input, kernels, None)?;
    if dout.shape() != [f, t - k + 1] {
        return Err(Error::shape(
            "conv1d_backward",
            "dout",
            format!("[{f}, {}]", t - k + 1),
            format!("{:?}", dout.shape()),
        ));
    }
    let mut g = ConvGrads {
        input: Tensor::zeros(&[c, t]),
        kernels: Tensor::zeros(kernels.shape()),
        bias: Tensor::zeros(&[f]),
    };
    conv1d_backward_raw(
        input.data(),
        c,
        t,
        kernels.data(),
        f,
        k,
        dout.data(),
        Some(g.input.data_mut()),
        g.kernels.data_mut(),
        g.bias.data_mut(),
    );
    Ok(g)
}

pub(crate) fn deconv1d_raw(
    x: &[f64],
    f: usize,
    ti: usize,
    kern: &[f64],
    bias: Option<&[f64]>,
    c: usize,
    k: usize,
    out: &mut [f64],
) {
    let to = ti + k - 1;
    for ci in 0..c {
        out[ci * to..(ci + 1) * to].fill(bias.map_or(0.0, |b| b[ci]));
    }
    for fi in 0..f {
        let xr = &x[fi * ti..(fi + 1) * ti];
        for ci in 0..c {
            let kr = &kern[(fi * c + ci) * k..(fi * c + ci + 1) * k];
            let orow = &mut out[ci * to..(ci + 1) * to];
            for (t, &v) in xr.iter().enumerate() {
                for (j, &kv) in kr.iter().enumerate() {
                    orow[t + j] += v * kv;
                }
            }
        }
    }
}

fn check_deconv(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
) -> Result<(usize, usize, usize, usize)> {
    input.expect_rank("deconv1d", 2)?;
    let (f, c, k) = kernel_dims("deconv1d", kernels)?;
    if input.dim(0) != f {
        return Err(Error::shape("deconv1d", "input filters", f, input.dim(0)));
    }
    if let Some(b) = bias {
        if b.shape() != [c] {
            return Err(Error::shape(
                "deconv1d",
                "bias",
                c,
                format!("{:?}", b.shape()),
            ));
        }
    }
    Ok((f, c, k, input.dim(1)))
}

/// Transposed convolution: `out[c][t + j] += Σ_f kernels[f][c][j] · input[f][t]`, plus `bias[c]`.
pub fn deconv1d(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (f, c, k, ti) = check_deconv(input, kernels, Some(bias))?;
    let mut out = Tensor::zeros(&[c, ti + k - 1]);
    deconv1d_raw(
        input.data(),
        f,
        ti,
        kernels.data(),
        Some(bias.data()),
        c,
        k,
        out.data_mut(),
    );
    Ok(out)
}

pub(crate) fn deconv1d_backward_raw(
    x: &[f64],
    f: usize,
    ti: usize,
    kern: &[f64],
    c: usize,
    k: usize,
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dk: &mut [f64],
    db: &mut [f64],
) {
    let to = ti + k - 1;
    for ci in 0..c {
        db[ci] += dout[ci * to..(ci + 1) * to].iter().sum::<f64>();
    }
    for fi in 0..f {
        let xr = &x[fi * ti..(fi + 1) * ti];
        for ci in 0..c {
            let drow = &dout[ci * to..(ci + 1) * to];
            let dkr = &mut dk[(fi * c + ci) * k..(fi * c + ci + 1) * k];
            for (j, g) in dkr.iter_mut().enumerate() {
                *g += xr
                    .iter()
                    .zip(&drow[j..j + ti])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
    }
    if let Some(dx) = dx {
        // The input gradient of a transposed convolution is the forward convolution.
        conv1d_raw(dout, c, to, kern, None, f, k, dx);
    }
}

pub fn deconv1d_backward(input: &Tensor, kernels: &Tensor, dout: &Tensor) -> Result<ConvGrads> {
    let (f, c, k, ti) = check_deconv(input, kernels, None)?;
    if dout.shape() != [c, ti + k - 1] {
        return Err(Error::shape(
            "deconv1d_backward",
            "dout",
            format!("[{c}, {}]", ti + k - 1),
            format!("{:?}", dout.shape()),
        ));
    }
    let mut g = ConvGrads {
        input: Tensor::zeros(&[f, ti]),
        kernels: Tensor::zeros(kernels.shape()),
        bias: Tensor::zeros(&[c]),
    };
    deconv1d_backward_raw(
        input.data(),
        f,
        ti,
        kernels.data(),
        c,
        k,
        dout.data(),
        Some(g.input.data_mut()),
        g.kernels.data_mut(),
        g.bias.data_mut(),
    );
    Ok(g)
}
