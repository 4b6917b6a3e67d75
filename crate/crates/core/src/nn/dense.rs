use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check(op: &'static str, n_in: usize, w: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    w.expect_rank(op, 2)?;
    let (m, n) = (w.dim(0), w.dim(1));
    if n != n_in {
        return Err(Error::shape(op, "input features", n, n_in));
    }
    if b.shape() != [m] {
        return Err(Error::shape(op, "bias", m, format!("{:?}", b.shape())));
    }
    Ok((m, n))
}

/// `W · input + b` for a single vector.
pub fn dense(input: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    input.expect_rank("dense", 1)?;
    let (m, n) = check("dense", input.len(), w, b)?;
    let mut out = Tensor::zeros(&[m]);
    dense_raw(input.data(), 1, n, w.data(), b.data(), m, out.data_mut());
    Ok(out)
}

/// Row-wise dense map over a `B×n` batch.
pub fn dense_batch(input: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    input.expect_rank("dense_batch", 2)?;
    let (m, n) = check("dense_batch", input.dim(1), w, b)?;
    let rows = input.dim(0);
    let mut out = Tensor::zeros(&[rows, m]);
    dense_raw(input.data(), rows, n, w.data(), b.data(), m, out.data_mut());
    Ok(out)
}

pub(crate) fn dense_raw(
    x: &[f64],
    rows: usize,
    n: usize,
    w: &[f64],
    b: &[f64],
    m: usize,
    out: &mut [f64],
) {
    for r in 0..rows {
        let xr = &x[r * n..(r + 1) * n];
        for i in 0..m {
            let wr = &w[i * n..(i + 1) * n];
            out[r * m + i] = b[i] + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
        }
    }
}

/// Accumulates `dw`, `db`; overwrites `dx` when given.
pub(crate) fn dense_backward_raw(
    x: &[f64],
    rows: usize,
    n: usize,
    w: &[f64],
    m: usize,
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    for r in 0..rows {
        let xr = &x[r * n..(r + 1) * n];
        for i in 0..m {
            let g = dout[r * m + i];
            db[i] += g;
            if g != 0.0 {
                for (d, &xv) in dw[i * n..(i + 1) * n].iter_mut().zip(xr) {
                    *d += g * xv;
                }
            }
        }
    }
    if let Some(dx) = dx {
        dx.fill(0.0);
        for r in 0..rows {
            let dxr = &mut dx[r * n..(r + 1) * n];
            for i in 0..m {
                let g = dout[r * m + i];
                if g != 0.0 {
                    for (d, &wv) in dxr.iter_mut().zip(&w[i * n..(i + 1) * n]) {
                        *d += g * wv;
                    }
                }
            }
        }
    }
}

pub fn dense_batch_backward(input: &Tensor, w: &Tensor, dout: &Tensor) -> Result<DenseGrads> {
    input.expect_rank("dense_backward", 2)?;
    w.expect_rank("dense_backward", 2)?;
    let (rows, n, m) = (input.dim(0), input.dim(1), w.dim(0));
    if dout.shape() != [rows, m] {
        return Err(Error::shape(
            "dense_backward",
            "dout",
            format!("[{rows}, {m}]"),
            format!("{:?}", dout.shape()),
        ));
    }
    let mut g = DenseGrads {
        input: Tensor::zeros(&[rows, n]),
        weight: Tensor::zeros(&[m, n]),
        bias: Tensor::zeros(&[m]),
    };
    dense_backward_raw(
        input.data(),
        rows,
        n,
        w.data(),
        m,
        dout.data(),
        Some(g.input.data_mut()),
        g.weight.data_mut(),
        g.bias.data_mut(),
    );
    Ok(g)
}
