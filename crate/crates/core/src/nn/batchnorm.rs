//! Batch normalization over `B×F` or `B×F×L` inputs, with statistics per
//! feature `F` pooled over the batch and (if present) time axes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        RunningStats {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }

    /// Exponential moving average toward a batch's statistics.
    pub fn update(&mut self, batch: &BatchStats) {
        let n = batch.count as f64;
        let unbias = if batch.count > 1 { n / (n - 1.0) } else { 1.0 };
        for f in 0..self.mean.len() {
            self.mean[f] = BN_MOMENTUM * self.mean[f] + (1.0 - BN_MOMENTUM) * batch.mean[f];
            self.var[f] = BN_MOMENTUM * self.var[f] + (1.0 - BN_MOMENTUM) * batch.var[f] * unbias;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub mode: Mode,
    /// Present in train mode.
    pub stats: Option<BatchStats>,
}

fn layout(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [b, f] => Ok((*b, *f, 1)),
        [b, f, l] => Ok((*b, *f, *l)),
        s => Err(Error::shape("batchnorm", "rank", "2 or 3", s.len())),
    }
}

/// Normalizes and applies the affine map. Running statistics are not mutated;
/// the caller commits `cache.stats` via [`RunningStats::update`].
pub fn batchnorm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &RunningStats,
    mode: Mode,
) -> Result<(Tensor, BatchNormCache)> {
    let (b, f, l) = layout(x)?;
    if gamma.shape() != [f] || beta.shape() != [f] || running.mean.len() != f {
        return Err(Error::shape(
            "batchnorm",
            "features",
            f,
            format!("{:?}", gamma.shape()),
        ));
    }
    let d = x.data();
    let (mean, var, stats) = match mode {
        Mode::Train => {
            if b < 2 {
                return Err(Error::InvalidArgument(format!(
                    "batchnorm in train mode needs a batch of at least 2, got {b}"
                )));
            }
            let n = (b * l) as f64;
            let mut mean = vec![0.0; f];
            let mut var = vec![0.0; f];
            for bi in 0..b {
                for fi in 0..f {
                    let row = &d[(bi * f + fi) * l..(bi * f + fi + 1) * l];
                    mean[fi] += row.iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for bi in 0..b {
                for fi in 0..f {
                    let row = &d[(bi * f + fi) * l..(bi * f + fi + 1) * l];
                    var[fi] += row.iter().map(|v| (v - mean[fi]).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
                count: b * l,
            };
            (mean, var, Some(stats))
        }
        Mode::Eval => (running.mean.clone(), running.var.clone(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    {
        let (xh, yd) = (xhat.data_mut(), y.data_mut());
        for bi in 0..b {
            for fi in 0..f {
                let base = (bi * f + fi) * l;
                for i in base..base + l {
                    xh[i] = (d[i] - mean[fi]) * inv_std[fi];
                    yd[i] = gamma.data()[fi] * xh[i] + beta.data()[fi];
                }
            }
        }
    }
    Ok((
        y,
        BatchNormCache {
            xhat,
            inv_std,
            mode,
            stats,
        },
    ))
}

pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    dout: &Tensor,
) -> Result<BatchNormGrads> {
    let (b, f, l) = layout(dout)?;
    if dout.shape() != cache.xhat.shape() {
        return Err(Error::shape(
            "batchnorm_backward",
            "dout",
            format!("{:?}", cache.xhat.shape()),
            format!("{:?}", dout.shape()),
        ));
    }
    let (xh, dy) = (cache.xhat.data(), dout.data());
    let mut dgamma = vec![0.0; f];
    let mut dbeta = vec![0.0; f];
    for bi in 0..b {
        for fi in 0..f {
            let base = (bi * f + fi) * l;
            for i in base..base + l {
                dgamma[fi] += dy[i] * xh[i];
                dbeta[fi] += dy[i];
            }
        }
    }
    let mut dx = Tensor::zeros(dout.shape());
    let n = (b * l) as f64;
    let g = gamma.data();
    let dxd = dx.data_mut();
    for bi in 0..b {
        for fi in 0..f {
            let base = (bi * f + fi) * l;
            for i in base..base + l {
                dxd[i] = match cache.mode {
                    // dxhat = dy·γ; Σdxhat = γ·dβ; Σ(dxhat·xhat) = γ·dγ
                    Mode::Train => {
                        g[fi] * cache.inv_std[fi] * (dy[i] - dbeta[fi] / n - xh[i] * dgamma[fi] / n)
                    }
                    Mode::Eval => g[fi] * cache.inv_std[fi] * dy[i],
                };
            }
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: Tensor::from_vec(dgamma),
        beta: Tensor::from_vec(dbeta),
    })
}
