use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, dout: &Tensor) -> Tensor {
    let mut d = dout.clone();
    for (g, &v) in d.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    d
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub(crate) fn softmax_raw(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Gradient through the sigmoid given its output `y`.
pub fn sigmoid_backward(y: &Tensor, dout: &Tensor) -> Tensor {
    let mut d = dout.clone();
    for (g, &v) in d.data_mut().iter_mut().zip(y.data()) {
        *g *= v * (1.0 - v);
    }
    d
}

/// Gradient through a last-axis softmax given its output `probs`.
pub fn softmax_backward(probs: &Tensor, dout: &Tensor) -> Tensor {
    let m = *probs.shape().last().unwrap();
    let mut d = Tensor::zeros(probs.shape());
    for ((p, g), o) in probs
        .data()
        .chunks(m)
        .zip(dout.data().chunks(m))
        .zip(d.data_mut().chunks_mut(m))
    {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for j in 0..m {
            o[j] = p[j] * (g[j] - dot);
        }
    }
    d
}

/// Softmax over the last axis (a vector, or each row of a matrix).
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let m = *logits.shape().last().unwrap();
    if m < 2 || logits.rank() > 2 {
        return Err(Error::InvalidArgument(format!(
            "softmax expects a vector or matrix with >= 2 classes, got {:?}",
            logits.shape()
        )));
    }
    let mut out = Tensor::zeros(logits.shape());
    for (src, dst) in logits.data().chunks(m).zip(out.data_mut().chunks_mut(m)) {
        softmax_raw(src, dst);
    }
    Ok(out)
}
