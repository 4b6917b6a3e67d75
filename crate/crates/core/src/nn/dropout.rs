use crate::error::{Error, Result};
use crate::nn::batchnorm::Mode;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Inverted dropout. Returns the output and, in train mode, the per-element
/// multiplier (`0` or `1/keep_prob`) for the backward pass.
pub fn dropout(
    x: &Tensor,
    keep_prob: f64,
    rng: &mut Rng,
    mode: Mode,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_prob must be in (0, 1], got {keep_prob}"
        )));
    }
    if mode == Mode::Eval || keep_prob == 1.0 {
        return Ok((x.clone(), None));
    }
    let scale = 1.0 / keep_prob;
    let mask: Vec<f64> = (0..x.len())
        .map(|_| {
            if rng.uniform() < keep_prob {
                scale
            } else {
                0.0
            }
        })
        .collect();
    let mut y = x.clone();
    y.data_mut()
        .iter_mut()
        .zip(&mask)
        .for_each(|(v, m)| *v *= m);
    Ok((y, Some(mask)))
}

pub fn dropout_backward(dout: &Tensor, mask: Option<&[f64]>) -> Tensor {
    let mut d = dout.clone();
    if let Some(mask) = mask {
        d.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
    }
    d
}
