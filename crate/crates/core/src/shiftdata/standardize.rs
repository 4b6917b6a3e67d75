use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MIN_STD: f64 = 1e-8;

/// Per-channel z-scoring statistics, fit on the labeled set only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose standard deviation was raised to [`MIN_STD`].
    pub clamped: Vec<usize>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Data(
                "cannot fit standardization on an empty dataset".into(),
            ));
        }
        let (c, t) = (data.channels(), data.window_len());
        let n = (data.len() * t) as f64;
        let mut mean = vec![0.0; c];
        for w in data.windows() {
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += w.x.outer(ch).iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for w in data.windows() {
            for (ch, v) in var.iter_mut().enumerate() {
                *v +=
                    w.x.outer(ch)
                        .iter()
                        .map(|x| (x - mean[ch]).powi(2))
                        .sum::<f64>();
            }
        }
        let mut clamped = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(ch, v)| {
                let s = (v / n).sqrt();
                if s < MIN_STD {
                    clamped.push(ch);
                    MIN_STD
                } else {
                    s
                }
            })
            .collect();
        Ok(Standardizer { mean, std, clamped })
    }

    pub fn warnings(&self) -> Vec<String> {
        self.clamped
            .iter()
            .map(|ch| {
                format!(
                    "channel {ch} has zero variance in the labeled set; std clamped to {MIN_STD:e}"
                )
            })
            .collect()
    }

    pub fn apply_window(&self, x: &Tensor) -> Tensor {
        let t = x.dim(1);
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = i / t;
            *v = (*v - self.mean[ch]) / self.std[ch];
        }
        out
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.channels() != self.mean.len() {
            return Err(Error::shape(
                "standardize",
                "channels",
                self.mean.len(),
                data.channels(),
            ));
        }
        Ok(data.map_x(|x| self.apply_window(x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Domain;
    use crate::shiftdata::SensorWindow;

    #[test]
    fn constant_channel_is_clamped_with_warning() {
        let w = SensorWindow {
            subject_id: 0,
            s: Domain::Labeled,
            x: Tensor::new(vec![2, 2], vec![3.0, 3.0, 1.0, 2.0]).unwrap(),
            label: Some(0),
        };
        let d = Dataset::new(2, 2, 2, vec![w.clone(), w]).unwrap();
        let s = Standardizer::fit(&d).unwrap();
        assert_eq!(s.clamped, vec![0]);
        assert_eq!(s.warnings().len(), 1);
        let z = s.apply(&d).unwrap();
        assert_eq!(z.windows()[0].x.data(), &[0.0, 0.0, -1.0, 1.0]);
    }
}
