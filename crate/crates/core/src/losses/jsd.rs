//! Exact Jensen-Shannon utilities over finite supports, and the closed-form
//! maximum of the adversarial objective.

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, Param};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty support".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {s}, not 1"
            )));
        }
        Ok(DiscreteDist { probs })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        let s: f64 = w.iter().sum();
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(
                "weights must have positive sum".into(),
            ));
        }
        let mut probs: Vec<f64> = w.iter().map(|v| v / s).collect();
        // Push the rounding residue into the largest entry.
        let resid = 1.0 - probs.iter().sum::<f64>();
        let imax = (0..probs.len())
            .max_by(|&a, &b| probs[a].total_cmp(&probs[b]))
            .unwrap();
        probs[imax] += resid;
        DiscreteDist::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> usize {
        self.probs.len()
    }
}

fn same_support(p: &DiscreteDist, q: &DiscreteDist) -> Result<()> {
    if p.support() != q.support() {
        return Err(Error::shape(
            "jsd",
            "support size",
            p.support(),
            q.support(),
        ));
    }
    Ok(())
}

/// `½KL(p‖m) + ½KL(q‖m)` with `m = (p+q)/2`, in nats.
pub fn jsd(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    same_support(p, q)?;
    let kl_to_mid = |a: f64, b: f64| {
        if a > 0.0 {
            a * (2.0 * a / (a + b)).ln()
        } else {
            0.0
        }
    };
    Ok(p.probs
        .iter()
        .zip(&q.probs)
        .map(|(&a, &b)| 0.5 * kl_to_mid(a, b) + 0.5 * kl_to_mid(b, a))
        .sum())
}

/// Expected adversarial objective `E_p[ln D] + E_q[ln(1 - D)]` under the
/// optimal discriminator `D(z) = p(z) / (p(z) + q(z))`.
pub fn adversarial_max_oracle(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    same_support(p, q)?;
    let mut total = 0.0;
    for (&a, &b) in p.probs.iter().zip(&q.probs) {
        if a + b == 0.0 {
            continue;
        }
        let d = a / (a + b);
        if a > 0.0 {
            total += a * d.ln();
        }
        if b > 0.0 {
            total += b * (1.0 - d).ln();
        }
    }
    Ok(total)
}

/// Expected adversarial objective for a per-point discriminator output `d`.
pub fn expected_adversarial(p: &DiscreteDist, q: &DiscreteDist, d: &[f64]) -> Result<f64> {
    same_support(p, q)?;
    if d.len() != p.support() {
        return Err(Error::shape(
            "expected_adversarial",
            "discriminator table",
            p.support(),
            d.len(),
        ));
    }
    Ok(p.probs
        .iter()
        .zip(&q.probs)
        .zip(d)
        .map(|((&a, &b), &di)| {
            let la = if a > 0.0 { a * di.ln() } else { 0.0 };
            let lb = if b > 0.0 { b * (1.0 - di).ln() } else { 0.0 };
            la + lb
        })
        .sum())
}

/// One logit per support point; trained by gradient ascent on the expected
/// adversarial objective.
#[derive(Debug, Clone)]
pub struct TabularDiscriminator {
    logits: Param,
}

impl TabularDiscriminator {
    pub fn new(support: usize) -> Self {
        TabularDiscriminator {
            logits: Param::new("tabular.logits", Tensor::zeros(&[support])),
        }
    }

    pub fn outputs(&self) -> Vec<f64> {
        self.logits
            .value
            .data()
            .iter()
            .map(|&l| crate::nn::sigmoid_scalar(l))
            .collect()
    }

    /// Adam ascent for `steps` iterations with a decaying rate; returns the
    /// final objective.
    pub fn fit(&mut self, p: &DiscreteDist, q: &DiscreteDist, steps: usize) -> Result<f64> {
        same_support(p, q)?;
        for s in 0..steps {
            let lr = 0.5 / (1.0 + s as f64 / 200.0);
            let d = self.outputs();
            for (i, g) in self.logits.grad.data_mut().iter_mut().enumerate() {
                // d/dθ [a ln σ(θ) + b ln(1-σ(θ))] = a(1-σ) - bσ, negated for ascent.
                *g = -(p.probs[i] * (1.0 - d[i]) - q.probs[i] * d[i]);
            }
            adam_step(
                &mut self.logits,
                &AdamConfig {
                    lr,
                    ..Default::default()
                },
            )?;
        }
        expected_adversarial(p, q, &self.outputs())
    }
}
