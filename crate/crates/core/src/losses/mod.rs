//! Training objectives: adversarial, reconstruction, latent-consistency and
//! prediction losses, and their sum.
//!
//! Squared distances are per-element means, logs are natural, and every
//! probability is clamped to at least [`PROB_CLAMP`] before a log. Each
//! domain's term is a minibatch mean.

pub mod jsd;

pub use jsd::{
    adversarial_max_oracle, expected_adversarial, jsd, DiscreteDist, TabularDiscriminator,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    decoder_backward, decoder_forward, discriminator_backward, discriminator_forward,
    encoder_backward, encoder_forward, predictor_backward, predictor_forward, Domain, ModelParams,
    Part, PROB_CLAMP,
};
use crate::nn::{BatchStats, Differentiable, Mode, Param};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_a: f64,
    pub l_rec: f64,
    pub l_con: f64,
    pub l_y: f64,
    pub l_total: f64,
}

impl LossReport {
    pub fn new(l_a: f64, l_rec: f64, l_con: f64, l_y: f64) -> Self {
        LossReport {
            l_a,
            l_rec,
            l_con,
            l_y,
            l_total: l_a + l_rec + l_con + l_y,
        }
    }

    /// Name of the first non-finite component, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        [
            ("l_a", self.l_a),
            ("l_rec", self.l_rec),
            ("l_con", self.l_con),
            ("l_y", self.l_y),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Which loss terms take part in an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub adversarial: bool,
    pub reconstruction: bool,
    pub consistency: bool,
    pub prediction: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        adversarial: true,
        reconstruction: true,
        consistency: true,
        prediction: true,
    };
    pub const NONE: Terms = Terms {
        adversarial: false,
        reconstruction: false,
        consistency: false,
        prediction: false,
    };

    fn needs_unlabeled(self) -> bool {
        self.adversarial || self.reconstruction || self.consistency
    }

    fn needs_latents(self) -> bool {
        self.needs_unlabeled() || self.prediction
    }
}

/// How far gradients are propagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backprop {
    None,
    /// Gradients of the heads (discriminator, decoders via reconstruction,
    /// predictor) only; the encoder and the consistency chain are skipped.
    Heads,
    /// Exact gradient of the summed terms w.r.t. every parameter.
    Full,
}

/// A labeled and an unlabeled minibatch, each `B×C×T`.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x_l: &'a Tensor,
    pub y_l: &'a [usize],
    pub x_u: &'a Tensor,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Disabled terms report 0.
    pub report: LossReport,
    /// Batchnorm statistics of the real-data encoder pass (train mode).
    pub real_stats: Option<BatchStats>,
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// `d mse / d a`, added into `out`.
fn add_mse_grad(a: &[f64], b: &[f64], out: &mut [f64]) {
    let s = 2.0 / a.len() as f64;
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o += s * (x - y);
    }
}

fn check_batch(params: &ModelParams, batch: &Batch, terms: Terms) -> Result<()> {
    let m = params.config.n_classes;
    if terms.prediction {
        if batch.y_l.len() != batch.x_l.dim(0) {
            return Err(Error::shape(
                "prediction_loss",
                "labels",
                batch.x_l.dim(0),
                batch.y_l.len(),
            ));
        }
        if let Some(bad) = batch.y_l.iter().find(|&&y| y >= m) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {m})"
            )));
        }
    }
    if terms.needs_unlabeled() && batch.x_u.shape()[1..] != batch.x_l.shape()[1..] {
        return Err(Error::shape(
            "loss",
            "unlabeled window shape",
            format!("{:?}", &batch.x_l.shape()[1..]),
            format!("{:?}", &batch.x_u.shape()[1..]),
        ));
    }
    Ok(())
}

/// Evaluates the selected terms and, per `backprop`, accumulates the
/// gradient of their sum into `grad` of the affected parameters. Callers zero
/// gradients beforehand.
///
/// The labeled and unlabeled windows pass through the encoder as one batch
/// (shared batchnorm statistics); the two cross-domain generations do the
/// same for the consistency term.
pub fn evaluate(
    params: &mut ModelParams,
    batch: &Batch,
    terms: Terms,
    mode: Mode,
    rng: &mut Rng,
    backprop: Backprop,
) -> Result<Evaluation> {
    check_batch(params, batch, terms)?;
    let mut report = [0.0f64; 4];
    if !terms.needs_latents() {
        return Ok(Evaluation {
            report: LossReport::default(),
            real_stats: None,
        });
    }
    let bl = batch.x_l.dim(0);
    let with_u = terms.needs_unlabeled();
    let real = if with_u {
        Tensor::concat(batch.x_l, batch.x_u)?
    } else {
        batch.x_l.clone()
    };
    let (z, enc_cache) = encoder_forward(params, &real, mode, rng)?;
    let real_stats = enc_cache.batch_stats().cloned();
    let (z_l, z_u) = if with_u {
        let (a, b) = z.split_outer(bl)?;
        (a, Some(b))
    } else {
        (z.clone(), None)
    };
    let d = params.config.latent_dim;
    let mut dz = Tensor::zeros(z.shape());
    let grads = backprop != Backprop::None;

    if terms.adversarial {
        let out = discriminator_forward(params, &z)?;
        let bu = z.dim(0) - bl;
        let (pl, pu) = out.probs.split_at(bl);
        let l_a = adversarial_value(pl, pu);
        report[0] = l_a;
        if grads {
            let dprobs: Vec<f64> = pl
                .iter()
                .map(|p| 1.0 / (bl as f64 * p))
                .chain(pu.iter().map(|p| -1.0 / (bu as f64 * (1.0 - p))))
                .collect();
            let g = discriminator_backward(params, &out, &dprobs);
            dz.add_assign(&g);
        }
    }

    if terms.reconstruction {
        let z_u = z_u.as_ref().expect("unlabeled latents");
        let (rec_l, cache_l) = decoder_forward(params, &z_l, Domain::Labeled)?;
        let (rec_u, cache_u) = decoder_forward(params, z_u, Domain::Unlabeled)?;
        report[1] = mse(rec_l.data(), batch.x_l.data()) + mse(rec_u.data(), batch.x_u.data());
        if grads {
            let mut g_l = Tensor::zeros(rec_l.shape());
            add_mse_grad(rec_l.data(), batch.x_l.data(), g_l.data_mut());
            let mut g_u = Tensor::zeros(rec_u.shape());
            add_mse_grad(rec_u.data(), batch.x_u.data(), g_u.data_mut());
            let dzl = decoder_backward(params, &cache_l, &g_l)?;
            let dzu = decoder_backward(params, &cache_u, &g_u)?;
            dz.data_mut()[..bl * d]
                .iter_mut()
                .zip(dzl.data())
                .for_each(|(a, b)| *a += b);
            dz.data_mut()[bl * d..]
                .iter_mut()
                .zip(dzu.data())
                .for_each(|(a, b)| *a += b);
        }
    }

    if terms.consistency {
        let z_u = z_u.as_ref().expect("unlabeled latents");
        // x̂ᵁ generated from xᴸ, and x̂ᴸ from xᵁ.
        let (gen_u, gcache_u) = decoder_forward(params, &z_l, Domain::Unlabeled)?;
        let (gen_l, gcache_l) = decoder_forward(params, z_u, Domain::Labeled)?;
        let gen = Tensor::concat(&gen_u, &gen_l)?;
        let (z2, enc2_cache) = encoder_forward(params, &gen, mode, rng)?;
        let (z2_l, z2_u) = z2.split_outer(bl)?;
        report[2] = mse(z_l.data(), z2_l.data()) + mse(z_u.data(), z2_u.data());
        if backprop == Backprop::Full {
            let (dzl, dzu) = dz.data_mut().split_at_mut(bl * d);
            add_mse_grad(z_l.data(), z2_l.data(), dzl);
            add_mse_grad(z_u.data(), z2_u.data(), dzu);
            let mut dz2 = Tensor::zeros(z2.shape());
            {
                let (a, b) = dz2.data_mut().split_at_mut(bl * d);
                add_mse_grad(z2_l.data(), z_l.data(), a);
                add_mse_grad(z2_u.data(), z_u.data(), b);
            }
            let dgen = encoder_backward(params, &enc2_cache, &dz2, true)?.expect("input gradient");
            let (dgen_u, dgen_l) = dgen.split_outer(bl)?;
            let from_l = decoder_backward(params, &gcache_u, &dgen_u)?;
            let from_u = decoder_backward(params, &gcache_l, &dgen_l)?;
            dz.data_mut()[..bl * d]
                .iter_mut()
                .zip(from_l.data())
                .for_each(|(a, b)| *a += b);
            dz.data_mut()[bl * d..]
                .iter_mut()
                .zip(from_u.data())
                .for_each(|(a, b)| *a += b);
        }
    }

    if terms.prediction {
        let out = predictor_forward(params, &z_l)?;
        let m = params.config.n_classes;
        let mut l_y = 0.0;
        let mut dlogits = Tensor::zeros(out.probs.shape());
        for (i, &y) in batch.y_l.iter().enumerate() {
            let row = &out.probs.data()[i * m..(i + 1) * m];
            let p = row[y];
            l_y -= p.max(PROB_CLAMP).ln();
            if p >= PROB_CLAMP {
                let g = &mut dlogits.data_mut()[i * m..(i + 1) * m];
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj = (row[j] - if j == y { 1.0 } else { 0.0 }) / bl as f64;
                }
            }
        }
        report[3] = l_y / bl as f64;
        if grads {
            let g = predictor_backward(params, &out, &dlogits);
            dz.data_mut()[..bl * d]
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b);
        }
    }

    if backprop == Backprop::Full {
        encoder_backward(params, &enc_cache, &dz, false)?;
    }
    Ok(Evaluation {
        report: LossReport::new(report[0], report[1], report[2], report[3]),
        real_stats,
    })
}

/// Adversarial loss on precomputed latents:
/// `mean_L ln f_s(z) + mean_U ln(1 - f_s(z))`.
pub fn adversarial_loss(params: &ModelParams, z_l: &Tensor, z_u: &Tensor) -> Result<f64> {
    let pl = discriminator_forward(params, z_l)?.probs;
    let pu = discriminator_forward(params, z_u)?.probs;
    if pl.is_empty() || pu.is_empty() {
        return Err(Error::InvalidArgument(
            "adversarial loss needs nonempty batches".into(),
        ));
    }
    Ok(adversarial_value(&pl, &pu))
}

/// `mean ln p + mean ln(1 - p)`. Each mean is floored at `ln(PROB_CLAMP)`,
/// which it can only cross through rounding.
fn adversarial_value(pl: &[f64], pu: &[f64]) -> f64 {
    let floor = PROB_CLAMP.ln();
    let mean_ln = |v: &mut dyn Iterator<Item = f64>, n: usize| {
        (v.map(|x| x.max(PROB_CLAMP).ln()).sum::<f64>() / n as f64).max(floor)
    };
    mean_ln(&mut pl.iter().copied(), pl.len()) + mean_ln(&mut pu.iter().map(|p| 1.0 - p), pu.len())
}

fn single_term(
    params: &mut ModelParams,
    batch: &Batch,
    terms: Terms,
    mode: Mode,
    rng: &mut Rng,
) -> Result<LossReport> {
    Ok(evaluate(params, batch, terms, mode, rng, Backprop::None)?.report)
}

pub fn reconstruction_loss(
    params: &mut ModelParams,
    x_l: &Tensor,
    x_u: &Tensor,
    mode: Mode,
    rng: &mut Rng,
) -> Result<f64> {
    let batch = Batch { x_l, y_l: &[], x_u };
    let terms = Terms {
        reconstruction: true,
        ..Terms::NONE
    };
    Ok(single_term(params, &batch, terms, mode, rng)?.l_rec)
}

pub fn consistency_loss(
    params: &mut ModelParams,
    x_l: &Tensor,
    x_u: &Tensor,
    mode: Mode,
    rng: &mut Rng,
) -> Result<f64> {
    let batch = Batch { x_l, y_l: &[], x_u };
    let terms = Terms {
        consistency: true,
        ..Terms::NONE
    };
    Ok(single_term(params, &batch, terms, mode, rng)?.l_con)
}

pub fn prediction_loss(
    params: &mut ModelParams,
    x_l: &Tensor,
    labels: &[usize],
    mode: Mode,
    rng: &mut Rng,
) -> Result<f64> {
    let batch = Batch {
        x_l,
        y_l: labels,
        x_u: x_l,
    };
    let terms = Terms {
        prediction: true,
        ..Terms::NONE
    };
    Ok(single_term(params, &batch, terms, mode, rng)?.l_y)
}

pub fn total_loss(
    params: &mut ModelParams,
    batch: &Batch,
    mode: Mode,
    rng: &mut Rng,
) -> Result<LossReport> {
    single_term(params, batch, Terms::ALL, mode, rng)
}

/// A loss restricted to chosen parameter groups, evaluated on a fixed batch,
/// for finite-difference checking. Each evaluation reseeds the dropout stream
/// so repeated calls see identical masks.
#[derive(Debug, Clone)]
pub struct LossObjective {
    pub params: ModelParams,
    pub x_l: Tensor,
    pub y_l: Vec<usize>,
    pub x_u: Tensor,
    pub terms: Terms,
    pub parts: Vec<Part>,
    pub mode: Mode,
    pub seed: u64,
}

impl Differentiable for LossObjective {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let parts = self.parts.clone();
        let wanted: Vec<String> = parts
            .iter()
            .flat_map(|&p| self.params.part(p).into_iter().map(|q| q.name.clone()))
            .collect();
        self.params
            .all_params_mut()
            .into_iter()
            .filter(|q| wanted.contains(&q.name))
            .collect()
    }

    fn loss(&mut self, backprop: bool) -> Result<f64> {
        let mut rng = Rng::new(self.seed);
        let batch = Batch {
            x_l: &self.x_l,
            y_l: &self.y_l,
            x_u: &self.x_u,
        };
        if backprop {
            self.params.zero_grad();
        }
        let mode = if backprop {
            Backprop::Full
        } else {
            Backprop::None
        };
        let r = evaluate(
            &mut self.params,
            &batch,
            self.terms,
            self.mode,
            &mut rng,
            mode,
        )?
        .report;
        Ok(r.l_total)
    }
}
