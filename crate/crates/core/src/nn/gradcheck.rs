//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::nn::adam::Param;
use crate::rng::Rng;

/// A scalar objective over a set of parameters with an analytic gradient.
pub trait Differentiable {
    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Evaluates the objective. With `backprop`, first zeroes and then fills
    /// `grad` of every parameter returned by [`Differentiable::params_mut`].
    fn loss(&mut self, backprop: bool) -> Result<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Check every coordinate when the total is at most this many; otherwise
    /// a random subsample of this size.
    pub max_coords: usize,
    pub seed: u64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            max_coords: 2000,
            seed: 0,
            floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn grad_check<D: Differentiable + ?Sized>(
    target: &mut D,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let base = target.loss(true)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("gradient-check loss".into()));
    }
    let analytic: Vec<Vec<f64>> = target
        .params_mut()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();
    let mut coords: Vec<(usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(p, g)| (0..g.len()).map(move |i| (p, i)))
        .collect();
    if coords.len() > opts.max_coords {
        let mut rng = Rng::new(opts.seed);
        rng.shuffle(&mut coords);
        coords.truncate(opts.max_coords);
        coords.sort_unstable();
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        coords_checked: coords.len(),
    };
    for &(p, i) in &coords {
        let orig = target.params_mut()[p].value.data()[i];
        target.params_mut()[p].value.data_mut()[i] = orig + opts.h;
        let plus = target.loss(false)?;
        target.params_mut()[p].value.data_mut()[i] = orig - opts.h;
        let minus = target.loss(false)?;
        target.params_mut()[p].value.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("gradient-check loss".into()));
        }
        let numeric = (plus - minus) / (2.0 * opts.h);
        let err = relative_error(analytic[p][i], numeric, opts.floor);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_param = Some(target.params_mut()[p].name.clone());
            report.worst_index = i;
        }
    }
    Ok(report)
}
