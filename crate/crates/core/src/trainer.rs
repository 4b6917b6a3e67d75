//! Threshold-gated alternating optimization of the five parameter sets.
//!
//! Each step, on one labeled and one unlabeled minibatch:
//! 1. the discriminator takes an Adam *ascent* step on `L_a` when `L_a < thre_a`;
//! 2. both decoders take a descent step on `L_rec`;
//! 3. when `L_rec < thre_rec`, the losses are recomputed and the encoder
//!    descends `L_y + L_a + L_con` while the predictor descends `L_y`.
//!
//! No branch touches any parameter outside its own set.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{evaluate as evaluate_metrics, MetricsReport};
use crate::losses::{evaluate, Backprop, Batch, LossReport, Terms};
use crate::model::{init_params, ModelConfig, ModelParams, Part};
use crate::nn::{adam_step, AdamConfig, Mode};
use crate::rng::{Rng, Stream};
use crate::shiftdata::{Dataset, UnlabeledSet};
use crate::tensor::Tensor;

/// Which losses take part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// All four losses with both gates.
    #[serde(rename = "full")]
    Full,
    /// Supervised baseline: the labeled stream and `L_y` only.
    #[serde(rename = "ly")]
    Ly,
    /// `L_y` plus the adversarial alignment.
    #[serde(rename = "ly+la")]
    LyLa,
    /// `L_y` plus reconstruction and consistency, gated on `L_rec`.
    #[serde(rename = "ly+rec+con")]
    LyRecCon,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Ly, Variant::LyLa, Variant::LyRecCon];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Ly => "ly",
            Variant::LyLa => "ly+la",
            Variant::LyRecCon => "ly+rec+con",
        }
    }

    pub fn adversarial(self) -> bool {
        matches!(self, Variant::Full | Variant::LyLa)
    }

    /// Reconstruction and consistency always come together.
    pub fn autoencoding(self) -> bool {
        matches!(self, Variant::Full | Variant::LyRecCon)
    }

    pub fn terms(self) -> Terms {
        Terms {
            adversarial: self.adversarial(),
            reconstruction: self.autoencoding(),
            consistency: self.autoencoding(),
            prediction: true,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?} (expected full, ly, ly+la or ly+rec+con)"
                ))
            })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub thre_a: f64,
    pub thre_rec: f64,
    pub adam: AdamConfig,
    pub batch_l: usize,
    pub batch_u: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Held-out evaluation period in steps; 0 disables it.
    pub eval_every: usize,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            thre_a: -1.0,
            thre_rec: f64::INFINITY,
            adam: AdamConfig::default(),
            batch_l: 32,
            batch_u: 32,
            epochs: 100,
            seed: 0,
            eval_every: 0,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_l < 2 || self.batch_u < 2 {
            return Err(Error::Config(format!(
                "batch sizes must be at least 2 for batchnorm, got batch_l={} batch_u={}",
                self.batch_l, self.batch_u
            )));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.adam.lr
            )));
        }
        if !(0.0..1.0).contains(&self.adam.beta1)
            || !(0.0..1.0).contains(&self.adam.beta2)
            || !(self.adam.eps > 0.0)
        {
            return Err(Error::Config(
                "adam betas must lie in [0, 1) and eps must be positive".into(),
            ));
        }
        if self.thre_a.is_nan() || self.thre_rec.is_nan() {
            return Err(Error::Config("thresholds must not be NaN".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub l_a: f64,
    pub l_rec: f64,
    pub l_con: f64,
    pub l_y: f64,
    pub gate_s: bool,
    pub gate_e: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub step: u64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    pub evals: Vec<EvalSnapshot>,
    /// Steps in which the discriminator gate fired.
    pub gate_s_count: u64,
    /// Steps in which the encoder/predictor gate fired.
    pub gate_e_count: u64,
}

impl TrainHistory {
    pub fn steps(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn push(&mut self, rec: StepRecord) {
        self.gate_s_count += u64::from(rec.gate_s);
        self.gate_e_count += u64::from(rec.gate_e);
        self.records.push(rec);
    }

    /// One JSON object per step.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Vec<StepRecord>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l)
                    .map_err(|e| Error::InvalidArgument(format!("history line: {e}")))
            })
            .collect()
    }
}

/// Loss snapshot and gate decisions of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Losses at the start of the step; `l_a` is the value the gate compares.
    pub report: LossReport,
    pub gate_s: bool,
    pub gate_e: bool,
}

fn check_finite(report: &LossReport, stage: &str) -> Result<()> {
    match report.non_finite() {
        Some(name) => Err(Error::NonFinite(format!("{name} ({stage})"))),
        None => Ok(()),
    }
}

fn step_parts(
    params: &mut ModelParams,
    parts: &[Part],
    adam: &AdamConfig,
    ascent: bool,
) -> Result<()> {
    for &part in parts {
        for p in params.part_mut(part) {
            if ascent {
                p.grad.scale(-1.0);
            }
            adam_step(p, adam)?;
        }
    }
    Ok(())
}

/// One gated update on a labeled and an unlabeled minibatch.
pub fn train_step(
    params: &mut ModelParams,
    batch: &Batch,
    cfg: &TrainConfig,
    dropout_rng: &mut Rng,
) -> Result<StepOutcome> {
    let variant = cfg.variant;
    params.zero_grad();
    if !variant.adversarial() && !variant.autoencoding() {
        // Nothing is gated: a single supervised pass.
        let update = evaluate(
            params,
            batch,
            variant.terms(),
            Mode::Train,
            dropout_rng,
            Backprop::Full,
        )?;
        check_finite(&update.report, "encoder update")?;
        if let Some(stats) = &update.real_stats {
            params.enc.bn_running.update(stats);
        }
        step_parts(params, &[Part::Encoder, Part::Predictor], &cfg.adam, false)?;
        params.zero_grad();
        return Ok(StepOutcome {
            report: update.report,
            gate_s: false,
            gate_e: true,
        });
    }
    let snapshot = evaluate(
        params,
        batch,
        variant.terms(),
        Mode::Train,
        dropout_rng,
        Backprop::Heads,
    )?;
    let report = snapshot.report;
    check_finite(&report, "start of step")?;
    if let Some(stats) = &snapshot.real_stats {
        params.enc.bn_running.update(stats);
    }

    let gate_s = variant.adversarial() && report.l_a < cfg.thre_a;
    if gate_s {
        step_parts(params, &[Part::Discriminator], &cfg.adam, true)?;
    }
    if variant.autoencoding() {
        step_parts(params, &[Part::DecoderL, Part::DecoderU], &cfg.adam, false)?;
    }

    let gate_e = !variant.autoencoding() || report.l_rec < cfg.thre_rec;
    if gate_e {
        params.zero_grad();
        let terms = Terms {
            reconstruction: false,
            ..variant.terms()
        };
        let update = evaluate(
            params,
            batch,
            terms,
            Mode::Train,
            dropout_rng,
            Backprop::Full,
        )?;
        check_finite(&update.report, "encoder update")?;
        // The full backward also fills discriminator and decoder gradients;
        // only the encoder and predictor move here.
        step_parts(params, &[Part::Encoder, Part::Predictor], &cfg.adam, false)?;
    }
    params.zero_grad();
    Ok(StepOutcome {
        report,
        gate_s,
        gate_e,
    })
}

/// Epoch-wise shuffled minibatch indices for both streams. An epoch lasts
/// `min(|L| / batch_l, |U| / batch_u)` steps; leftover windows are skipped.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng_l: Rng,
    rng_u: Rng,
    perm_l: Vec<usize>,
    perm_u: Vec<usize>,
    batch_l: usize,
    batch_u: usize,
    steps_per_epoch: usize,
    pos: usize,
    epoch: usize,
}

impl BatchSampler {
    pub fn new(n_l: usize, n_u: usize, cfg: &TrainConfig) -> Result<Self> {
        if n_l < cfg.batch_l {
            return Err(Error::InvalidArgument(format!(
                "labeled set has {n_l} windows, fewer than batch_l={}",
                cfg.batch_l
            )));
        }
        if n_u < cfg.batch_u {
            return Err(Error::InvalidArgument(format!(
                "unlabeled set has {n_u} windows, fewer than batch_u={}",
                cfg.batch_u
            )));
        }
        let mut s = BatchSampler {
            rng_l: Rng::stream(cfg.seed, Stream::BatchLabeled),
            rng_u: Rng::stream(cfg.seed, Stream::BatchUnlabeled),
            perm_l: Vec::new(),
            perm_u: Vec::new(),
            batch_l: cfg.batch_l,
            batch_u: cfg.batch_u,
            steps_per_epoch: (n_l / cfg.batch_l).min(n_u / cfg.batch_u),
            pos: 0,
            epoch: 0,
        };
        s.perm_l = s.rng_l.permutation(n_l);
        s.perm_u = s.rng_u.permutation(n_u);
        Ok(s)
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn next_indices(&mut self) -> (Vec<usize>, Vec<usize>) {
        if self.pos == self.steps_per_epoch {
            self.pos = 0;
            self.epoch += 1;
            let (n_l, n_u) = (self.perm_l.len(), self.perm_u.len());
            self.perm_l = self.rng_l.permutation(n_l);
            self.perm_u = self.rng_u.permutation(n_u);
        }
        let i = self.pos;
        self.pos += 1;
        (
            self.perm_l[i * self.batch_l..(i + 1) * self.batch_l].to_vec(),
            self.perm_u[i * self.batch_u..(i + 1) * self.batch_u].to_vec(),
        )
    }
}

/// Labeled windows with labels, and unlabeled windows.
pub fn sample_batches(
    l: &Dataset,
    u: &UnlabeledSet,
    sampler: &mut BatchSampler,
) -> Result<(Tensor, Vec<usize>, Tensor)> {
    let (il, iu) = sampler.next_indices();
    let labels = l.labels()?;
    Ok((
        l.batch(&il)?,
        il.iter().map(|&i| labels[i]).collect(),
        u.batch(&iu)?,
    ))
}

/// Stateful training run over fixed datasets.
pub struct Trainer<'a> {
    pub params: ModelParams,
    pub history: TrainHistory,
    cfg: TrainConfig,
    l: &'a Dataset,
    labels: Vec<usize>,
    u: &'a UnlabeledSet,
    heldout: Option<&'a Dataset>,
    sampler: BatchSampler,
    dropout_rng: Rng,
}

impl<'a> Trainer<'a> {
    /// Fresh parameters initialized from `cfg.seed`.
    pub fn new(
        l: &'a Dataset,
        u: &'a UnlabeledSet,
        model: &ModelConfig,
        cfg: &TrainConfig,
        heldout: Option<&'a Dataset>,
    ) -> Result<Self> {
        let model = ModelConfig {
            seed: cfg.seed,
            ..model.clone()
        };
        Trainer::with_params(init_params(&model)?, l, u, cfg, heldout)
    }

    pub fn with_params(
        params: ModelParams,
        l: &'a Dataset,
        u: &'a UnlabeledSet,
        cfg: &TrainConfig,
        heldout: Option<&'a Dataset>,
    ) -> Result<Self> {
        cfg.validate()?;
        params.config.validate()?;
        let mc = &params.config;
        for (what, c, t) in [
            ("labeled", l.channels(), l.window_len()),
            ("unlabeled", u.channels(), u.window_len()),
        ] {
            if (c, t) != (mc.channels, mc.window_len) {
                return Err(Error::shape(
                    "train",
                    format!("{what} window shape"),
                    format!("[{}, {}]", mc.channels, mc.window_len),
                    format!("[{c}, {t}]"),
                ));
            }
        }
        if l.n_classes() != mc.n_classes {
            return Err(Error::shape(
                "train",
                "n_classes",
                mc.n_classes,
                l.n_classes(),
            ));
        }
        Ok(Trainer {
            labels: l.labels()?,
            sampler: BatchSampler::new(l.len(), u.len(), cfg)?,
            dropout_rng: Rng::stream(cfg.seed, Stream::Dropout),
            params,
            history: TrainHistory::default(),
            cfg: cfg.clone(),
            l,
            u,
            heldout,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.sampler.steps_per_epoch()
    }

    pub fn total_steps(&self) -> usize {
        self.cfg.epochs * self.sampler.steps_per_epoch()
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let (il, iu) = self.sampler.next_indices();
        let x_l = self.l.batch(&il)?;
        let y_l: Vec<usize> = il.iter().map(|&i| self.labels[i]).collect();
        let x_u = self.u.batch(&iu)?;
        let batch = Batch {
            x_l: &x_l,
            y_l: &y_l,
            x_u: &x_u,
        };
        let out = train_step(&mut self.params, &batch, &self.cfg, &mut self.dropout_rng)?;
        let step = self.history.steps() + 1;
        self.history.push(StepRecord {
            step,
            l_a: out.report.l_a,
            l_rec: out.report.l_rec,
            l_con: out.report.l_con,
            l_y: out.report.l_y,
            gate_s: out.gate_s,
            gate_e: out.gate_e,
        });
        if let Some(t) = self.heldout {
            if self.cfg.eval_every > 0 && step % self.cfg.eval_every as u64 == 0 {
                let metrics = evaluate_metrics(&self.params, t)?;
                self.history.evals.push(EvalSnapshot { step, metrics });
            }
        }
        Ok(out)
    }

    /// Runs the remaining steps of the configured epochs.
    pub fn run(mut self) -> Result<(ModelParams, TrainHistory)> {
        while (self.history.steps() as usize) < self.total_steps() {
            self.step()?;
        }
        Ok((self.params, self.history))
    }
}

/// Trains from a fresh initialization for `cfg.epochs` epochs.
pub fn train(
    l: &Dataset,
    u: &UnlabeledSet,
    model: &ModelConfig,
    cfg: &TrainConfig,
    heldout: Option<&Dataset>,
) -> Result<(ModelParams, TrainHistory)> {
    Trainer::new(l, u, model, cfg, heldout)?.run()
}
