//! Run configuration as flat `key = value` text.
//!
//! `#` starts a comment, blank lines are ignored, every key may appear at
//! most once and unknown keys are errors. [`RunConfig::echo`] lists every
//! key with its resolved value in a fixed order.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::shiftdata::{SplitMode, TaskSpec};
use crate::trainer::{TrainConfig, Variant};

/// Subjects, seeds and grids of the experiment protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub n_subjects: usize,
    pub labeled_subjects: Vec<i32>,
    pub unlabeled_subjects: Vec<i32>,
    pub split_mode: SplitMode,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub thre_a_grid: Vec<f64>,
    pub thre_rec_grid: Vec<f64>,
    pub max_labeled: usize,
    pub max_unlabeled: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            n_subjects: 2,
            labeled_subjects: vec![0],
            unlabeled_subjects: vec![1],
            split_mode: SplitMode::Stratified,
            seeds: vec![0, 1, 2, 3, 4],
            variants: Variant::ALL.to_vec(),
            thre_a_grid: vec![-1.39, -1.3, -1.2, -1.0, -0.6],
            thre_rec_grid: vec![0.5, 0.7, 0.9, 1.1, f64::INFINITY],
            max_labeled: 4,
            max_unlabeled: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: TaskSpec,
    pub protocol: Protocol,
}

/// Every recognised key, in echo order.
pub const KEYS: &[&str] = &[
    // shared shape
    "channels",
    "window_len",
    "n_classes",
    // model
    "conv_filters",
    "kernel_len",
    "pool_w",
    "latent_dim",
    "disc_hidden",
    "keep_prob",
    // training
    "variant",
    "thre_a",
    "thre_rec",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "batch_l",
    "batch_u",
    "epochs",
    "seed",
    "eval_every",
    // synthetic task
    "task_seed",
    "n_per_class",
    "noise_std",
    "shift",
    "phase_jitter",
    // protocol
    "n_subjects",
    "labeled_subjects",
    "unlabeled_subjects",
    "split_mode",
    "seeds",
    "variants",
    "thre_a_grid",
    "thre_rec_grid",
    "max_labeled",
    "max_unlabeled",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn split_mode_name(m: SplitMode) -> &'static str {
    match m {
        SplitMode::Stratified => "stratified",
        SplitMode::Random => "random",
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let (m, t, k, p) = (
            &mut self.model,
            &mut self.train,
            &mut self.task,
            &mut self.protocol,
        );
        match key {
            "channels" => {
                m.channels = parse(key, v)?;
                k.channels = m.channels;
            }
            "window_len" => {
                m.window_len = parse(key, v)?;
                k.window_len = m.window_len;
            }
            "n_classes" => {
                m.n_classes = parse(key, v)?;
                k.n_classes = m.n_classes;
            }
            "conv_filters" => m.conv_filters = parse(key, v)?,
            "kernel_len" => m.kernel_len = parse(key, v)?,
            "pool_w" => m.pool_w = parse(key, v)?,
            "latent_dim" => m.latent_dim = parse(key, v)?,
            "disc_hidden" => m.disc_hidden = parse(key, v)?,
            "keep_prob" => m.keep_prob = parse(key, v)?,
            "variant" => t.variant = v.parse()?,
            "thre_a" => t.thre_a = parse(key, v)?,
            "thre_rec" => t.thre_rec = parse(key, v)?,
            "lr" => t.adam.lr = parse(key, v)?,
            "beta1" => t.adam.beta1 = parse(key, v)?,
            "beta2" => t.adam.beta2 = parse(key, v)?,
            "eps" => t.adam.eps = parse(key, v)?,
            "batch_l" => t.batch_l = parse(key, v)?,
            "batch_u" => t.batch_u = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "eval_every" => t.eval_every = parse(key, v)?,
            "task_seed" => k.seed = parse(key, v)?,
            "n_per_class" => k.n_per_class = parse(key, v)?,
            "noise_std" => k.noise_std = parse(key, v)?,
            "shift" => k.shift = parse(key, v)?,
            "phase_jitter" => k.phase_jitter = parse(key, v)?,
            "n_subjects" => p.n_subjects = parse(key, v)?,
            "labeled_subjects" => p.labeled_subjects = parse_list(key, v)?,
            "unlabeled_subjects" => p.unlabeled_subjects = parse_list(key, v)?,
            "split_mode" => {
                p.split_mode = match v {
                    "stratified" => SplitMode::Stratified,
                    "random" => SplitMode::Random,
                    other => {
                        return Err(Error::Config(format!(
                            "split_mode: expected stratified or random, got {other:?}"
                        )))
                    }
                }
            }
            "seeds" => p.seeds = parse_list(key, v)?,
            "variants" => {
                p.variants = v
                    .split(',')
                    .map(|s| s.trim().parse())
                    .collect::<Result<_>>()?
            }
            "thre_a_grid" => p.thre_a_grid = parse_list(key, v)?,
            "thre_rec_grid" => p.thre_rec_grid = parse_list(key, v)?,
            "max_labeled" => p.max_labeled = parse(key, v)?,
            "max_unlabeled" => p.max_unlabeled = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (m, t, k, p) = (&self.model, &self.train, &self.task, &self.protocol);
        Some(match key {
            "channels" => m.channels.to_string(),
            "window_len" => m.window_len.to_string(),
            "n_classes" => m.n_classes.to_string(),
            "conv_filters" => m.conv_filters.to_string(),
            "kernel_len" => m.kernel_len.to_string(),
            "pool_w" => m.pool_w.to_string(),
            "latent_dim" => m.latent_dim.to_string(),
            "disc_hidden" => m.disc_hidden.to_string(),
            "keep_prob" => m.keep_prob.to_string(),
            "variant" => t.variant.to_string(),
            "thre_a" => t.thre_a.to_string(),
            "thre_rec" => t.thre_rec.to_string(),
            "lr" => t.adam.lr.to_string(),
            "beta1" => t.adam.beta1.to_string(),
            "beta2" => t.adam.beta2.to_string(),
            "eps" => t.adam.eps.to_string(),
            "batch_l" => t.batch_l.to_string(),
            "batch_u" => t.batch_u.to_string(),
            "epochs" => t.epochs.to_string(),
            "seed" => t.seed.to_string(),
            "eval_every" => t.eval_every.to_string(),
            "task_seed" => k.seed.to_string(),
            "n_per_class" => k.n_per_class.to_string(),
            "noise_std" => k.noise_std.to_string(),
            "shift" => k.shift.to_string(),
            "phase_jitter" => k.phase_jitter.to_string(),
            "n_subjects" => p.n_subjects.to_string(),
            "labeled_subjects" => join(&p.labeled_subjects),
            "unlabeled_subjects" => join(&p.unlabeled_subjects),
            "split_mode" => split_mode_name(p.split_mode).to_string(),
            "seeds" => join(&p.seeds),
            "variants" => join(&p.variants),
            "thre_a_grid" => join(&p.thre_a_grid),
            "thre_rec_grid" => join(&p.thre_rec_grid),
            "max_labeled" => p.max_labeled.to_string(),
            "max_unlabeled" => p.max_unlabeled.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got {line:?}",
                    no + 1
                ))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key:?}",
                    no + 1
                )));
            }
            self.set(key, value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", no + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a `key=value` override (command-line flags win over the file).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let p = &self.protocol;
        if p.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if p.variants.is_empty() {
            return Err(Error::Config(
                "variants must list at least one variant".into(),
            ));
        }
        if p.n_subjects < 2 {
            return Err(Error::Config("n_subjects must be at least 2".into()));
        }
        let in_range = |ids: &[i32]| ids.iter().all(|&i| i >= 0 && (i as usize) < p.n_subjects);
        if !in_range(&p.labeled_subjects) || !in_range(&p.unlabeled_subjects) {
            return Err(Error::Config(format!(
                "subject ids must lie in [0, {})",
                p.n_subjects
            )));
        }
        Ok(())
    }

    /// `(key, value)` for every key, in [`KEYS`] order.
    pub fn echo(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .map(|&k| {
                (
                    k.to_string(),
                    self.get(k).expect("every listed key has a value"),
                )
            })
            .collect()
    }

    /// Echo as config text that parses back to the same configuration, with
    /// derived quantities noted in comments.
    pub fn echo_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.echo() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str(&format!(
            "# derived: decoder output padded with {} zero steps to window_len\n",
            self.model.decoder_padding()
        ));
        out.push_str("# derived: l_rec and l_con are per-element mean squared errors, summed over the two domains\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "thre_rec = inf\nseeds = 3, 4\nvariant = ly+la # comment\nthre_a_grid=-inf,2.5",
        )
        .unwrap();
        let back = RunConfig::from_text(&cfg.echo_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.echo().len(), KEYS.len());
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        assert!(RunConfig::from_text("thre_recc = 1").is_err());
        assert!(RunConfig::from_text("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::from_text("seed 1").is_err());
    }

    #[test]
    fn shape_keys_feed_model_and_task() {
        let cfg = RunConfig::from_text("channels = 3\nwindow_len = 64").unwrap();
        assert_eq!((cfg.model.channels, cfg.task.channels), (3, 3));
        assert_eq!((cfg.model.window_len, cfg.task.window_len), (64, 64));
    }
}
