use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{evaluate, spearman, MetricsReport, Summary};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{init_params, ModelConfig, Part};
use crate::rng::{Rng, Stream};
use crate::shiftdata::{
    encode_dataset, make_ssl_split, Dataset, SplitMode, SplitSpec, SslSplit, Standardizer,
    SubjectPool, TaskSpec, UnlabeledSet,
};
use crate::trainer::{train, TrainConfig, Variant};

/// A standardized split ready for training: statistics come from L alone.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub labeled: Dataset,
    pub unlabeled: UnlabeledSet,
    pub test: Dataset,
    pub standardizer: Standardizer,
    /// SHA-256 over the three encoded datasets.
    pub digest: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Generates the named subjects and splits them, without standardization.
pub fn synthetic_split(
    task: &TaskSpec,
    labeled: &[i32],
    unlabeled: &[i32],
    mode: SplitMode,
    seed: u64,
) -> Result<SslSplit> {
    let pools = labeled
        .iter()
        .chain(unlabeled)
        .map(|&id| {
            Ok(SubjectPool {
                subject_id: id,
                windows: task.generate(id)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = SplitSpec {
        labeled_subjects: labeled.to_vec(),
        unlabeled_subjects: unlabeled.to_vec(),
        seed,
        mode,
    };
    make_ssl_split(&pools, task.n_classes, &spec)
}

/// Fits the standardization on L and applies it to all three sets.
pub fn standardize_split(split: &SslSplit) -> Result<PreparedSplit> {
    let standardizer = Standardizer::fit(&split.labeled)?;
    let (l, u, t) = (
        standardizer.apply(&split.labeled)?,
        standardizer.apply(&split.unlabeled)?,
        standardizer.apply(&split.test)?,
    );
    let mut h = Sha256::new();
    for d in [&l, &u, &t] {
        h.update(encode_dataset(d));
    }
    Ok(PreparedSplit {
        unlabeled: u.unlabeled(),
        labeled: l,
        test: t,
        standardizer,
        digest: hex(&h.finalize()),
    })
}

pub fn prepare_split(
    task: &TaskSpec,
    labeled: &[i32],
    unlabeled: &[i32],
    mode: SplitMode,
    seed: u64,
) -> Result<PreparedSplit> {
    standardize_split(&synthetic_split(task, labeled, unlabeled, mode, seed)?)
}

/// The synthetic split a single run of `cfg` trains on, for seed `cfg.train.seed`.
pub fn config_split(cfg: &RunConfig) -> Result<SslSplit> {
    let p = &cfg.protocol;
    let (task, _) = repetition(cfg, cfg.train.seed);
    synthetic_split(
        &task,
        &p.labeled_subjects,
        &p.unlabeled_subjects,
        p.split_mode,
        cfg.train.seed,
    )
}

/// Digest of the initial parameters a training seed produces.
pub fn init_digest(model: &ModelConfig, seed: u64) -> Result<String> {
    let p = init_params(&ModelConfig {
        seed,
        ..model.clone()
    })?;
    let mut h = Sha256::new();
    for part in Part::ALL {
        h.update(p.part_hash(part));
    }
    Ok(hex(&h.finalize()))
}

/// One trained and scored model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub variant: Variant,
    pub thre_a: f64,
    pub thre_rec: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub epochs: usize,
    pub steps: u64,
    pub gate_s_count: u64,
    pub gate_e_count: u64,
    pub data_digest: String,
    pub init_digest: String,
    pub metrics: MetricsReport,
}

/// The data stream, split and training seed of repetition `seed`.
pub fn repetition(cfg: &RunConfig, seed: u64) -> (TaskSpec, TrainConfig) {
    let task = TaskSpec {
        seed: cfg.task.seed.wrapping_add(seed),
        ..cfg.task.clone()
    };
    let train = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    (task, train)
}

pub fn run_one(
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    split: &PreparedSplit,
    n_labeled: usize,
    n_unlabeled: usize,
) -> Result<RunResult> {
    let (params, history) = train(&split.labeled, &split.unlabeled, model, train_cfg, None)?;
    Ok(RunResult {
        seed: train_cfg.seed,
        variant: train_cfg.variant,
        thre_a: train_cfg.thre_a,
        thre_rec: train_cfg.thre_rec,
        n_labeled,
        n_unlabeled,
        epochs: train_cfg.epochs,
        steps: history.steps(),
        gate_s_count: history.gate_s_count,
        gate_e_count: history.gate_e_count,
        data_digest: split.digest.clone(),
        init_digest: init_digest(model, train_cfg.seed)?,
        metrics: evaluate(&params, &split.test)?,
    })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn check_seeds(cfg: &RunConfig) -> Result<()> {
    if cfg.protocol.seeds.len() < 2 {
        return Err(Error::Config("mean ± std needs at least 2 seeds".into()));
    }
    Ok(())
}

fn summarize(runs: &[&RunResult], f: impl Fn(&MetricsReport) -> f64) -> Summary {
    Summary::of(&runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let err = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: Variant,
    pub n_seeds: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<VariantRow>,
    pub runs: Vec<RunResult>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.rows)
    }
}

/// Trains every variant on every seed. All variants of one seed share the
/// data split and the initial parameters; this is verified, not assumed.
pub fn run_ablation(cfg: &RunConfig, jobs: usize) -> Result<AblationTable> {
    check_seeds(cfg)?;
    let p = &cfg.protocol;
    let pool = pool(jobs)?;
    let splits: Vec<PreparedSplit> = pool.install(|| {
        p.seeds
            .par_iter()
            .map(|&s| {
                prepare_split(
                    &repetition(cfg, s).0,
                    &p.labeled_subjects,
                    &p.unlabeled_subjects,
                    p.split_mode,
                    s,
                )
            })
            .collect::<Result<_>>()
    })?;
    let cells: Vec<(usize, Variant)> = (0..p.seeds.len())
        .flat_map(|i| p.variants.iter().map(move |&v| (i, v)))
        .collect();
    let runs: Vec<RunResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(i, v)| {
                let (_, train_cfg) = repetition(cfg, p.seeds[i]);
                let train_cfg = TrainConfig {
                    variant: v,
                    ..train_cfg
                };
                run_one(
                    &cfg.model,
                    &train_cfg,
                    &splits[i],
                    p.labeled_subjects.len(),
                    p.unlabeled_subjects.len(),
                )
            })
            .collect::<Result<_>>()
    })?;
    for &s in &p.seeds {
        let same: Vec<&RunResult> = runs.iter().filter(|r| r.seed == s).collect();
        if same
            .iter()
            .any(|r| r.data_digest != same[0].data_digest || r.init_digest != same[0].init_digest)
        {
            return Err(Error::InvalidArgument(format!(
                "seed {s}: variants saw different data or initial parameters"
            )));
        }
    }
    let rows = p
        .variants
        .iter()
        .map(|&v| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.variant == v).collect();
            let (a, pr, re) = (
                summarize(&mine, |m| m.accuracy),
                summarize(&mine, |m| m.macro_precision),
                summarize(&mine, |m| m.macro_recall),
            );
            VariantRow {
                variant: v,
                n_seeds: mine.len(),
                accuracy_mean: a.mean,
                accuracy_std: a.std,
                precision_mean: pr.mean,
                precision_std: pr.std,
                recall_mean: re.mean,
                recall_std: re.std,
            }
        })
        .collect();
    Ok(AblationTable { rows, runs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub thre_a: Vec<CurvePoint>,
    pub thre_rec: Vec<CurvePoint>,
    pub runs: Vec<RunResult>,
}

impl ThresholdSweep {
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        write_csv(&dir.join("thre_a.csv"), &self.thre_a)?;
        write_csv(&dir.join("thre_rec.csv"), &self.thre_rec)
    }
}

/// One-dimensional accuracy curves over each threshold grid, the other
/// threshold held at its configured value.
pub fn sweep_thresholds(cfg: &RunConfig, jobs: usize) -> Result<ThresholdSweep> {
    let p = &cfg.protocol;
    if p.thre_a_grid.is_empty() || p.thre_rec_grid.is_empty() {
        return Err(Error::Config("threshold grids must be nonempty".into()));
    }
    check_seeds(cfg)?;
    let pool = pool(jobs)?;
    let splits: Vec<PreparedSplit> = pool.install(|| {
        p.seeds
            .par_iter()
            .map(|&s| {
                prepare_split(
                    &repetition(cfg, s).0,
                    &p.labeled_subjects,
                    &p.unlabeled_subjects,
                    p.split_mode,
                    s,
                )
            })
            .collect::<Result<_>>()
    })?;
    let mut cells = Vec::new();
    for &a in &p.thre_a_grid {
        cells.extend((0..p.seeds.len()).map(|i| (i, a, cfg.train.thre_rec)));
    }
    for &r in &p.thre_rec_grid {
        cells.extend((0..p.seeds.len()).map(|i| (i, cfg.train.thre_a, r)));
    }
    let runs: Vec<RunResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(i, a, r)| {
                let (_, train_cfg) = repetition(cfg, p.seeds[i]);
                let train_cfg = TrainConfig {
                    thre_a: a,
                    thre_rec: r,
                    ..train_cfg
                };
                run_one(
                    &cfg.model,
                    &train_cfg,
                    &splits[i],
                    p.labeled_subjects.len(),
                    p.unlabeled_subjects.len(),
                )
            })
            .collect::<Result<_>>()
    })?;
    let k = p.seeds.len();
    let n_a = p.thre_a_grid.len();
    let curve = |grid: &[f64], offset: usize| -> Vec<CurvePoint> {
        grid.iter()
            .enumerate()
            .map(|(j, &threshold)| {
                let chunk: Vec<&RunResult> =
                    runs[offset + j * k..offset + (j + 1) * k].iter().collect();
                let s = summarize(&chunk, |m| m.accuracy);
                CurvePoint {
                    threshold,
                    mean: s.mean,
                    std: s.std,
                    n: s.n,
                }
            })
            .collect()
    };
    Ok(ThresholdSweep {
        thre_a: curve(&p.thre_a_grid, 0),
        thre_rec: curve(&p.thre_rec_grid, n_a * k),
        runs,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCell {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    /// Set when `n_labeled + n_unlabeled` exceeds the subject count.
    pub skipped: bool,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiSubjectGrid {
    pub total_subjects: usize,
    pub max_labeled: usize,
    pub max_unlabeled: usize,
    /// Row-major over `n_labeled` then `n_unlabeled`, both from 1.
    pub cells: Vec<GridCell>,
    pub runs: Vec<RunResult>,
    /// Spearman ρ over all runs of accuracy against the labeled-subject count.
    pub spearman_labeled: f64,
    /// Same against the unlabeled-subject count.
    pub spearman_unlabeled: f64,
}

impl MultiSubjectGrid {
    pub fn cell(&self, n: usize, m: usize) -> &GridCell {
        &self.cells[(n - 1) * self.max_unlabeled + (m - 1)]
    }

    /// `rows × cols` of mean accuracy, NaN where skipped.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (1..=self.max_labeled)
            .map(|n| {
                (1..=self.max_unlabeled)
                    .map(|m| self.cell(n, m).mean.unwrap_or(f64::NAN))
                    .collect()
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.cells)
    }
}

/// Subjects for one repetition: the labeled ones from the front of a seeded
/// permutation, the unlabeled ones from its back, so cells that share a
/// count share the subjects.
pub fn assign_subjects(total: usize, n: usize, m: usize, seed: u64) -> (Vec<i32>, Vec<i32>) {
    let perm = Rng::stream(seed, Stream::Custom(0x5_0b1e)).permutation(total);
    let ids: Vec<i32> = perm.into_iter().map(|i| i as i32).collect();
    (ids[..n].to_vec(), ids[total - m..].to_vec())
}

/// Accuracy over a grid of labeled × unlabeled subject counts. Cells with
/// overlapping subject lists are skipped. Every cell gets the optimization
/// budget of the one-by-one cell: its epoch count is rescaled by its steps
/// per epoch.
pub fn sweep_multisubject(cfg: &RunConfig, jobs: usize) -> Result<MultiSubjectGrid> {
    check_seeds(cfg)?;
    let p = &cfg.protocol;
    let total = p.n_subjects;
    let per_subject = cfg.task.n_per_class * cfg.task.n_classes;
    let ref_steps = (per_subject / cfg.train.batch_l)
        .min(per_subject / 2 / cfg.train.batch_u)
        .max(1)
        * cfg.train.epochs;
    let mut cells = Vec::new();
    let mut work = Vec::new();
    for n in 1..=p.max_labeled {
        for m in 1..=p.max_unlabeled {
            let skipped = n + m > total;
            cells.push(GridCell {
                n_labeled: n,
                n_unlabeled: m,
                skipped,
                mean: None,
                std: None,
            });
            if !skipped {
                work.extend(p.seeds.iter().map(|&s| (n, m, s)));
            }
        }
    }
    let pool = pool(jobs)?;
    let runs: Vec<RunResult> = pool.install(|| {
        work.par_iter()
            .map(|&(n, m, s)| {
                let (task, train_cfg) = repetition(cfg, s);
                let (lab, unl) = assign_subjects(total, n, m, s);
                let split = prepare_split(&task, &lab, &unl, p.split_mode, s)?;
                let spe = (split.labeled.len() / train_cfg.batch_l)
                    .min(split.unlabeled.len() / train_cfg.batch_u)
                    .max(1);
                let epochs = ((ref_steps as f64 / spe as f64).round() as usize).max(1);
                run_one(
                    &cfg.model,
                    &TrainConfig {
                        epochs,
                        ..train_cfg
                    },
                    &split,
                    n,
                    m,
                )
            })
            .collect::<Result<_>>()
    })?;
    for c in cells.iter_mut().filter(|c| !c.skipped) {
        let mine: Vec<&RunResult> = runs
            .iter()
            .filter(|r| r.n_labeled == c.n_labeled && r.n_unlabeled == c.n_unlabeled)
            .collect();
        let s = summarize(&mine, |m| m.accuracy);
        c.mean = Some(s.mean);
        c.std = Some(s.std);
    }
    let acc: Vec<f64> = runs.iter().map(|r| r.metrics.accuracy).collect();
    let ns: Vec<f64> = runs.iter().map(|r| r.n_labeled as f64).collect();
    let ms: Vec<f64> = runs.iter().map(|r| r.n_unlabeled as f64).collect();
    Ok(MultiSubjectGrid {
        total_subjects: total,
        max_labeled: p.max_labeled,
        max_unlabeled: p.max_unlabeled,
        cells,
        spearman_labeled: spearman(&ns, &acc),
        spearman_unlabeled: spearman(&ms, &acc),
        runs,
    })
}
