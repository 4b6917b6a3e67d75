use super::{Dataset, SensorWindow};
use crate::error::{Error, Result};
use crate::model::Domain;
use crate::rng::{Rng, Stream};

/// All windows recorded from one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectPool {
    pub subject_id: i32,
    pub windows: Vec<SensorWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Halve each class separately (needs labels on every unlabeled-pool window).
    Stratified,
    /// Halve the shuffled pool regardless of labels.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub labeled_subjects: Vec<i32>,
    pub unlabeled_subjects: Vec<i32>,
    pub seed: u64,
    pub mode: SplitMode,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.labeled_subjects.is_empty() || self.unlabeled_subjects.is_empty() {
            return Err(Error::InvalidArgument(
                "both subject lists must be nonempty".into(),
            ));
        }
        if let Some(id) = self
            .labeled_subjects
            .iter()
            .find(|id| self.unlabeled_subjects.contains(id))
        {
            return Err(Error::InvalidArgument(format!(
                "subject {id} is in both the labeled and the unlabeled list"
            )));
        }
        Ok(())
    }
}

/// Labeled training set, unlabeled training set (labels removed) and test set.
#[derive(Debug, Clone, PartialEq)]
pub struct SslSplit {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub test: Dataset,
}

fn find_pool<'a>(pools: &'a [SubjectPool], id: i32) -> Result<&'a SubjectPool> {
    pools
        .iter()
        .find(|p| p.subject_id == id)
        .ok_or_else(|| Error::Data(format!("no data for subject {id}")))
}

/// Labeled subjects' windows form L. Unlabeled subjects' windows are merged,
/// shuffled and halved into U (labels dropped) and T.
pub fn make_ssl_split(
    pools: &[SubjectPool],
    n_classes: usize,
    split: &SplitSpec,
) -> Result<SslSplit> {
    split.validate()?;
    let first = pools
        .iter()
        .flat_map(|p| p.windows.first())
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty subject pools".into()))?;
    let (c, t) = (first.x.dim(0), first.x.dim(1));

    let mut labeled = Vec::new();
    for &id in &split.labeled_subjects {
        for w in &find_pool(pools, id)?.windows {
            if w.label.is_none() {
                return Err(Error::Data(format!(
                    "labeled subject {id} has an unlabeled window"
                )));
            }
            labeled.push(SensorWindow {
                s: Domain::Labeled,
                ..w.clone()
            });
        }
    }

    let mut pool: Vec<SensorWindow> = Vec::new();
    for &id in &split.unlabeled_subjects {
        pool.extend(find_pool(pools, id)?.windows.iter().cloned());
    }
    let mut rng = Rng::stream(split.seed, Stream::Split);
    let (mut u, mut test) = (Vec::new(), Vec::new());
    match split.mode {
        SplitMode::Random => {
            rng.shuffle(&mut pool);
            let half = pool.len() / 2;
            test = pool.split_off(half);
            u = pool;
        }
        SplitMode::Stratified => {
            let mut by_class: Vec<Vec<SensorWindow>> = vec![Vec::new(); n_classes];
            for w in pool {
                let y = w.label.filter(|&y| y < n_classes).ok_or_else(|| {
                    Error::Data("stratified split needs a valid label on every window".into())
                })?;
                by_class[y].push(w);
            }
            // The odd window of each class alternates between U and T.
            let mut extra_to_u = true;
            for mut group in by_class {
                rng.shuffle(&mut group);
                let mut half = group.len() / 2;
                if group.len() % 2 == 1 {
                    if extra_to_u {
                        half += 1;
                    }
                    extra_to_u = !extra_to_u;
                }
                test.extend(group.split_off(half));
                u.extend(group);
            }
            rng.shuffle(&mut u);
            rng.shuffle(&mut test);
        }
    }
    let u = u
        .into_iter()
        .map(|w| SensorWindow {
            s: Domain::Unlabeled,
            label: None,
            ..w
        })
        .collect();
    let test = test
        .into_iter()
        .map(|w| SensorWindow {
            s: Domain::Unlabeled,
            ..w
        })
        .collect();
    Ok(SslSplit {
        labeled: Dataset::new(c, t, n_classes, labeled)?,
        unlabeled: Dataset::new(c, t, n_classes, u)?,
        test: Dataset::new(c, t, n_classes, test)?,
    })
}
