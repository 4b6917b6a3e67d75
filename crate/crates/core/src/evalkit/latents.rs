use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{encode, Domain, ModelParams};
use crate::nn::Mode;
use crate::rng::Rng;
use crate::shiftdata::Dataset;

/// Principal axes of a point cloud from the exact eigendecomposition of its
/// covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit eigenvectors, largest eigenvalue first.
    pub components: Vec<Vec<f64>>,
    /// All eigenvalues in decreasing order.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if n < 2 || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "PCA needs at least 2 nonempty rows, got {n}"
            )));
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("PCA rows differ in length".into()));
        }
        let mean: Vec<f64> = (0..d)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
        let cov = centered.transpose() * &centered / (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        Ok(Pca {
            mean,
            components: order
                .iter()
                .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
                .collect(),
            eigenvalues: order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect(),
        })
    }

    /// Share of total variance captured by the leading `k` axes.
    pub fn explained(&self, k: usize) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues[..k].iter().sum::<f64>() / total
    }

    pub fn project(&self, row: &[f64], k: usize) -> Vec<f64> {
        self.components[..k]
            .iter()
            .map(|c| {
                c.iter()
                    .zip(row)
                    .zip(&self.mean)
                    .map(|((a, x), m)| a * (x - m))
                    .sum()
            })
            .collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(coords) {
            for (o, a) in out.iter_mut().zip(c) {
                *o += w * a;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentExport {
    pub features_path: PathBuf,
    pub pca_path: PathBuf,
    pub rows: usize,
    pub explained_variance_2d: f64,
}

/// Encodes every window of the named sets in eval mode and writes
/// `features.csv` (set, subject_id, s, label, z…) and `pca.csv`
/// (set, subject_id, s, label, pc1, pc2) into `dir`.
pub fn export_latents(
    params: &ModelParams,
    sets: &[(&str, &Dataset)],
    dir: &Path,
) -> Result<LatentExport> {
    let d = params.config.latent_dim;
    let mut meta = Vec::new();
    let mut rows = Vec::new();
    let mut rng = Rng::new(0);
    for (name, data) in sets {
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(256) {
            let z = encode(params, &data.batch(chunk)?, Mode::Eval, &mut rng)?;
            for (k, &i) in chunk.iter().enumerate() {
                let w = &data.windows()[i];
                let label = w.label.map_or(String::new(), |y| y.to_string());
                meta.push([
                    name.to_string(),
                    w.subject_id.to_string(),
                    u8::from(w.s == Domain::Labeled).to_string(),
                    label,
                ]);
                rows.push(z.outer(k).to_vec());
            }
        }
    }
    let pca = Pca::fit(&rows)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let features_path = dir.join("features.csv");
    let pca_path = dir.join("pca.csv");
    let csv_err = |p: &Path| {
        let p = p.to_path_buf();
        move |e: csv::Error| Error::io(&p, e.into())
    };

    let mut w = csv::Writer::from_path(&features_path).map_err(csv_err(&features_path))?;
    let mut header: Vec<String> = ["set", "subject_id", "s", "label"]
        .map(String::from)
        .to_vec();
    header.extend((0..d).map(|j| format!("z{j}")));
    w.write_record(&header).map_err(csv_err(&features_path))?;
    for (m, r) in meta.iter().zip(&rows) {
        let rec = m.iter().cloned().chain(r.iter().map(|v| v.to_string()));
        w.write_record(rec).map_err(csv_err(&features_path))?;
    }
    w.flush().map_err(|e| Error::io(&features_path, e))?;

    let mut w = csv::Writer::from_path(&pca_path).map_err(csv_err(&pca_path))?;
    w.write_record(["set", "subject_id", "s", "label", "pc1", "pc2"])
        .map_err(csv_err(&pca_path))?;
    let k = 2.min(d);
    for (m, r) in meta.iter().zip(&rows) {
        let p = pca.project(r, k);
        let rec = m.iter().cloned().chain(p.iter().map(|v| v.to_string()));
        w.write_record(rec).map_err(csv_err(&pca_path))?;
    }
    w.flush().map_err(|e| Error::io(&pca_path, e))?;

    Ok(LatentExport {
        features_path,
        pca_path,
        rows: rows.len(),
        explained_variance_2d: pca.explained(k),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_two_cloud_reconstructs_exactly() {
        let mut rng = Rng::new(3);
        let basis: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..6).map(|_| rng.normal()).collect())
            .collect();
        let offset: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let (a, b) = (rng.normal(), rng.normal());
                (0..6)
                    .map(|j| offset[j] + a * basis[0][j] + b * basis[1][j])
                    .collect()
            })
            .collect();
        let pca = Pca::fit(&rows).unwrap();
        assert!((pca.explained(2) - 1.0).abs() < 1e-12);
        for r in &rows {
            let back = pca.reconstruct(&pca.project(r, 2));
            let err = back
                .iter()
                .zip(r)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "{err}");
        }
    }

    #[test]
    fn isotropic_cloud_spreads_variance_evenly() {
        let mut rng = Rng::new(8);
        let d = 8;
        let rows: Vec<Vec<f64>> = (0..20_000)
            .map(|_| (0..d).map(|_| rng.normal()).collect())
            .collect();
        let pca = Pca::fit(&rows).unwrap();
        assert!(
            (pca.explained(2) - 2.0 / d as f64).abs() < 0.02,
            "{}",
            pca.explained(2)
        );
    }
}
