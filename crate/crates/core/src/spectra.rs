//! PCA reduction, geotemporal feature augmentation and cosine comparisons.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::geotime::{standardize, FeatureVariant, StandardizationStats};
use crate::par::*;
use crate::sidecar::{join_f64, parse_f64_list, sidecar_path, Sidecar};
use crate::tabular::{read_matrix_csv, write_matrix_csv};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: DVector<f64>,
    /// k x d, orthonormal rows.
    components: DMatrix<f64>,
    explained_variance: Vec<f64>,
    total_variance: f64,
}

impl PcaModel {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    /// Population variance along each component, nonincreasing.
    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Sum of the per-column population variances of the training data.
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    /// `(X - mean) * components^T`
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::domain(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.dim()
            )));
        }
        let mut centered = x.clone();
        let mean_row = self.mean.transpose();
        for mut row in centered.row_iter_mut() {
            row -= &mean_row;
        }
        Ok(centered * self.components.transpose())
    }

    /// Maps reduced coordinates back into the original space.
    pub fn inverse_transform(&self, reduced: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if reduced.ncols() != self.k() {
            return Err(Error::domain(format!(
                "input has {} columns, model has {} components",
                reduced.ncols(),
                self.k()
            )));
        }
        let mut out = reduced * &self.components;
        let mean_row = self.mean.transpose();
        for mut row in out.row_iter_mut() {
            row += &mean_row;
        }
        Ok(out)
    }
}

/// Population covariance of the rows of `x` around their mean.
pub fn covariance(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    let mean_row = mean.transpose();
    for mut row in centered.row_iter_mut() {
        row -= &mean_row;
    }
    let cov = centered.transpose() * &centered / n;
    (mean, (&cov + cov.transpose()) * 0.5)
}

/// Principal axes from the eigendecomposition of the d x d covariance.
///
/// Each component is signed so that its largest-magnitude entry is positive.
pub fn fit_pca_matrix(x: &DMatrix<f64>, k: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 || k < 1 || k > (n - 1).min(d) {
        return Err(Error::domain(format!(
            "k = {k} outside [1, min(n-1, d)] for n = {n}, d = {d}"
        )));
    }
    let (mean, cov) = covariance(x);
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut components = DMatrix::zeros(k, d);
    let mut explained_variance = Vec::with_capacity(k);
    for (r, &idx) in order.iter().take(k).enumerate() {
        let mut axis = eig.eigenvectors.column(idx).into_owned();
        let pivot = axis
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| {
                if v.abs() > best.1 {
                    (i, v.abs())
                } else {
                    best
                }
            })
            .0;
        if axis[pivot] < 0.0 {
            axis.neg_mut();
        }
        components.set_row(r, &axis.transpose());
        // Round-off can leave tiny negative eigenvalues on rank-deficient data.
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
    })
}

pub fn fit_pca(space: &EmbeddingSpace, k: usize) -> Result<PcaModel> {
    fit_pca_matrix(space.matrix(), k)
}

pub fn transform(model: &PcaModel, space: &EmbeddingSpace) -> Result<DMatrix<f64>> {
    model.transform(space.matrix())
}

/// PCA-reduced text columns followed by standardized geotemporal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSpace {
    pub ids: Vec<String>,
    pub matrix: DMatrix<f64>,
    pub k: usize,
    pub f: usize,
    pub variant: Option<FeatureVariant>,
    pub stats: StandardizationStats,
}

/// Standardizes `features` and appends them after the `reduced` columns.
pub fn augment(
    reduced: &DMatrix<f64>,
    features: &DMatrix<f64>,
    ids: &[String],
) -> Result<AugmentedSpace> {
    if reduced.nrows() != features.nrows() || ids.len() != reduced.nrows() {
        return Err(Error::domain(format!(
            "row counts differ: reduced {}, features {}, ids {}",
            reduced.nrows(),
            features.nrows(),
            ids.len()
        )));
    }
    let (z, stats) = standardize(features)?;
    let (n, k, f) = (reduced.nrows(), reduced.ncols(), features.ncols());
    let mut matrix = DMatrix::zeros(n, k + f);
    matrix.view_mut((0, 0), (n, k)).copy_from(reduced);
    matrix.view_mut((0, k), (n, f)).copy_from(&z);
    Ok(AugmentedSpace {
        ids: ids.to_vec(),
        matrix,
        k,
        f,
        variant: None,
        stats,
    })
}

/// [`augment`] with the feature layout checked against `variant`.
pub fn augment_variant(
    reduced: &DMatrix<f64>,
    features: &DMatrix<f64>,
    ids: &[String],
    variant: FeatureVariant,
) -> Result<AugmentedSpace> {
    if features.ncols() != variant.width() {
        return Err(Error::domain(format!(
            "{variant} expects {} feature columns, got {}",
            variant.width(),
            features.ncols()
        )));
    }
    let mut space = augment(reduced, features, ids)?;
    space.variant = Some(variant);
    Ok(space)
}

impl AugmentedSpace {
    pub fn to_embedding_space(&self) -> Result<EmbeddingSpace> {
        EmbeddingSpace::new(self.ids.clone(), self.matrix.clone())
    }

    fn column_names(&self) -> Vec<String> {
        let text = (1..=self.k).map(|j| format!("c{j}"));
        let feats: Vec<String> = match self.variant {
            Some(v) => v.column_names().iter().map(|s| s.to_string()).collect(),
            None => (1..=self.f).map(|j| format!("f{j}")).collect(),
        };
        text.chain(feats).collect()
    }

    /// Writes the embedding CSV plus a `.meta` sidecar holding k, f, variant
    /// and the feature standardization statistics.
    pub fn write(&self, path: &Path, extra: &Sidecar) -> Result<()> {
        write_matrix_csv(path, &self.ids, &self.column_names(), &self.matrix)?;
        let mut meta = extra.clone();
        meta.set("k", self.k)
            .set("f", self.f)
            .set("variant", self.variant.map_or("custom", |v| v.as_str()))
            .set("stats.means", join_f64(&self.stats.means))
            .set("stats.stds", join_f64(&self.stats.stds))
            .set(
                "stats.constant",
                self.stats
                    .constant_mask
                    .iter()
                    .map(|&c| if c { "1" } else { "0" })
                    .collect::<Vec<_>>()
                    .join(","),
            );
        meta.write(&sidecar_path(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (ids, _, matrix) = read_matrix_csv(path)?;
        let meta = Sidecar::read(&sidecar_path(path))?;
        let int = |key: &str| -> Result<usize> {
            meta.require(key)?
                .parse()
                .map_err(|_| Error::Config(format!("metadata key `{key}` is not an integer")))
        };
        let (k, f) = (int("k")?, int("f")?);
        if k + f != matrix.ncols() {
            return Err(Error::Config(format!(
                "metadata says k + f = {}, file has {} columns",
                k + f,
                matrix.ncols()
            )));
        }
        let variant = match meta.require("variant")? {
            "custom" => None,
            other => Some(other.parse()?),
        };
        let constant_mask = meta
            .require("stats.constant")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.trim() == "1")
            .collect();
        let stats = StandardizationStats {
            means: parse_f64_list(meta.require("stats.means")?)?,
            stds: parse_f64_list(meta.require("stats.stds")?)?,
            constant_mask,
        };
        Ok(Self {
            ids,
            matrix,
            k,
            f,
            variant,
            stats,
        })
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::domain(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("cosine of a zero vector"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub(crate) fn row_cosine(m: &DMatrix<f64>, norms: &[f64], i: usize, j: usize) -> Result<f64> {
    if norms[i] == 0.0 || norms[j] == 0.0 {
        return Err(Error::domain(format!(
            "row {} is a zero vector",
            if norms[i] == 0.0 { i } else { j }
        )));
    }
    Ok((m.row(i).dot(&m.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0))
}

pub(crate) fn row_norms(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().map(|r| r.norm()).collect()
}

/// Samples `count` distinct unordered pairs `(i, j)`, `i < j`, from `n` items.
pub fn sample_pairs(n: usize, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let total = n * n.saturating_sub(1) / 2;
    if count > total {
        return Err(Error::domain(format!(
            "cannot sample {count} pairs from {total} available"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, count);
    Ok(picks.into_iter().map(|p| decode_pair(n, p)).collect())
}

fn decode_pair(n: usize, mut p: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - 1 - i;
        if p < row {
            return (i, i + 1 + p);
        }
        p -= row;
    }
    unreachable!("pair index out of range")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaCosinePoint {
    pub k: usize,
    pub mean_abs_delta: f64,
    /// Standard error of the per-trial means; 0 for a single trial.
    pub stderr: f64,
}

/// Mean absolute change in pairwise cosine between the (mean-centered) original
/// space and the PCA-reduced space with standardized `features` appended, for
/// each k. Each trial draws `pair_sample_size` distinct pairs with a sub-seed
/// derived from `seed`; the same pairs are used for every k.
pub fn delta_cosine_experiment(
    space: &EmbeddingSpace,
    features: &DMatrix<f64>,
    k_list: &[usize],
    trials: usize,
    pair_sample_size: usize,
    seed: u64,
) -> Result<Vec<DeltaCosinePoint>> {
    if trials == 0 {
        return Err(Error::domain("trials must be at least 1"));
    }
    if features.nrows() != space.len() {
        return Err(Error::domain(format!(
            "{} feature rows for {} embeddings",
            features.nrows(),
            space.len()
        )));
    }
    let pairs = (0..trials)
        .map(|t| sample_pairs(space.len(), pair_sample_size, derive_seed(seed, t as u64)))
        .collect::<Result<Vec<_>>>()?;

    let original = space.centered().into_parts().1;
    let original_norms = row_norms(&original);
    let base: Vec<Vec<f64>> = pairs
        .iter()
        .map(|trial| {
            trial
                .iter()
                .map(|&(i, j)| row_cosine(&original, &original_norms, i, j))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    k_list
        .par_iter()
        .map(|&k| {
            let model = fit_pca(space, k)?;
            let reduced = transform(&model, space)?;
            let aug = augment(&reduced, features, space.ids())?;
            let norms = row_norms(&aug.matrix);
            let trial_means = pairs
                .iter()
                .zip(&base)
                .map(|(trial, base_cos)| {
                    let mut sum = 0.0;
                    for (&(i, j), &c0) in trial.iter().zip(base_cos) {
                        sum += (row_cosine(&aug.matrix, &norms, i, j)? - c0).abs();
                    }
                    Ok(if trial.is_empty() {
                        0.0
                    } else {
                        sum / trial.len() as f64
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = trial_means.iter().sum::<f64>() / trials as f64;
            let stderr = if trials > 1 {
                let var = trial_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>()
                    / (trials - 1) as f64;
                (var / trials as f64).sqrt()
            } else {
                0.0
            };
            Ok(DeltaCosinePoint {
                k,
                mean_abs_delta: mean,
                stderr,
            })
        })
        .collect()
}
