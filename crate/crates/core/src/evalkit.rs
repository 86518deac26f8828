//! Human-label evaluation: loading rater scores, top-pair quality, the
//! component sweep over feature variants, and rank-matrix comparison reports.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::embed::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::par::*;
use crate::rankopt::{rank_loss, RankMatrix};
use crate::spectra::{augment, fit_pca, transform};
use crate::tabular::{create, csv_field, open};

pub const DEFAULT_TOP_N: usize = 20;
pub const DEFAULT_UNIFORM_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub id_a: String,
    pub id_b: String,
    pub rater_scores: Vec<f64>,
    /// Mean rater score divided by the scale maximum, in [0, 1].
    pub label: f64,
}

impl LabeledPair {
    pub fn new(id_a: String, id_b: String, rater_scores: Vec<f64>, scale_max: f64) -> Result<Self> {
        if !(scale_max > 0.0 && scale_max.is_finite()) {
            return Err(Error::domain(format!(
                "scale maximum must be positive, got {scale_max}"
            )));
        }
        if rater_scores.is_empty() {
            return Err(Error::domain("a labeled pair needs at least one score"));
        }
        if let Some(bad) = rater_scores
            .iter()
            .find(|s| !(**s >= 0.0 && **s <= scale_max))
        {
            return Err(Error::domain(format!(
                "score {bad} outside [0, {scale_max}]"
            )));
        }
        let mean = rater_scores.iter().sum::<f64>() / rater_scores.len() as f64;
        Ok(Self {
            id_a,
            id_b,
            rater_scores,
            label: (mean / scale_max).clamp(0.0, 1.0),
        })
    }
}

/// Reads `id_a,id_b,score_1[,score_2,...]`. Rows may carry different numbers
/// of scores; empty trailing cells are ignored. When `known_ids` is given,
/// every referenced id must be in it.
pub fn load_labels(
    path: &Path,
    scale_max: f64,
    known_ids: Option<&[String]>,
) -> Result<Vec<LabeledPair>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("id_a") || header.get(1) != Some("id_b") || header.len() < 3 {
        return Err(Error::Schema(
            "labels need columns id_a,id_b,score_1[,...]".into(),
        ));
    }
    let known: Option<HashSet<&str>> =
        known_ids.map(|ids| ids.iter().map(String::as_str).collect());
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 2;
        let rec = rec.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        let row_err = |message: String| Error::Row { row, message };
        if rec.len() < 3 {
            return Err(row_err("expected id_a,id_b and at least one score".into()));
        }
        let (a, b) = (rec[0].to_string(), rec[1].to_string());
        if a == b {
            return Err(row_err(format!("pairs `{a}` with itself")));
        }
        if let Some(known) = &known {
            for id in [&a, &b] {
                if !known.contains(id.as_str()) {
                    return Err(Error::Reference(format!(
                        "label row {row} names unknown id `{id}`"
                    )));
                }
            }
        }
        let key = if a < b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        };
        if !seen.insert(key) {
            return Err(Error::Conflict(format!("pair ({a}, {b}) labeled twice")));
        }
        let scores = rec
            .iter()
            .skip(2)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| row_err(format!("score `{s}` is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(LabeledPair::new(a, b, scores, scale_max).map_err(|e| row_err(e.to_string()))?);
    }
    Ok(out)
}

/// Cosine of each labeled pair in `space`.
pub fn pair_cosines(space: &EmbeddingSpace, labels: &[LabeledPair]) -> Result<Vec<f64>> {
    let index: HashMap<&str, usize> = space
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let m = space.matrix();
    let norms: Vec<f64> = m.row_iter().map(|r| r.norm()).collect();
    labels
        .iter()
        .map(|p| {
            let lookup = |id: &str| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Reference(format!("labeled id `{id}` not in the space")))
            };
            let (i, j) = (lookup(&p.id_a)?, lookup(&p.id_b)?);
            if norms[i] == 0.0 || norms[j] == 0.0 {
                return Err(Error::domain(format!(
                    "zero vector in pair ({}, {})",
                    p.id_a, p.id_b
                )));
            }
            Ok((m.row(i).dot(&m.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0))
        })
        .collect()
}

/// Mean label of the `top_n` pairs with the highest `scores`; ties go to the
/// earlier pair.
pub fn top_pair_quality_from_scores(
    scores: &[f64],
    labels: &[LabeledPair],
    top_n: usize,
) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::domain(format!(
            "{} scores for {} labeled pairs",
            scores.len(),
            labels.len()
        )));
    }
    if top_n == 0 || top_n > labels.len() {
        return Err(Error::domain(format!(
            "top_n must be in 1..={}, got {top_n}",
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::domain("model scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(order[..top_n].iter().map(|&i| labels[i].label).sum::<f64>() / top_n as f64)
}

/// Ranks labeled pairs by cosine in `space` and averages the human labels of the top `top_n`.
pub fn top_pair_quality(
    space: &EmbeddingSpace,
    labels: &[LabeledPair],
    top_n: usize,
) -> Result<f64> {
    top_pair_quality_from_scores(&pair_cosines(space, labels)?, labels, top_n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SweepVariant {
    AllFeatures,
    CondensedTime,
    PcaOnly,
}

impl SweepVariant {
    pub const ALL: [SweepVariant; 3] = [
        SweepVariant::AllFeatures,
        SweepVariant::CondensedTime,
        SweepVariant::PcaOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepVariant::AllFeatures => "all_features",
            SweepVariant::CondensedTime => "condensed_time",
            SweepVariant::PcaOnly => "pca_only",
        }
    }
}

impl fmt::Display for SweepVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: SweepVariant,
    pub k: usize,
    pub mean_label: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Ordered by variant, then by position in the requested k list.
    pub rows: Vec<SweepRow>,
    pub top_n: usize,
    pub seed: u64,
}

impl SweepResult {
    pub fn get(&self, variant: SweepVariant, k: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.variant == variant && r.k == k)
    }

    fn best(&self, pred: impl Fn(SweepVariant) -> bool) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| pred(r.variant))
            .map(|r| r.mean_label)
            .reduce(f64::max)
    }

    /// Best augmented mean over the best PCA-only mean, across all k.
    pub fn improvement_ratio(&self) -> Option<f64> {
        let augmented = self.best(|v| v != SweepVariant::PcaOnly)?;
        let baseline = self.best(|v| v == SweepVariant::PcaOnly)?;
        (baseline > 0.0).then(|| augmented / baseline)
    }

    /// Writes `variant,k,mean_label,n_pairs`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "variant,k,mean_label,n_pairs")?;
            for r in &self.rows {
                writeln!(w, "{},{},{},{}", r.variant, r.k, r.mean_label, r.n_pairs)?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

/// Top-pair quality for every k under three spaces: PCA text columns with all
/// geotemporal features, with condensed time, and alone.
///
/// `seed` is carried into the result for provenance; pair selection itself is
/// deterministic.
pub fn component_sweep(
    space: &EmbeddingSpace,
    features_all: &DMatrix<f64>,
    features_condensed: &DMatrix<f64>,
    labels: &[LabeledPair],
    k_list: &[usize],
    top_n: usize,
    seed: u64,
) -> Result<SweepResult> {
    if k_list.is_empty() {
        return Err(Error::domain("k list is empty"));
    }
    for f in [features_all, features_condensed] {
        if f.nrows() != space.len() {
            return Err(Error::domain(format!(
                "{} feature rows for {} embeddings",
                f.nrows(),
                space.len()
            )));
        }
    }
    let cells: Vec<[SweepRow; 3]> = k_list
        .par_iter()
        .map(|&k| {
            let reduced = transform(&fit_pca(space, k)?, space)?;
            let ids = space.ids().to_vec();
            let quality = |m: DMatrix<f64>| {
                top_pair_quality(&EmbeddingSpace::new(ids.clone(), m)?, labels, top_n)
            };
            let row = |variant, mean_label| SweepRow {
                variant,
                k,
                mean_label,
                n_pairs: top_n,
            };
            Ok([
                row(
                    SweepVariant::AllFeatures,
                    quality(augment(&reduced, features_all, space.ids())?.matrix)?,
                ),
                row(
                    SweepVariant::CondensedTime,
                    quality(augment(&reduced, features_condensed, space.ids())?.matrix)?,
                ),
                row(SweepVariant::PcaOnly, quality(reduced)?),
            ])
        })
        .collect::<Result<_>>()?;
    let rows = (0..3)
        .flat_map(|v| cells.iter().map(move |c| c[v].clone()))
        .collect();
    Ok(SweepResult { rows, top_n, seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub loss: f64,
    /// Normalized entropy (0 to 1) of the ranks each column receives.
    pub predicted_entropy: Vec<f64>,
    pub labeled_entropy: Vec<f64>,
    /// Columns nearly constant in the prediction but not in the labels.
    pub uniform_columns: Vec<usize>,
}

/// Shannon entropy of the off-diagonal ranks in column `j`, divided by ln(m - 1).
pub fn column_rank_entropy(r: &RankMatrix, j: usize) -> f64 {
    let m = r.m();
    if m <= 2 {
        return 0.0;
    }
    let mut counts = vec![0usize; m - 1];
    for i in (0..m).filter(|&i| i != j) {
        counts[r.get(i, j) as usize] += 1;
    }
    let total = (m - 1) as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    (h / total.ln()).max(0.0)
}

pub fn compare_rankings(
    predicted: &RankMatrix,
    labeled: &RankMatrix,
    threshold: f64,
) -> Result<RankingReport> {
    let loss = rank_loss(predicted, labeled)?;
    let m = predicted.m();
    let predicted_entropy: Vec<f64> = (0..m).map(|j| column_rank_entropy(predicted, j)).collect();
    let labeled_entropy: Vec<f64> = (0..m).map(|j| column_rank_entropy(labeled, j)).collect();
    let uniform_columns = (0..m)
        .filter(|&j| predicted_entropy[j] < threshold && labeled_entropy[j] >= threshold)
        .collect();
    Ok(RankingReport {
        loss,
        predicted_entropy,
        labeled_entropy,
        uniform_columns,
    })
}

impl RankingReport {
    /// Writes `column,predicted_entropy,labeled_entropy,uniform`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "column,predicted_entropy,labeled_entropy,uniform")?;
            for j in 0..self.predicted_entropy.len() {
                writeln!(
                    w,
                    "{j},{},{},{}",
                    self.predicted_entropy[j],
                    self.labeled_entropy[j],
                    u8::from(self.uniform_columns.contains(&j))
                )?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

/// Writes per-pair cosines and labels as `id_a,id_b,label,model`.
pub fn write_pair_scores_csv(path: &Path, labels: &[LabeledPair], scores: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "id_a,id_b,label,model")?;
        for (p, s) in labels.iter().zip(scores) {
            writeln!(
                w,
                "{},{},{},{s}",
                csv_field(&p.id_a),
                csv_field(&p.id_b),
                p.label
            )?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rankopt::rank_matrix;
    use std::fs;

    fn pair(a: &str, b: &str, label: f64) -> LabeledPair {
        LabeledPair {
            id_a: a.into(),
            id_b: b.into(),
            rater_scores: vec![label],
            label,
        }
    }

    #[test]
    fn label_scaling() {
        let mk = |s: Vec<f64>| {
            LabeledPair::new("a".into(), "b".into(), s, 4.0)
                .unwrap()
                .label
        };
        assert_eq!(mk(vec![4.0; 4]), 1.0);
        assert_eq!(mk(vec![0.0, 0.0]), 0.0);
        assert_eq!(mk(vec![1.0, 2.0, 3.0, 4.0]), 0.625);
    }

    #[test]
    fn load_labels_checks_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        fs::write(&p, "id_a,id_b,score_1,score_2\na,b,1,3\nb,c,4,\n").unwrap();
        let labels = load_labels(&p, 4.0, None).unwrap();
        assert_eq!(labels[0].label, 0.5);
        assert_eq!(labels[1].rater_scores, vec![4.0]);

        let known = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(
            load_labels(&p, 4.0, Some(&known)),
            Err(Error::Reference(_))
        ));

        fs::write(&p, "id_a,id_b,score_1\na,b,1\na,c,5\n").unwrap();
        assert!(matches!(
            load_labels(&p, 4.0, None),
            Err(Error::Row { row: 3, .. })
        ));
        fs::write(&p, "id_a,id_b,score_1\na,b,1\nb,a,2\n").unwrap();
        assert!(matches!(
            load_labels(&p, 4.0, None),
            Err(Error::Conflict(_))
        ));
        fs::write(&p, "a,b,score\n").unwrap();
        assert!(matches!(load_labels(&p, 4.0, None), Err(Error::Schema(_))));
    }

    #[test]
    fn top_pairs_follow_scores() {
        let labels: Vec<_> = [0.1, 0.9, 0.5, 0.7]
            .iter()
            .map(|&l| pair("x", "y", l))
            .collect();
        let oracle: Vec<f64> = labels.iter().map(|p| p.label).collect();
        assert!((top_pair_quality_from_scores(&oracle, &labels, 2).unwrap() - 0.8).abs() < 1e-15);
        // Ties resolve to the earlier pair.
        assert_eq!(
            top_pair_quality_from_scores(&[1.0; 4], &labels, 1).unwrap(),
            0.1
        );
        assert!(top_pair_quality_from_scores(&oracle, &labels, 5).is_err());
        assert!(top_pair_quality_from_scores(&oracle, &labels, 0).is_err());
        let flat: Vec<_> = (0..4).map(|_| pair("x", "y", 0.3)).collect();
        assert!(
            (top_pair_quality_from_scores(&[0.4, -1.0, 2.0, 0.0], &flat, 3).unwrap() - 0.3).abs()
                < 1e-15
        );
    }

    #[test]
    fn entropy_and_report() {
        // Column 0 is ranked first by every row.
        let scores = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.1, 0.2, 0.3, 0.9, 0.0, 0.2, 0.1, 0.9, 0.2, 0.0, 0.1, 0.9, 0.1, 0.2, 0.0,
            ],
        );
        let r = rank_matrix(&scores).unwrap();
        assert_eq!(column_rank_entropy(&r, 0), 0.0);
        let report = compare_rankings(&r, &r, DEFAULT_UNIFORM_THRESHOLD).unwrap();
        assert_eq!(report.loss, 0.0);
        assert!(report.uniform_columns.is_empty());

        let other =
            rank_matrix(&DMatrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64)).unwrap();
        let report = compare_rankings(&r, &other, DEFAULT_UNIFORM_THRESHOLD).unwrap();
        assert_eq!(report.loss, rank_loss(&r, &other).unwrap());
        assert!(report.uniform_columns.contains(&0));
    }
}
