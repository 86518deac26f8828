//! Multimodal similarity scores, per-row ranking matrices, the ranking loss,
//! and a derivative-free search over the kernel weights.
//!
//! Two score shapes combine a text dot product with per-feature kernels
//! `d_i(a, b)` in `[0, 1]`:
//!
//! - sum: `e1 . e2 + sum_i alpha_i * d_i`
//! - product: `(e1 . e2) * prod_i (alpha_i + d_i)`
//!
//! The loss compares whole ranking matrices, so it is piecewise constant in the
//! weights and is minimized by grid search rather than gradients.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corpus::Record;
use crate::embed::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::geotime::{haversine_miles, GeoPoint, SECONDS_PER_DAY};
use crate::par::*;
use crate::tabular::{create, open};

/// Fitted weights of the product-form scorer over (time in days, location)
/// with the inverse-gap and 500-mile band kernels.
pub const REFERENCE_PI_ALPHAS: [f64; 2] = [0.02, 9.55];

/// `exp(-|a - b|)`
pub fn dist_exp(a: f64, b: f64) -> f64 {
    (-(a - b).abs()).exp()
}

/// `1 / (|a - b| + 1)`
pub fn dist_inv(a: f64, b: f64) -> f64 {
    1.0 / ((a - b).abs() + 1.0)
}

/// `(10 - floor(miles / 500)) / 10`, clamped at 0 beyond 5000 miles.
pub fn dist_floor_geo(a: GeoPoint, b: GeoPoint) -> f64 {
    let bands = (haversine_miles(a, b) / 500.0).floor();
    ((10.0 - bands) / 10.0).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    ExpAbs,
    InvAbs,
    FloorGeo,
}

impl DistKind {
    pub fn apply(self, a: &FeatureValue, b: &FeatureValue) -> Result<f64> {
        match (self, a, b) {
            (DistKind::ExpAbs, FeatureValue::Scalar(x), FeatureValue::Scalar(y)) => {
                Ok(dist_exp(*x, *y))
            }
            (DistKind::InvAbs, FeatureValue::Scalar(x), FeatureValue::Scalar(y)) => {
                Ok(dist_inv(*x, *y))
            }
            (DistKind::FloorGeo, FeatureValue::Geo(p), FeatureValue::Geo(q)) => {
                Ok(dist_floor_geo(*p, *q))
            }
            (kind, a, b) => Err(Error::domain(format!(
                "kernel {kind} cannot compare {a:?} with {b:?}"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DistKind::ExpAbs => "exp_abs",
            DistKind::InvAbs => "inv_abs",
            DistKind::FloorGeo => "floor_geo",
        }
    }
}

impl fmt::Display for DistKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DistKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exp_abs" | "exp" => Ok(DistKind::ExpAbs),
            "inv_abs" | "inv" => Ok(DistKind::InvAbs),
            "floor_geo" | "geo" => Ok(DistKind::FloorGeo),
            other => Err(Error::Usage(format!("unknown distance kernel `{other}`"))),
        }
    }
}

/// One extra (non-text) feature of an item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureValue {
    Scalar(f64),
    Geo(GeoPoint),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    Sigma,
    Pi,
}

impl fmt::Display for SimKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimKind::Sigma => "sigma",
            SimKind::Pi => "pi",
        })
    }
}

impl std::str::FromStr for SimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sigma" | "sum" => Ok(SimKind::Sigma),
            "pi" | "product" => Ok(SimKind::Pi),
            other => Err(Error::Usage(format!("unknown similarity kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityParams {
    pub kind: SimKind,
    pub alphas: Vec<f64>,
    pub dist_kinds: Vec<DistKind>,
}

impl SimilarityParams {
    pub fn new(kind: SimKind, alphas: Vec<f64>, dist_kinds: Vec<DistKind>) -> Result<Self> {
        if alphas.len() != dist_kinds.len() {
            return Err(Error::domain(format!(
                "{} weights for {} kernels",
                alphas.len(),
                dist_kinds.len()
            )));
        }
        if alphas.iter().any(|a| !a.is_finite()) {
            return Err(Error::domain("weights must be finite"));
        }
        Ok(Self {
            kind,
            alphas,
            dist_kinds,
        })
    }

    /// Product form with an inverse-gap kernel on days and the 500-mile band
    /// kernel on location, weighted by [`REFERENCE_PI_ALPHAS`].
    pub fn reference_pi() -> Self {
        Self {
            kind: SimKind::Pi,
            alphas: REFERENCE_PI_ALPHAS.to_vec(),
            dist_kinds: vec![DistKind::InvAbs, DistKind::FloorGeo],
        }
    }

    fn kernels(&self, f1: &[FeatureValue], f2: &[FeatureValue]) -> Result<Vec<f64>> {
        if f1.len() != self.dist_kinds.len() || f2.len() != self.dist_kinds.len() {
            return Err(Error::domain(format!(
                "expected {} extra features, got {} and {}",
                self.dist_kinds.len(),
                f1.len(),
                f2.len()
            )));
        }
        self.dist_kinds
            .iter()
            .zip(f1.iter().zip(f2))
            .map(|(k, (a, b))| k.apply(a, b))
            .collect()
    }
}

/// Combines a text dot product with precomputed kernel values.
pub fn combine(kind: SimKind, dot: f64, alphas: &[f64], kernels: &[f64]) -> f64 {
    match kind {
        SimKind::Sigma => dot + alphas.iter().zip(kernels).map(|(a, d)| a * d).sum::<f64>(),
        SimKind::Pi => {
            dot * alphas
                .iter()
                .zip(kernels)
                .map(|(a, d)| a + d)
                .product::<f64>()
        }
    }
}

fn dot(e1: &DVector<f64>, e2: &DVector<f64>) -> Result<f64> {
    if e1.len() != e2.len() {
        return Err(Error::domain(format!(
            "embedding dimensions differ: {} vs {}",
            e1.len(),
            e2.len()
        )));
    }
    Ok(e1.dot(e2))
}

pub fn sim_sigma(
    e1: &DVector<f64>,
    e2: &DVector<f64>,
    f1: &[FeatureValue],
    f2: &[FeatureValue],
    p: &SimilarityParams,
) -> Result<f64> {
    if p.kind != SimKind::Sigma {
        return Err(Error::domain(
            "sim_sigma called with product-form parameters",
        ));
    }
    let kernels = p.kernels(f1, f2)?;
    Ok(combine(SimKind::Sigma, dot(e1, e2)?, &p.alphas, &kernels))
}

pub fn sim_pi(
    e1: &DVector<f64>,
    e2: &DVector<f64>,
    f1: &[FeatureValue],
    f2: &[FeatureValue],
    p: &SimilarityParams,
) -> Result<f64> {
    if p.kind != SimKind::Pi {
        return Err(Error::domain("sim_pi called with sum-form parameters"));
    }
    let kernels = p.kernels(f1, f2)?;
    Ok(combine(SimKind::Pi, dot(e1, e2)?, &p.alphas, &kernels))
}

pub fn similarity(
    e1: &DVector<f64>,
    e2: &DVector<f64>,
    f1: &[FeatureValue],
    f2: &[FeatureValue],
    p: &SimilarityParams,
) -> Result<f64> {
    match p.kind {
        SimKind::Sigma => sim_sigma(e1, e2, f1, f2, p),
        SimKind::Pi => sim_pi(e1, e2, f1, f2, p),
    }
}

/// A batch of items: text embeddings plus the same list of extra features per item.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub embeddings: Vec<DVector<f64>>,
    pub features: Vec<Vec<FeatureValue>>,
}

impl Batch {
    pub fn new(
        ids: Vec<String>,
        embeddings: Vec<DVector<f64>>,
        features: Vec<Vec<FeatureValue>>,
    ) -> Result<Self> {
        if ids.len() != embeddings.len() || ids.len() != features.len() {
            return Err(Error::domain(format!(
                "batch has {} ids, {} embeddings, {} feature rows",
                ids.len(),
                embeddings.len(),
                features.len()
            )));
        }
        Ok(Self {
            ids,
            embeddings,
            features,
        })
    }

    /// Pairs each record with its embedding by id. Features are
    /// `[time in days, coordinates]`.
    pub fn from_records(records: &[Record], space: &EmbeddingSpace) -> Result<Self> {
        let mut ids = Vec::with_capacity(records.len());
        let mut embeddings = Vec::with_capacity(records.len());
        let mut features = Vec::with_capacity(records.len());
        for rec in records {
            let row = space
                .index_of(&rec.id)
                .ok_or_else(|| Error::Reference(rec.id.clone()))?;
            let coords = rec
                .coords
                .ok_or_else(|| Error::domain(format!("record `{}` has no coordinates", rec.id)))?;
            ids.push(rec.id.clone());
            embeddings.push(space.row(row));
            features.push(vec![
                FeatureValue::Scalar(rec.timestamp as f64 / SECONDS_PER_DAY),
                FeatureValue::Geo(coords),
            ]);
        }
        Self::new(ids, embeddings, features)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Dot products and kernel values for every pair, computed once.
#[derive(Debug, Clone)]
pub struct PairTables {
    m: usize,
    dots: DMatrix<f64>,
    /// One m x m table per extra feature.
    kernels: Vec<DMatrix<f64>>,
}

impl PairTables {
    pub fn build(batch: &Batch, dist_kinds: &[DistKind]) -> Result<Self> {
        let m = batch.len();
        for (id, f) in batch.ids.iter().zip(&batch.features) {
            if f.len() != dist_kinds.len() {
                return Err(Error::domain(format!(
                    "item `{id}` has {} extra features, expected {}",
                    f.len(),
                    dist_kinds.len()
                )));
            }
        }
        type Row = Vec<(f64, Vec<f64>)>;
        let rows: Vec<Result<Row>> = (0..m)
            .into_par_iter()
            .map(|i| {
                (i..m)
                    .map(|j| {
                        let d = dot(&batch.embeddings[i], &batch.embeddings[j])?;
                        let ks = dist_kinds
                            .iter()
                            .zip(batch.features[i].iter().zip(&batch.features[j]))
                            .map(|(k, (a, b))| k.apply(a, b))
                            .collect::<Result<Vec<_>>>()?;
                        Ok((d, ks))
                    })
                    .collect()
            })
            .collect();
        let mut dots = DMatrix::zeros(m, m);
        let mut kernels = vec![DMatrix::zeros(m, m); dist_kinds.len()];
        for (i, row) in rows.into_iter().enumerate() {
            for (off, (d, ks)) in row?.into_iter().enumerate() {
                let j = i + off;
                dots[(i, j)] = d;
                dots[(j, i)] = d;
                for (t, k) in kernels.iter_mut().zip(ks) {
                    t[(i, j)] = k;
                    t[(j, i)] = k;
                }
            }
        }
        Ok(Self { m, dots, kernels })
    }

    pub fn scores(&self, kind: SimKind, alphas: &[f64]) -> DMatrix<f64> {
        let mut ks = vec![0.0; self.kernels.len()];
        DMatrix::from_fn(self.m, self.m, |i, j| {
            for (slot, t) in ks.iter_mut().zip(&self.kernels) {
                *slot = t[(i, j)];
            }
            combine(kind, self.dots[(i, j)], alphas, &ks)
        })
    }
}

/// Symmetric m x m matrix of pairwise scores under `params`.
pub fn score_matrix(batch: &Batch, params: &SimilarityParams) -> Result<DMatrix<f64>> {
    let tables = PairTables::build(batch, &params.dist_kinds)?;
    Ok(tables.scores(params.kind, &params.alphas))
}

/// Entry (i, j) is the number of candidates ranked strictly ahead of j for
/// item i. The diagonal is 0 and carries no information.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankMatrix {
    m: usize,
    entries: Vec<u32>,
}

impl RankMatrix {
    pub fn from_entries(m: usize, entries: Vec<u32>) -> Result<Self> {
        if entries.len() != m * m {
            return Err(Error::domain(format!(
                "{} entries for a {m}x{m} rank matrix",
                entries.len()
            )));
        }
        Ok(Self { m, entries })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.entries[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    /// Writes `i,j,rank` for every off-diagonal entry.
    pub fn write_heatmap_csv(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "i,j,rank")?;
            for i in 0..self.m {
                for j in 0..self.m {
                    if i != j {
                        writeln!(w, "{i},{j},{}", self.get(i, j))?;
                    }
                }
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

fn rank_row(scores: &DMatrix<f64>, i: usize, out: &mut [u32]) {
    let m = scores.nrows();
    let mut order: Vec<usize> = (0..m).filter(|&j| j != i).collect();
    // Descending score, ascending index on ties; sort_by is stable.
    order.sort_by(|&a, &b| scores[(i, b)].total_cmp(&scores[(i, a)]));
    for (pos, j) in order.into_iter().enumerate() {
        out[j] = pos as u32;
    }
    out[i] = 0;
}

pub fn rank_matrix(scores: &DMatrix<f64>) -> Result<RankMatrix> {
    let (m, c) = scores.shape();
    if m != c {
        return Err(Error::domain(format!(
            "score matrix is {m}x{c}, not square"
        )));
    }
    if m < 2 {
        return Err(Error::domain("rank matrix needs at least 2 items"));
    }
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("score matrix contains NaN"));
    }
    let mut entries = vec![0u32; m * m];
    for (i, row) in entries.chunks_mut(m).enumerate() {
        rank_row(scores, i, row);
    }
    Ok(RankMatrix { m, entries })
}

/// Root of the summed squared rank differences over ordered off-diagonal pairs.
pub fn rank_loss(predicted: &RankMatrix, labeled: &RankMatrix) -> Result<f64> {
    if predicted.m != labeled.m {
        return Err(Error::domain(format!(
            "rank matrices differ in size: {} vs {}",
            predicted.m, labeled.m
        )));
    }
    let m = predicted.m;
    let mut sum = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                let d = predicted.get(i, j) as f64 - labeled.get(i, j) as f64;
                sum += d * d;
            }
        }
    }
    Ok(sum.sqrt())
}

/// Builds a symmetric score matrix from `(i, j, score)` triples covering every
/// unordered pair of `m` items.
pub fn scores_from_pairs(m: usize, pairs: &[(usize, usize, f64)]) -> Result<DMatrix<f64>> {
    let mut scores = DMatrix::from_element(m, m, f64::NAN);
    for &(i, j, s) in pairs {
        if i >= m || j >= m {
            return Err(Error::domain(format!(
                "pair ({i}, {j}) out of range for m = {m}"
            )));
        }
        scores[(i, j)] = s;
        scores[(j, i)] = s;
    }
    for i in 0..m {
        scores[(i, i)] = 0.0;
        for j in 0..m {
            if scores[(i, j)].is_nan() {
                return Err(Error::domain(format!("no label for pair ({i}, {j})")));
            }
        }
    }
    Ok(scores)
}

/// Reads batch labels either as `i,j,score` triples (with that header) or as a
/// headerless m x m score matrix.
pub fn read_label_scores(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(open(path)?);
    let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    let num = |s: &str, line: usize| -> Result<f64> {
        s.trim().parse().map_err(|_| Error::Format {
            line,
            message: format!("`{s}` is not a number"),
        })
    };
    let is_triples = rows
        .first()
        .map(|r| r.len() == 3 && r[0].trim() == "i" && r[1].trim() == "j")
        .unwrap_or(false);
    if is_triples {
        let mut pairs = Vec::new();
        let mut m = 0;
        for (idx, r) in rows.iter().enumerate().skip(1) {
            let line = idx + 1;
            if r.len() != 3 {
                return Err(Error::Format {
                    line,
                    message: "expected i,j,score".into(),
                });
            }
            let idx_of = |s: &str| -> Result<usize> {
                s.trim().parse().map_err(|_| Error::Format {
                    line,
                    message: format!("`{s}` is not an index"),
                })
            };
            let (i, j) = (idx_of(&r[0])?, idx_of(&r[1])?);
            let s = num(&r[2], line)?;
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Row {
                    row: line,
                    message: format!("score {s} outside [0, 1]"),
                });
            }
            m = m.max(i + 1).max(j + 1);
            pairs.push((i, j, s));
        }
        return scores_from_pairs(m, &pairs);
    }
    let m = rows.len();
    let mut scores = DMatrix::zeros(m, m);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != m {
            return Err(Error::Format {
                line: i + 1,
                message: format!("expected {m} values, found {}", r.len()),
            });
        }
        for j in 0..m {
            scores[(i, j)] = num(&r[j], i + 1)?;
        }
    }
    Ok(scores)
}

/// Shrinking-grid search settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    /// Search interval per weight.
    pub bounds: Vec<(f64, f64)>,
    /// Grid points along each axis per round.
    pub points_per_axis: usize,
    /// Factor applied to the window half-width after each round.
    pub shrink: f64,
    pub rounds: usize,
    /// Carried into output metadata; the search itself is deterministic.
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            bounds: vec![(0.0, 20.0); 2],
            points_per_axis: 21,
            shrink: 0.5,
            rounds: 6,
            seed: 0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self, n_alphas: usize) -> Result<()> {
        if self.bounds.len() != n_alphas {
            return Err(Error::Config(format!(
                "{} search intervals for {n_alphas} weights",
                self.bounds.len()
            )));
        }
        if self.points_per_axis == 0 {
            return Err(Error::Config("grid has no points".into()));
        }
        if let Some((lo, hi)) = self.bounds.iter().find(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config(format!("empty search interval [{lo}, {hi}]")));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config(format!(
                "shrink factor {} outside (0, 1)",
                self.shrink
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        Ok(())
    }

    /// Spacing between neighbouring grid points in the first round.
    pub fn initial_step(&self) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|(lo, hi)| {
                if self.points_per_axis > 1 {
                    (hi - lo) / (self.points_per_axis - 1) as f64
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub round: usize,
    pub alphas: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub params: SimilarityParams,
    pub loss: f64,
    pub trace: Vec<TraceEntry>,
}

fn axis_points(center: f64, half: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![center];
    }
    (0..n)
        .map(|t| center - half + 2.0 * half * t as f64 / (n - 1) as f64)
        .collect()
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

/// Minimizes the ranking loss over the kernel weights.
///
/// Each round evaluates a full grid over the current window, keeps the best
/// point seen so far (first found wins ties), recenters the window on it and
/// shrinks the half-width. The window never leaves the configured bounds.
/// When the grid does not contain the initial center (even point counts) the
/// center is evaluated first, as round 0.
pub fn optimize_alphas(
    batch: &Batch,
    labels: &RankMatrix,
    kind: SimKind,
    dist_kinds: &[DistKind],
    cfg: &GridConfig,
) -> Result<OptimizeOutcome> {
    cfg.validate(dist_kinds.len())?;
    let m = batch.len();
    if labels.m() != m {
        return Err(Error::domain(format!(
            "labels cover {} items, batch has {m}",
            labels.m()
        )));
    }
    if !(10..=20).contains(&m) {
        log::warn!("batch size {m} is outside the recommended 10-20");
    }
    let tables = PairTables::build(batch, dist_kinds)?;
    let loss_at = |alphas: &[f64]| -> Result<f64> {
        let ranks = rank_matrix(&tables.scores(kind, alphas))?;
        rank_loss(&ranks, labels)
    };

    let mut center: Vec<f64> = cfg.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let mut half: Vec<f64> = cfg.bounds.iter().map(|(lo, hi)| 0.5 * (hi - lo)).collect();
    let mut trace = Vec::new();
    let mut best: Option<(Vec<f64>, f64)> = None;

    if cfg.points_per_axis.is_multiple_of(2) {
        let loss = loss_at(&center)?;
        trace.push(TraceEntry {
            round: 0,
            alphas: center.clone(),
            loss,
        });
        best = Some((center.clone(), loss));
    }

    for round in 1..=cfg.rounds {
        let axes: Vec<Vec<f64>> = center
            .iter()
            .zip(&half)
            .map(|(&c, &h)| axis_points(c, h, cfg.points_per_axis))
            .collect();
        let grid = cartesian(&axes);
        let losses: Vec<Result<f64>> = grid.par_iter().map(|p| loss_at(p)).collect();
        for (point, loss) in grid.into_iter().zip(losses) {
            let loss = loss?;
            if best.as_ref().is_none_or(|(_, l)| loss < *l) {
                best = Some((point.clone(), loss));
            }
            trace.push(TraceEntry {
                round,
                alphas: point,
                loss,
            });
        }
        let (best_point, _) = best.as_ref().expect("grid is nonempty");
        for (d, (lo, hi)) in cfg.bounds.iter().enumerate() {
            half[d] *= cfg.shrink;
            center[d] = best_point[d].clamp(lo + half[d], hi - half[d]);
        }
    }

    let (alphas, loss) = best.expect("at least one evaluation");
    Ok(OptimizeOutcome {
        params: SimilarityParams::new(kind, alphas, dist_kinds.to_vec())?,
        loss,
        trace,
    })
}

/// Writes `round,alpha1,...,alphaN,loss`.
pub fn write_trace_csv(trace: &[TraceEntry], path: &Path) -> Result<()> {
    let n = trace.first().map_or(0, |t| t.alphas.len());
    let mut w = create(path)?;
    let mut write = || -> std::io::Result<()> {
        write!(w, "round")?;
        for a in 1..=n {
            write!(w, ",alpha{a}")?;
        }
        writeln!(w, ",loss")?;
        for t in trace {
            write!(w, "{}", t.round)?;
            for a in &t.alphas {
                write!(w, ",{a}")?;
            }
            writeln!(w, ",{}", t.loss)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
