//! Exact (O(n^2)) stochastic neighbour embedding into the plane.
//!
//! High-dimensional affinities use per-point Gaussian bandwidths calibrated to
//! a target perplexity. The low-dimensional kernel defaults to the Gaussian
//! `exp(-|y_i - y_j|^2)`; the heavy-tailed Student-t kernel is available as an
//! option. The cost is KL divergence over either the symmetrized joint
//! distribution (default) or the per-point conditionals.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::par::*;
use crate::tabular::{create, csv_field, open};

const PERPLEXITY_TOL: f64 = 1e-3;
const BISECTION_STEPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowDimKernel {
    Gaussian,
    StudentT,
}

impl fmt::Display for LowDimKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LowDimKernel::Gaussian => "gaussian",
            LowDimKernel::StudentT => "student_t",
        })
    }
}

impl std::str::FromStr for LowDimKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(LowDimKernel::Gaussian),
            "student_t" | "student-t" | "t" => Ok(LowDimKernel::StudentT),
            other => Err(Error::Usage(format!("unknown t-SNE kernel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostVariant {
    /// KL(P || Q) over the symmetrized joint distributions.
    SymmetricJoint,
    /// Sum over points of KL(P_i || Q_i) over conditionals.
    Conditional,
}

impl fmt::Display for CostVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostVariant::SymmetricJoint => "symmetric_joint",
            CostVariant::Conditional => "conditional",
        })
    }
}

impl std::str::FromStr for CostVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric_joint" | "joint" => Ok(CostVariant::SymmetricJoint),
            "conditional" => Ok(CostVariant::Conditional),
            other => Err(Error::Usage(format!("unknown t-SNE cost `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    /// Target perplexity; capped at (n - 1) / 3 for small inputs.
    pub perplexity: f64,
    pub iterations: usize,
    /// Requested step size. Under the Gaussian kernel the attraction is an
    /// unbounded quadratic, so each step is additionally capped at half the
    /// momentum-descent stability bound derived from P (see [`TsneResult::step_sizes`]).
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
    pub kernel: LowDimKernel,
    pub cost: CostVariant,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 100.0,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            exaggeration: 4.0,
            exaggeration_iters: 100,
            seed: 0,
            kernel: LowDimKernel::Gaussian,
            cost: CostVariant::SymmetricJoint,
        }
    }
}

impl TsneConfig {
    pub fn effective_perplexity(&self, n: usize) -> f64 {
        self.perplexity.min((n as f64 - 1.0) / 3.0)
    }

    fn validate(&self, n: usize) -> Result<f64> {
        let perplexity = self.effective_perplexity(n);
        if !(perplexity > 1.0 && perplexity < n as f64) {
            return Err(Error::domain(format!(
                "perplexity {perplexity} must lie in (1, {n}) for {n} points"
            )));
        }
        if self.iterations == 0 {
            return Err(Error::domain("iterations must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::domain("learning rate must be positive"));
        }
        Ok(perplexity)
    }
}

/// Squared Euclidean distances between rows.
pub fn squared_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    (0..x.ncols())
                        .map(|d| (x[(i, d)] - x[(j, d)]).powi(2))
                        .sum()
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| rows[i.min(j)][i.max(j)])
}

/// Conditional distribution of row `i` at bandwidth `sigma`, written into `out`.
/// Returns the perplexity `exp(H)` with H in nats (equivalently `2^H` in bits).
fn row_conditional(sq: &DMatrix<f64>, i: usize, sigma: f64, out: &mut [f64]) -> f64 {
    let n = sq.nrows();
    let dmin = (0..n)
        .filter(|&j| j != i)
        .map(|j| sq[(i, j)])
        .fold(f64::INFINITY, f64::min);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut total = 0.0;
    for j in 0..n {
        out[j] = if j == i {
            0.0
        } else {
            (-(sq[(i, j)] - dmin) * inv).exp()
        };
        total += out[j];
    }
    let mut entropy = 0.0;
    for p in out.iter_mut() {
        *p /= total;
        if *p > 0.0 {
            entropy -= *p * p.ln();
        }
    }
    entropy.exp()
}

fn calibrate_row(sq: &DMatrix<f64>, i: usize, perplexity: f64) -> Result<f64> {
    let n = sq.nrows();
    let mut buf = vec![0.0; n];
    let dmin = (0..n)
        .filter(|&j| j != i)
        .map(|j| sq[(i, j)])
        .fold(f64::INFINITY, f64::min);
    let spread: Vec<f64> = (0..n)
        .filter(|&j| j != i)
        .map(|j| sq[(i, j)] - dmin)
        .filter(|&d| d > 0.0)
        .collect();
    let scale = if spread.is_empty() {
        1.0
    } else {
        (spread.iter().sum::<f64>() / spread.len() as f64).sqrt()
    };
    let (mut lo, mut hi) = (scale.ln() - 40.0, scale.ln() + 40.0);
    let perp_lo = row_conditional(sq, i, lo.exp(), &mut buf);
    let perp_hi = row_conditional(sq, i, hi.exp(), &mut buf);
    if perplexity < perp_lo - PERPLEXITY_TOL || perplexity > perp_hi + PERPLEXITY_TOL {
        return Err(Error::Calibration {
            row: i,
            message: format!(
                "target perplexity {perplexity} outside reachable range [{perp_lo}, {perp_hi}]"
            ),
        });
    }
    let mut best = (f64::INFINITY, hi.exp());
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let sigma = mid.exp();
        let perp = row_conditional(sq, i, sigma, &mut buf);
        let gap = (perp - perplexity).abs();
        if gap < best.0 {
            best = (gap, sigma);
        }
        if gap < 1e-12 {
            break;
        }
        if perp < perplexity {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > PERPLEXITY_TOL {
        return Err(Error::Calibration {
            row: i,
            message: format!(
                "bisection ended {} away from perplexity {perplexity}",
                best.0
            ),
        });
    }
    Ok(best.1)
}

fn check_distances(sq: &DMatrix<f64>) -> Result<()> {
    let (n, c) = sq.shape();
    if n != c {
        return Err(Error::domain(format!("distance matrix is {n}x{c}")));
    }
    if n < 2 {
        return Err(Error::domain("need at least 2 points"));
    }
    for i in 0..n {
        if sq[(i, i)] != 0.0 {
            return Err(Error::domain(format!("nonzero self-distance at row {i}")));
        }
        for j in 0..i {
            let (a, b) = (sq[(i, j)], sq[(j, i)]);
            if !(a >= 0.0) || (a - b).abs() > 1e-9 * a.abs().max(1.0) {
                return Err(Error::domain(format!(
                    "distance ({i}, {j}) is negative or asymmetric"
                )));
            }
        }
    }
    Ok(())
}

/// Per-point bandwidths whose conditionals reach `perplexity` within 1e-3.
pub fn calibrate_sigmas(sq_distances: &DMatrix<f64>, perplexity: f64) -> Result<Vec<f64>> {
    check_distances(sq_distances)?;
    let n = sq_distances.nrows();
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(Error::Calibration {
            row: 0,
            message: format!("perplexity {perplexity} must lie in (1, {n})"),
        });
    }
    let rows: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|i| calibrate_row(sq_distances, i, perplexity))
        .collect();
    rows.into_iter().collect()
}

/// Row-stochastic `p_{j|i}` with zero diagonal.
pub fn conditional_p(sq_distances: &DMatrix<f64>, sigmas: &[f64]) -> DMatrix<f64> {
    let n = sq_distances.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            row_conditional(sq_distances, i, sigmas[i], &mut row);
            row
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// `(P + P^T) / 2n`: symmetric, sums to 1.
pub fn symmetrize(p_cond: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p_cond.nrows() as f64;
    DMatrix::from_fn(p_cond.nrows(), p_cond.ncols(), |i, j| {
        // Same operand order for (i, j) and (j, i) keeps the result exactly symmetric.
        let (a, b) = if i <= j {
            (p_cond[(i, j)], p_cond[(j, i)])
        } else {
            (p_cond[(j, i)], p_cond[(i, j)])
        };
        (a + b) / (2.0 * n)
    })
}

#[derive(Debug, Clone)]
pub struct AffinityModel {
    /// Symmetrized joint probabilities.
    pub p: DMatrix<f64>,
    pub conditional: DMatrix<f64>,
    pub sigmas: Vec<f64>,
}

impl AffinityModel {
    pub fn fit(sq_distances: &DMatrix<f64>, perplexity: f64) -> Result<Self> {
        let sigmas = calibrate_sigmas(sq_distances, perplexity)?;
        let conditional = conditional_p(sq_distances, &sigmas);
        let p = symmetrize(&conditional);
        Ok(Self {
            p,
            conditional,
            sigmas,
        })
    }
}

/// Log kernel weights with `-inf` on the diagonal.
fn log_weights(y: &DMatrix<f64>, kernel: LowDimKernel) -> DMatrix<f64> {
    let sq = squared_distances(y);
    DMatrix::from_fn(sq.nrows(), sq.ncols(), |i, j| {
        if i == j {
            f64::NEG_INFINITY
        } else {
            match kernel {
                LowDimKernel::Gaussian => -sq[(i, j)],
                LowDimKernel::StudentT => -sq[(i, j)].ln_1p(),
            }
        }
    })
}

fn log_sum_exp<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log q`, normalized per row or globally. Stays finite where `q` underflows.
fn log_q(logw: &DMatrix<f64>, cost: CostVariant) -> DMatrix<f64> {
    match cost {
        CostVariant::Conditional => {
            let norms: Vec<f64> = (0..logw.nrows())
                .map(|i| log_sum_exp(logw.row(i).iter()))
                .collect();
            DMatrix::from_fn(logw.nrows(), logw.ncols(), |i, j| logw[(i, j)] - norms[i])
        }
        CostVariant::SymmetricJoint => logw.add_scalar(-log_sum_exp(logw.iter())),
    }
}

fn kl_from_log_q(p: &DMatrix<f64>, logq: &DMatrix<f64>) -> f64 {
    p.iter()
        .zip(logq.iter())
        .filter(|(pv, _)| **pv > 0.0)
        .map(|(&pv, &lq)| pv * (pv.ln() - lq))
        .sum()
}

/// Planar conditionals `q_{j|i}` under the Gaussian kernel.
pub fn low_dim_q(y: &DMatrix<f64>) -> DMatrix<f64> {
    low_dim_q_with(y, LowDimKernel::Gaussian, CostVariant::Conditional)
}

pub fn low_dim_q_with(y: &DMatrix<f64>, kernel: LowDimKernel, cost: CostVariant) -> DMatrix<f64> {
    log_q(&log_weights(y, kernel), cost).map(f64::exp)
}

/// `sum p ln(p / q)` over entries with p > 0.
pub fn kl_divergence(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(Error::domain(format!(
            "shape mismatch: {:?} vs {:?}",
            p.shape(),
            q.shape()
        )));
    }
    let mut total = 0.0;
    for (&pv, &qv) in p.iter().zip(q.iter()) {
        if pv > 0.0 {
            if !(qv > 0.0) {
                return Err(Error::domain("q is zero where p is positive"));
            }
            total += pv * (pv / qv).ln();
        }
    }
    Ok(total)
}

/// KL cost and its gradient with respect to the planar coordinates.
///
/// `p` is the joint matrix for [`CostVariant::SymmetricJoint`] and the
/// row-stochastic conditional matrix for [`CostVariant::Conditional`].
pub fn cost_gradient(
    p: &DMatrix<f64>,
    y: &DMatrix<f64>,
    kernel: LowDimKernel,
    cost: CostVariant,
) -> Result<(f64, DMatrix<f64>)> {
    let n = y.nrows();
    if p.shape() != (n, n) {
        return Err(Error::domain(format!(
            "P is {:?} for {n} points",
            p.shape()
        )));
    }
    let (logq, grad) = gradient_parts(p, 1.0, y, kernel, cost);
    Ok((kl_from_log_q(p, &logq), grad))
}

/// `log q` and the gradient of KL(`scale` * P || Q).
fn gradient_parts(
    p: &DMatrix<f64>,
    scale: f64,
    y: &DMatrix<f64>,
    kernel: LowDimKernel,
    cost: CostVariant,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = y.nrows();
    let logw = log_weights(y, kernel);
    let logq = log_q(&logw, cost);
    let q = logq.map(f64::exp);
    // g = -d ln(w) / d(dist^2): 1 for the Gaussian kernel, w for Student-t.
    let g = |i: usize, j: usize| match kernel {
        LowDimKernel::Gaussian => 1.0,
        LowDimKernel::StudentT => logw[(i, j)].exp(),
    };
    let rows: Vec<[f64; 2]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = [0.0; 2];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let coef = match cost {
                    CostVariant::SymmetricJoint => 4.0 * (scale * p[(i, j)] - q[(i, j)]),
                    CostVariant::Conditional => {
                        2.0 * (scale * (p[(i, j)] + p[(j, i)]) - q[(i, j)] - q[(j, i)])
                    }
                } * g(i, j);
                acc[0] += coef * (y[(i, 0)] - y[(j, 0)]);
                acc[1] += coef * (y[(i, 1)] - y[(j, 1)]);
            }
            acc
        })
        .collect();
    (logq, DMatrix::from_fn(n, 2, |i, d| rows[i][d]))
}

#[derive(Debug, Clone)]
pub struct TsneResult {
    /// n x 2
    pub coords: DMatrix<f64>,
    /// KL cost at the initial layout and after every iteration.
    pub cost_trace: Vec<f64>,
    pub perplexity: f64,
    pub sigmas: Vec<f64>,
    /// Effective step size during and after early exaggeration.
    pub step_sizes: (f64, f64),
}

/// Seeded isotropic Gaussian start with standard deviation 1e-2, filled row by row.
pub fn initial_layout(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let values: Vec<f64> = (0..2 * n).map(|_| rng.sample(normal)).collect();
    DMatrix::from_row_slice(n, 2, &values)
}

pub fn run_tsne(space: &DMatrix<f64>, cfg: &TsneConfig) -> Result<TsneResult> {
    run_tsne_from(space, cfg, initial_layout(space.nrows(), cfg.seed))
}

/// Runs gradient descent with momentum and early exaggeration from `init`.
pub fn run_tsne_from(
    space: &DMatrix<f64>,
    cfg: &TsneConfig,
    init: DMatrix<f64>,
) -> Result<TsneResult> {
    let n = space.nrows();
    if n < 3 {
        return Err(Error::domain(format!(
            "t-SNE needs at least 3 points, got {n}"
        )));
    }
    if init.shape() != (n, 2) {
        return Err(Error::domain(format!(
            "initial layout is {:?}, expected ({n}, 2)",
            init.shape()
        )));
    }
    let perplexity = cfg.validate(n)?;
    let sq = squared_distances(space);
    let affinity = AffinityModel::fit(&sq, perplexity)?;
    let target = match cfg.cost {
        CostVariant::SymmetricJoint => affinity.p,
        CostVariant::Conditional => affinity.conditional,
    };

    // Attraction pulls y_i toward y_j with weight W_ij; its Hessian is the
    // Laplacian of W, whose spectrum is bounded by twice the largest degree.
    let max_degree = (0..n)
        .map(|i| match cfg.cost {
            CostVariant::SymmetricJoint => 4.0 * target.row(i).sum(),
            CostVariant::Conditional => 2.0 * (target.row(i).sum() + target.column(i).sum()),
        })
        .fold(0.0, f64::max);
    let step = |exaggeration: f64, momentum: f64| match cfg.kernel {
        LowDimKernel::StudentT => cfg.learning_rate,
        LowDimKernel::Gaussian => cfg
            .learning_rate
            .min(0.5 * (1.0 + momentum) / (exaggeration * max_degree)),
    };
    let exaggeration_of = |iter: usize| {
        if iter < cfg.exaggeration_iters {
            cfg.exaggeration
        } else {
            1.0
        }
    };
    let momentum_of = |iter: usize| {
        if iter < cfg.momentum_switch_iter {
            cfg.momentum
        } else {
            cfg.final_momentum
        }
    };
    let step_sizes = (
        step(cfg.exaggeration, momentum_of(0)),
        step(1.0, momentum_of(cfg.exaggeration_iters)),
    );

    let mut y = init;
    let mut update = DMatrix::<f64>::zeros(n, 2);
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    for iter in 0..cfg.iterations {
        let exaggeration = exaggeration_of(iter);
        let momentum = momentum_of(iter);
        let (logq, grad) = gradient_parts(&target, exaggeration, &y, cfg.kernel, cfg.cost);
        trace.push(kl_from_log_q(&target, &logq));
        update = update * momentum - grad * step(exaggeration, momentum);
        y += &update;
        let mean = y.row_mean();
        for mut row in y.row_iter_mut() {
            row -= &mean;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: iter });
        }
    }
    trace.push(planar_cost(&target, &y, cfg));
    Ok(TsneResult {
        coords: y,
        cost_trace: trace,
        perplexity,
        sigmas: affinity.sigmas,
        step_sizes,
    })
}

fn planar_cost(p: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &TsneConfig) -> f64 {
    kl_from_log_q(p, &log_q(&log_weights(y, cfg.kernel), cfg.cost))
}

/// Writes `id,x,y`.
pub fn write_coords_csv(path: &Path, ids: &[String], coords: &DMatrix<f64>) -> Result<()> {
    let mut w = create(path)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "id,x,y")?;
        for (i, id) in ids.iter().enumerate() {
            writeln!(w, "{},{},{}", csv_field(id), coords[(i, 0)], coords[(i, 1)])?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads an `id,color` CSV into a lookup table.
pub fn read_colors(path: &Path) -> Result<HashMap<String, String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open(path)?);
    let mut out = HashMap::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Row {
            row: idx + 2,
            message: e.to_string(),
        })?;
        if rec.len() < 2 {
            return Err(Error::Row {
                row: idx + 2,
                message: "expected id,color".into(),
            });
        }
        out.insert(rec[0].to_string(), rec[1].trim().to_string());
    }
    Ok(out)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Scatter plot of the layout. Points listed in `colors` are drawn on top.
pub fn write_svg(
    path: &Path,
    ids: &[String],
    coords: &DMatrix<f64>,
    colors: &HashMap<String, String>,
) -> Result<()> {
    const SIZE: f64 = 600.0;
    const MARGIN: f64 = 20.0;
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for i in 0..coords.nrows() {
        xmin = xmin.min(coords[(i, 0)]);
        xmax = xmax.max(coords[(i, 0)]);
        ymin = ymin.min(coords[(i, 1)]);
        ymax = ymax.max(coords[(i, 1)]);
    }
    let span = (xmax - xmin).max(ymax - ymin).max(1e-12);
    let px = |v: f64, lo: f64| MARGIN + (v - lo) / span * (SIZE - 2.0 * MARGIN);

    let mut w = create(path)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(
            w,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        )?;
        writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
        let highlighted = |i: &usize| colors.contains_key(&ids[*i]);
        let (marked, plain): (Vec<usize>, Vec<usize>) = (0..ids.len()).partition(highlighted);
        for i in plain.into_iter().chain(marked) {
            let (fill, r) = match colors.get(&ids[i]) {
                Some(c) => (c.as_str(), 5.0),
                None => ("#9a9a9a", 3.0),
            };
            writeln!(
                w,
                r#"<circle cx="{:.3}" cy="{:.3}" r="{r}" fill="{}"><title>{}</title></circle>"#,
                px(coords[(i, 0)], xmin),
                SIZE - px(coords[(i, 1)], ymin),
                xml_escape(fill),
                xml_escape(&ids[i])
            )?;
        }
        writeln!(w, "</svg>")?;
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn equilateral() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0])
    }

    #[test]
    fn equidistant_calibration_is_uniform() {
        let sigmas = calibrate_sigmas(&equilateral(), 2.0).unwrap();
        let p = conditional_p(&equilateral(), &sigmas);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { 0.5 };
                assert!((p[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perplexity_must_be_below_n() {
        assert!(matches!(
            calibrate_sigmas(&equilateral(), 3.0),
            Err(Error::Calibration { .. })
        ));
        assert!(matches!(
            calibrate_sigmas(&equilateral(), 1.0),
            Err(Error::Calibration { .. })
        ));
    }

    #[test]
    fn duplicate_points_cannot_reach_low_perplexity() {
        // Row 0 has three equidistant nearest neighbours: perplexity cannot drop below 3.
        let x = DMatrix::from_row_slice(5, 1, &[0.0, 1.0, -1.0, 1.0, 5.0]);
        let sq = squared_distances(&x);
        match calibrate_sigmas(&sq, 2.5) {
            Err(Error::Calibration { row, .. }) => assert_eq!(row, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_point_conditionals() {
        let sq = DMatrix::from_row_slice(2, 2, &[0.0, 4.0, 4.0, 0.0]);
        let p = conditional_p(&sq, &[1.0, 2.0]);
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let joint = symmetrize(&p);
        assert_eq!(joint, DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]));
    }

    #[test]
    fn four_point_hand_kernel() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 4.0]);
        let sq = squared_distances(&x);
        let sigma = 1.5;
        let p = conditional_p(&sq, &[sigma; 4]);
        // Row 0 neighbours at squared distances 1, 4, 16.
        let k = |d2: f64| (-d2 / (2.0 * sigma * sigma)).exp();
        let z = k(1.0) + k(4.0) + k(16.0);
        assert!((p[(0, 1)] - k(1.0) / z).abs() < 1e-12);
        assert!((p[(0, 2)] - k(4.0) / z).abs() < 1e-12);
        assert!((p[(0, 3)] - k(16.0) / z).abs() < 1e-12);
    }

    #[test]
    fn symmetrize_hand_case() {
        let c = DMatrix::from_row_slice(3, 3, &[0.0, 0.6, 0.4, 0.5, 0.0, 0.5, 0.2, 0.8, 0.0]);
        let p = symmetrize(&c);
        assert!((p[(0, 1)] - (0.6 + 0.5) / 6.0).abs() < 1e-15);
        assert!((p[(0, 2)] - (0.4 + 0.2) / 6.0).abs() < 1e-15);
        assert!((p[(1, 2)] - (0.5 + 0.8) / 6.0).abs() < 1e-15);
        assert_eq!(p, p.transpose());
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn planar_q_cases() {
        let two = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 3.0, 1.0]);
        assert_eq!(
            low_dim_q(&two),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
        );

        let h = 3f64.sqrt() / 2.0;
        let tri = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.5, h]);
        let q = low_dim_q(&tri);
        assert!((q[(0, 1)] - 0.5).abs() < 1e-12 && (q[(2, 1)] - 0.5).abs() < 1e-12);

        // Points at 0, 1, 3 on a line: row 0 sees e^-1 and e^-9.
        let line = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 3.0, 0.0]);
        let q = low_dim_q(&line);
        let (a, b) = ((-1f64).exp(), (-9f64).exp());
        assert!((q[(0, 1)] - a / (a + b)).abs() < 1e-12);
        assert!((q[(0, 2)] - b / (a + b)).abs() < 1e-12);
    }

    #[test]
    fn kl_cases() {
        let p = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        let q = DMatrix::from_row_slice(1, 2, &[0.25, 0.75]);
        let expect = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_divergence(&p, &q).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.1438).abs() < 1e-4);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let zero = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(kl_divergence(&p, &zero).is_err());
        assert_eq!(kl_divergence(&zero, &p).unwrap(), 2f64.ln());
    }

    #[test]
    fn config_checks() {
        let x = DMatrix::from_fn(3, 2, |i, j| (i + j) as f64);
        // (3 - 1) / 3 caps the perplexity below 1.
        assert!(run_tsne(&x, &TsneConfig::default()).is_err());
        let x = DMatrix::from_fn(10, 2, |i, j| (i * (j + 1)) as f64);
        let bad = TsneConfig {
            iterations: 0,
            ..TsneConfig::default()
        };
        assert!(run_tsne(&x, &bad).is_err());
        assert!(run_tsne(&DMatrix::zeros(2, 2), &TsneConfig::default()).is_err());
    }

    fn two_clusters(per: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        DMatrix::from_fn(2 * per, 5, |i, _| {
            let offset = if i < per { 0.0 } else { 12.0 };
            offset + rng.sample(normal)
        })
    }

    fn random_joint(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                rng.random_range(0.1..1.0)
            }
        });
        symmetrize(&DMatrix::from_fn(n, n, |i, j| {
            raw[(i, j)] / raw.row(i).sum()
        }))
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kernel in [LowDimKernel::Gaussian, LowDimKernel::StudentT] {
            for cost in [CostVariant::SymmetricJoint, CostVariant::Conditional] {
                let joint = random_joint(6, &mut rng);
                let p = match cost {
                    CostVariant::SymmetricJoint => joint,
                    CostVariant::Conditional => {
                        DMatrix::from_fn(6, 6, |i, j| joint[(i, j)] / joint.row(i).sum())
                    }
                };
                let y = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
                let (_, grad) = cost_gradient(&p, &y, kernel, cost).unwrap();
                let h = 1e-6;
                for i in 0..6 {
                    for d in 0..2 {
                        let (mut yp, mut ym) = (y.clone(), y.clone());
                        yp[(i, d)] += h;
                        ym[(i, d)] -= h;
                        let fp = cost_gradient(&p, &yp, kernel, cost).unwrap().0;
                        let fm = cost_gradient(&p, &ym, kernel, cost).unwrap().0;
                        let fd = (fp - fm) / (2.0 * h);
                        assert!(
                            (fd - grad[(i, d)]).abs() <= 1e-5 * grad[(i, d)].abs().max(1e-3),
                            "{kernel} {cost}: {fd} vs {}",
                            grad[(i, d)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn clusters_separate_and_cost_drops() {
        let x = two_clusters(20, 3);
        for kernel in [LowDimKernel::Gaussian, LowDimKernel::StudentT] {
            let cfg = TsneConfig {
                kernel,
                seed: 9,
                ..TsneConfig::default()
            };
            let out = run_tsne(&x, &cfg).unwrap();
            assert!(out.cost_trace.last().unwrap() < &out.cost_trace[0]);
            let y = &out.coords;
            let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
            for i in 0..40 {
                for j in 0..i {
                    let d = (y.row(i) - y.row(j)).norm();
                    if (i < 20) == (j < 20) {
                        intra += d;
                        ni += 1;
                    } else {
                        inter += d;
                        nx += 1;
                    }
                }
            }
            assert!(inter / nx as f64 > intra / ni as f64, "{kernel}");
        }
    }

    #[test]
    fn same_seed_same_layout() {
        let x = two_clusters(10, 4);
        let cfg = TsneConfig {
            iterations: 200,
            seed: 5,
            ..TsneConfig::default()
        };
        let a = run_tsne(&x, &cfg).unwrap();
        let b = run_tsne(&x, &cfg).unwrap();
        assert_eq!(a.coords, b.coords);
        assert_eq!(a.cost_trace, b.cost_trace);
    }
}
