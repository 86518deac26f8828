//! Salience-weighted bag-of-words sentence embeddings.
//!
//! Word salience is the Mahalanobis distance of a word vector from the mean of
//! the context's word vectors. A sentence vector is the salience-weighted mean
//! of its in-vocabulary word vectors, scaled to unit length, and two sentences
//! are compared by plain dot product.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::corpus::CleanDoc;
use crate::error::{Error, Result};
use crate::par::*;
use crate::tabular::{open, read_matrix_csv, write_matrix_csv};

#[derive(Debug, Clone)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, DVector<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::domain(format!(
                "word vectors need dim >= 2, got {dim}"
            )));
        }
        Ok(Self {
            dim,
            vectors: HashMap::new(),
        })
    }

    pub fn insert(&mut self, token: impl Into<String>, v: DVector<f64>) -> Result<()> {
        let token = token.into();
        if v.len() != self.dim {
            return Err(Error::domain(format!(
                "vector for `{token}` has length {}, table dim is {}",
                v.len(),
                self.dim
            )));
        }
        if self.vectors.contains_key(&token) {
            return Err(Error::Conflict(format!("duplicate token `{token}`")));
        }
        self.vectors.insert(token, v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&DVector<f64>> {
        self.vectors.get(token)
    }
}

/// Reads `<token> <v1> ... <vdim>` lines. Blank lines are skipped.
pub fn load_word_vectors(path: &Path) -> Result<WordVectorTable> {
    let reader = BufReader::new(open(path)?);
    let mut table: Option<WordVectorTable> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Format {
                    line: line_no,
                    message: format!("`{s}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let table = match &mut table {
            Some(t) => t,
            None => {
                table.insert(
                    WordVectorTable::new(values.len()).map_err(|e| Error::Format {
                        line: line_no,
                        message: e.to_string(),
                    })?,
                )
            }
        };
        if values.len() != table.dim {
            return Err(Error::Format {
                line: line_no,
                message: format!("expected {} values, found {}", table.dim, values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format {
                line: line_no,
                message: "non-finite value".into(),
            });
        }
        table
            .insert(token, DVector::from_vec(values))
            .map_err(|e| match e {
                Error::Conflict(msg) => Error::Conflict(format!("{msg} at line {line_no}")),
                other => other,
            })?;
    }
    table.ok_or(Error::Format {
        line: 0,
        message: "no word vectors in file".into(),
    })
}

/// Mean and population covariance of a context's word vectors, plus the ridge
/// added to the diagonal before inversion.
#[derive(Debug, Clone)]
pub struct ContextModel {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    ridge: f64,
    metric: Cholesky<f64, Dyn>,
}

impl ContextModel {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, ridge: f64) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(Error::domain(format!(
                "covariance is {:?}, expected {d}x{d}",
                covariance.shape()
            )));
        }
        if ridge < 0.0 || !ridge.is_finite() {
            return Err(Error::domain(format!(
                "ridge must be finite and >= 0, got {ridge}"
            )));
        }
        if (&covariance - covariance.transpose()).abs().max() > 1e-9 {
            return Err(Error::domain("covariance is not symmetric"));
        }
        let regularized = &covariance + DMatrix::identity(d, d) * ridge;
        let metric = Cholesky::new(regularized)
            .ok_or_else(|| Error::domain("covariance + ridge*I is not positive definite"))?;
        Ok(Self {
            mean,
            covariance,
            ridge,
            metric,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Population covariance without the ridge term.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn regularized_covariance(&self) -> DMatrix<f64> {
        let d = self.mean.len();
        &self.covariance + DMatrix::identity(d, d) * self.ridge
    }

    /// `sqrt((v - mean)^T (cov + ridge I)^-1 (v - mean))`
    pub fn mahalanobis(&self, v: &DVector<f64>) -> f64 {
        let diff = v - &self.mean;
        let solved = self.metric.solve(&diff);
        diff.dot(&solved).max(0.0).sqrt()
    }
}

/// Smallest ridge used when the context has no spread at all.
pub const MIN_RIDGE: f64 = 1e-9;

fn context_vectors<'a>(docs: &'a [CleanDoc], table: &'a WordVectorTable) -> Vec<&'a DVector<f64>> {
    docs.iter()
        .flat_map(|d| d.tokens.iter())
        .filter_map(|t| table.get(t))
        .collect()
}

fn mean_and_covariance(vectors: &[&DVector<f64>], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = vectors.len() as f64;
    let mut mean = DVector::zeros(dim);
    for v in vectors {
        mean += *v;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for v in vectors {
        let c = *v - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= n;
    // ger accumulates both triangles separately; average them so the result is exactly symmetric.
    let cov = (&cov + cov.transpose()) * 0.5;
    (mean, cov)
}

/// Fits the context with the default ridge `1e-3 * trace(cov) / dim` (floored at [`MIN_RIDGE`]).
pub fn fit_context(docs: &[CleanDoc], table: &WordVectorTable) -> Result<ContextModel> {
    let vectors = context_vectors(docs, table);
    if vectors.is_empty() {
        return Err(Error::domain("context has no in-vocabulary tokens"));
    }
    let (mean, cov) = mean_and_covariance(&vectors, table.dim);
    let ridge = (1e-3 * cov.trace() / table.dim as f64).max(MIN_RIDGE);
    ContextModel::new(mean, cov, ridge)
}

pub fn fit_context_with_ridge(
    docs: &[CleanDoc],
    table: &WordVectorTable,
    ridge: f64,
) -> Result<ContextModel> {
    let vectors = context_vectors(docs, table);
    if vectors.is_empty() {
        return Err(Error::domain("context has no in-vocabulary tokens"));
    }
    let (mean, cov) = mean_and_covariance(&vectors, table.dim);
    ContextModel::new(mean, cov, ridge)
}

pub fn word_salience(token: &str, ctx: &ContextModel, table: &WordVectorTable) -> Result<f64> {
    let v = table
        .get(token)
        .ok_or_else(|| Error::Lookup(token.to_string()))?;
    if v.len() != ctx.mean.len() {
        return Err(Error::domain("word vector and context dimensions differ"));
    }
    Ok(ctx.mahalanobis(v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub vector: DVector<f64>,
    /// Set when every salience weight was zero and the plain mean was used.
    pub unweighted: bool,
}

/// Weighted mean of `vectors`, scaled to unit norm.
pub fn weighted_unit_mean(vectors: &[&DVector<f64>], weights: &[f64]) -> Result<DVector<f64>> {
    let dim = vectors
        .first()
        .map(|v| v.len())
        .ok_or_else(|| Error::domain("no vectors to average"))?;
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::domain("weights sum to zero"));
    }
    let mut acc = DVector::zeros(dim);
    for (v, &w) in vectors.iter().zip(weights) {
        acc.axpy(w / total, *v, 1.0);
    }
    let norm = acc.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::domain("weighted mean is the zero vector"));
    }
    Ok(acc / norm)
}

/// Out-of-vocabulary tokens are skipped.
pub fn embed_sentence(
    tokens: &[String],
    ctx: &ContextModel,
    table: &WordVectorTable,
) -> Result<SentenceEmbedding> {
    let vectors: Vec<&DVector<f64>> = tokens.iter().filter_map(|t| table.get(t)).collect();
    if vectors.is_empty() {
        return Err(Error::domain("sentence has no in-vocabulary tokens"));
    }
    let weights: Vec<f64> = vectors.iter().map(|v| ctx.mahalanobis(v)).collect();
    if weights.iter().all(|&w| w == 0.0) {
        let ones = vec![1.0; vectors.len()];
        return Ok(SentenceEmbedding {
            vector: weighted_unit_mean(&vectors, &ones)?,
            unweighted: true,
        });
    }
    Ok(SentenceEmbedding {
        vector: weighted_unit_mean(&vectors, &weights)?,
        unweighted: false,
    })
}

/// Text-only similarity: the dot product of two sentence vectors.
pub fn sim_cosal(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::domain(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.dot(b))
}

/// Ids plus an n x d matrix whose row i embeds `ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    ids: Vec<String>,
    matrix: DMatrix<f64>,
}

impl EmbeddingSpace {
    pub fn new(ids: Vec<String>, matrix: DMatrix<f64>) -> Result<Self> {
        if ids.len() != matrix.nrows() {
            return Err(Error::domain(format!(
                "{} ids for {} rows",
                ids.len(),
                matrix.nrows()
            )));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Conflict(format!("duplicate id `{id}`")));
            }
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("embedding matrix has non-finite entries"));
        }
        Ok(Self { ids, matrix })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.matrix.row(i).transpose()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Same ids with each column shifted to zero mean.
    pub fn centered(&self) -> Self {
        let mean = self.matrix.row_mean();
        let mut m = self.matrix.clone();
        for mut row in m.row_iter_mut() {
            row -= &mean;
        }
        Self {
            ids: self.ids.clone(),
            matrix: m,
        }
    }

    pub fn into_parts(self) -> (Vec<String>, DMatrix<f64>) {
        (self.ids, self.matrix)
    }
}

/// Embeds every document against one shared context. Documents without any
/// in-vocabulary token are reported by id.
pub fn embed_corpus(
    docs: &[CleanDoc],
    ctx: &ContextModel,
    table: &WordVectorTable,
) -> Result<EmbeddingSpace> {
    let rows: Vec<Result<SentenceEmbedding>> = docs
        .par_iter()
        .map(|d| {
            embed_sentence(&d.tokens, ctx, table)
                .map_err(|e| Error::domain(format!("document `{}`: {e}", d.id)))
        })
        .collect();
    let dim = table.dim();
    let mut m = DMatrix::zeros(docs.len(), dim);
    for (i, row) in rows.into_iter().enumerate() {
        let emb = row?;
        m.set_row(i, &emb.vector.transpose());
    }
    EmbeddingSpace::new(docs.iter().map(|d| d.id.clone()).collect(), m)
}

/// Reads `id,e1,...,ed`.
pub fn import_embeddings(path: &Path) -> Result<EmbeddingSpace> {
    let (ids, _, m) = read_matrix_csv(path)?;
    EmbeddingSpace::new(ids, m)
}

pub fn export_embeddings(space: &EmbeddingSpace, path: &Path) -> Result<()> {
    let names: Vec<String> = (1..=space.dim()).map(|j| format!("e{j}")).collect();
    write_matrix_csv(path, &space.ids, &names, &space.matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn table(entries: &[(&str, &[f64])]) -> WordVectorTable {
        let mut t = WordVectorTable::new(entries[0].1.len()).unwrap();
        for (tok, v) in entries {
            t.insert(*tok, DVector::from_row_slice(v)).unwrap();
        }
        t
    }

    fn doc(tokens: &[&str]) -> CleanDoc {
        CleanDoc {
            id: "d".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn word_vector_file() {
        let f = tmp("a 1 2 3\nb 4 5 6\n");
        let t = load_word_vectors(f.path()).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);

        let f = tmp("a 1 2 3\nb 4 5\n");
        assert!(matches!(
            load_word_vectors(f.path()),
            Err(Error::Format { line: 2, .. })
        ));

        let f = tmp("");
        assert!(matches!(
            load_word_vectors(f.path()),
            Err(Error::Format { .. })
        ));

        let f = tmp("a 1 2\na 3 4\n");
        assert!(matches!(
            load_word_vectors(f.path()),
            Err(Error::Conflict(_))
        ));
    }

    #[test]
    fn context_without_spread() {
        let t = table(&[("x", &[1.0, 2.0]), ("y", &[1.0, 2.0])]);
        let ctx = fit_context_with_ridge(&[doc(&["x", "y", "x"])], &t, 0.5).unwrap();
        assert_eq!(ctx.mean().as_slice(), &[1.0, 2.0]);
        assert_eq!(ctx.regularized_covariance(), DMatrix::identity(2, 2) * 0.5);

        // Default ridge is floored so zero spread still yields a valid metric.
        let ctx = fit_context(&[doc(&["x"])], &t).unwrap();
        assert_eq!(ctx.ridge(), MIN_RIDGE);
    }

    #[test]
    fn context_symmetric_pair_has_zero_mean() {
        let t = table(&[("p", &[1.0, -2.0]), ("n", &[-1.0, 2.0])]);
        let ctx = fit_context(&[doc(&["p", "n"])], &t).unwrap();
        assert_eq!(ctx.mean().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn context_two_pass_oracle() {
        let t = table(&[
            ("a", &[1.0, 0.0, 2.0]),
            ("b", &[0.5, -1.0, 0.0]),
            ("c", &[3.0, 1.0, -1.0]),
        ]);
        // Five occurrences, one repeated token each for a and c.
        let toks = ["a", "b", "c", "a", "c", "unknown"];
        let ctx = fit_context_with_ridge(&[doc(&toks)], &t, 0.0).unwrap();
        let occ: Vec<[f64; 3]> = vec![
            [1.0, 0.0, 2.0],
            [0.5, -1.0, 0.0],
            [3.0, 1.0, -1.0],
            [1.0, 0.0, 2.0],
            [3.0, 1.0, -1.0],
        ];
        let mut mean = [0.0; 3];
        for v in &occ {
            for k in 0..3 {
                mean[k] += v[k] / 5.0;
            }
        }
        for k in 0..3 {
            assert!((ctx.mean()[k] - mean[k]).abs() < 1e-12);
            for l in 0..3 {
                let c: f64 = occ
                    .iter()
                    .map(|v| (v[k] - mean[k]) * (v[l] - mean[l]))
                    .sum::<f64>()
                    / 5.0;
                assert!((ctx.covariance()[(k, l)] - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn salience_cases() {
        let t = table(&[("m", &[1.0, 1.0]), ("v", &[3.0, 2.0]), ("w", &[4.0, 5.0])]);
        let mean = DVector::from_row_slice(&[1.0, 1.0]);

        let ident = ContextModel::new(mean.clone(), DMatrix::identity(2, 2), 0.0).unwrap();
        assert_eq!(word_salience("m", &ident, &t).unwrap(), 0.0);
        let euclid = (3.0f64 * 3.0 + 4.0 * 4.0).sqrt();
        assert!((word_salience("w", &ident, &t).unwrap() - euclid).abs() < 1e-12);

        let diag = ContextModel::new(
            mean,
            DMatrix::from_diagonal(&DVector::from_row_slice(&[4.0, 1.0])),
            0.0,
        )
        .unwrap();
        // v - mean = (2, 1): 4/4 + 1/1 = 2.
        assert!((word_salience("v", &diag, &t).unwrap() - 2f64.sqrt()).abs() < 1e-12);

        assert!(matches!(
            word_salience("zzz", &diag, &t),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn sentence_embedding_cases() {
        let t = table(&[("a", &[3.0, 4.0]), ("b", &[0.0, 2.0]), ("c", &[-3.0, -4.0])]);
        let ctx = ContextModel::new(
            DVector::from_row_slice(&[1.0, 0.0]),
            DMatrix::identity(2, 2),
            0.0,
        )
        .unwrap();

        let single = embed_sentence(&["a".to_string()], &ctx, &t).unwrap();
        assert!((single.vector[0] - 0.6).abs() < 1e-12 && (single.vector[1] - 0.8).abs() < 1e-12);

        let once = embed_sentence(&["a".into(), "b".into()], &ctx, &t).unwrap();
        let twice =
            embed_sentence(&["a".into(), "b".into(), "a".into(), "b".into()], &ctx, &t).unwrap();
        assert!((once.vector - twice.vector).norm() < 1e-12);

        // Hand weights: |a-mean| = sqrt(4+16) = sqrt(20), |b-mean| = sqrt(1+4) = sqrt(5).
        let (wa, wb) = (20f64.sqrt(), 5f64.sqrt());
        let mix = [(wa * 3.0) / (wa + wb), (wa * 4.0 + wb * 2.0) / (wa + wb)];
        let norm = (mix[0] * mix[0] + mix[1] * mix[1]).sqrt();
        let got = embed_sentence(&["a".into(), "b".into(), "oov".into()], &ctx, &t).unwrap();
        assert!(!got.unweighted);
        assert!((got.vector[0] - mix[0] / norm).abs() < 1e-12);
        assert!((got.vector[1] - mix[1] / norm).abs() < 1e-12);

        assert!(embed_sentence(&["oov".into()], &ctx, &t).is_err());
    }

    #[test]
    fn zero_salience_falls_back_to_plain_mean() {
        let t = table(&[("a", &[3.0, 4.0])]);
        let ctx = ContextModel::new(
            DVector::from_row_slice(&[3.0, 4.0]),
            DMatrix::identity(2, 2),
            0.0,
        )
        .unwrap();
        let e = embed_sentence(&["a".into()], &ctx, &t).unwrap();
        assert!(e.unweighted);
        assert!((e.vector.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosal_dot_product() {
        let a = DVector::from_row_slice(&[0.6, 0.8]);
        let b = DVector::from_row_slice(&[0.8, 0.6]);
        assert!((sim_cosal(&a, &b).unwrap() - 0.96).abs() < 1e-12);
        assert_eq!(sim_cosal(&a, &a).unwrap(), 1.0);
        let e1 = DVector::from_row_slice(&[1.0, 0.0]);
        let e2 = DVector::from_row_slice(&[0.0, 1.0]);
        assert_eq!(sim_cosal(&e1, &e2).unwrap(), 0.0);
        assert!(sim_cosal(&a, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn embedding_csv() {
        let m = DMatrix::from_fn(3, 50, |i, j| (i as f64 + 1.0) * 0.1 - j as f64 / 7.0);
        let space = EmbeddingSpace::new(vec!["a".into(), "b,c".into(), "d".into()], m).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        export_embeddings(&space, f.path()).unwrap();
        let back = import_embeddings(f.path()).unwrap();
        assert_eq!(back, space);
        assert_eq!((back.len(), back.dim()), (3, 50));

        let dup = tmp("id,e1,e2\na,1,2\na,3,4\n");
        assert!(matches!(
            import_embeddings(dup.path()),
            Err(Error::Conflict(_))
        ));
        let ragged = tmp("id,e1,e2\na,1,2\nb,3\n");
        assert!(matches!(
            import_embeddings(ragged.path()),
            Err(Error::Format { .. })
        ));
    }
}
