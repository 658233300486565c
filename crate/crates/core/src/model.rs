//! Designs, supports, sparse coefficient vectors and data ingestion.
//!
//! Indices are zero-based throughout. The noise level is fixed at σ = 1 and
//! log-likelihoods omit the constant −(n/2)·log 2π.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

/// The n×p design with its Gram matrix and column norms cached.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    gram: DMatrix<f64>,
    col_norms: DVector<f64>,
    x_norm: f64,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::DegenerateDesign("empty matrix".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateDesign("non-finite entry".into()));
        }
        let gram = x.tr_mul(&x);
        let col_norms = DVector::from_iterator(x.ncols(), (0..x.ncols()).map(|j| gram[(j, j)].sqrt()));
        let x_norm = col_norms.max();
        if x_norm <= 0.0 {
            return Err(Error::DegenerateDesign("all entries are zero".into()));
        }
        Ok(DesignMatrix { x, gram, col_norms, x_norm })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is valid")
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn col_norms(&self) -> &DVector<f64> {
        &self.col_norms
    }

    /// ‖X‖ = max_i ‖X_{·,i}‖₂.
    pub fn x_norm(&self) -> f64 {
        self.x_norm
    }

    /// Whether ‖Xᵀε‖∞ exceeds 2√(log p)·‖X‖, an event of probability at
    /// most 2/p under standard normal noise.
    pub fn noise_exceeds(&self, eps: &DVector<f64>) -> bool {
        self.xty(eps).amax() > 2.0 * (self.p() as f64).ln().sqrt() * self.x_norm
    }

    pub fn xty(&self, y: &DVector<f64>) -> DVector<f64> {
        self.x.tr_mul(y)
    }

    pub fn columns(&self, idx: &[usize]) -> DMatrix<f64> {
        self.x.select_columns(idx)
    }

    pub fn gram_sub(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.gram[(idx[a], idx[b])])
    }

    /// `Some(c)` when X = c·I (square, diagonal, constant diagonal).
    pub fn identity_scale(&self) -> Option<f64> {
        if self.n() != self.p() {
            return None;
        }
        let c = self.x[(0, 0)];
        if c == 0.0 {
            return None;
        }
        let tol = 1e-14 * c.abs();
        for j in 0..self.p() {
            for i in 0..self.n() {
                let want = if i == j { c } else { 0.0 };
                if (self.x[(i, j)] - want).abs() > tol {
                    return None;
                }
            }
        }
        Some(c)
    }

    pub fn scaled(&self, t: f64) -> Result<Self> {
        Self::new(&self.x * t)
    }

    /// Design whose column `k` is column `perm[k]` of this one.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        Self::new(self.x.select_columns(perm))
    }
}

/// A support set, strictly increasing indices in `0..p`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Model {
    indices: Vec<usize>,
}

impl Model {
    pub fn empty() -> Self {
        Model { indices: Vec::new() }
    }

    pub fn new(indices: Vec<usize>, p: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain(format!("indices not strictly increasing: {indices:?}")));
        }
        if let Some(&last) = indices.last() {
            if last >= p {
                return Err(Error::Domain(format!("index {last} out of range for p = {p}")));
            }
        }
        Ok(Model { indices })
    }

    /// Sorts and deduplicates; the caller vouches for the range.
    pub fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Model { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn s(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn is_superset_of(&self, other: &Model) -> bool {
        other.indices.iter().all(|&j| self.contains(j))
    }

    pub fn with(&self, j: usize) -> Model {
        let mut idx = self.indices.clone();
        if let Err(pos) = idx.binary_search(&j) {
            idx.insert(pos, j);
        }
        Model { indices: idx }
    }

    pub fn without(&self, j: usize) -> Model {
        Model {
            indices: self.indices.iter().copied().filter(|&i| i != j).collect(),
        }
    }

    /// Relabels through a column permutation: index `i` becomes `inv[i]`.
    pub fn relabel(&self, inv: &[usize]) -> Model {
        Model::from_unsorted(self.indices.iter().map(|&i| inv[i]).collect())
    }
}

impl Ord for Model {
    /// Smaller supports first, then lexicographic.
    fn cmp(&self, other: &Self) -> Ordering {
        self.s().cmp(&other.s()).then_with(|| self.indices.cmp(&other.indices))
    }
}

impl PartialOrd for Model {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.indices.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// β with its support stored explicitly. Stored values are never zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCoef {
    model: Model,
    values: Vec<f64>,
    p: usize,
}

impl SparseCoef {
    pub fn zero(p: usize) -> Self {
        SparseCoef { model: Model::empty(), values: Vec::new(), p }
    }

    pub fn new(model: Model, values: Vec<f64>, p: usize) -> Result<Self> {
        if model.s() != values.len() {
            return Err(Error::Dimension(format!("{} indices but {} values", model.s(), values.len())));
        }
        if model.indices().last().is_some_and(|&j| j >= p) {
            return Err(Error::Domain(format!("support {model} exceeds p = {p}")));
        }
        if values.iter().any(|&v| v == 0.0) {
            return Err(Error::Domain("zero value stored on the support".into()));
        }
        Ok(SparseCoef { model, values, p })
    }

    /// Keeps the nonzero entries of a dense vector.
    pub fn from_dense(beta: &[f64]) -> Self {
        let mut idx = Vec::new();
        let mut vals = Vec::new();
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                idx.push(j);
                vals.push(b);
            }
        }
        SparseCoef { model: Model { indices: idx }, values: vals, p: beta.len() }
    }

    /// Builds from values aligned with `model`, dropping exact zeros.
    pub fn from_model_values(model: &Model, values: &[f64], p: usize) -> Self {
        let mut idx = Vec::new();
        let mut vals = Vec::new();
        for (&j, &b) in model.indices().iter().zip(values) {
            if b != 0.0 {
                idx.push(j);
                vals.push(b);
            }
        }
        SparseCoef { model: Model { indices: idx }, values: vals, p }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn s(&self) -> usize {
        self.model.s()
    }

    pub fn get(&self, j: usize) -> f64 {
        match self.model.indices().binary_search(&j) {
            Ok(k) => self.values[k],
            Err(_) => 0.0,
        }
    }

    pub fn dense(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.p);
        for (&j, &v) in self.model.indices().iter().zip(&self.values) {
            out[j] = v;
        }
        out
    }

    pub fn norm_l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_linf(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: DVector<f64>,
}

impl Observation {
    pub fn new(y: DVector<f64>) -> Self {
        Observation { y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Tsv,
}

impl TableFormat {
    fn delimiter(self) -> u8 {
        match self {
            TableFormat::Csv => b',',
            TableFormat::Tsv => b'\t',
        }
    }
}

fn read_table(path: &Path, format: TableFormat) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse { line: 0, msg: format!("{other:?}") },
        })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (k, rec) in reader.records().enumerate() {
        let line = k + 1;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        if k == 0 && rec.get(0).is_some_and(|c| c.parse::<f64>().is_err()) {
            // Header row.
            width = Some(rec.len());
            continue;
        }
        let row: Vec<f64> = rec
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| Error::Parse { line, msg: format!("non-numeric cell {c:?}") })
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse { line, msg: format!("expected {w} fields, found {}", row.len()) })
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 0, msg: "no data rows".into() });
    }
    Ok(rows)
}

/// Reads a numeric table with rows as observations and columns as
/// covariates. A first row whose first cell is not a number is a header.
pub fn load_design(path: impl AsRef<Path>, format: TableFormat) -> Result<DesignMatrix> {
    let rows = read_table(path.as_ref(), format)?;
    let n = rows.len();
    let p = rows[0].len();
    DesignMatrix::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

/// Reads a response vector: a single column, one value per row.
pub fn load_observation(path: impl AsRef<Path>, format: TableFormat) -> Result<Observation> {
    let rows = read_table(path.as_ref(), format)?;
    if rows[0].len() != 1 {
        return Err(Error::Parse { line: 1, msg: format!("response must have one column, found {}", rows[0].len()) });
    }
    Ok(Observation::new(DVector::from_iterator(rows.len(), rows.iter().map(|r| r[0]))))
}

fn check_dims(x: &DesignMatrix, y: &Observation, beta: &SparseCoef) -> Result<()> {
    if y.len() != x.n() {
        return Err(Error::Dimension(format!("y has length {}, X has {} rows", y.len(), x.n())));
    }
    if beta.p() != x.p() {
        return Err(Error::Dimension(format!("β has dimension {}, X has {} columns", beta.p(), x.p())));
    }
    Ok(())
}

/// y − Xβ, touching only the active columns.
pub fn residual(x: &DesignMatrix, y: &Observation, beta: &SparseCoef) -> Result<DVector<f64>> {
    check_dims(x, y, beta)?;
    let mut r = y.y.clone();
    for (&j, &b) in beta.model().indices().iter().zip(beta.values()) {
        r.axpy(-b, &x.matrix().column(j), 1.0);
    }
    Ok(r)
}

/// −½‖y − Xβ‖².
pub fn log_likelihood(x: &DesignMatrix, y: &Observation, beta: &SparseCoef) -> Result<f64> {
    Ok(-0.5 * residual(x, y, beta)?.norm_squared())
}

/// Least squares restricted to a support: Γ_S = X_SᵀX_S, its Cholesky factor,
/// β̂_(S) and ‖P_S y‖² = β̂ᵀX_Sᵀy.
#[derive(Debug, Clone)]
pub struct RestrictedFit {
    pub model: Model,
    pub beta_hat: DVector<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub log_det: f64,
    pub proj_sq: f64,
}

/// Relative pivot size below which Γ_S is treated as singular.
pub const RANK_TOL: f64 = 1e-10;

impl RestrictedFit {
    /// `xty` is the full vector Xᵀy.
    pub fn new(x: &DesignMatrix, xty: &DVector<f64>, model: &Model) -> Result<Self> {
        let idx = model.indices();
        let g = x.gram_sub(idx);
        let chol = Cholesky::new(g.clone()).ok_or_else(|| Error::Rank(idx.to_vec()))?;
        let l = chol.l_dirty();
        for k in 0..idx.len() {
            if l[(k, k)] * l[(k, k)] < RANK_TOL * g[(k, k)] {
                return Err(Error::Rank(idx.to_vec()));
            }
        }
        let b = DVector::from_iterator(idx.len(), idx.iter().map(|&j| xty[j]));
        let beta_hat = chol.solve(&b);
        let log_det = 2.0 * (0..idx.len()).map(|k| l[(k, k)].ln()).sum::<f64>();
        let proj_sq = beta_hat.dot(&b);
        Ok(RestrictedFit { model: model.clone(), beta_hat, chol, log_det, proj_sq })
    }

    pub fn s(&self) -> usize {
        self.model.s()
    }

    /// Γ_S⁻¹ as a dense matrix.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_identity_csv() {
        let f = write_tmp("1,0\n0,1\n");
        let x = load_design(f.path(), TableFormat::Csv).unwrap();
        assert_eq!((x.n(), x.p()), (2, 2));
        assert_eq!(x.x_norm(), 1.0);
        assert_eq!(x.identity_scale(), Some(1.0));
    }

    #[test]
    fn pythagorean_norms_with_header() {
        let f = write_tmp("a\tb\n3\t0\n4\t1\n");
        let x = load_design(f.path(), TableFormat::Tsv).unwrap();
        assert_eq!(x.col_norms().as_slice(), &[5.0, 1.0]);
        assert_eq!(x.x_norm(), 5.0);
    }

    #[test]
    fn parse_errors() {
        let f = write_tmp("1,2\n3\n");
        assert!(matches!(load_design(f.path(), TableFormat::Csv), Err(Error::Parse { line: 2, .. })));
        let f = write_tmp("1,2\n3,x\n");
        assert!(matches!(load_design(f.path(), TableFormat::Csv), Err(Error::Parse { line: 2, .. })));
        let f = write_tmp("0,0\n0,0\n");
        assert!(matches!(load_design(f.path(), TableFormat::Csv), Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn random_file_norms_match_naive() {
        let mut rng = crate::rng::RngHandle::new(9).rng();
        let vals: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..30).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect())
            .collect();
        let text: String = vals
            .iter()
            .map(|r| r.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        let f = write_tmp(&text);
        let x = load_design(f.path(), TableFormat::Csv).unwrap();
        let mut best: f64 = 0.0;
        for j in 0..30 {
            let mut s = 0.0;
            for row in &vals {
                s += row[j] * row[j];
            }
            let norm = s.sqrt();
            assert!((x.col_norms()[j] - norm).abs() <= 1e-12 * norm);
            best = best.max(norm);
        }
        assert!((x.x_norm() - best).abs() <= 1e-12 * best);
    }

    #[test]
    fn residual_examples() {
        let x = DesignMatrix::identity(3);
        let y = Observation::new(DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let r = residual(&x, &y, &SparseCoef::zero(3)).unwrap();
        assert_eq!(r, y.y);
        let b = SparseCoef::new(Model::new(vec![1], 3).unwrap(), vec![2.0], 3).unwrap();
        assert_eq!(residual(&x, &y, &b).unwrap().as_slice(), &[1.0, 0.0, 3.0]);
        let x1 = DesignMatrix::identity(1);
        let y1 = Observation::new(DVector::from_vec(vec![2.0]));
        assert_eq!(log_likelihood(&x1, &y1, &SparseCoef::zero(1)).unwrap(), -2.0);
        assert!(matches!(residual(&x1, &y, &SparseCoef::zero(1)), Err(Error::Dimension(_))));
    }

    #[test]
    fn sparse_coef_rejects_stored_zero() {
        let m = Model::new(vec![0, 2], 3).unwrap();
        assert!(SparseCoef::new(m, vec![1.0, 0.0], 3).is_err());
        assert!(Model::new(vec![2, 1], 3).is_err());
        assert!(Model::new(vec![3], 3).is_err());
    }

    #[test]
    fn model_order_prefers_smaller_then_lexicographic() {
        let a = Model::from_unsorted(vec![5]);
        let b = Model::from_unsorted(vec![0, 1]);
        let c = Model::from_unsorted(vec![0, 2]);
        assert!(a < b && b < c);
        assert_eq!(format!("{b}"), "{0,1}");
    }

    #[test]
    fn restricted_fit_normal_equations() {
        let mut rng = crate::rng::RngHandle::new(2).rng();
        let xm = DMatrix::from_fn(15, 6, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let x = DesignMatrix::new(xm.clone()).unwrap();
        let y = DVector::from_fn(15, |i, _| (i as f64).sin());
        let xty = x.xty(&y);
        let m = Model::new(vec![1, 3, 4], 6).unwrap();
        let fit = RestrictedFit::new(&x, &xty, &m).unwrap();
        let xs = x.columns(m.indices());
        let resid = xs.tr_mul(&(&y - &xs * &fit.beta_hat));
        assert!(resid.amax() < 1e-10);
        assert!((fit.proj_sq - (&xs * &fit.beta_hat).norm_squared()).abs() < 1e-10);
        assert!((fit.log_det - x.gram_sub(m.indices()).determinant().ln()).abs() < 1e-10);
    }

    #[test]
    fn restricted_fit_flags_collinear() {
        let mut xm = DMatrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64).cos());
        let c0 = xm.column(0).clone_owned();
        xm.set_column(2, &(c0 * 2.0));
        let x = DesignMatrix::new(xm).unwrap();
        let xty = x.xty(&DVector::from_element(5, 1.0));
        let m = Model::new(vec![0, 2], 3).unwrap();
        assert!(matches!(RestrictedFit::new(&x, &xty, &m), Err(Error::Rank(_))));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        (
            proptest::collection::vec(-2.0f64..2.0, 6 * 4),
            proptest::collection::vec(-3.0f64..3.0, 6),
            proptest::collection::vec(-2.0f64..2.0, 4),
            proptest::collection::vec(-2.0f64..2.0, 4),
        )
    }

    proptest! {
        #[test]
        fn loglik_nonpositive_and_dense_agrees((xv, yv, b, _) in instance()) {
            let xm = DMatrix::from_vec(6, 4, xv);
            prop_assume!(xm.amax() > 0.0);
            let x = DesignMatrix::new(xm.clone()).unwrap();
            let y = Observation::new(DVector::from_vec(yv));
            let beta = SparseCoef::from_dense(&b);
            let ll = log_likelihood(&x, &y, &beta).unwrap();
            prop_assert!(ll <= 0.0);
            let dense = -0.5 * (&y.y - &xm * DVector::from_vec(b)).norm_squared();
            prop_assert!((ll - dense).abs() <= 1e-12 * (1.0 + dense.abs()));
        }

        #[test]
        fn residual_additive_over_disjoint_supports((xv, yv, b1, b2) in instance()) {
            let xm = DMatrix::from_vec(6, 4, xv);
            prop_assume!(xm.amax() > 0.0);
            let x = DesignMatrix::new(xm).unwrap();
            let y = Observation::new(DVector::from_vec(yv));
            // b1 on even indices, b2 on odd indices.
            let e: Vec<f64> = (0..4).map(|j| if j % 2 == 0 { b1[j] } else { 0.0 }).collect();
            let o: Vec<f64> = (0..4).map(|j| if j % 2 == 1 { b2[j] } else { 0.0 }).collect();
            let both: Vec<f64> = (0..4).map(|j| e[j] + o[j]).collect();
            let r = residual(&x, &y, &SparseCoef::from_dense(&both)).unwrap();
            let re = residual(&x, &y, &SparseCoef::from_dense(&e)).unwrap();
            let xo = residual(&x, &Observation::new(DVector::zeros(6)), &SparseCoef::from_dense(&o)).unwrap();
            prop_assert!((&r - (re + xo)).amax() < 1e-12 * (1.0 + r.amax()));
        }

        #[test]
        fn permutation_equivariance((xv, yv, b, _) in instance(), seed in 0u64..1000) {
            let xm = DMatrix::from_vec(6, 4, xv);
            prop_assume!(xm.amax() > 0.0);
            let x = DesignMatrix::new(xm).unwrap();
            let y = Observation::new(DVector::from_vec(yv));
            let mut perm: Vec<usize> = (0..4).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut crate::rng::RngHandle::new(seed).rng());
            let xp = x.permute_columns(&perm).unwrap();
            // New column k is old column perm[k].
            let bp: Vec<f64> = perm.iter().map(|&j| b[j]).collect();
            let a = log_likelihood(&x, &y, &SparseCoef::from_dense(&b)).unwrap();
            let c = log_likelihood(&xp, &y, &SparseCoef::from_dense(&bp)).unwrap();
            prop_assert!((a - c).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
