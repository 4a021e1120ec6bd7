//! Linear-model building blocks: datasets, model indices, least-squares fits,
//! F statistics, non-centrality parameters and shrinkage moments.
//!
//! Covariate positions are 0-based throughout the library.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{BvsError, Result};

/// Pivot ratio `L_ii^2 / G_ii` below which a Gram matrix is treated as rank deficient.
const RANK_TOL: f64 = 1e-12;
/// Pivot ratio below which a diagonal jitter is added before factorizing.
const JITTER_TRIGGER: f64 = 1e-8;

/// A regression model: a strictly increasing list of covariate positions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ModelIndex(Vec<usize>);

impl ModelIndex {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(BvsError::InvalidInput(format!(
                "duplicate covariate in model {indices:?}"
            )));
        }
        Ok(Self(indices))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Builds the model whose bit `j` of `mask` marks covariate `j`.
    pub fn from_mask(mask: u64, p: usize) -> Self {
        Self((0..p.min(64)).filter(|j| mask >> j & 1 == 1).collect())
    }

    pub fn from_flags(flags: &[bool]) -> Self {
        Self(
            flags
                .iter()
                .enumerate()
                .filter_map(|(j, &f)| f.then_some(j))
                .collect(),
        )
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn is_subset_of(&self, other: &ModelIndex) -> bool {
        self.0.iter().all(|j| other.contains(*j))
    }

    pub fn with(&self, j: usize) -> Self {
        let mut v = self.0.clone();
        if let Err(pos) = v.binary_search(&j) {
            v.insert(pos, j);
        }
        Self(v)
    }

    pub fn without(&self, j: usize) -> Self {
        Self(self.0.iter().cloned().filter(|&k| k != j).collect())
    }

    /// Positions in `self` that are absent from `other`.
    pub fn difference(&self, other: &ModelIndex) -> Vec<usize> {
        self.0.iter().cloned().filter(|j| !other.contains(*j)).collect()
    }

    /// `'1'`/`'0'` string of length `p`, character `j` for covariate `j`.
    pub fn bitstring(&self, p: usize) -> String {
        (0..p)
            .map(|j| if self.contains(j) { '1' } else { '0' })
            .collect()
    }

    pub fn parse_bitstring(s: &str) -> Result<Self> {
        let mut v = Vec::new();
        for (j, c) in s.chars().enumerate() {
            match c {
                '1' => v.push(j),
                '0' => {}
                _ => {
                    return Err(BvsError::InvalidInput(format!(
                        "bad model bitstring {s:?}"
                    )))
                }
            }
        }
        Ok(Self(v))
    }
}

impl fmt::Display for ModelIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, j) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Clone, Debug)]
pub enum NoiseCovariance {
    Identity,
    /// Positive-definite `n x n` matrix normalized to trace `n`.
    Matrix(DMatrix<f64>),
}

/// Mean of the data-generating process lying outside the column space of `X`.
#[derive(Clone, Debug)]
pub struct MisspecifiedMean {
    pub w: DMatrix<f64>,
    pub beta: DVector<f64>,
}

/// Simulation ground truth attached to a dataset.
#[derive(Clone, Debug)]
pub struct Truth {
    pub model: ModelIndex,
    /// Coefficients for the columns of `model`, in order.
    pub theta_star: DVector<f64>,
    pub phi_star: f64,
    pub noise: NoiseCovariance,
    pub misspecified: Option<MisspecifiedMean>,
}

impl Truth {
    pub fn new(model: ModelIndex, theta_star: DVector<f64>, phi_star: f64) -> Self {
        Self {
            model,
            theta_star,
            phi_star,
            noise: NoiseCovariance::Identity,
            misspecified: None,
        }
    }

    /// Full-length coefficient vector with zeros outside the true model.
    pub fn theta_full(&self, p: usize) -> DVector<f64> {
        let mut t = DVector::zeros(p);
        for (k, &j) in self.model.indices().iter().enumerate() {
            t[j] = self.theta_star[k];
        }
        t
    }

    /// E(y) under the data-generating process.
    pub fn mean(&self, x: &DMatrix<f64>) -> DVector<f64> {
        match &self.misspecified {
            Some(m) => &m.w * &m.beta,
            None => x * self.theta_full(x.ncols()),
        }
    }
}

/// Least-squares quantities for one model.
#[derive(Clone, Debug)]
pub struct ModelFit {
    pub model: ModelIndex,
    pub gram: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub theta_hat: DVector<f64>,
    pub rss: f64,
    pub jittered: bool,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl ModelFit {
    /// Solves `(X_k'X_k) z = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            Some(c) => c.solve(b),
            None => DVector::zeros(0),
        }
    }

    pub fn gram_inverse(&self) -> DMatrix<f64> {
        match &self.chol {
            Some(c) => c.inverse(),
            None => DMatrix::zeros(0, 0),
        }
    }
}

/// Dataset-level sufficient statistics plus a per-model fit cache.
#[derive(Debug)]
pub struct SufficientStats {
    pub gram: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
    cache: Mutex<HashMap<ModelIndex, Arc<ModelFit>>>,
}

#[derive(Debug)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    truth: Option<Truth>,
    stats: SufficientStats,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        let mut d = Dataset::new(self.y.clone(), self.x.clone()).expect("validated");
        d.truth = self.truth.clone();
        d
    }
}

pub(crate) fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

pub(crate) fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |a, _| v[idx[a]])
}

/// Cholesky factor of an SPD matrix with rank check and optional jitter.
pub(crate) fn robust_cholesky(
    g: &DMatrix<f64>,
    label: &dyn Fn() -> String,
) -> Result<(Cholesky<f64, Dyn>, bool)> {
    let k = g.nrows();
    for i in 0..k {
        if !(g[(i, i)] > 0.0) {
            return Err(BvsError::Singular {
                model: label(),
                detail: format!("non-positive diagonal at position {i}"),
            });
        }
    }
    let chol = Cholesky::new(g.clone()).ok_or_else(|| BvsError::Singular {
        model: label(),
        detail: "Gram matrix is not positive definite".into(),
    })?;
    let l = chol.l();
    let min_ratio = (0..k)
        .map(|i| l[(i, i)] * l[(i, i)] / g[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if min_ratio < RANK_TOL {
        return Err(BvsError::Singular {
            model: label(),
            detail: format!("rank deficient (pivot ratio {min_ratio:.3e})"),
        });
    }
    if min_ratio >= JITTER_TRIGGER {
        return Ok((chol, false));
    }
    let eps = 1e-10 * g.trace() / k as f64;
    let gj = g + DMatrix::identity(k, k) * eps;
    let chol = Cholesky::new(gj).ok_or_else(|| BvsError::Singular {
        model: label(),
        detail: "factorization failed after jitter".into(),
    })?;
    Ok((chol, true))
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 || x.ncols() == 0 {
            return Err(BvsError::InvalidInput("need n >= 1 and p >= 1".into()));
        }
        if x.nrows() != n {
            return Err(BvsError::InvalidInput(format!(
                "X has {} rows but y has length {n}",
                x.nrows()
            )));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(BvsError::InvalidInput("non-finite entry in y or X".into()));
        }
        let gram = x.tr_mul(&x);
        let xty = x.tr_mul(&y);
        let yty = y.dot(&y);
        Ok(Self {
            y,
            x,
            truth: None,
            stats: SufficientStats {
                gram,
                xty,
                yty,
                cache: Mutex::new(HashMap::new()),
            },
        })
    }

    pub fn with_truth(mut self, truth: Truth) -> Result<Self> {
        let n = self.n();
        if truth.theta_star.len() != truth.model.size() {
            return Err(BvsError::InvalidInput(
                "theta_star length differs from true model size".into(),
            ));
        }
        if truth.model.indices().iter().any(|&j| j >= self.p()) {
            return Err(BvsError::InvalidInput("true model index out of range".into()));
        }
        if !(truth.phi_star >= 0.0) {
            return Err(BvsError::InvalidInput("phi_star must be non-negative".into()));
        }
        if let NoiseCovariance::Matrix(s) = &truth.noise {
            validate_noise(s, n)?;
        }
        if let Some(m) = &truth.misspecified {
            if m.w.nrows() != n || m.w.ncols() != m.beta.len() {
                return Err(BvsError::InvalidInput("W / beta dimensions".into()));
            }
        }
        self.truth = Some(truth);
        Ok(self)
    }

    /// Reads a CSV with a header row; column 1 is `y`, the rest form `X`.
    pub fn from_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path_s = path.as_ref().display().to_string();
        let file = std::fs::File::open(path.as_ref()).map_err(|e| BvsError::Io {
            path: path_s.clone(),
            source: e,
        })?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let mut ys = Vec::new();
        let mut rows: Vec<f64> = Vec::new();
        let mut p = None;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(BvsError::InvalidInput(format!(
                    "row {} has fewer than two columns",
                    line + 2
                )));
            }
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| BvsError::InvalidInput(format!("row {}: {e}", line + 2)))?;
            match p {
                None => p = Some(vals.len() - 1),
                Some(pp) if pp != vals.len() - 1 => {
                    return Err(BvsError::InvalidInput(format!(
                        "row {} has a different column count",
                        line + 2
                    )))
                }
                _ => {}
            }
            ys.push(vals[0]);
            rows.extend_from_slice(&vals[1..]);
        }
        let p = p.ok_or_else(|| BvsError::InvalidInput("empty CSV".into()))?;
        let n = ys.len();
        let x = DMatrix::from_row_slice(n, p, &rows);
        Self::new(DVector::from_vec(ys), x)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn truth(&self) -> Option<&Truth> {
        self.truth.as_ref()
    }
    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.stats.gram
    }
    pub fn yty(&self) -> f64 {
        self.stats.yty
    }

    pub(crate) fn require_truth(&self) -> Result<&Truth> {
        self.truth.as_ref().ok_or(BvsError::MissingTruth)
    }

    fn check_model(&self, model: &ModelIndex) -> Result<()> {
        if let Some(&j) = model.indices().last() {
            if j >= self.p() {
                return Err(BvsError::InvalidInput(format!(
                    "model {model} references covariate {j} but p = {}",
                    self.p()
                )));
            }
        }
        Ok(())
    }

    /// `X_k`, the columns of `X` selected by `model`.
    pub fn columns(&self, model: &ModelIndex) -> DMatrix<f64> {
        self.x.select_columns(model.indices())
    }

    /// `X_k' v`.
    pub fn xk_t(&self, model: &ModelIndex, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            model.size(),
            model.indices().iter().map(|&j| self.x.column(j).dot(v)),
        )
    }

    /// `X_k c`.
    pub fn xk_mul(&self, model: &ModelIndex, c: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        for (a, &j) in model.indices().iter().enumerate() {
            out.axpy(c[a], &self.x.column(j), 1.0);
        }
        out
    }

    /// Least-squares fit of `model`, memoized per model.
    pub fn fit(&self, model: &ModelIndex) -> Result<Arc<ModelFit>> {
        if let Some(f) = self.stats.cache.lock().expect("cache poisoned").get(model) {
            return Ok(f.clone());
        }
        let fit = Arc::new(self.fit_uncached(model)?);
        self.stats
            .cache
            .lock()
            .expect("cache poisoned")
            .insert(model.clone(), fit.clone());
        Ok(fit)
    }

    pub fn clear_cache(&self) {
        self.stats.cache.lock().expect("cache poisoned").clear();
    }

    fn fit_uncached(&self, model: &ModelIndex) -> Result<ModelFit> {
        self.check_model(model)?;
        let idx = model.indices();
        if idx.is_empty() {
            return Ok(ModelFit {
                model: model.clone(),
                gram: DMatrix::zeros(0, 0),
                xty: DVector::zeros(0),
                theta_hat: DVector::zeros(0),
                rss: self.stats.yty,
                jittered: false,
                chol: None,
            });
        }
        let gram = submatrix(&self.stats.gram, idx);
        let xty = subvector(&self.stats.xty, idx);
        let (chol, jittered) = robust_cholesky(&gram, &|| model.to_string())?;
        let theta_hat = chol.solve(&xty);
        let resid = &self.y - self.xk_mul(model, &theta_hat);
        let rss = resid.norm_squared();
        Ok(ModelFit {
            model: model.clone(),
            gram,
            xty,
            theta_hat,
            rss,
            jittered,
            chol: Some(chol),
        })
    }

    /// `H_k v`, the projection onto the column space of `X_k`.
    pub fn project(&self, model: &ModelIndex, v: &DVector<f64>) -> Result<DVector<f64>> {
        if model.is_empty() {
            return Ok(DVector::zeros(self.n()));
        }
        let fit = self.fit(model)?;
        let coef = fit.solve(&self.xk_t(model, v));
        Ok(self.xk_mul(model, &coef))
    }

    /// `true` when every column has mean 0 and `x'x / n = 1` within `tol`.
    pub fn is_standardized(&self, tol: f64) -> bool {
        let n = self.n() as f64;
        self.x.column_iter().all(|c| {
            let mean = c.sum() / n;
            let var = c.norm_squared() / n;
            mean.abs() <= tol && (var - 1.0).abs() <= tol
        })
    }

    /// `true` when `X'X` has off-diagonal entries below `tol` relative to its diagonal.
    pub fn is_orthogonal(&self, tol: f64) -> bool {
        let g = &self.stats.gram;
        let p = g.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                let scale = (g[(i, i)] * g[(j, j)]).sqrt().max(f64::MIN_POSITIVE);
                if (g[(i, j)] / scale).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

fn validate_noise(s: &DMatrix<f64>, n: usize) -> Result<()> {
    if s.nrows() != n || s.ncols() != n {
        return Err(BvsError::Validation("noise covariance must be n x n".into()));
    }
    let asym = (s - s.transpose()).abs().max();
    if asym > 1e-10 * s.abs().max().max(1.0) {
        return Err(BvsError::Validation("noise covariance not symmetric".into()));
    }
    if ((s.trace() - n as f64) / n as f64).abs() > 1e-8 {
        return Err(BvsError::Validation(format!(
            "noise covariance trace {} differs from n = {n}",
            s.trace()
        )));
    }
    if Cholesky::new(s.clone()).is_none() {
        return Err(BvsError::Validation(
            "noise covariance not positive definite".into(),
        ));
    }
    Ok(())
}

/// `F_mt = [(s_t - s_m)/(p_m - p_t)] / [s_m/(n - p_m)]` from residual sums.
pub fn f_from_rss(s_t: f64, s_m: f64, p_t: usize, p_m: usize, n: usize) -> Result<f64> {
    if p_m <= p_t {
        return Err(BvsError::NotNested(format!("p_m = {p_m} <= p_t = {p_t}")));
    }
    if p_m >= n {
        return Err(BvsError::Degenerate(format!(
            "F denominator has n - p_m = {} degrees of freedom",
            n as i64 - p_m as i64
        )));
    }
    let num = (s_t - s_m).max(0.0) / (p_m - p_t) as f64;
    Ok(num / (s_m / (n - p_m) as f64))
}

/// F statistic for testing `t` against the larger nested model `m`.
pub fn f_statistic(data: &Dataset, m: &ModelIndex, t: &ModelIndex) -> Result<f64> {
    if !(t.is_subset_of(m) && t.size() < m.size()) {
        return Err(BvsError::NotNested(format!("{t} is not a strict subset of {m}")));
    }
    let s_t = data.fit(t)?.rss;
    let s_m = data.fit(m)?.rss;
    f_from_rss(s_t, s_m, t.size(), m.size(), data.n())
}

/// KL-optimal coefficients `(X_q'X_q)^{-1} X_q' E(y)` of model `q`.
pub fn kl_optimal_coefficients(data: &Dataset, q: &ModelIndex) -> Result<DVector<f64>> {
    let truth = data.require_truth()?;
    let mu = truth.mean(data.x());
    let fit = data.fit(q)?;
    Ok(fit.solve(&data.xk_t(q, &mu)))
}

fn require_phi(truth: &Truth) -> Result<f64> {
    if truth.phi_star > 0.0 {
        Ok(truth.phi_star)
    } else {
        Err(BvsError::Degenerate("phi_star must be positive".into()))
    }
}

/// Non-centrality `λ_qm = ||(I - H_m) H_q E(y)||² / φ*` for nested `m ⊆ q`.
///
/// Under a correctly specified mean this is `θ_s*' X_s'(I - H_m) X_s θ_s* / φ*`.
pub fn noncentrality_nested(data: &Dataset, m: &ModelIndex, q: &ModelIndex) -> Result<f64> {
    if !m.is_subset_of(q) {
        return Err(BvsError::NotNested(format!("{m} is not a subset of {q}")));
    }
    let truth = data.require_truth()?;
    let phi = require_phi(truth)?;
    let mu = truth.mean(data.x());
    let hq = data.project(q, &mu)?;
    let r = &hq - data.project(m, &hq)?;
    Ok(r.norm_squared() / phi)
}

#[derive(Clone, Debug)]
pub struct SandwichReport {
    pub omega_lo: f64,
    pub omega_hi: f64,
    pub lambda: f64,
    pub lambda_tilde: f64,
    /// `λ/ω_hi ≤ λ̃ ≤ λ/ω_lo` holds (relative slack 1e-10).
    pub bracket_holds: bool,
}

/// Extreme eigenvalues of `X̃_s'ΣX̃_s (X̃_s'X̃_s)^{-1}` with `X̃_s = (I - H_m) X_s`, `s = q \ m`.
pub fn sandwich_eigs(data: &Dataset, m: &ModelIndex, q: &ModelIndex) -> Result<SandwichReport> {
    if !(m.is_subset_of(q) && m.size() < q.size()) {
        return Err(BvsError::NotNested(format!("{m} is not a strict subset of {q}")));
    }
    let truth = data.require_truth()?;
    let phi = require_phi(truth)?;
    let s = ModelIndex(q.difference(m));
    let n = data.n();
    let mut xt = DMatrix::zeros(n, s.size());
    for (a, &j) in s.indices().iter().enumerate() {
        let col: DVector<f64> = data.x().column(j).into_owned();
        let r = &col - data.project(m, &col)?;
        xt.set_column(a, &r);
    }
    let c = xt.tr_mul(&xt);
    let sx = match &truth.noise {
        NoiseCovariance::Identity => xt.clone(),
        NoiseCovariance::Matrix(sig) => sig * &xt,
    };
    let d = xt.tr_mul(&sx);
    let (lc, _) = robust_cholesky(&c, &|| format!("residualized {s}"))?;
    let l = lc.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| BvsError::Numeric("triangular inverse failed".into()))?;
    let k = &linv * &d * linv.transpose();
    let k = (&k + k.transpose()) * 0.5;
    let eig = SymmetricEigen::new(k);
    let omega_lo = eig.eigenvalues.min();
    let omega_hi = eig.eigenvalues.max();

    let theta_q = kl_optimal_coefficients(data, q)?;
    let theta_s = DVector::from_iterator(
        s.size(),
        s.indices().iter().map(|j| {
            let pos = q.indices().iter().position(|k| k == j).expect("j in q");
            theta_q[pos]
        }),
    );
    let ct = &c * &theta_s;
    let lambda = theta_s.dot(&ct) / phi;
    let dchol = Cholesky::new(d.clone())
        .ok_or_else(|| BvsError::Validation("X̃'ΣX̃ not positive definite".into()))?;
    let lambda_tilde = ct.dot(&dchol.solve(&ct)) / phi;
    let slack = 1e-10 * lambda.abs().max(1e-300);
    let bracket_holds =
        lambda / omega_hi <= lambda_tilde + slack && lambda_tilde <= lambda / omega_lo + slack;
    Ok(SandwichReport {
        omega_lo,
        omega_hi,
        lambda,
        lambda_tilde,
        bracket_holds,
    })
}

/// Prior covariance structure `V_k` for Normal coefficient priors.
#[derive(Clone, Debug)]
pub enum PriorCovariance {
    /// `V_k = (X_k'X_k)^{-1}`.
    Zellner,
    /// `V_k = diag(X_k'X_k)^{-1}`.
    DiagGramInverse,
    /// `V_k` is the `k x k` block of a user-supplied `p x p` matrix.
    Explicit(Arc<DMatrix<f64>>),
}

impl PriorCovariance {
    /// `V_k^{-1}` for the model with Gram block `gram_k`.
    pub fn inverse_block(&self, gram_k: &DMatrix<f64>, idx: &[usize]) -> Result<DMatrix<f64>> {
        match self {
            PriorCovariance::Zellner => Ok(gram_k.clone()),
            PriorCovariance::DiagGramInverse => Ok(DMatrix::from_diagonal(&gram_k.diagonal())),
            PriorCovariance::Explicit(v) => {
                if idx.iter().any(|&j| j >= v.nrows()) || v.nrows() != v.ncols() {
                    return Err(BvsError::InvalidInput("explicit V has wrong shape".into()));
                }
                let vk = submatrix(v, idx);
                Cholesky::new(vk)
                    .map(|c| c.inverse())
                    .ok_or_else(|| BvsError::Validation("explicit V not positive definite".into()))
            }
        }
    }
}

/// Eigenvalues of `V G`, given `V^{-1}` and `G`, sorted in decreasing order.
pub fn eig_vg(vinv: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<Vec<f64>> {
    if gram.nrows() == 0 {
        return Ok(Vec::new());
    }
    let c = Cholesky::new(vinv.clone())
        .ok_or_else(|| BvsError::Numeric("V^{-1} not positive definite".into()))?;
    let linv = c
        .l()
        .try_inverse()
        .ok_or_else(|| BvsError::Numeric("triangular inverse failed".into()))?;
    let k = &linv * gram * linv.transpose();
    let k = (&k + k.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::try_new(k, 1e-14, 10_000)
        .ok_or_else(|| BvsError::Numeric("eigen-solve did not converge".into()))?
        .eigenvalues
        .iter()
        .cloned()
        .collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(ev)
}

/// Per-coordinate checks of the shrinkage bracketing inequalities.
#[derive(Clone, Debug)]
pub struct ShrinkageCheck {
    pub variance_ratio: f64,
    pub mean_ratio: f64,
    pub scaled_noncentrality: f64,
    pub lambda_qi: f64,
    /// `τ²ρ_min²/(τ²ρ_min²+1) ≤ σ_ii/σ̃_ii`.
    pub variance_lower: bool,
    /// `σ_ii/σ̃_ii ≤ τ²ρ_max²/(τ²ρ_max²+1)`.
    pub variance_upper: bool,
    /// `1 - 2δ ≤ μ_i²/θ_i² ≤ (1+δ)²`.
    pub mean_lower: bool,
    pub mean_upper: bool,
    /// Non-centrality bracket assembled from the two above.
    pub noncentrality_lower: bool,
    pub noncentrality_upper: bool,
    /// Sharp variance bracket `[(τρ_min/(1+τρ_min))², (τρ_max/(1+τρ_max))²]`.
    pub variance_sharp: bool,
}

#[derive(Clone, Debug)]
pub struct ShrinkageReport {
    pub theta: DVector<f64>,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub sigma_ii: DVector<f64>,
    pub sigma_tilde_ii: DVector<f64>,
    pub delta: DVector<f64>,
    /// Eigenvalues of `V_q X_q'X_q`, decreasing.
    pub rho: Vec<f64>,
    pub checks: Vec<ShrinkageCheck>,
}

/// Sampling moments of the Normal-prior posterior mean under the truth.
pub fn shrinkage_moments(
    data: &Dataset,
    q: &ModelIndex,
    tau: f64,
    vmode: &PriorCovariance,
) -> Result<ShrinkageReport> {
    if !(tau > 0.0) {
        return Err(BvsError::InvalidInput("tau must be positive".into()));
    }
    let truth = data.require_truth()?;
    let phi = require_phi(truth)?;
    let fit = data.fit(q)?;
    let theta = kl_optimal_coefficients(data, q)?;
    let g = &fit.gram;
    let vinv = vmode.inverse_block(g, q.indices())?;
    let a = g + &vinv / tau;
    let (ac, _) = robust_cholesky(&a, &|| q.to_string())?;
    let ainv = ac.inverse();
    let mu = &ainv * g * &theta;
    let sigma = &ainv * g * &ainv;
    let sigma_ii = sigma.diagonal();
    let sigma_tilde_ii = fit.gram_inverse().diagonal();
    let rho = eig_vg(&vinv, g)?;
    let (rmax, rmin) = (rho[0], *rho.last().expect("non-empty model"));
    let norm = theta.norm();
    let delta = theta.map(|t| norm / ((tau * rmax + 1.0) * t.abs()));
    let tol = 1e-10;
    let frac = |r: f64| (tau * r).powi(2) / ((tau * r).powi(2) + 1.0);
    let sharp = |r: f64| (tau * r / (1.0 + tau * r)).powi(2);
    let checks = (0..q.size())
        .map(|i| {
            let vr = sigma_ii[i] / sigma_tilde_ii[i];
            let mr = mu[i] * mu[i] / (theta[i] * theta[i]);
            let lam = theta[i] * theta[i] / (sigma_tilde_ii[i] * phi);
            let snc = mu[i] * mu[i] / (phi * sigma_ii[i]);
            let d = delta[i];
            let nc_lo = lam * (1.0 - 2.0 * d) * (1.0 + 1.0 / (tau * rmax).powi(2));
            let nc_hi = lam * (1.0 + d).powi(2) * (1.0 + 1.0 / (tau * rmin).powi(2));
            ShrinkageCheck {
                variance_ratio: vr,
                mean_ratio: mr,
                scaled_noncentrality: snc,
                lambda_qi: lam,
                variance_lower: frac(rmin) <= vr * (1.0 + tol),
                variance_upper: vr <= frac(rmax) * (1.0 + tol),
                mean_lower: !mr.is_finite() || 1.0 - 2.0 * d <= mr * (1.0 + tol),
                mean_upper: !mr.is_finite() || mr <= (1.0 + d).powi(2) * (1.0 + tol),
                noncentrality_lower: nc_lo <= snc * (1.0 + tol) + 1e-300,
                noncentrality_upper: !nc_hi.is_finite() || snc <= nc_hi * (1.0 + tol),
                variance_sharp: sharp(rmin) <= vr * (1.0 + tol) && vr <= sharp(rmax) * (1.0 + tol),
            }
        })
        .collect();
    Ok(ShrinkageReport {
        theta,
        mu,
        sigma,
        sigma_ii,
        sigma_tilde_ii,
        delta,
        rho,
        checks,
    })
}
