//! Simulation harness: seeded data generation, replicate execution across
//! prior bundles, aggregation, frequentist operating characteristics, and
//! CSV output.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coef_priors::{CoefPrior, InvGammaHyper, TauPreset};
use crate::error::{BvsError, Result};
use crate::l0::L0Criterion;
use crate::linear::{Dataset, MisspecifiedMean, ModelIndex, NoiseCovariance, PriorCovariance, Truth};
use crate::model_priors::{ModelPrior, ModelPriorKind};
use crate::posterior::{
    default_pbar, enumerate_posterior, gibbs_posterior, orthogonal_dp_posterior, select, GibbsConfig,
    PosteriorSpec, SelectionRule,
};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Design {
    /// Gaussian draws orthonormalized against the intercept, scaled to `x'x = n`.
    Orthogonal,
    Equicorrelated { rho: f64 },
    /// Numeric CSV with a header row and `n` rows of `p` columns.
    Custom { path: String },
}

/// Mean `X_t θ + Z β` with `Z` extra Gaussian columns absent from `X`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MisspecSpec {
    pub beta: Vec<f64>,
}

/// Diagonal noise covariance `Σ_ii ∝ exp(κ x_{i,col})`, normalized to trace `n`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HeteroSpec {
    pub kappa: f64,
    #[serde(default)]
    pub column: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    Enumerate,
    OrthoDp,
    Gibbs,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceKind {
    /// Zellner prior with `φ` integrated against the inverse-gamma prior.
    Zellner,
    /// Zellner prior with `φ` fixed at the true value.
    ZellnerKnown,
    /// Normal prior with `V = diag(X'X)^{-1}`.
    NormalDiag,
    Pmom,
    Bic,
    Ric,
    Ebic,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum PriorName {
    Uniform,
    BetaBinomial,
    Complexity,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Bundle {
    pub name: String,
    pub evidence: EvidenceKind,
    #[serde(default = "default_prior")]
    pub prior: PriorName,
    #[serde(default)]
    pub complexity_c: Option<f64>,
    /// Explicit `τ`; defaults to `n`, or `0.348 n` for the product-moment prior.
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub ebic_xi: Option<f64>,
    #[serde(default)]
    pub pbar: Option<usize>,
    #[serde(default = "default_mc")]
    pub mc_draws: usize,
}

fn default_prior() -> PriorName {
    PriorName::BetaBinomial
}
fn default_mc() -> usize {
    2000
}
fn default_true() -> bool {
    true
}
fn default_replicates() -> usize {
    20
}
fn default_phi() -> f64 {
    1.0
}
fn default_threshold() -> f64 {
    0.5
}
fn default_sweeps() -> usize {
    11_000
}
fn default_burn() -> usize {
    1_000
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub p: usize,
    /// Coefficients of the first `p_t` columns; the rest are zero.
    pub theta: Vec<f64>,
    #[serde(default = "default_phi")]
    pub phi_star: f64,
    pub design: Design,
    #[serde(default)]
    pub misspecified: Option<MisspecSpec>,
    #[serde(default)]
    pub heteroskedastic: Option<HeteroSpec>,
    /// Center and scale columns to `x'x = n` after drawing them.
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    pub engine: Engine,
    pub bundles: Vec<Bundle>,
    #[serde(default = "default_sweeps")]
    pub gibbs_sweeps: usize,
    #[serde(default = "default_burn")]
    pub gibbs_burn_in: usize,
    /// PIP threshold for the median-type selection.
    #[serde(default = "default_threshold")]
    pub pip_threshold: f64,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

/// Repeats the scenario over a grid of sample sizes.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SweepSpec {
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub p_equals_n: bool,
}

fn default_n_grid() -> Vec<usize> {
    vec![100, 250, 500, 1000]
}

impl Scenario {
    pub fn p_t(&self) -> usize {
        self.theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(BvsError::InvalidInput("replicates must be at least 1".into()));
        }
        if self.p_t() > self.p || self.n == 0 || self.p == 0 {
            return Err(BvsError::InvalidInput("need 1 ≤ p, n and p_t ≤ p".into()));
        }
        if self.bundles.is_empty() {
            return Err(BvsError::InvalidInput("no prior bundles".into()));
        }
        if let Design::Equicorrelated { rho } = self.design {
            if !(rho > -1.0 / (self.p as f64 - 1.0).max(1.0) && rho < 1.0) {
                return Err(BvsError::InvalidInput("rho outside the positive-definite range".into()));
            }
        }
        if !(self.pip_threshold > 0.0 && self.pip_threshold < 1.0) {
            return Err(BvsError::InvalidInput("pip threshold must lie in (0,1)".into()));
        }
        Ok(())
    }

    pub fn true_model(&self) -> ModelIndex {
        ModelIndex::new((0..self.p_t()).collect()).expect("distinct")
    }
}

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

const PURPOSE_DESIGN: u64 = 0;
const PURPOSE_NOISE: u64 = 1;
const PURPOSE_MISSPEC: u64 = 2;
const PURPOSE_ENGINE: u64 = 3;

/// Independent stream for `(replicate, purpose)`, so extra bundles or
/// purposes never shift another stream.
fn stream(seed: u64, replicate: usize, purpose: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((replicate as u64) << 8) | purpose);
    r
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

fn standardize_columns(x: &mut DMatrix<f64>) {
    let n = x.nrows() as f64;
    for mut c in x.column_iter_mut() {
        let mean = c.sum() / n;
        c.add_scalar_mut(-mean);
        let ss = c.norm_squared();
        if ss > 0.0 {
            c *= (n / ss).sqrt();
        }
    }
}

/// Design matrix with `warning` set when an orthogonal design was infeasible.
pub struct GeneratedDesign {
    pub x: DMatrix<f64>,
    pub warning: Option<String>,
}

pub fn generate_design(sc: &Scenario, rng: &mut ChaCha8Rng) -> Result<GeneratedDesign> {
    let (n, p) = (sc.n, sc.p);
    match &sc.design {
        Design::Orthogonal => {
            let mut z = gaussian_matrix(rng, n, p);
            if p + 1 > n {
                standardize_columns(&mut z);
                return Ok(GeneratedDesign {
                    x: z,
                    warning: Some(format!(
                        "p + 1 = {} exceeds n = {n}; columns are independent draws, orthogonal only in expectation",
                        p + 1
                    )),
                });
            }
            let mut aug = DMatrix::zeros(n, p + 1);
            aug.column_mut(0).fill(1.0);
            aug.columns_mut(1, p).copy_from(&z);
            let q = aug.qr().q();
            z.copy_from(&q.columns(1, p));
            z *= (n as f64).sqrt();
            Ok(GeneratedDesign { x: z, warning: None })
        }
        Design::Equicorrelated { rho } => {
            let sigma = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { *rho });
            let l = sigma
                .cholesky()
                .ok_or_else(|| BvsError::InvalidInput("equicorrelation matrix not PD".into()))?
                .l();
            let z = gaussian_matrix(rng, n, p);
            let mut x = z * l.transpose();
            if sc.standardize {
                standardize_columns(&mut x);
            }
            Ok(GeneratedDesign { x, warning: None })
        }
        Design::Custom { path } => {
            let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(source) => BvsError::Io {
                    path: path.clone(),
                    source,
                },
                k => BvsError::InvalidInput(format!("{path}: {k:?}")),
            })?;
            let mut vals = Vec::new();
            let mut rows = 0;
            for rec in rdr.records() {
                let rec = rec?;
                if rec.len() != p {
                    return Err(BvsError::InvalidInput(format!("{path}: expected {p} columns")));
                }
                for f in rec.iter() {
                    vals.push(f.trim().parse::<f64>().map_err(|e| {
                        BvsError::InvalidInput(format!("{path}: {e}"))
                    })?);
                }
                rows += 1;
            }
            if rows != n {
                return Err(BvsError::InvalidInput(format!("{path}: expected {n} rows, got {rows}")));
            }
            let mut x = DMatrix::from_row_slice(n, p, &vals);
            if sc.standardize {
                standardize_columns(&mut x);
            }
            Ok(GeneratedDesign { x, warning: None })
        }
    }
}

/// Dataset for one replicate; deterministic in `(seed, replicate)`.
pub fn generate(sc: &Scenario, replicate: usize) -> Result<(Dataset, Option<String>)> {
    sc.validate()?;
    let mut rd = stream(sc.seed, replicate, PURPOSE_DESIGN);
    let GeneratedDesign { x, warning } = generate_design(sc, &mut rd)?;
    let n = sc.n;
    let t = sc.true_model();
    let theta = DVector::from_vec(sc.theta.clone());
    let mut truth = Truth::new(t.clone(), theta.clone(), sc.phi_star);
    if let Some(m) = &sc.misspecified {
        let mut rm = stream(sc.seed, replicate, PURPOSE_MISSPEC);
        let z = gaussian_matrix(&mut rm, n, m.beta.len());
        let mut w = DMatrix::zeros(n, sc.p_t() + m.beta.len());
        for (k, &j) in t.indices().iter().enumerate() {
            w.set_column(k, &x.column(j));
        }
        w.columns_mut(sc.p_t(), m.beta.len()).copy_from(&z);
        let beta = DVector::from_iterator(
            sc.p_t() + m.beta.len(),
            sc.theta.iter().chain(m.beta.iter()).cloned(),
        );
        truth.misspecified = Some(MisspecifiedMean { w, beta });
    }
    let mut scale = vec![1.0; n];
    if let Some(h) = &sc.heteroskedastic {
        if h.column >= sc.p {
            return Err(BvsError::InvalidInput("heteroskedastic column out of range".into()));
        }
        let raw: Vec<f64> = (0..n).map(|i| (h.kappa * x[(i, h.column)]).exp()).collect();
        let tot: f64 = raw.iter().sum();
        scale = raw.iter().map(|v| v * n as f64 / tot).collect();
        truth.noise = NoiseCovariance::Matrix(DMatrix::from_diagonal(&DVector::from_vec(scale.clone())));
    }
    let mean = truth.mean(&x);
    let mut rn = stream(sc.seed, replicate, PURPOSE_NOISE);
    let y = DVector::from_fn(n, |i, _| {
        let z: f64 = StandardNormal.sample(&mut rn);
        mean[i] + (sc.phi_star * scale[i]).sqrt() * z
    });
    let data = Dataset::new(y, x)?.with_truth(truth)?;
    Ok((data, warning))
}

// ---------------------------------------------------------------------------
// Running replicates
// ---------------------------------------------------------------------------

impl Bundle {
    pub fn spec(&self, n: usize, p: usize, phi_star: f64, seed: u64) -> Result<PosteriorSpec> {
        let pbar = self.pbar.unwrap_or_else(|| default_pbar(n, p));
        let kind = match self.prior {
            PriorName::Uniform => ModelPriorKind::Uniform,
            PriorName::BetaBinomial => ModelPriorKind::BetaBinomial11,
            PriorName::Complexity => ModelPriorKind::Complexity(self.complexity_c.unwrap_or(1.0)),
        };
        let prior = ModelPrior::new(kind, p, pbar)?;
        let tau = |preset: TauPreset| self.tau.unwrap_or_else(|| preset.value(n, p));
        let ig = InvGammaHyper::default();
        let coef = match self.evidence {
            EvidenceKind::Zellner => CoefPrior::ZellnerUnknownPhi {
                tau: tau(TauPreset::UnitInformation),
                ig,
            },
            EvidenceKind::ZellnerKnown => CoefPrior::ZellnerKnownPhi {
                tau: tau(TauPreset::UnitInformation),
                phi: phi_star,
            },
            EvidenceKind::NormalDiag => CoefPrior::NormalV {
                tau: tau(TauPreset::UnitInformation),
                v: PriorCovariance::DiagGramInverse,
                ig,
            },
            EvidenceKind::Pmom => CoefPrior::Pmom {
                tau: tau(TauPreset::PmomDefault),
                ig,
                mc_draws: self.mc_draws,
                seed,
            },
            EvidenceKind::Bic => return Ok(PosteriorSpec::l0(L0Criterion::Bic, prior)),
            EvidenceKind::Ric => return Ok(PosteriorSpec::l0(L0Criterion::Ric, prior)),
            EvidenceKind::Ebic => {
                let c = L0Criterion::Ebic(self.ebic_xi.unwrap_or(1.0));
                c.validate()?;
                return Ok(PosteriorSpec::l0(c, prior));
            }
        };
        Ok(PosteriorSpec::bayes(coef, prior))
    }
}

/// Per-replicate, per-bundle summary.
#[derive(Clone, Debug, PartialEq)]
pub struct Digest {
    pub replicate: usize,
    pub bundle: usize,
    pub prob_true: f64,
    pub spurious: f64,
    pub nonspurious: f64,
    pub nonspurious_small: f64,
    pub pip: Vec<f64>,
    pub map_correct: bool,
    pub median_correct: bool,
    /// Median-type selection includes some inactive variable.
    pub median_false_positive: bool,
    /// Median-type selection misses some active variable.
    pub median_false_negative: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub replicate: usize,
    pub bundle: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metric {
    pub mean: f64,
    pub se: f64,
}

fn metric(xs: &[f64]) -> Metric {
    let r = xs.len() as f64;
    if xs.is_empty() {
        return Metric { mean: f64::NAN, se: f64::NAN };
    }
    let mean = xs.iter().sum::<f64>() / r;
    let se = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt() / r.sqrt()
    } else {
        0.0
    };
    Metric { mean, se }
}

/// An empirical check `E(lhs) ≤ E(rhs)` from paired replicate values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// Standard error of the mean paired difference `lhs - rhs`.
    pub se: f64,
    /// `mean(lhs - rhs) ≤ 3 se`.
    pub holds: bool,
}

fn paired_check(lhs: &[f64], rhs: &[f64]) -> InequalityCheck {
    let d: Vec<f64> = lhs.iter().zip(rhs).map(|(a, b)| a - b).collect();
    let m = metric(&d);
    InequalityCheck {
        lhs: metric(lhs).mean,
        rhs: metric(rhs).mean,
        se: m.se,
        holds: m.mean <= 3.0 * m.se + 1e-12,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BundleResult {
    pub name: String,
    /// `(metric name, value)` pairs in a fixed order.
    pub metrics: Vec<(String, Metric)>,
    pub mean_pip: Vec<f64>,
    pub pip_se: Vec<f64>,
    /// `P(MAP ≠ t) ≤ 2 E(1 - p(M_t|y))`.
    pub prop_map: InequalityCheck,
    /// `P(median ≠ t) ≤ 2 E(1 - p(M_t|y))`.
    pub prop_median: InequalityCheck,
    /// Per variable: inclusion frequency against `E(PIP)/t` (inactive)
    /// or exclusion frequency against `E(1-PIP)/(1-t)` (active).
    pub per_variable: Vec<InequalityCheck>,
}

impl BundleResult {
    pub fn metric(&self, name: &str) -> Option<Metric> {
        self.metrics.iter().find(|(n, _)| n == name).map(|x| x.1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub scenario: String,
    pub n: usize,
    pub p: usize,
    pub theta_full: Vec<f64>,
    pub digests: Vec<Digest>,
    pub failures: Vec<Failure>,
    pub warnings: Vec<String>,
    pub bundles: Vec<BundleResult>,
}

fn run_one(sc: &Scenario, data: &Dataset, replicate: usize, b: usize) -> Result<Digest> {
    let bundle = &sc.bundles[b];
    let engine_seed = {
        let mut r = stream(sc.seed, replicate, PURPOSE_ENGINE + b as u64);
        rand::Rng::gen::<u64>(&mut r)
    };
    let spec = bundle.spec(sc.n, sc.p, sc.phi_star, engine_seed)?;
    let t = sc.true_model();
    let summary = match sc.engine {
        Engine::Enumerate => enumerate_posterior(data, &spec, Some(&t))?,
        Engine::OrthoDp => orthogonal_dp_posterior(data, &spec, Some(&t))?,
        Engine::Gibbs => {
            let cfg = GibbsConfig {
                sweeps: sc.gibbs_sweeps,
                burn_in: sc.gibbs_burn_in,
                seed: engine_seed,
                ..GibbsConfig::default()
            };
            gibbs_posterior(data, &spec, &cfg, Some(&t))?
        }
    };
    let masses = summary.masses.clone().expect("reference supplied");
    let map = select(&summary, SelectionRule::Map, Some(&t))?;
    let med = select(&summary, SelectionRule::Median(sc.pip_threshold), Some(&t))?;
    Ok(Digest {
        replicate,
        bundle: b,
        prob_true: masses.reference_prob,
        spurious: masses.spurious(),
        nonspurious: masses.nonspurious(),
        nonspurious_small: masses.nonspurious_small(),
        pip: summary.pip.clone(),
        map_correct: map.model == t,
        median_correct: med.model == t,
        median_false_positive: med.model.indices().iter().any(|j| !t.contains(*j)),
        median_false_negative: t.indices().iter().any(|j| !med.model.contains(*j)),
    })
}

/// Runs every replicate under every bundle.  Individual failures are
/// recorded; more than 10% failures aborts the run.
pub fn run(sc: &Scenario) -> Result<RunResult> {
    sc.validate()?;
    let nb = sc.bundles.len();
    let per_rep: Vec<(Vec<std::result::Result<Digest, Failure>>, Option<String>)> = (0..sc.replicates)
        .into_par_iter()
        .map(|r| match generate(sc, r) {
            Ok((data, warn)) => {
                let out = (0..nb)
                    .map(|b| {
                        run_one(sc, &data, r, b).map_err(|e| Failure {
                            replicate: r,
                            bundle: b,
                            message: e.to_string(),
                        })
                    })
                    .collect();
                (out, warn)
            }
            Err(e) => (
                (0..nb)
                    .map(|b| {
                        Err(Failure {
                            replicate: r,
                            bundle: b,
                            message: e.to_string(),
                        })
                    })
                    .collect(),
                None,
            ),
        })
        .collect();
    let mut digests = Vec::new();
    let mut failures = Vec::new();
    let mut warnings = Vec::new();
    for (outs, w) in per_rep {
        if let Some(w) = w {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        for o in outs {
            match o {
                Ok(d) => digests.push(d),
                Err(f) => failures.push(f),
            }
        }
    }
    let total = sc.replicates * nb;
    if failures.len() * 10 > total {
        return Err(BvsError::Numeric(format!(
            "{} of {total} replicate runs failed; first: {}",
            failures.len(),
            failures[0].message
        )));
    }
    let theta_full: Vec<f64> = (0..sc.p)
        .map(|j| sc.theta.get(j).copied().unwrap_or(0.0))
        .collect();
    let bundles = (0..nb)
        .map(|b| aggregate(sc, &sc.bundles[b].name, digests.iter().filter(|d| d.bundle == b), &theta_full))
        .collect();
    Ok(RunResult {
        scenario: sc.name.clone(),
        n: sc.n,
        p: sc.p,
        theta_full,
        digests,
        failures,
        warnings,
        bundles,
    })
}

fn aggregate<'a>(
    sc: &Scenario,
    name: &str,
    ds: impl Iterator<Item = &'a Digest>,
    theta: &[f64],
) -> BundleResult {
    let ds: Vec<&Digest> = ds.collect();
    let col = |f: &dyn Fn(&Digest) -> f64| -> Vec<f64> { ds.iter().map(|d| f(d)).collect() };
    let b2f = |b: bool| if b { 1.0 } else { 0.0 };
    let p = sc.p;
    let active: Vec<usize> = (0..p).filter(|&j| theta[j] != 0.0).collect();
    let inactive: Vec<usize> = (0..p).filter(|&j| theta[j] == 0.0).collect();
    let avg = |d: &Digest, idx: &[usize]| {
        if idx.is_empty() {
            0.0
        } else {
            idx.iter().map(|&j| d.pip[j]).sum::<f64>() / idx.len() as f64
        }
    };
    let prob_true = col(&|d| d.prob_true);
    let twice_miss = col(&|d| 2.0 * (1.0 - d.prob_true));
    let metrics = vec![
        ("prob_true".to_string(), metric(&prob_true)),
        ("prob_spurious".to_string(), metric(&col(&|d| d.spurious))),
        ("prob_nonspurious".to_string(), metric(&col(&|d| d.nonspurious))),
        ("prob_nonspurious_small".to_string(), metric(&col(&|d| d.nonspurious_small))),
        ("map_correct".to_string(), metric(&col(&|d| b2f(d.map_correct)))),
        ("median_correct".to_string(), metric(&col(&|d| b2f(d.median_correct)))),
        ("fwer_type1".to_string(), metric(&col(&|d| b2f(d.median_false_positive)))),
        ("fwer_type2".to_string(), metric(&col(&|d| b2f(d.median_false_negative)))),
        ("mean_pip_active".to_string(), metric(&col(&|d| avg(d, &active)))),
        ("mean_pip_inactive".to_string(), metric(&col(&|d| avg(d, &inactive)))),
    ];
    let mut mean_pip = Vec::with_capacity(p);
    let mut pip_se = Vec::with_capacity(p);
    let mut per_variable = Vec::with_capacity(p);
    let thr = sc.pip_threshold;
    for j in 0..p {
        let v = col(&|d| d.pip[j]);
        let m = metric(&v);
        mean_pip.push(m.mean);
        pip_se.push(m.se);
        per_variable.push(if theta[j] == 0.0 {
            let sel: Vec<f64> = v.iter().map(|&x| b2f(x > thr)).collect();
            let rhs: Vec<f64> = v.iter().map(|&x| x / thr).collect();
            paired_check(&sel, &rhs)
        } else {
            let miss: Vec<f64> = v.iter().map(|&x| b2f(x <= thr)).collect();
            let rhs: Vec<f64> = v.iter().map(|&x| (1.0 - x) / (1.0 - thr)).collect();
            paired_check(&miss, &rhs)
        });
    }
    BundleResult {
        name: name.to_string(),
        metrics,
        mean_pip,
        pip_se,
        prop_map: paired_check(&col(&|d| b2f(!d.map_correct)), &twice_miss),
        prop_median: paired_check(&col(&|d| b2f(!d.median_correct)), &twice_miss),
        per_variable,
    }
}

/// Runs the scenario at each `n`, optionally with `p = n`.
pub fn run_sweep(sc: &Scenario, n_grid: &[usize], p_equals_n: bool) -> Result<Vec<RunResult>> {
    n_grid
        .iter()
        .map(|&n| {
            let mut s = sc.clone();
            s.n = n;
            if p_equals_n {
                s.p = n;
            }
            run(&s)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

fn io_err(path: &str) -> impl Fn(std::io::Error) -> BvsError + '_ {
    move |e| BvsError::Io {
        path: path.to_string(),
        source: e,
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

/// Columns: bundle, metric, mean, se.
pub fn write_summary_csv<W: Write>(res: &RunResult, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["bundle", "metric", "mean", "se"])?;
    for b in &res.bundles {
        for (name, m) in &b.metrics {
            wr.write_record([b.name.as_str(), name, &fmt(m.mean), &fmt(m.se)])?;
        }
    }
    wr.flush().map_err(io_err("<summary csv>"))
}

/// Columns: bundle, variable, theta_star, mean_pip, se.
pub fn write_pips_csv<W: Write>(res: &RunResult, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["bundle", "variable", "theta_star", "mean_pip", "se"])?;
    for b in &res.bundles {
        for j in 0..b.mean_pip.len() {
            wr.write_record([
                b.name.clone(),
                j.to_string(),
                fmt(res.theta_full[j]),
                fmt(b.mean_pip[j]),
                fmt(b.pip_se[j]),
            ])?;
        }
    }
    wr.flush().map_err(io_err("<pips csv>"))
}

/// Columns: bundle, check, lhs, rhs, se, holds.
pub fn write_checks_csv<W: Write>(res: &RunResult, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["bundle", "check", "lhs", "rhs", "se", "holds"])?;
    for b in &res.bundles {
        let mut rows = vec![("map_error".to_string(), b.prop_map), ("median_error".to_string(), b.prop_median)];
        for (j, c) in b.per_variable.iter().enumerate() {
            rows.push((format!("variable_{j}"), *c));
        }
        for (name, c) in rows {
            wr.write_record([
                b.name.clone(),
                name,
                fmt(c.lhs),
                fmt(c.rhs),
                fmt(c.se),
                c.holds.to_string(),
            ])?;
        }
    }
    wr.flush().map_err(io_err("<checks csv>"))
}

/// Long-format sweep rows: n, bundle, metric, mean, se.
pub fn write_curves_csv<W: Write>(results: &[RunResult], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["n", "bundle", "metric", "mean", "se"])?;
    for r in results {
        for b in &r.bundles {
            for (name, m) in &b.metrics {
                wr.write_record([r.n.to_string(), b.name.clone(), name.clone(), fmt(m.mean), fmt(m.se)])?;
            }
        }
    }
    wr.flush().map_err(io_err("<curves csv>"))
}

/// Plot-ready `(x, series, value)` rows.  For a sweep `x` is `n`; for a
/// single run it is the variable index and the series is the bundle's mean PIP.
pub fn write_plotdata<W: Write>(results: &[RunResult], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "series", "value"])?;
    if results.len() == 1 {
        let r = &results[0];
        for b in &r.bundles {
            for (j, v) in b.mean_pip.iter().enumerate() {
                wr.write_record([j.to_string(), format!("{}:mean_pip", b.name), fmt(*v)])?;
            }
        }
    } else {
        for r in results {
            for b in &r.bundles {
                for (name, m) in &b.metrics {
                    wr.write_record([r.n.to_string(), format!("{}:{name}", b.name), fmt(m.mean)])?;
                }
            }
        }
    }
    wr.flush().map_err(io_err("<plotdata csv>"))
}

/// Aggregates read back from a summary CSV: `(bundle, metric, mean, se)`.
pub fn read_summary_csv<R: std::io::Read>(r: R) -> Result<Vec<(String, String, f64, f64)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| BvsError::InvalidInput(format!("bad number {:?}: {e}", &rec[i])))
        };
        out.push((rec[0].to_string(), rec[1].to_string(), num(2)?, num(3)?));
    }
    Ok(out)
}

/// Writes `summary.csv`, `pips.csv` and `checks.csv` (and `plotdata.csv`) into `dir`.
pub fn emit(res: &RunResult, dir: &Path, plotdata: bool) -> Result<()> {
    let ds = dir.display().to_string();
    std::fs::create_dir_all(dir).map_err(io_err(&ds))?;
    let open = |name: &str| {
        let p = dir.join(name);
        let s = p.display().to_string();
        std::fs::File::create(&p).map_err(|e| BvsError::Io { path: s, source: e })
    };
    write_summary_csv(res, open("summary.csv")?)?;
    write_pips_csv(res, open("pips.csv")?)?;
    write_checks_csv(res, open("checks.csv")?)?;
    if plotdata {
        write_plotdata(std::slice::from_ref(res), open("plotdata.csv")?)?;
    }
    Ok(())
}

/// Writes `curves.csv` (and `plotdata.csv`) for an `n` sweep.
pub fn emit_sweep(results: &[RunResult], dir: &Path, plotdata: bool) -> Result<()> {
    let ds = dir.display().to_string();
    std::fs::create_dir_all(dir).map_err(io_err(&ds))?;
    let open = |name: &str| {
        let p = dir.join(name);
        let s = p.display().to_string();
        std::fs::File::create(&p).map_err(|e| BvsError::Io { path: s, source: e })
    };
    write_curves_csv(results, open("curves.csv")?)?;
    if plotdata {
        write_plotdata(results, open("plotdata.csv")?)?;
    }
    Ok(())
}
