//! Bounds on the expected posterior mass of spurious and non-spurious model
//! sets, obtained by summing per-model bounds over sizes, plus the signal
//! floor for small models and the curves plotted from these bounds.

use nalgebra::SymmetricEigen;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{BvsError, Result};
use crate::l0::L0Criterion;
use crate::linear::{Dataset, ModelIndex};
use crate::model_priors::{ModelPrior, ModelPriorKind};
use crate::numerics::{ln_choose, log_sum_exp};
use crate::posterior::all_models;

#[derive(Clone, Debug)]
pub struct BoundScenario {
    pub n: usize,
    pub p: usize,
    pub pbar: usize,
    pub p_t: usize,
    pub tau: f64,
    pub prior: ModelPriorKind,
    /// Signal floor for models smaller than the optimal one.
    pub lambda_lo: f64,
    /// Signal floor for larger non-spurious models.
    pub lambda_hi: f64,
    pub alpha: f64,
    pub alpha_prime: f64,
    pub gamma: f64,
}

impl BoundScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_t <= self.pbar && self.pbar <= self.n.min(self.p)) {
            return Err(BvsError::InvalidInput("need p_t ≤ p̄ ≤ min(n, p)".into()));
        }
        if !(self.tau > 0.0 && self.lambda_lo > 0.0 && self.lambda_hi > 0.0) {
            return Err(BvsError::InvalidInput("tau and signal floors must be positive".into()));
        }
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !(unit(self.alpha) && unit(self.alpha_prime) && unit(self.gamma) && self.alpha_prime < self.alpha) {
            return Err(BvsError::InvalidInput("need 0 < α' < α < 1 and γ ∈ (0,1)".into()));
        }
        Ok(())
    }

    pub fn model_prior(&self) -> Result<ModelPrior> {
        ModelPrior::new(self.prior.clone(), self.p, self.pbar)
    }
}

/// A bound kept on the log scale, with its raw and clamped values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundValue {
    pub log: f64,
    pub raw: f64,
    pub clamped: f64,
}

impl BoundValue {
    pub fn from_log(log: f64) -> Self {
        let raw = log.exp();
        Self {
            log,
            raw,
            clamped: raw.min(1.0),
        }
    }
}

/// Per-size log weights that multiply the model counts: `log r^α - α(l-p_t)/2 log τ`
/// for the Bayesian bounds or `-α(η_l - η_{p_t})` for penalized likelihoods.
enum SizeWeight<'a> {
    Bayes(&'a ModelPrior),
    L0(&'a L0Criterion),
}

impl SizeWeight<'_> {
    /// Weight for sizes above `p_t`.
    fn above(&self, sc: &BoundScenario, l: usize) -> f64 {
        match self {
            SizeWeight::Bayes(pr) => {
                sc.alpha * pr.log_r(l, sc.p_t) - sc.alpha * (l as f64 - sc.p_t as f64) / 2.0 * sc.tau.ln()
            }
            SizeWeight::L0(c) => -sc.alpha * eta_tilde(c, sc, l),
        }
    }

    /// Weight for sizes below `p_t`, following the displayed form
    /// `τ^{α(l-p_t)/2} / r^α`.
    fn below(&self, sc: &BoundScenario, l: usize) -> f64 {
        match self {
            SizeWeight::Bayes(pr) => {
                sc.alpha * (l as f64 - sc.p_t as f64) / 2.0 * sc.tau.ln() - sc.alpha * pr.log_r(l, sc.p_t)
            }
            SizeWeight::L0(c) => -sc.alpha * eta_tilde(c, sc, l),
        }
    }
}

fn eta_tilde(c: &L0Criterion, sc: &BoundScenario, l: usize) -> f64 {
    c.penalty(l, sc.n, sc.p) - c.penalty(sc.p_t, sc.n, sc.p)
}

fn spurious_log(sc: &BoundScenario, w: &SizeWeight) -> f64 {
    let terms: Vec<f64> = (sc.p_t + 1..=sc.pbar)
        .map(|l| ln_choose(sc.p - sc.p_t, l - sc.p_t) + w.above(sc, l))
        .collect();
    log_sum_exp(&terms)
}

fn nonspurious_small_log(sc: &BoundScenario, w: &SizeWeight) -> f64 {
    let lam = sc.lambda_lo.powf(sc.alpha_prime);
    let terms: Vec<f64> = (0..sc.p_t)
        .map(|l| ln_choose(sc.p, l) + w.below(sc, l) - lam * (sc.p_t - l) as f64 / 2.0)
        .collect();
    log_sum_exp(&terms)
}

fn nonspurious_large_log(sc: &BoundScenario, w: &SizeWeight) -> f64 {
    let lam = sc.lambda_hi.powf(sc.alpha_prime);
    let mut terms = vec![ln_choose(sc.p, sc.p_t) - sc.lambda_hi / 2.0];
    for l in sc.p_t + 1..=sc.pbar {
        let inner: Vec<f64> = (0..sc.p_t)
            .map(|j| {
                ln_choose(sc.p_t, j) + ln_choose(sc.p - sc.p_t, l - j) - (sc.p_t - j) as f64 * lam / 2.0
            })
            .collect();
        terms.push(w.above(sc, l) + log_sum_exp(&inner));
    }
    log_sum_exp(&terms)
}

/// Bound on the expected posterior mass of spurious models.
pub fn bound_spurious(sc: &BoundScenario) -> Result<BoundValue> {
    sc.validate()?;
    let pr = sc.model_prior()?;
    Ok(BoundValue::from_log(spurious_log(sc, &SizeWeight::Bayes(&pr))))
}

/// Bound on the expected mass of non-spurious models smaller than the optimal one.
pub fn bound_nonspurious_small(sc: &BoundScenario) -> Result<BoundValue> {
    sc.validate()?;
    let pr = sc.model_prior()?;
    Ok(BoundValue::from_log(nonspurious_small_log(sc, &SizeWeight::Bayes(&pr))))
}

/// Bound on the expected mass of non-spurious models of size at least `p_t`.
pub fn bound_nonspurious_large(sc: &BoundScenario) -> Result<BoundValue> {
    sc.validate()?;
    let pr = sc.model_prior()?;
    Ok(BoundValue::from_log(nonspurious_large_log(sc, &SizeWeight::Bayes(&pr))))
}

#[derive(Clone, Copy, Debug)]
pub struct L0Bounds {
    pub spurious: BoundValue,
    pub nonspurious_small: BoundValue,
    pub nonspurious_large: BoundValue,
}

/// The three sums for a normalized L0 criterion.
pub fn bound_l0(sc: &BoundScenario, criterion: &L0Criterion) -> Result<L0Bounds> {
    sc.validate()?;
    criterion.validate()?;
    let w = SizeWeight::L0(criterion);
    Ok(L0Bounds {
        spurious: BoundValue::from_log(spurious_log(sc, &w)),
        nonspurious_small: BoundValue::from_log(nonspurious_small_log(sc, &w)),
        nonspurious_large: BoundValue::from_log(nonspurious_large_log(sc, &w)),
    })
}

/// Per-model bound term used by the size sums; summing it over every model
/// of size at most `p̄` reproduces them.
pub fn per_model_terms(sc: &BoundScenario, t: &ModelIndex, m: &ModelIndex) -> Result<(f64, f64, f64)> {
    let pr = sc.model_prior()?;
    let w = SizeWeight::Bayes(&pr);
    Ok(per_model_terms_with(sc, &w, t, m))
}

pub fn per_model_terms_l0(
    sc: &BoundScenario,
    c: &L0Criterion,
    t: &ModelIndex,
    m: &ModelIndex,
) -> (f64, f64, f64) {
    per_model_terms_with(sc, &SizeWeight::L0(c), t, m)
}

/// Returns `(spurious, small, large)` contributions for model `m`.
fn per_model_terms_with(sc: &BoundScenario, w: &SizeWeight, t: &ModelIndex, m: &ModelIndex) -> (f64, f64, f64) {
    let l = m.size();
    if l < sc.p_t {
        let lam = sc.lambda_lo.powf(sc.alpha_prime);
        let v = (w.below(sc, l) - lam * (sc.p_t - l) as f64 / 2.0).exp();
        return (0.0, v, 0.0);
    }
    if l == sc.p_t {
        return (0.0, 0.0, (-sc.lambda_hi / 2.0).exp());
    }
    if t.is_subset_of(m) {
        return (w.above(sc, l).exp(), 0.0, 0.0);
    }
    let j = t.indices().iter().filter(|&&k| m.contains(k)).count();
    let lam = sc.lambda_hi.powf(sc.alpha_prime);
    let v = (w.above(sc, l) - (sc.p_t - j) as f64 * lam / 2.0).exp();
    (0.0, 0.0, v)
}

#[derive(Clone, Copy, Debug)]
pub struct SimplifiedBound {
    pub value: f64,
    /// The geometric base is below 1, so the closed form is an upper bound.
    pub applicable: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct SimplifiedRates {
    /// Geometric-sum bound under the uniform prior.
    pub uniform: SimplifiedBound,
    /// Generating-function bound under Beta-Binomial(1,1).
    pub beta_binomial: SimplifiedBound,
    /// Generating-function bound under the scenario's complexity prior
    /// (`c` taken from the scenario, or 1 otherwise).
    pub complexity: SimplifiedBound,
    /// Leading-order complexity rate `(p_t+1)(p-p_t)^{1-α} / (τ^{α/2} p^c)`;
    /// not itself an upper bound.
    pub complexity_leading: f64,
}

/// Closed-form spurious-mass rates for the three built-in priors.
pub fn simplified_rates(sc: &BoundScenario) -> Result<SimplifiedRates> {
    sc.validate()?;
    let a = sc.alpha;
    let big_n = (sc.p - sc.p_t) as f64;
    let ta = sc.tau.powf(a / 2.0);
    let k = (sc.pbar - sc.p_t) as f64;
    let q = big_n / ta;
    let uniform = if (q - 1.0).abs() < 1e-15 {
        k
    } else {
        (q - q.powf(k + 1.0)) / (1.0 - q)
    };
    let gf = |b: f64| {
        if b < 1.0 {
            SimplifiedBound {
                value: (1.0 - b).powf(-(sc.p_t as f64) - 1.0) - 1.0,
                applicable: true,
            }
        } else {
            SimplifiedBound {
                value: f64::INFINITY,
                applicable: false,
            }
        }
    };
    let c = match sc.prior {
        ModelPriorKind::Complexity(c) => c,
        _ => 1.0,
    };
    let p = sc.p as f64;
    let bb_base = big_n.powf(1.0 - a) / ta;
    let cx_base = bb_base / p.powf(c * a);
    Ok(SimplifiedRates {
        uniform: SimplifiedBound {
            value: uniform,
            applicable: q < 1.0,
        },
        beta_binomial: gf(bb_base),
        complexity: gf(cx_base),
        complexity_leading: (sc.p_t as f64 + 1.0) * big_n.powf(1.0 - a) / (ta * p.powf(c)),
    })
}

/// Direct sum `Σ_{k=1}^{p̄-p_t} q^k`, `q = (p-p_t)/τ^{α/2}`, matching the
/// uniform geometric form.
pub fn uniform_geometric_direct(sc: &BoundScenario) -> f64 {
    let q = (sc.p - sc.p_t) as f64 / sc.tau.powf(sc.alpha / 2.0);
    (1..=sc.pbar - sc.p_t).map(|k| q.powi(k as i32)).sum()
}

// ---------------------------------------------------------------------------
// Signal floor for small models
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LambdaFloorRow {
    pub model: ModelIndex,
    /// Smallest non-zero eigenvalue of `X_t'(I - H_m)X_t`.
    pub v: f64,
    /// Rank of the same matrix.
    pub q: usize,
    pub floor: f64,
    pub lambda: f64,
    pub holds: bool,
}

#[derive(Clone, Debug)]
pub struct LambdaFloorReport {
    pub rows: Vec<LambdaFloorRow>,
    pub min_theta_sq: f64,
    /// Smallest `v·min θ²/φ*` over the scanned models.
    pub min_unit_floor: f64,
    pub exhaustive: bool,
}

/// Scans models smaller than `t` (all of them if at most `max_models`,
/// otherwise a seeded sample) and checks `λ_tm ≥ v q min θ² / φ*`.
pub fn lambda_floor(data: &Dataset, t: &ModelIndex, max_models: usize, seed: u64) -> Result<LambdaFloorReport> {
    let truth = data.require_truth()?;
    let p = data.p();
    let pt = t.size();
    if pt == 0 {
        return Err(BvsError::InvalidInput("reference model is empty".into()));
    }
    let theta = truth.theta_full(p);
    let theta_t = nalgebra::DVector::from_iterator(pt, t.indices().iter().map(|&j| theta[j]));
    let min_theta_sq = theta_t.iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
    let phi = truth.phi_star;
    let xt = data.columns(t);
    let gtt = xt.transpose() * &xt;
    let count: f64 = (0..pt).map(|l| ln_choose(p, l).exp()).sum();
    let exhaustive = count <= max_models as f64;
    let models: Vec<ModelIndex> = if exhaustive {
        all_models(p, pt - 1)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..max_models)
            .map(|i| {
                let l = i % pt;
                ModelIndex::new(sample(&mut rng, p, l).into_vec()).expect("distinct")
            })
            .collect()
    };
    let rows = models
        .par_iter()
        .map(|m| {
            let a = if m.is_empty() {
                gtt.clone()
            } else {
                let fit = data.fit(m)?;
                let gmt = data.columns(m).transpose() * &xt;
                let z = fit.gram_inverse() * &gmt;
                &gtt - gmt.transpose() * z
            };
            let a = (&a + a.transpose()) * 0.5;
            let eig = SymmetricEigen::new(a.clone());
            let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
            let tol = 1e-9 * top.max(1e-300);
            let nz: Vec<f64> = eig.eigenvalues.iter().cloned().filter(|&e| e > tol).collect();
            let q = nz.len();
            let v = nz.iter().cloned().fold(f64::INFINITY, f64::min);
            let lambda = (theta_t.transpose() * &a * &theta_t)[(0, 0)] / phi;
            let floor = v * q as f64 * min_theta_sq / phi;
            Ok(LambdaFloorRow {
                model: m.clone(),
                v,
                q,
                floor,
                lambda,
                holds: lambda >= floor * (1.0 - 1e-9) - 1e-9,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_unit_floor = rows
        .iter()
        .map(|r| r.v * min_theta_sq / phi)
        .fold(f64::INFINITY, f64::min);
    Ok(LambdaFloorReport {
        rows,
        min_theta_sq,
        min_unit_floor,
        exhaustive,
    })
}

// ---------------------------------------------------------------------------
// Bound curves over n
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LambdaRule {
    /// `λ = n θ²` with unit noise variance.
    ThetaSquaredN,
    /// `λ = 0.5 n` in cases 1–2 and `0.25 n` in cases 3–4.
    QuarterN,
}

impl std::str::FromStr for LambdaRule {
    type Err = BvsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theta-squared-n" => Ok(LambdaRule::ThetaSquaredN),
            "quarter-n" => Ok(LambdaRule::QuarterN),
            _ => Err(BvsError::InvalidInput(format!("unknown lambda rule {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CurveSettings {
    pub alpha: f64,
    pub alpha_prime: f64,
    pub gamma: f64,
    pub lambda_rule: LambdaRule,
}

impl Default for CurveSettings {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            alpha_prime: 0.98,
            gamma: 0.99,
            lambda_rule: LambdaRule::ThetaSquaredN,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub case: u8,
    pub n: usize,
    pub p: usize,
    pub lambda: f64,
    pub spurious: BoundValue,
    pub nonspurious_small: BoundValue,
}

/// Scenario for one of the four curve cases at sample size `n`:
/// `p = n` (cases 1, 3) or `n²` (cases 2, 4), `p_t = 5` or `10`,
/// `θ = 0.5` (cases 1, 2) or `0.25`, `τ = n`, `p̄ = n`, Complexity(1).
pub fn curve_scenario(case: u8, n: usize, s: &CurveSettings) -> Result<BoundScenario> {
    let (square, pt, theta, quarter) = match case {
        1 => (false, 5, 0.5, 0.5),
        2 => (true, 10, 0.5, 0.5),
        3 => (false, 5, 0.25, 0.25),
        4 => (true, 10, 0.25, 0.25),
        _ => return Err(BvsError::InvalidInput(format!("unknown case {case}"))),
    };
    let p = if square { n * n } else { n };
    let lambda = match s.lambda_rule {
        LambdaRule::ThetaSquaredN => n as f64 * theta * theta,
        LambdaRule::QuarterN => n as f64 * quarter,
    };
    Ok(BoundScenario {
        n,
        p,
        pbar: n,
        p_t: pt,
        tau: n as f64,
        prior: ModelPriorKind::Complexity(1.0),
        lambda_lo: lambda,
        lambda_hi: lambda,
        alpha: s.alpha,
        alpha_prime: s.alpha_prime,
        gamma: s.gamma,
    })
}

pub fn figure1_curves(case: u8, n_grid: &[usize], s: &CurveSettings) -> Result<Vec<CurveRow>> {
    n_grid
        .par_iter()
        .map(|&n| {
            let sc = curve_scenario(case, n, s)?;
            Ok(CurveRow {
                case,
                n,
                p: sc.p,
                lambda: sc.lambda_lo,
                spurious: bound_spurious(&sc)?,
                nonspurious_small: bound_nonspurious_small(&sc)?,
            })
        })
        .collect()
}

/// First grid `n` from which the non-spurious bound stays strictly below
/// the spurious bound for the rest of the grid.  Compares log values so
/// that bounds above 1 still order correctly.
pub fn crossing_n(rows: &[CurveRow]) -> Option<usize> {
    let mut first = None;
    for r in rows.iter().rev() {
        if r.nonspurious_small.log < r.spurious.log {
            first = Some(r.n);
        } else {
            break;
        }
    }
    first
}

/// Columns: case, n, p, lambda, bound_spurious, bound_nonspurious_small,
/// raw_spurious, raw_nonspurious_small, spurious_clamped, nonspurious_clamped.
pub fn write_curves_csv<W: std::io::Write>(rows: &[CurveRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "case",
        "n",
        "p",
        "lambda",
        "bound_spurious",
        "bound_nonspurious_small",
        "raw_spurious",
        "raw_nonspurious_small",
        "spurious_clamped",
        "nonspurious_clamped",
    ])?;
    for r in rows {
        wr.write_record([
            r.case.to_string(),
            r.n.to_string(),
            r.p.to_string(),
            format!("{:.17e}", r.lambda),
            format!("{:.17e}", r.spurious.clamped),
            format!("{:.17e}", r.nonspurious_small.clamped),
            format!("{:.17e}", r.spurious.raw),
            format!("{:.17e}", r.nonspurious_small.raw),
            (r.spurious.raw > 1.0).to_string(),
            (r.nonspurious_small.raw > 1.0).to_string(),
        ])?;
    }
    wr.flush().map_err(|e| BvsError::Io {
        path: "<curves csv>".into(),
        source: e,
    })
}
