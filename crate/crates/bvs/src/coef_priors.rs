//! Marginal likelihoods `p(y | M_k)` under Gaussian coefficient priors.
//!
//! All evidences are returned as full log densities, so a Bayes factor is a
//! plain difference of two calls.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{BvsError, Result};
use crate::linear::{eig_vg, robust_cholesky, Dataset, ModelIndex, PriorCovariance};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Hyperparameters of the `IG(a_φ/2, l_φ/2)` prior on the residual variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvGammaHyper {
    pub a_phi: f64,
    pub l_phi: f64,
}

impl Default for InvGammaHyper {
    fn default() -> Self {
        Self {
            a_phi: 0.01,
            l_phi: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub enum CoefPrior {
    ZellnerKnownPhi {
        tau: f64,
        phi: f64,
    },
    ZellnerUnknownPhi {
        tau: f64,
        ig: InvGammaHyper,
    },
    NormalV {
        tau: f64,
        v: PriorCovariance,
        ig: InvGammaHyper,
    },
    /// Product-moment non-local prior with `V = diag(X'X)^{-1}`.
    Pmom {
        tau: f64,
        ig: InvGammaHyper,
        mc_draws: usize,
        seed: u64,
    },
}

/// Named choices for the prior dispersion `τ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TauPreset {
    /// `τ = n`.
    UnitInformation,
    /// `τ = p²`.
    RicLike,
    /// `τ = max(n, p²)`.
    Benchmark,
    /// `τ = 0.348 n`, unit prior variance for the product-moment prior.
    PmomDefault,
}

impl TauPreset {
    pub fn value(self, n: usize, p: usize) -> f64 {
        let (n, p) = (n as f64, p as f64);
        match self {
            TauPreset::UnitInformation => n,
            TauPreset::RicLike => p * p,
            TauPreset::Benchmark => n.max(p * p),
            TauPreset::PmomDefault => 0.348 * n,
        }
    }
}

/// A log evidence with its Monte Carlo standard error (zero when exact).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEvidence {
    pub value: f64,
    pub mc_se: f64,
    pub precision_warning: bool,
}

impl LogEvidence {
    fn exact(value: f64) -> Self {
        Self {
            value,
            mc_se: 0.0,
            precision_warning: false,
        }
    }
}

impl CoefPrior {
    pub fn tau(&self) -> f64 {
        match self {
            CoefPrior::ZellnerKnownPhi { tau, .. }
            | CoefPrior::ZellnerUnknownPhi { tau, .. }
            | CoefPrior::NormalV { tau, .. }
            | CoefPrior::Pmom { tau, .. } => *tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau() > 0.0 && self.tau().is_finite()) {
            return Err(BvsError::InvalidInput("tau must be positive".into()));
        }
        let check_ig = |ig: &InvGammaHyper| {
            if ig.a_phi > 0.0 && ig.l_phi > 0.0 {
                Ok(())
            } else {
                Err(BvsError::InvalidInput("a_phi and l_phi must be positive".into()))
            }
        };
        match self {
            CoefPrior::ZellnerKnownPhi { phi, .. } => {
                if !(*phi > 0.0) {
                    return Err(BvsError::InvalidInput("phi must be positive".into()));
                }
                Ok(())
            }
            CoefPrior::ZellnerUnknownPhi { ig, .. } | CoefPrior::NormalV { ig, .. } => check_ig(ig),
            CoefPrior::Pmom { ig, mc_draws, .. } => {
                check_ig(ig)?;
                if *mc_draws < 100 {
                    return Err(BvsError::InvalidInput("mc_draws must be at least 100".into()));
                }
                Ok(())
            }
        }
    }

    /// Full log marginal likelihood of `model`.
    pub fn log_evidence(&self, data: &Dataset, model: &ModelIndex) -> Result<LogEvidence> {
        self.validate()?;
        match self {
            CoefPrior::ZellnerKnownPhi { tau, phi } => {
                Ok(LogEvidence::exact(zellner_known(data, model, *tau, *phi)?))
            }
            CoefPrior::ZellnerUnknownPhi { tau, ig } => {
                Ok(LogEvidence::exact(zellner_unknown(data, model, *tau, ig)?))
            }
            CoefPrior::NormalV { tau, v, ig } => {
                Ok(LogEvidence::exact(normal_v(data, model, *tau, v, ig)?.log_evidence))
            }
            CoefPrior::Pmom {
                tau,
                ig,
                mc_draws,
                seed,
            } => pmom(data, model, *tau, ig, *mc_draws, mix_seed(*seed, model)),
        }
    }

    /// `log B_tm = log p(y|M_t) - log p(y|M_m)` and its MC standard error.
    pub fn log_bayes_factor(
        &self,
        data: &Dataset,
        t: &ModelIndex,
        m: &ModelIndex,
    ) -> Result<(f64, f64)> {
        if t == m {
            return Ok((0.0, 0.0));
        }
        let et = self.log_evidence(data, t)?;
        let em = self.log_evidence(data, m)?;
        Ok((et.value - em.value, et.mc_se.hypot(em.mc_se)))
    }
}

/// Deterministic per-model seed so that MC evidences are reproducible.
fn mix_seed(seed: u64, model: &ModelIndex) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &j in model.indices() {
        h ^= (j as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    h
}

fn zellner_known(data: &Dataset, model: &ModelIndex, tau: f64, phi: f64) -> Result<f64> {
    let fit = data.fit(model)?;
    let n = data.n() as f64;
    let explained = data.yty() - fit.rss;
    let quad = data.yty() - tau / (1.0 + tau) * explained;
    Ok(-0.5 * n * (LN_2PI + phi.ln()) - 0.5 * model.size() as f64 * (1.0 + tau).ln()
        - quad / (2.0 * phi))
}

/// `log ∫ (2π)^{-n/2} |C|^{-1/2} exp(-Q/2φ) IG(φ; a/2, l/2) dφ` given `log|C|` and `s̃ = l + Q`.
pub(crate) fn ig_marginal(n: f64, log_det: f64, s_tilde: f64, ig: &InvGammaHyper) -> f64 {
    let a = ig.a_phi;
    -0.5 * n * LN_2PI - 0.5 * log_det + 0.5 * a * (0.5 * ig.l_phi).ln() - ln_gamma(0.5 * a)
        + ln_gamma(0.5 * (a + n))
        - 0.5 * (a + n) * (0.5 * s_tilde).ln()
}

/// Shrunken residual sum `s̃_k = l_φ + y'y - τ/(τ+1) y'H_k y` under Zellner's prior.
pub fn s_tilde_zellner(data: &Dataset, model: &ModelIndex, tau: f64, l_phi: f64) -> Result<f64> {
    let fit = data.fit(model)?;
    Ok(l_phi + data.yty() - tau / (tau + 1.0) * (data.yty() - fit.rss))
}

fn zellner_unknown(data: &Dataset, model: &ModelIndex, tau: f64, ig: &InvGammaHyper) -> Result<f64> {
    let st = s_tilde_zellner(data, model, tau, ig.l_phi)?;
    assert!(st > 0.0, "shrunken residual sum must be positive");
    let log_det = model.size() as f64 * (1.0 + tau).ln();
    Ok(ig_marginal(data.n() as f64, log_det, st, ig))
}

/// Posterior ingredients of the Normal prior `θ | φ ~ N(0, τφV)`.
#[derive(Clone, Debug)]
pub struct NormalVFit {
    pub log_evidence: f64,
    pub s_tilde: f64,
    /// Eigenvalues of `V_k X_k'X_k`, decreasing.
    pub rho: Vec<f64>,
    /// `θ̃ = (X'X + V^{-1}/τ)^{-1} X'y`.
    pub theta_tilde: DVector<f64>,
    /// Cholesky factor `L` of `A = X'X + V^{-1}/τ`.
    pub a_chol_l: DMatrix<f64>,
}

pub fn normal_v(
    data: &Dataset,
    model: &ModelIndex,
    tau: f64,
    v: &PriorCovariance,
    ig: &InvGammaHyper,
) -> Result<NormalVFit> {
    let n = data.n() as f64;
    if model.is_empty() {
        let st = ig.l_phi + data.yty();
        return Ok(NormalVFit {
            log_evidence: ig_marginal(n, 0.0, st, ig),
            s_tilde: st,
            rho: Vec::new(),
            theta_tilde: DVector::zeros(0),
            a_chol_l: DMatrix::zeros(0, 0),
        });
    }
    let fit = data.fit(model)?;
    let vinv = v.inverse_block(&fit.gram, model.indices())?;
    let rho = eig_vg(&vinv, &fit.gram).map_err(|e| {
        BvsError::Numeric(format!("eigen-solve for model {model}: {e}"))
    })?;
    let a = &fit.gram + &vinv / tau;
    let (ac, _) = robust_cholesky(&a, &|| model.to_string())?;
    let theta_tilde = ac.solve(&fit.xty);
    let st = ig.l_phi + data.yty() - fit.xty.dot(&theta_tilde);
    assert!(st > 0.0, "shrunken residual sum must be positive");
    let log_det: f64 = rho.iter().map(|r| (tau * r).ln_1p()).sum();
    Ok(NormalVFit {
        log_evidence: ig_marginal(n, log_det, st, ig),
        s_tilde: st,
        rho,
        theta_tilde,
        a_chol_l: ac.l(),
    })
}

fn pmom(
    data: &Dataset,
    model: &ModelIndex,
    tau: f64,
    ig: &InvGammaHyper,
    draws: usize,
    seed: u64,
) -> Result<LogEvidence> {
    if !data.is_standardized(1e-8) {
        return Err(BvsError::Validation(
            "product-moment prior requires zero-mean, unit-variance columns".into(),
        ));
    }
    let nv = normal_v(data, model, tau, &PriorCovariance::DiagGramInverse, ig)?;
    if model.is_empty() {
        return Ok(LogEvidence::exact(nv.log_evidence));
    }
    let (log_mean, se, warn) = pmom_moment(data, model, tau, ig, &nv, draws, seed)?;
    Ok(LogEvidence {
        value: nv.log_evidence + log_mean,
        mc_se: se,
        precision_warning: warn,
    })
}

/// MC estimate of `log E[∏_j θ_j² x_j'x_j / (τφ) | y]` under the Normal-IG posterior.
pub(crate) fn pmom_moment(
    data: &Dataset,
    model: &ModelIndex,
    tau: f64,
    ig: &InvGammaHyper,
    nv: &NormalVFit,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64, bool)> {
    let k = model.size();
    let n = data.n() as f64;
    let gdiag: Vec<f64> = model
        .indices()
        .iter()
        .map(|&j| data.gram()[(j, j)])
        .collect();
    let lt = nv.a_chol_l.transpose();
    let shape = 0.5 * (ig.a_phi + n);
    let gamma = Gamma::new(shape, 1.0).map_err(|e| BvsError::Numeric(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logs = Vec::with_capacity(draws);
    let mut z = DVector::zeros(k);
    for _ in 0..draws {
        let phi = 0.5 * nv.s_tilde / gamma.sample(&mut rng);
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        let dev = lt
            .solve_upper_triangular(&z)
            .ok_or_else(|| BvsError::Numeric("triangular solve failed".into()))?;
        let mut acc = 0.0;
        for i in 0..k {
            let th = nv.theta_tilde[i] + phi.sqrt() * dev[i];
            acc += (th * th * gdiag[i] / (tau * phi)).ln();
        }
        logs.push(acc);
    }
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vals: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let mean = vals.iter().sum::<f64>() / draws as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws as f64 - 1.0);
    let se = var.sqrt() / (draws as f64).sqrt() / mean;
    let log_mean = m + mean.ln();
    let warn = !log_mean.is_finite() || log_mean < -700.0 || se > 0.5;
    Ok((log_mean, se, warn))
}

fn expect_variant<'a>(spec: &'a CoefPrior, want: &str) -> Result<&'a CoefPrior> {
    let ok = matches!(
        (spec, want),
        (CoefPrior::ZellnerKnownPhi { .. }, "zellner-known")
            | (CoefPrior::ZellnerUnknownPhi { .. }, "zellner-unknown")
            | (CoefPrior::NormalV { .. }, "normal-v")
            | (CoefPrior::Pmom { .. }, "pmom")
    );
    if ok {
        Ok(spec)
    } else {
        Err(BvsError::InvalidInput(format!("expected a {want} prior")))
    }
}

pub fn log_bf_zellner_known(data: &Dataset, t: &ModelIndex, m: &ModelIndex, spec: &CoefPrior) -> Result<f64> {
    expect_variant(spec, "zellner-known")?.log_bayes_factor(data, t, m).map(|v| v.0)
}

pub fn log_bf_zellner_unknown(data: &Dataset, t: &ModelIndex, m: &ModelIndex, spec: &CoefPrior) -> Result<f64> {
    expect_variant(spec, "zellner-unknown")?.log_bayes_factor(data, t, m).map(|v| v.0)
}

pub fn log_bf_normal_v(data: &Dataset, t: &ModelIndex, m: &ModelIndex, spec: &CoefPrior) -> Result<f64> {
    expect_variant(spec, "normal-v")?.log_bayes_factor(data, t, m).map(|v| v.0)
}

/// Log Bayes factor under the product-moment prior with its MC standard error.
pub fn log_bf_pmom(data: &Dataset, t: &ModelIndex, m: &ModelIndex, spec: &CoefPrior) -> Result<(f64, f64)> {
    expect_variant(spec, "pmom")?.log_bayes_factor(data, t, m)
}

/// Known-variance Zellner log Bayes factor from the residual-sum difference `W_mt = s_t - s_m`.
pub fn log_bf_zellner_known_from_w(w_mt: f64, p_t: usize, p_m: usize, tau: f64, phi: f64) -> f64 {
    -tau / (2.0 * phi * (1.0 + tau)) * w_mt + 0.5 * (p_m as f64 - p_t as f64) * (1.0 + tau).ln()
}

/// Bayesian F statistic built from shrunken residual sums.
pub fn bayes_f_statistic(st_t: f64, st_m: f64, p_t: usize, p_m: usize, n: usize) -> f64 {
    (st_t - st_m) / (p_m as f64 - p_t as f64) / (st_m / (n as f64 - p_m as f64))
}

/// Both sides of the shrunken-residual and Bayesian-F inequalities for a pair `(t, m)`.
#[derive(Clone, Debug)]
pub struct FstatBoundReport {
    pub s_t: f64,
    pub s_tilde_t: f64,
    pub ratio: f64,
    /// `1 + (s_0 - s_t) / (s_t (1 + τρ_min))`.
    pub ratio_upper: f64,
    /// `(n - p_m)(s̃_t - s̃_m)/s̃_m`, i.e. `(p_m - p_t) F̃_mt`.
    pub f_lhs: f64,
    /// `τρ/(1+τρ) (p_m - p_t) F_mt + p_m F_m0 / (1+τρ)`.
    pub f_rhs: f64,
    /// Extra terms `l_φ / s_t` and `(n - p_m) l_φ / s_m` carried by the prior scale.
    pub ratio_offset: f64,
    pub f_offset: f64,
    pub ratio_lower_holds: bool,
    /// Upper ratio bound evaluated literally, without the prior-scale offset.
    pub ratio_upper_literal: bool,
    pub f_literal: bool,
    /// Bounds including the `l_φ` offsets.
    pub ratio_upper_holds: bool,
    pub f_holds: bool,
}

pub fn fstat_bayes_bound_check(
    data: &Dataset,
    t: &ModelIndex,
    m: &ModelIndex,
    spec: &CoefPrior,
) -> Result<FstatBoundReport> {
    let (tau, v, ig) = match spec {
        CoefPrior::NormalV { tau, v, ig } => (*tau, v, ig),
        _ => return Err(BvsError::InvalidInput("expected a normal-v prior".into())),
    };
    let n = data.n();
    if m.size() >= n {
        return Err(BvsError::Degenerate("p_m must be below n".into()));
    }
    let s0 = data.yty();
    let s_t = data.fit(t)?.rss;
    let s_m = data.fit(m)?.rss;
    let nt = normal_v(data, t, tau, v, ig)?;
    let nm = normal_v(data, m, tau, v, ig)?;
    let inv = match nt.rho.iter().cloned().filter(|r| *r > 0.0).last() {
        Some(r) => 1.0 / (1.0 + tau * r),
        None => 0.0,
    };
    let ratio = nt.s_tilde / s_t;
    let ratio_upper = 1.0 + (s0 - s_t) / s_t * inv;
    let dfm = (n - m.size()) as f64;
    let f_lhs = dfm * (nt.s_tilde - nm.s_tilde) / nm.s_tilde;
    let f_rhs = dfm * ((1.0 - inv) * (s_t - s_m) / s_m + inv * (s0 - s_m) / s_m);
    let ratio_offset = ig.l_phi / s_t;
    let f_offset = dfm * ig.l_phi / s_m;
    let tol = 1e-10;
    let le = |a: f64, b: f64| a <= b + tol * (1.0 + b.abs());
    Ok(FstatBoundReport {
        s_t,
        s_tilde_t: nt.s_tilde,
        ratio,
        ratio_upper,
        f_lhs,
        f_rhs,
        ratio_offset,
        f_offset,
        ratio_lower_holds: le(1.0, ratio),
        ratio_upper_literal: le(ratio, ratio_upper),
        f_literal: le(f_lhs, f_rhs),
        ratio_upper_holds: le(ratio, ratio_upper + ratio_offset),
        f_holds: le(f_lhs, f_rhs + f_offset),
    })
}
