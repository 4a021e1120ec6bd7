//! Size-based prior distributions over the model space.
//!
//! Every prior assigns `p(M) = P(p_k = l) / C(p, l)` to a model of size `l`,
//! with the size masses renormalized over `0..=p̄`.

use crate::error::{BvsError, Result};
use crate::linear::ModelIndex;
use crate::numerics::{ln_choose, log_sum_exp};

#[derive(Clone, Debug, PartialEq)]
pub enum ModelPriorKind {
    /// Uniform over models, so `P(p_k = l) ∝ C(p, l)`.
    Uniform,
    /// Uniform over sizes.
    BetaBinomial11,
    /// `P(p_k = l) ∝ p^{-c l}`.
    Complexity(f64),
    /// Unnormalized size weights `w_0..w_p̄`.
    CustomSizeWeights(Vec<f64>),
}

/// Log prior probability of a model, or an explicit out-of-support marker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LogPrior {
    Finite(f64),
    OutOfSupport,
}

impl LogPrior {
    pub fn value(self) -> f64 {
        match self {
            LogPrior::Finite(v) => v,
            LogPrior::OutOfSupport => f64::NEG_INFINITY,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelPrior {
    kind: ModelPriorKind,
    p: usize,
    pbar: usize,
    log_size_mass: Vec<f64>,
}

impl ModelPrior {
    pub fn new(kind: ModelPriorKind, p: usize, pbar: usize) -> Result<Self> {
        if pbar > p {
            return Err(BvsError::InvalidInput(format!("p̄ = {pbar} exceeds p = {p}")));
        }
        let logw: Vec<f64> = match &kind {
            ModelPriorKind::Uniform => (0..=pbar).map(|l| ln_choose(p, l)).collect(),
            ModelPriorKind::BetaBinomial11 => vec![0.0; pbar + 1],
            ModelPriorKind::Complexity(c) => {
                if !(*c > 0.0) {
                    return Err(BvsError::InvalidInput("complexity c must be positive".into()));
                }
                let lp = (p as f64).ln();
                (0..=pbar).map(|l| -c * l as f64 * lp).collect()
            }
            ModelPriorKind::CustomSizeWeights(w) => {
                if w.len() != pbar + 1 {
                    return Err(BvsError::InvalidInput(format!(
                        "need {} size weights, got {}",
                        pbar + 1,
                        w.len()
                    )));
                }
                if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(BvsError::InvalidInput("size weights must be positive".into()));
                }
                w.iter().map(|v| v.ln()).collect()
            }
        };
        let z = log_sum_exp(&logw);
        let log_size_mass = logw.iter().map(|w| w - z).collect();
        Ok(Self {
            kind,
            p,
            pbar,
            log_size_mass,
        })
    }

    pub fn kind(&self) -> &ModelPriorKind {
        &self.kind
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn pbar(&self) -> usize {
        self.pbar
    }

    /// `log P(p_k = l)`.
    pub fn log_size_mass(&self, l: usize) -> f64 {
        self.log_size_mass
            .get(l)
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }

    /// Log prior of any single model of size `l`.
    pub fn log_prior_size(&self, l: usize) -> LogPrior {
        if l > self.pbar {
            LogPrior::OutOfSupport
        } else {
            LogPrior::Finite(self.log_size_mass[l] - ln_choose(self.p, l))
        }
    }

    pub fn log_prior(&self, model: &ModelIndex) -> LogPrior {
        self.log_prior_size(model.size())
    }

    /// `log r_{a,b} = log p(M_a) - log p(M_b)` for model sizes `a`, `b`.
    pub fn log_r(&self, a: usize, b: usize) -> f64 {
        self.log_prior_size(a).value() - self.log_prior_size(b).value()
    }

    pub fn log_prior_odds(&self, m: &ModelIndex, t: &ModelIndex) -> f64 {
        self.log_r(m.size(), t.size())
    }
}

/// Finite-sample pairwise-consistency diagnostic for one model size.
#[derive(Clone, Debug)]
pub struct ConsistencyRow {
    pub p_m: usize,
    pub log_r: f64,
    /// `log( r_{p_m,p_t} / τ^{β₂(p_m - p_t)/2} )`.
    pub log_c1: f64,
    /// `log r_{p_m,p_t} - λ^{β₃} - (p_m - p_t) log(1 + τ)`.
    pub c2: f64,
    /// Sufficient signal threshold for sizes below `p_t` (built-in priors only).
    pub threshold: Option<f64>,
    pub lambda_power: f64,
    pub threshold_met: Option<bool>,
}

pub fn consistency_diagnostics(
    prior: &ModelPrior,
    tau: f64,
    p_t: usize,
    lambda: f64,
    beta2: f64,
    beta3: f64,
) -> Result<Vec<ConsistencyRow>> {
    if !(tau > 0.0 && lambda >= 0.0) {
        return Err(BvsError::InvalidInput("tau must be positive, lambda non-negative".into()));
    }
    if !(beta2 > 0.0 && beta2 < 1.0 && beta3 > 0.0 && beta3 < 1.0) {
        return Err(BvsError::InvalidInput("beta2, beta3 must lie in (0,1)".into()));
    }
    if p_t > prior.pbar() {
        return Err(BvsError::InvalidInput("p_t exceeds p̄".into()));
    }
    let p = prior.p() as f64;
    let lp = lambda.powf(beta3);
    Ok((0..=prior.pbar())
        .map(|p_m| {
            let d = p_m as f64 - p_t as f64;
            let log_r = prior.log_r(p_m, p_t);
            let threshold = if p_m < p_t {
                let gap = -d;
                let pm = p_m as f64;
                match prior.kind() {
                    ModelPriorKind::Uniform => Some(gap * tau.ln()),
                    ModelPriorKind::BetaBinomial11 => {
                        Some(gap * ((p - p_t as f64) * tau / pm).ln())
                    }
                    ModelPriorKind::Complexity(c) => {
                        Some(gap * (p.powf(*c) * (p - p_t as f64) * tau / pm).ln())
                    }
                    ModelPriorKind::CustomSizeWeights(_) => None,
                }
            } else {
                None
            };
            ConsistencyRow {
                p_m,
                log_r,
                log_c1: log_r - beta2 * d / 2.0 * tau.ln(),
                c2: log_r - lp - d * (1.0 + tau).ln(),
                threshold,
                lambda_power: lp,
                threshold_met: threshold.map(|t| lp > t),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_flat() {
        let pr = ModelPrior::new(ModelPriorKind::Uniform, 6, 4).unwrap();
        assert!((pr.log_r(1, 3)).abs() < 1e-12);
        let total: f64 = (0..=4)
            .map(|l| (ln_choose(6, l) + pr.log_prior_size(l).value()).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beta_binomial_size_one() {
        let pr = ModelPrior::new(ModelPriorKind::BetaBinomial11, 5, 5).unwrap();
        let m = ModelIndex::new(vec![2]).unwrap();
        let want = (1.0f64 / 6.0).ln() - 5f64.ln();
        assert!((pr.log_prior(&m).value() - want).abs() < 1e-12);
        let a = ModelIndex::new(vec![0, 1]).unwrap();
        let b = ModelIndex::new(vec![3]).unwrap();
        assert!((pr.log_prior_odds(&a, &b) - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn out_of_support_is_tagged() {
        let pr = ModelPrior::new(ModelPriorKind::BetaBinomial11, 5, 2).unwrap();
        assert_eq!(pr.log_prior_size(3), LogPrior::OutOfSupport);
        assert_eq!(pr.log_prior_size(3).value(), f64::NEG_INFINITY);
    }

    #[test]
    fn beta_binomial_threshold_example() {
        let pr = ModelPrior::new(ModelPriorKind::BetaBinomial11, 100, 100).unwrap();
        let rows = consistency_diagnostics(&pr, 100.0, 5, 30.0, 0.5, 0.5).unwrap();
        let t = rows[3].threshold.unwrap();
        assert!((t - 2.0 * (9500.0f64 / 3.0).ln()).abs() < 1e-10);
    }

    #[test]
    fn uniform_c1_below_one_for_larger_models() {
        let pr = ModelPrior::new(ModelPriorKind::Uniform, 10, 10).unwrap();
        let rows = consistency_diagnostics(&pr, 50.0, 2, 10.0, 0.5, 0.5).unwrap();
        for r in rows.iter().filter(|r| r.p_m > 2) {
            assert!(r.log_c1 < 0.0);
        }
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(ModelPrior::new(ModelPriorKind::CustomSizeWeights(vec![1.0, 0.0]), 3, 1).is_err());
        assert!(ModelPrior::new(ModelPriorKind::Complexity(0.0), 3, 1).is_err());
    }
}
