//! L0-penalized maximized likelihoods and their normalized form.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{BvsError, Result};
use crate::linear::{Dataset, ModelIndex};
use crate::numerics::{ln_choose, softmax};

/// Penalty `η(p_m, n, p)` supplied by the caller.
pub type EtaFn = Arc<dyn Fn(usize, usize, usize) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum L0Criterion {
    Bic,
    /// Extended BIC with `ξ ∈ (0, 1]`.
    Ebic(f64),
    Ric,
    Custom(EtaFn),
}

impl fmt::Debug for L0Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            L0Criterion::Bic => write!(f, "Bic"),
            L0Criterion::Ebic(x) => write!(f, "Ebic({x})"),
            L0Criterion::Ric => write!(f, "Ric"),
            L0Criterion::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl FromStr for L0Criterion {
    type Err = BvsError;

    /// Parses `bic`, `ric` or `ebic:<xi>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "bic" => Ok(L0Criterion::Bic),
            "ric" => Ok(L0Criterion::Ric),
            _ => {
                let xi = s
                    .strip_prefix("ebic:")
                    .ok_or_else(|| BvsError::InvalidInput(format!("unknown criterion {s:?}")))?
                    .parse::<f64>()
                    .map_err(|e| BvsError::InvalidInput(format!("bad EBIC xi: {e}")))?;
                let c = L0Criterion::Ebic(xi);
                c.validate()?;
                Ok(c)
            }
        }
    }
}

impl L0Criterion {
    /// Akaike's criterion, only available as a custom penalty.
    pub fn aic() -> Self {
        L0Criterion::Custom(Arc::new(|pm, _, _| pm as f64))
    }

    pub fn validate(&self) -> Result<()> {
        if let L0Criterion::Ebic(xi) = self {
            if !(*xi > 0.0 && *xi <= 1.0) {
                return Err(BvsError::InvalidInput("EBIC xi must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }

    /// `η_m` for a model with `p_m` covariates.
    pub fn penalty(&self, p_m: usize, n: usize, p: usize) -> f64 {
        let pm = p_m as f64;
        match self {
            L0Criterion::Bic => 0.5 * pm * (n as f64).ln(),
            L0Criterion::Ric => 0.5 * pm * ((p * p) as f64).ln(),
            L0Criterion::Ebic(xi) => 0.5 * pm * (n as f64).ln() + xi * ln_choose(p, p_m),
            L0Criterion::Custom(f) => f(p_m, n, p),
        }
    }
}

pub fn penalty(model: &ModelIndex, n: usize, p: usize, spec: &L0Criterion) -> f64 {
    spec.penalty(model.size(), n, p)
}

/// Penalized maximized log-likelihood with Gaussian plug-ins `φ̂ = s_m / n`.
pub fn log_h_from_rss(s_m: f64, p_m: usize, n: usize, p: usize, spec: &L0Criterion) -> Result<f64> {
    if !(s_m > 0.0) {
        return Err(BvsError::Degenerate(
            "model interpolates the data (zero residual sum)".into(),
        ));
    }
    let nf = n as f64;
    Ok(-0.5 * nf * ((2.0 * std::f64::consts::PI * s_m / nf).ln() + 1.0) - spec.penalty(p_m, n, p))
}

pub fn log_h(data: &Dataset, model: &ModelIndex, spec: &L0Criterion) -> Result<f64> {
    let s = data.fit(model)?.rss;
    log_h_from_rss(s, model.size(), data.n(), data.p(), spec)
}

/// Normalized criterion over the supplied model universe.
pub fn normalized_l0(data: &Dataset, models: &[ModelIndex], spec: &L0Criterion) -> Result<Vec<f64>> {
    if models.is_empty() {
        return Err(BvsError::InvalidInput("empty model list".into()));
    }
    let lh = models
        .iter()
        .map(|m| log_h(data, m, spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(softmax(&lh))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_penalties() {
        assert!((L0Criterion::Bic.penalty(2, 100, 10) - 100f64.ln()).abs() < 1e-12);
        assert!((L0Criterion::Ric.penalty(1, 50, 10) - 10f64.ln()).abs() < 1e-12);
        let e = L0Criterion::Ebic(1.0).penalty(3, 100, 50);
        assert!((e - (1.5 * 100f64.ln() + 19600f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn parses_flags() {
        assert!(matches!("bic".parse::<L0Criterion>().unwrap(), L0Criterion::Bic));
        assert!(matches!("ebic:0.5".parse::<L0Criterion>().unwrap(), L0Criterion::Ebic(x) if x == 0.5));
        assert!("ebic:1.5".parse::<L0Criterion>().is_err());
        assert!("aic".parse::<L0Criterion>().is_err());
    }

    #[test]
    fn zero_rss_is_an_error() {
        assert!(log_h_from_rss(0.0, 1, 10, 3, &L0Criterion::Bic).is_err());
    }
}
