//! Finite-sample tail inequalities for chi-square and F variables, their
//! integrals over posterior-probability thresholds, and the conversion from
//! tail bounds to bounds on expected posterior probabilities.
//!
//! Every bound clamps to 1 instead of failing; `applicable` records whether
//! the inequality's preconditions held at the supplied arguments.

use crate::error::{BvsError, Result};
use crate::numerics::{golden_section, integrate};

const TWO_MINUS_SQRT3: f64 = 2.0 - 1.732_050_807_568_877_2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailResult {
    /// Reported bound, clamped to `[0, 1]`; 1 when not applicable.
    pub bound: f64,
    /// Unclamped value of the expression (`+inf` when not applicable).
    pub raw: f64,
    pub applicable: bool,
    /// Free parameter used, if the inequality has one.
    pub param: Option<f64>,
}

impl TailResult {
    fn ok(raw: f64, param: Option<f64>) -> Self {
        let raw = if raw.is_nan() { f64::INFINITY } else { raw };
        Self {
            bound: raw.clamp(0.0, 1.0),
            raw,
            applicable: true,
            param,
        }
    }

    fn vacuous() -> Self {
        Self {
            bound: 1.0,
            raw: f64::INFINITY,
            applicable: false,
            param: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Chi-square
// ---------------------------------------------------------------------------

fn chernoff_central(nu: f64, w: f64) -> f64 {
    (0.5 * nu * (std::f64::consts::E * w / nu).ln() - 0.5 * w).exp()
}

/// `P(χ²_ν > w) ≤ (ew/ν)^{ν/2} e^{-w/2}` for `w > ν`.
pub fn chisq_right(nu: f64, w: f64) -> TailResult {
    if !(nu > 0.0 && w > nu) {
        return TailResult::vacuous();
    }
    TailResult::ok(chernoff_central(nu, w), None)
}

/// Same expression, bounding `P(χ²_ν < w)` for `0 < w < ν`.
pub fn chisq_left(nu: f64, w: f64) -> TailResult {
    if !(nu > 0.0 && w < nu) {
        return TailResult::vacuous();
    }
    if w <= 0.0 {
        return TailResult::ok(0.0, None);
    }
    TailResult::ok(chernoff_central(nu, w), None)
}

/// Moment-generating-function bound `exp{λs/(1-2s) - sw} / (1-2s)^{ν/2}`.
pub fn ncchisq_mgf_bound(nu: f64, lambda: f64, w: f64, s: f64) -> f64 {
    let q = 1.0 - 2.0 * s;
    (lambda * s / q - s * w - 0.5 * nu * q.ln()).exp()
}

/// Minimizer of [`ncchisq_mgf_bound`] in `s`.
pub fn ncchisq_optimal_s(nu: f64, lambda: f64, w: f64) -> f64 {
    0.5 - nu / (4.0 * w) - 0.5 * (nu * nu / (4.0 * w * w) + lambda / w).sqrt()
}

/// `P(χ²_ν(λ) < w)` for `w < λ`.  Without `s`, uses `s = ½ - ½√(λ/w)`.
pub fn ncchisq_left(nu: f64, lambda: f64, w: f64, s: Option<f64>) -> TailResult {
    if !(nu > 0.0 && w < lambda) {
        return TailResult::vacuous();
    }
    if w <= 0.0 {
        return TailResult::ok(0.0, None);
    }
    match s {
        Some(s) if s < 0.0 => TailResult::ok(ncchisq_mgf_bound(nu, lambda, w, s), Some(s)),
        Some(_) => TailResult::vacuous(),
        None => {
            let s = 0.5 - 0.5 * (lambda / w).sqrt();
            let r = lambda.sqrt() - w.sqrt();
            let log = -0.5 * r * r - 0.25 * nu * (lambda / w).ln();
            TailResult::ok(log.exp(), Some(s))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NcRightVariant {
    /// `s = ½ - ½√(λ/w)`.
    SqrtChoice,
    /// `s = ½ - ν/(2w)`; reduces to the central bound at `λ = 0`.
    NuChoice,
    /// Closed-form minimizer of the MGF bound.
    Optimal,
}

/// `P(χ²_ν(λ) > w)` for `w > λ + ν`.
pub fn ncchisq_right(nu: f64, lambda: f64, w: f64, variant: NcRightVariant) -> TailResult {
    if !(nu > 0.0 && lambda >= 0.0 && w > lambda + nu) {
        return TailResult::vacuous();
    }
    match variant {
        NcRightVariant::SqrtChoice => {
            if lambda <= 0.0 {
                return TailResult::vacuous();
            }
            let r = 1.0 - (lambda / w).sqrt();
            let log = -0.5 * w * r * r + 0.25 * nu * (w / lambda).ln();
            TailResult::ok(log.exp(), Some(0.5 - 0.5 * (lambda / w).sqrt()))
        }
        NcRightVariant::NuChoice => {
            let log = 0.5 * nu * (std::f64::consts::E * w / nu).ln()
                - 0.5 * lambda
                - 0.5 * w * (1.0 - lambda / nu);
            TailResult::ok(log.exp(), Some(0.5 - nu / (2.0 * w)))
        }
        NcRightVariant::Optimal => {
            let s = ncchisq_optimal_s(nu, lambda, w);
            TailResult::ok(ncchisq_mgf_bound(nu, lambda, w, s), Some(s))
        }
    }
}

// ---------------------------------------------------------------------------
// F ratios: W = U₁ν₂/(U₂ν₁), bounds on P(ν₁W > w) or P(ν₁W < w)
// ---------------------------------------------------------------------------

/// `P(U₂/ν₂ < s) ≤ (es)^{ν₂/2} e^{-sν₂/2}` for `s < 1`.
fn denominator_left(nu2: f64, s: f64) -> f64 {
    (0.5 * nu2 * (1.0 + s.ln() - s)).exp()
}

/// Right-tail bound for a given split `s ∈ ((λ+ν₁)/w, 1)`.
fn f_right_given_s(nu1: f64, nu2: f64, lambda: f64, w: f64, s: f64) -> f64 {
    if !(s > (lambda + nu1) / w && s < 1.0) {
        return f64::INFINITY;
    }
    let ws = w * s;
    let first = if lambda == 0.0 {
        chernoff_central(nu1, ws)
    } else {
        ncchisq_mgf_bound(nu1, lambda, ws, ncchisq_optimal_s(nu1, lambda, ws))
    };
    first + denominator_left(nu2, s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FRightMode {
    /// Closed form with `s = 1 - √(2w/ν₂)`, on the restricted domain.
    ClosedForm,
    Given(f64),
    /// Golden-section minimization over admissible `s`.
    Optimal,
}

/// Bound on `P(ν₁W > w)`.
pub fn f_right(nu1: f64, nu2: f64, lambda: f64, w: f64, mode: FRightMode) -> TailResult {
    if !(nu1 >= 1.0 && nu2 >= 1.0 && lambda >= 0.0 && w > lambda + nu1) {
        return TailResult::vacuous();
    }
    match mode {
        FRightMode::Given(s) => {
            let v = f_right_given_s(nu1, nu2, lambda, w, s);
            if v.is_finite() {
                TailResult::ok(v, Some(s))
            } else {
                TailResult::vacuous()
            }
        }
        FRightMode::Optimal => {
            let lo = (lambda + nu1) / w;
            let (s, v) = golden_section(|s| f_right_given_s(nu1, nu2, lambda, w, s), lo, 1.0, 1e-8);
            if v.is_finite() {
                TailResult::ok(v, Some(s))
            } else {
                TailResult::vacuous()
            }
        }
        FRightMode::ClosedForm => {
            if !(nu2 > nu1 / TWO_MINUS_SQRT3 && w > (nu1 + lambda) / TWO_MINUS_SQRT3 && w < nu2) {
                return TailResult::vacuous();
            }
            let s = 1.0 - (2.0 * w / nu2).sqrt();
            // The closed form rests on the split s, which must itself be admissible.
            if !(s > 0.0 && w * s > nu1 + lambda) {
                return TailResult::vacuous();
            }
            let ws = w * s;
            let first = if lambda == 0.0 {
                (0.5 * nu1 * (std::f64::consts::E * w / nu1).ln() - 0.5 * ws).exp()
            } else {
                let r = 1.0 - (lambda / ws).sqrt();
                (0.25 * nu1 * (w / lambda).ln() - 0.5 * ws * r * r).exp()
            };
            TailResult::ok(first + (-0.5 * w).exp(), Some(s))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FLeftT {
    /// `t = ½ - ½√(λ/(ws))`, requires `ws < λ`.
    Closed,
    Given(f64),
    Optimal,
}

/// Bound on `P(ν₁W < w)` for split `s ≥ 1` and MGF parameter `t < 0`.
pub fn f_left(nu1: f64, nu2: f64, lambda: f64, w: f64, s: f64, t: FLeftT) -> TailResult {
    if !(nu1 >= 1.0 && nu2 >= 1.0 && lambda >= 0.0 && s >= 1.0) {
        return TailResult::vacuous();
    }
    if w <= 0.0 {
        return TailResult::ok(0.0, None);
    }
    let ws = w * s;
    let second = (-0.5 * nu2 * (s - 1.0 - s.ln())).exp();
    let first_at = |t: f64| ncchisq_mgf_bound(nu1, lambda, ws, t);
    match t {
        FLeftT::Closed => {
            if !(ws < lambda) {
                return TailResult::vacuous();
            }
            let r = 1.0 - (ws / lambda).sqrt();
            let first = (-0.5 * lambda * r * r - 0.25 * nu1 * (lambda / ws).ln()).exp();
            TailResult::ok(first + second, Some(0.5 - 0.5 * (lambda / ws).sqrt()))
        }
        FLeftT::Given(t) => {
            if !(t < 0.0) {
                return TailResult::vacuous();
            }
            TailResult::ok(first_at(t) + second, Some(t))
        }
        FLeftT::Optimal => {
            let (t, v) = golden_section(first_at, -1e3, -1e-12, 1e-10);
            TailResult::ok(v + second, Some(t))
        }
    }
}

/// Leading constant of the F moment bound.
pub fn f_moment_constant(nu1: f64) -> Option<f64> {
    use std::f64::consts::{E, PI};
    if (nu1 - 1.0).abs() < 1e-12 {
        Some(E.powf(2.5) / (PI * 2f64.sqrt()))
    } else if (nu1 - 2.0).abs() < 1e-12 {
        Some(E * E / (2.0 * PI).sqrt())
    } else if nu1 > 2.0 {
        Some(E * E / (2.0 * PI))
    } else {
        None
    }
}

fn log_den(nu1: f64) -> f64 {
    if nu1 > 2.0 + 1e-12 {
        0.5 * (nu1 - 1.0) * (0.5 * nu1 - 1.0).ln()
    } else {
        0.0
    }
}

fn f_moment_general(nu1: f64, nu2: f64, w: f64, s: f64, a: f64) -> f64 {
    let h = 0.5 * nu2;
    let log = a.ln()
        + s * (nu2 * (s + 0.5 * nu1 - 1.0) / (nu1 * w * (h - s - 1.0))).ln()
        + 0.5 * (nu1 - 1.0) * (s + 0.5 * nu1 - 1.0).ln()
        - log_den(nu1)
        + 0.5 * (nu2 - 1.0) * (1.0 - s / (h - 1.0)).ln();
    log.exp()
}

/// Polynomial bound on `P(F > w)` for `F ~ F(ν₁, ν₂)`.  Without `s`, uses
/// `s = min{(w-1)ν₁/2 + 1, ν₂/2 - 2}`.
pub fn f_moment(nu1: f64, nu2: f64, w: f64, s: Option<f64>) -> TailResult {
    let Some(a) = f_moment_constant(nu1) else {
        return TailResult::vacuous();
    };
    if !(nu2 > 4.0 && w > nu2 / (nu2 - 2.0)) {
        return TailResult::vacuous();
    }
    let s_max = 0.5 * nu2 - 2.0;
    let s = s.unwrap_or_else(|| ((w - 1.0) * nu1 / 2.0 + 1.0).min(s_max));
    if !(s >= 1.0 && s <= s_max) {
        return TailResult::vacuous();
    }
    TailResult::ok(f_moment_general(nu1, nu2, w, s, a), Some(s))
}

/// The two regime-specific closed forms of the moment bound with the default
/// `s`, as `(display, simplified)`.  Below the switch point
/// `w = (ν₁+ν₂-6)/ν₁` the simplified value replaces two factors by
/// exponential upper bounds; above it both entries coincide.
pub fn f_moment_regimes(nu1: f64, nu2: f64, w: f64) -> Option<(f64, f64)> {
    let a = f_moment_constant(nu1)?;
    if !(nu2 > 4.0 && w > nu2 / (nu2 - 2.0)) {
        return None;
    }
    let ld = log_den(nu1);
    if w <= (nu1 + nu2 - 6.0) / nu1 {
        let k = nu1 * (w - 1.0);
        let base = 1.0 + (k + 4.0) / (nu2 - k - 4.0);
        let common = a.ln() + 0.5 * (nu1 - 1.0) * (0.5 * nu1 * w).ln() - ld;
        let display = common
            + (0.5 * k + 1.0) * base.ln()
            + 0.5 * (nu2 - 1.0) * (1.0 - (0.5 * k - 1.0) / (0.5 * nu2 - 1.0)).ln();
        let simplified = common
            + k * (k + 2.0) / (2.0 * (nu2 - k - 2.0))
            + base.ln()
            - 0.5 * w * nu1
            + 0.5 * (nu1 - 1.0)
            + 1.5;
        Some((display.exp(), simplified.exp()))
    } else {
        let v = (a * std::f64::consts::E).ln()
            + (0.5 * nu2 - 2.0) * ((nu1 + nu2 - 6.0) / (nu1 * w)).ln()
            + 0.5 * (nu1 - 1.0) * (0.5 * nu1 + 0.5 * nu2 - 3.0).ln()
            - ld
            - 1.5 * (0.5 * nu2 - 1.0).ln();
        Some((v.exp(), v.exp()))
    }
}

// ---------------------------------------------------------------------------
// Integrals of tails over u ∈ (u̲, ū) at thresholds d·log(g/(1/u - 1))
// ---------------------------------------------------------------------------

fn check_u_range(d: f64, g: f64, u_lo: f64, u_hi: f64) -> Result<()> {
    if !(u_lo > 0.0 && u_lo < u_hi && u_hi < 1.0) {
        return Err(BvsError::InvalidInput("need 0 < u_lo < u_hi < 1".into()));
    }
    if !(d > 0.0 && g >= 1.0 / u_lo - 1.0) {
        return Err(BvsError::InvalidInput("need d > 0 and g ≥ 1/u_lo - 1".into()));
    }
    Ok(())
}

/// Integral bound when `P(W > w) ≤ b w^c e^{-lw}`, with separate forms for
/// `ld = 1`, `ld < 1` and `ld > 1`.
pub fn int_exp_tails(b: f64, c: f64, l: f64, d: f64, g: f64, u_lo: f64, u_hi: f64) -> Result<f64> {
    check_u_range(d, g, u_lo, u_hi)?;
    if !(b > 0.0 && c >= 0.0 && l > 0.0) {
        return Err(BvsError::InvalidInput("need b > 0, c ≥ 0, l > 0".into()));
    }
    let ld = l * d;
    let top = d * (g / (1.0 / u_hi - 1.0)).ln();
    let lead = b.ln() - ld * g.ln() + if c > 0.0 { c * top.ln() } else { 0.0 };
    let tail = if ld == 1.0 {
        (1.0 / u_lo).ln().ln()
    } else if ld < 1.0 {
        (1.0 - ld) * (u_hi / (1.0 - u_hi)).ln() - (1.0 - ld).ln()
    } else {
        (ld - 1.0) * (1.0 / u_lo - 1.0).ln() - (ld - 1.0).ln()
    };
    Ok((lead + tail).exp())
}

/// Integral bound when `P(W > w) ≤ b / w^c`; the smaller of the two forms.
pub fn int_poly_tails(b: f64, c: f64, d: f64, g: f64, u_lo: f64, u_hi: f64) -> Result<f64> {
    check_u_range(d, g, u_lo, u_hi)?;
    if !(b > 0.0 && c > 1.0) {
        return Err(BvsError::InvalidInput("need b > 0 and c > 1".into()));
    }
    let v = (g / (1.0 / u_lo - 1.0)).ln();
    if !(v > 0.0) {
        return Err(BvsError::InvalidInput("need g > 1/u_lo - 1".into()));
    }
    let first = (b.ln() - c * d.ln() - c * v.ln()).exp();
    let second = (b.ln() - c * d.ln() - (c - 1.0).ln() - (c - 1.0) * v.ln()).exp();
    Ok(first.min(second))
}

/// Bound on `∫₀¹ P(χ²_ν > d log(g/(1/u-1))) du`, in the finite-sample forms
/// for `d = 2`, `d > 2` and `d ∈ (1, 2)`.
pub fn chisq_tail_integral(nu: f64, d: f64, g: f64) -> TailResult {
    if !(nu > 0.0 && d > 1.0 && g > 0.0) {
        return TailResult::vacuous();
    }
    let lg = g.ln();
    // u̲ = 1/(1 + g e^{-ν/d}) must fall below ½.
    if !(lg > nu / d) {
        return TailResult::vacuous();
    }
    let e = std::f64::consts::E;
    let first = 2.0 / (1.0 + g * (-nu / d).exp());
    let second = if (d - 2.0).abs() < 1e-12 {
        let inner = (4.0 * e / nu) * (lg - nu / 4.0);
        (-lg + (lg - nu / 2.0).exp().ln_1p().ln() + 0.5 * nu * inner.ln()).exp()
    } else if d > 2.0 {
        let inner = (2.0 * d * (2.0 / d).exp() / nu) * (lg - nu / (2.0 * d));
        (-lg + 0.5 * nu * inner.ln() - (0.5 * d - 1.0).ln()).exp()
    } else {
        // Constant e^{2 - 1/(2d)} dominates the sharper e^{2 - 2/d} for d < 2.
        let inner = (2.0 * d * (2.0 - 1.0 / (2.0 * d)).exp() / nu) * (lg - nu / (2.0 * d));
        (-(d - 1.0) * lg + 0.5 * nu * inner.ln() - (1.0 - 0.5 * d).ln()).exp()
    };
    TailResult::ok(first + second, None)
}

/// Exponential-tail branch, assembled from both terms of the closed-form F
/// right-tail bound with the threshold range capped at `ω²ν₂/2`.
fn f_integral_exp_branch(nu1: f64, nu2: f64, d: f64, g: f64, omega: f64) -> f64 {
    if !(omega > 0.0 && omega < 1.0 && nu2 > nu1 / TWO_MINUS_SQRT3) {
        return f64::INFINITY;
    }
    let w_lo = (nu1 / TWO_MINUS_SQRT3).max(nu1 / (1.0 - omega));
    let w_hi = 0.5 * omega * omega * nu2;
    if !(w_lo < w_hi) {
        return f64::INFINITY;
    }
    let u_lo = 1.0 / (1.0 + g * (-w_lo / d).exp());
    let u_top = 1.0 / (1.0 + g * (-w_hi / d).exp());
    let u_hi = u_top.min(1.0 - u_lo);
    if !(u_lo < u_hi) {
        return f64::INFINITY;
    }
    let b1 = (0.5 * nu1 * (std::f64::consts::E / nu1).ln()).exp();
    let t1 = int_exp_tails(b1, 0.5 * nu1, 0.5 * (1.0 - omega), d, g, u_lo, u_hi);
    let t2 = int_exp_tails(1.0, 0.0, 0.5, d, g, u_lo, u_hi);
    match (t1, t2) {
        (Ok(a), Ok(b)) => u_lo + (1.0 - u_hi) + a + b,
        _ => f64::INFINITY,
    }
}

/// Polynomial-tail branch from the moment bound, with `u̲ = 1/(1 + G^γ)`
/// where `G = g e^{-x₀/d}` and `x₀` is the start of the moment regime.
fn f_integral_poly_branch(nu1: f64, nu2: f64, d: f64, g: f64, gamma: f64) -> f64 {
    let Some(a) = f_moment_constant(nu1) else {
        return f64::INFINITY;
    };
    if !(nu2 > 6.0 && gamma > 0.0 && gamma < 1.0) {
        return f64::INFINITY;
    }
    let m = nu1 + nu2 - 6.0;
    let c = 0.5 * nu2 - 2.0;
    let x0 = m.max(nu1 * nu2 / (nu2 - 2.0));
    let log_g_big = g.ln() - x0 / d;
    if !(log_g_big > 0.0) {
        return f64::INFINITY;
    }
    let u_lo = 1.0 / (1.0 + (gamma * log_g_big).exp());
    let u_hi = 1.0 - u_lo;
    let log_k = (a * std::f64::consts::E).ln() + c * m.ln() + 0.5 * (nu1 - 1.0) * (0.5 * m).ln()
        - log_den(nu1)
        - 1.5 * (0.5 * nu2 - 1.0).ln();
    match int_poly_tails(log_k.exp(), c, d, g, u_lo, u_hi) {
        Ok(v) => 2.0 * u_lo + v,
        Err(_) => f64::INFINITY,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FIntegralResult {
    pub result: TailResult,
    /// Exponential-tail branch value with optimized `ω`.
    pub exp_branch: f64,
    /// Polynomial-tail branch value at the supplied `γ`.
    pub poly_branch: f64,
}

/// Bound on `∫₀¹ P(ν₁F > d log(g/(1/u-1))) du` for `F ~ F(ν₁, ν₂)`.
///
/// The exponential branch is preferred when `log g < ν₂`, the polynomial
/// branch when `log^γ g > ν₂`; between the two, the larger value is returned.
pub fn f_tail_integral(nu1: f64, nu2: f64, d: f64, g: f64, gamma: f64) -> FIntegralResult {
    let none = FIntegralResult {
        result: TailResult::vacuous(),
        exp_branch: f64::INFINITY,
        poly_branch: f64::INFINITY,
    };
    if !(nu1 >= 1.0 && nu2 >= 1.0 && d > 1.0 && g > 1.0) {
        return none;
    }
    let eb = |om: f64| f64::min(f_integral_exp_branch(nu1, nu2, d, g, om), 1e300);
    let mut best = (0.5, f64::INFINITY);
    for i in 1..100 {
        let om = i as f64 / 100.0;
        let v = eb(om);
        if v < best.1 {
            best = (om, v);
        }
    }
    if best.1.is_finite() && best.1 < 1e300 {
        let (o, v) = golden_section(eb, (best.0 - 0.01).max(1e-6), (best.0 + 0.01).min(1.0 - 1e-9), 1e-8);
        if v < best.1 {
            best = (o, v);
        }
    }
    let exp_v = if best.1 < 1e300 { best.1 } else { f64::INFINITY };
    let poly_v = f_integral_poly_branch(nu1, nu2, d, g, gamma);
    let lg = g.ln();
    let (value, param) = match (exp_v.is_finite(), poly_v.is_finite()) {
        (false, false) => return none,
        (true, false) => (exp_v, Some(best.0)),
        (false, true) => (poly_v, Some(gamma)),
        (true, true) => {
            if lg < nu2 && lg.powf(gamma) <= nu2 {
                (exp_v, Some(best.0))
            } else if lg.powf(gamma) > nu2 && lg >= nu2 {
                (poly_v, Some(gamma))
            } else if exp_v >= poly_v {
                (exp_v, Some(best.0))
            } else {
                (poly_v, Some(gamma))
            }
        }
    };
    FIntegralResult {
        result: TailResult::ok(value, param),
        exp_branch: exp_v,
        poly_branch: poly_v,
    }
}

/// Bounds `E p(M_k | y)` by `u̲ + (1 - ū) + ∫_{u̲}^{ū} tail(u) du`, where
/// `tail(u)` bounds `P(B_kt > r/(1/u - 1))`.
pub fn expected_pp_bound<F: Fn(f64) -> f64>(tail: F, u_lo: f64, u_hi: f64) -> Result<f64> {
    if !(0.0 <= u_lo && u_lo <= u_hi && u_hi <= 1.0) {
        return Err(BvsError::InvalidInput("need 0 ≤ u_lo ≤ u_hi ≤ 1".into()));
    }
    let f = |u: f64| {
        let v = tail(u);
        if v.is_nan() {
            1.0
        } else {
            v.clamp(0.0, 1.0)
        }
    };
    let edges = u_lo + (1.0 - u_hi);
    match integrate(&f, u_lo, u_hi, 1e-9) {
        Ok(v) => Ok((edges + v).clamp(0.0, 1.0)),
        Err(BvsError::Quadrature { partial, error }) => Err(BvsError::Quadrature {
            partial: (edges + partial).clamp(0.0, 1.0),
            error,
        }),
        Err(e) => Err(e),
    }
}


// ---------------------------------------------------------------------------
// Reference tail probabilities
// ---------------------------------------------------------------------------

/// Exact `P(χ²_ν > w)`.
pub fn chisq_sf(nu: f64, w: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if w <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(nu).map(|d| d.sf(w)).unwrap_or(f64::NAN)
}

/// Exact `P(F > w)` for `F ~ F(ν₁, ν₂)`.
pub fn f_sf(nu1: f64, nu2: f64, w: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, FisherSnedecor};
    if w <= 0.0 {
        return 1.0;
    }
    FisherSnedecor::new(nu1, nu2).map(|d| d.sf(w)).unwrap_or(f64::NAN)
}

/// Sorted Monte Carlo draws answering tail queries with binomial standard errors.
#[derive(Clone, Debug)]
pub struct TailSample {
    sorted: Vec<f64>,
}

impl TailSample {
    pub fn from_draws(mut draws: Vec<f64>) -> Self {
        draws.sort_by(|a, b| a.total_cmp(b));
        Self { sorted: draws }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    fn with_se(&self, k: usize) -> (f64, f64) {
        let n = self.sorted.len() as f64;
        let p = k as f64 / n;
        (p, (p * (1.0 - p) / n).sqrt())
    }

    /// Estimate and standard error of `P(X > w)`.
    pub fn right(&self, w: f64) -> (f64, f64) {
        let k = self.sorted.partition_point(|&x| x <= w);
        self.with_se(self.sorted.len() - k)
    }

    /// Estimate and standard error of `P(X < w)`.
    pub fn left(&self, w: f64) -> (f64, f64) {
        self.with_se(self.sorted.partition_point(|&x| x < w))
    }

    pub fn mean_var(&self) -> (f64, f64) {
        let n = self.sorted.len() as f64;
        let m = self.sorted.iter().sum::<f64>() / n;
        let v = self.sorted.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }
}

fn nc_chisq_draw<R: rand::Rng>(rng: &mut R, nu: f64, lambda: f64) -> f64 {
    use rand_distr::{ChiSquared, Distribution, StandardNormal};
    let z: f64 = StandardNormal.sample(rng);
    let head = (z + lambda.sqrt()).powi(2);
    if nu > 1.0 {
        head + ChiSquared::new(nu - 1.0).expect("positive df").sample(rng)
    } else {
        head
    }
}

/// Draws of `χ²_ν(λ)` as a shifted normal square plus a central remainder.
pub fn mc_ncchisq(nu: f64, lambda: f64, draws: usize, seed: u64) -> TailSample {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    TailSample::from_draws((0..draws).map(|_| nc_chisq_draw(&mut rng, nu, lambda)).collect())
}

/// Draws of `ν₁W = U₁/(U₂/ν₂)` with `U₁ ~ χ²_{ν₁}(λ)` and `U₂ ~ χ²_{ν₂}`.
pub fn mc_ncf(nu1: f64, nu2: f64, lambda: f64, draws: usize, seed: u64) -> TailSample {
    use rand::SeedableRng;
    use rand_distr::{ChiSquared, Distribution};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let den = ChiSquared::new(nu2).expect("positive df");
    TailSample::from_draws(
        (0..draws)
            .map(|_| {
                let u1 = nc_chisq_draw(&mut rng, nu1, lambda);
                u1 / (den.sample(&mut rng) / nu2)
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chisq_example() {
        let r = chisq_right(2.0, 10.0);
        assert!((r.bound - 5.0 * std::f64::consts::E * (-5f64).exp()).abs() < 1e-12);
        assert!(!chisq_right(2.0, 2.0).applicable);
        assert!((chernoff_central(3.0, 3.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ncchisq_left_example() {
        let r = ncchisq_left(1.0, 25.0, 4.0, None);
        let want = (-4.5f64).exp() / (25.0f64 / 4.0).powf(0.25);
        assert!((r.bound - want).abs() < 1e-12);
    }

    #[test]
    fn nu_choice_reduces_to_central() {
        for &(nu, w) in &[(1.0, 5.0), (4.0, 30.0), (10.0, 12.0)] {
            let a = ncchisq_right(nu, 0.0, w, NcRightVariant::NuChoice).raw;
            let b = chisq_right(nu, w).raw;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn moment_constant_for_one_df() {
        let a = f_moment_constant(1.0).unwrap();
        assert!((a - std::f64::consts::E.powf(2.5) / (std::f64::consts::PI * 2f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn exp_tails_unit_case() {
        let v = int_exp_tails(1.0, 0.0, 0.5, 2.0, 100.0, 0.05, 0.9).unwrap();
        assert!((v - (1.0 / 0.05f64).ln() / 100.0).abs() < 1e-12);
    }

    #[test]
    fn pp_bound_trivial_cases() {
        assert!((expected_pp_bound(|_| 0.0, 0.1, 0.8).unwrap() - 0.3).abs() < 1e-12);
        assert!((expected_pp_bound(|_| 1.0, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }
}
