//! Posterior model probabilities by enumeration, an orthogonal-design dynamic
//! program, and Gibbs sampling over inclusion indicators.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::coef_priors::{CoefPrior, InvGammaHyper};
use crate::error::{BvsError, Result};
use crate::l0::{log_h, L0Criterion};
use crate::linear::{Dataset, ModelIndex, PriorCovariance};
use crate::model_priors::ModelPrior;
use crate::numerics::{ln_choose, log_add_exp, log_sum_exp};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Default cap on the number of models visited by enumeration.
pub const DEFAULT_ENUMERATION_CAP: f64 = 1_048_576.0;

/// Per-model score: a Bayesian evidence or a penalized maximized likelihood.
#[derive(Clone, Debug)]
pub enum EvidenceSpec {
    Bayes(CoefPrior),
    L0(L0Criterion),
}

/// Evidence plus model-space prior (whose `p̄` also truncates the space).
#[derive(Clone, Debug)]
pub struct PosteriorSpec {
    pub evidence: EvidenceSpec,
    pub prior: ModelPrior,
}

impl PosteriorSpec {
    pub fn bayes(coef: CoefPrior, prior: ModelPrior) -> Self {
        Self {
            evidence: EvidenceSpec::Bayes(coef),
            prior,
        }
    }

    /// Normalized L0 criterion; the prior only contributes its size truncation.
    pub fn l0(criterion: L0Criterion, prior: ModelPrior) -> Self {
        Self {
            evidence: EvidenceSpec::L0(criterion),
            prior,
        }
    }

    pub fn pbar(&self) -> usize {
        self.prior.pbar()
    }

    pub fn log_evidence(&self, data: &Dataset, m: &ModelIndex) -> Result<f64> {
        match &self.evidence {
            EvidenceSpec::Bayes(c) => c.log_evidence(data, m).map(|e| e.value),
            EvidenceSpec::L0(c) => log_h(data, m, c),
        }
    }

    pub fn log_prior(&self, m: &ModelIndex) -> f64 {
        match &self.evidence {
            EvidenceSpec::Bayes(_) => self.prior.log_prior(m).value(),
            EvidenceSpec::L0(_) => {
                if m.size() <= self.pbar() {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn check_dims(&self, data: &Dataset) -> Result<()> {
        if self.prior.p() != data.p() {
            return Err(BvsError::InvalidInput(format!(
                "model prior built for p = {} but data has p = {}",
                self.prior.p(),
                data.p()
            )));
        }
        Ok(())
    }
}

/// Default maximum model size `min(n - 5, p)`.
pub fn default_pbar(n: usize, p: usize) -> usize {
    n.saturating_sub(5).min(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Enumeration,
    OrthogonalDp,
    Gibbs,
}

#[derive(Clone, Debug)]
pub struct ModelRecord {
    pub model: ModelIndex,
    pub log_evidence: f64,
    pub log_prior: f64,
    pub probability: f64,
}

/// Posterior mass of supersets (`sigma`) and non-supersets (`sigma_tilde`)
/// of a reference model, stratified by size `0..=p̄`.
#[derive(Clone, Debug)]
pub struct SubsetMasses {
    pub reference: ModelIndex,
    pub reference_prob: f64,
    /// `sigma[l]`: strict supersets of size `l` (zero for `l ≤ p_t`).
    pub sigma: Vec<f64>,
    /// `sigma_tilde[l]`: size-`l` models not containing the reference.
    pub sigma_tilde: Vec<f64>,
}

impl SubsetMasses {
    pub fn spurious(&self) -> f64 {
        self.sigma.iter().sum()
    }
    pub fn nonspurious(&self) -> f64 {
        self.sigma_tilde.iter().sum()
    }
    /// Mass of size-`l` non-supersets with `l < p_t`.
    pub fn nonspurious_small(&self) -> f64 {
        self.sigma_tilde.iter().take(self.reference.size()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct GibbsDiagnostics {
    pub chains: usize,
    pub retained_sweeps: usize,
    /// Max over variables of `|PIP(first half) - PIP(second half)|`, per chain.
    pub split_half_discrepancy: Vec<f64>,
    pub distinct_models: usize,
}

#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    pub method: Method,
    pub p: usize,
    pub pbar: usize,
    /// Enumeration: every model; DP: best model per size; Gibbs: visited models.
    pub records: Vec<ModelRecord>,
    pub complete: bool,
    pub pip: Vec<f64>,
    /// Monte Carlo standard errors of the PIPs (Gibbs only).
    pub pip_se: Option<Vec<f64>>,
    /// `P(p_k = l | y)` for `l = 0..=p̄`.
    pub size_probs: Vec<f64>,
    pub masses: Option<SubsetMasses>,
    pub gibbs: Option<GibbsDiagnostics>,
}

impl PosteriorSummary {
    pub fn probability_of(&self, m: &ModelIndex) -> Option<f64> {
        if let Some(ms) = &self.masses {
            if &ms.reference == m {
                return Some(ms.reference_prob);
            }
        }
        match self.records.iter().find(|r| &r.model == m) {
            Some(r) => Some(r.probability),
            None if self.complete || self.method == Method::Gibbs => Some(0.0),
            None => None,
        }
    }
}

fn sort_records(records: &mut [ModelRecord]) {
    records.sort_by(|a, b| {
        b.probability
            .partial_cmp(&a.probability)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.model.size().cmp(&b.model.size()))
            .then(a.model.cmp(&b.model))
    });
}

fn masses_from_records(records: &[ModelRecord], t: &ModelIndex, pbar: usize) -> SubsetMasses {
    let mut sigma = vec![0.0; pbar + 1];
    let mut sigma_tilde = vec![0.0; pbar + 1];
    let mut reference_prob = 0.0;
    for r in records {
        let l = r.model.size();
        if l > pbar {
            continue;
        }
        if &r.model == t {
            reference_prob += r.probability;
        } else if t.is_subset_of(&r.model) {
            sigma[l] += r.probability;
        } else {
            sigma_tilde[l] += r.probability;
        }
    }
    SubsetMasses {
        reference: t.clone(),
        reference_prob,
        sigma,
        sigma_tilde,
    }
}

fn pips_from_records(records: &[ModelRecord], p: usize) -> Vec<f64> {
    let mut pip = vec![0.0; p];
    for r in records {
        for &j in r.model.indices() {
            pip[j] += r.probability;
        }
    }
    pip
}

/// Calls `f` on every size-`l` subset of `0..p` in lexicographic order.
fn for_each_combination(p: usize, l: usize, mut f: impl FnMut(&[usize])) {
    if l > p {
        return;
    }
    let mut c: Vec<usize> = (0..l).collect();
    loop {
        f(&c);
        let mut i = l;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if c[i] != i + p - l {
                break;
            }
            if i == 0 {
                return;
            }
        }
        if c[i] == i + p - l {
            return;
        }
        c[i] += 1;
        for k in (i + 1)..l {
            c[k] = c[k - 1] + 1;
        }
    }
}

/// All models of size at most `pbar`, ordered by size then lexicographically.
pub fn all_models(p: usize, pbar: usize) -> Vec<ModelIndex> {
    let mut out = Vec::new();
    for l in 0..=pbar.min(p) {
        if l == 0 {
            out.push(ModelIndex::empty());
            continue;
        }
        for_each_combination(p, l, |c| {
            out.push(ModelIndex::new(c.to_vec()).expect("combination is sorted"))
        });
    }
    out
}

pub fn enumerate_posterior(
    data: &Dataset,
    spec: &PosteriorSpec,
    reference: Option<&ModelIndex>,
) -> Result<PosteriorSummary> {
    enumerate_posterior_capped(data, spec, reference, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_posterior_capped(
    data: &Dataset,
    spec: &PosteriorSpec,
    reference: Option<&ModelIndex>,
    cap: f64,
) -> Result<PosteriorSummary> {
    spec.check_dims(data)?;
    let p = data.p();
    let pbar = spec.pbar();
    let count: f64 = (0..=pbar).map(|l| ln_choose(p, l).exp()).sum();
    if count > cap {
        return Err(BvsError::CapExceeded { count, cap });
    }
    let models = all_models(p, pbar);
    let scored: Vec<(f64, f64)> = models
        .par_iter()
        .map(|m| Ok((spec.log_evidence(data, m)?, spec.log_prior(m))))
        .collect::<Result<Vec<_>>>()?;
    let logs: Vec<f64> = scored.iter().map(|(e, pr)| e + pr).collect();
    let z = log_sum_exp(&logs);
    let mut records: Vec<ModelRecord> = models
        .into_iter()
        .zip(scored)
        .map(|(model, (le, lp))| ModelRecord {
            probability: (le + lp - z).exp(),
            model,
            log_evidence: le,
            log_prior: lp,
        })
        .collect();
    let mut size_probs = vec![0.0; pbar + 1];
    for r in &records {
        size_probs[r.model.size()] += r.probability;
    }
    let pip = pips_from_records(&records, p);
    let masses = reference.map(|t| masses_from_records(&records, t, pbar));
    sort_records(&mut records);
    Ok(PosteriorSummary {
        method: Method::Enumeration,
        p,
        pbar,
        records,
        complete: true,
        pip,
        pip_se: None,
        size_probs,
        masses,
        gibbs: None,
    })
}

// ---------------------------------------------------------------------------
// Orthogonal-design dynamic program
// ---------------------------------------------------------------------------

/// Log elementary symmetric sums `e_0..e_deg` of `exp(b)`.
pub fn log_esp(b: &[f64], deg: usize) -> Vec<f64> {
    let mut e = vec![f64::NEG_INFINITY; deg + 1];
    e[0] = 0.0;
    for (j, &bj) in b.iter().enumerate() {
        for l in (1..=(j + 1).min(deg)).rev() {
            e[l] = log_add_exp(e[l], e[l - 1] + bj);
        }
    }
    e
}

/// Truncated product of two log-space polynomials.
fn log_conv(a: &[f64], b: &[f64], deg: usize) -> Vec<f64> {
    let len = (a.len() + b.len() - 1).min(deg + 1);
    let mut out = vec![f64::NEG_INFINITY; len];
    for (k, o) in out.iter_mut().enumerate() {
        let lo = k.saturating_sub(b.len() - 1);
        let hi = k.min(a.len() - 1);
        let mut m = f64::NEG_INFINITY;
        for i in lo..=hi {
            m = m.max(a[i] + b[k - i]);
        }
        if m == f64::NEG_INFINITY {
            continue;
        }
        let mut s = 0.0;
        for i in lo..=hi {
            s += (a[i] + b[k - i] - m).exp();
        }
        *o = m + s.ln();
    }
    out
}

struct EspNode {
    lo: usize,
    hi: usize,
    poly: Vec<f64>,
    children: Option<Box<(EspNode, EspNode)>>,
}

fn esp_tree(b: &[f64], lo: usize, hi: usize, deg: usize) -> EspNode {
    if hi - lo == 1 {
        let mut poly = vec![0.0];
        if deg >= 1 {
            poly.push(b[lo]);
        }
        return EspNode {
            lo,
            hi,
            poly,
            children: None,
        };
    }
    let mid = (lo + hi) / 2;
    let l = esp_tree(b, lo, mid, deg);
    let r = esp_tree(b, mid, hi, deg);
    EspNode {
        lo,
        hi,
        poly: log_conv(&l.poly, &r.poly, deg),
        children: Some(Box::new((l, r))),
    }
}

fn push_outside(node: &EspNode, outside: Vec<f64>, deg: usize, out: &mut [Vec<f64>]) {
    match &node.children {
        None => out[node.lo] = outside,
        Some(ch) => {
            let (l, r) = (&ch.0, &ch.1);
            push_outside(l, log_conv(&outside, &r.poly, deg), deg, out);
            push_outside(r, log_conv(&outside, &l.poly, deg), deg, out);
        }
    }
    debug_assert!(node.hi > node.lo);
}

/// Leave-one-out log elementary symmetric sums: entry `j` excludes `b_j`.
pub fn log_esp_leave_one_out(b: &[f64], deg: usize) -> Vec<Vec<f64>> {
    let p = b.len();
    let mut out = vec![Vec::new(); p];
    if p == 0 {
        return out;
    }
    let tree = esp_tree(b, 0, p, deg);
    push_outside(&tree, vec![0.0], deg, &mut out);
    out
}

/// Per-variable factors of `p(y | M, φ)` on an orthogonal design.
struct OrthoTerms {
    n: f64,
    yty: f64,
    /// `-½ log(1 + τρ_j)`.
    logdet: Vec<f64>,
    /// `(x_j'y)² Ṽ_j`, the explained quadratic form.
    u: Vec<f64>,
    /// For the product-moment prior: `G_jj/τ`, `θ̃_j²`, `Ṽ_j`.
    pmom: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl OrthoTerms {
    fn b(&self, phi: f64, out: &mut [f64]) {
        for j in 0..self.u.len() {
            let mut v = self.logdet[j] + self.u[j] / (2.0 * phi);
            if let Some((gt, th2, vt)) = &self.pmom {
                v += (gt[j] / phi * (th2[j] + phi * vt[j])).ln();
            }
            out[j] = v;
        }
    }

    /// Log of the part of `p(y | M, φ)` shared by every model.
    fn common(&self, phi: f64) -> f64 {
        -0.5 * self.n * (LN_2PI + phi.ln()) - self.yty / (2.0 * phi)
    }
}

fn ortho_terms(data: &Dataset, coef: &CoefPrior) -> Result<(OrthoTerms, Option<InvGammaHyper>, Option<f64>)> {
    let p = data.p();
    let g = data.gram();
    let xty = &data.stats().xty;
    let tau = coef.tau();
    let (v, ig, phi, pmom): (Vec<f64>, Option<InvGammaHyper>, Option<f64>, bool) = match coef {
        CoefPrior::ZellnerKnownPhi { phi, .. } => ((0..p).map(|j| 1.0 / g[(j, j)]).collect(), None, Some(*phi), false),
        CoefPrior::ZellnerUnknownPhi { ig, .. } => ((0..p).map(|j| 1.0 / g[(j, j)]).collect(), Some(*ig), None, false),
        CoefPrior::NormalV { v, ig, .. } => {
            let vd = match v {
                PriorCovariance::Zellner | PriorCovariance::DiagGramInverse => {
                    (0..p).map(|j| 1.0 / g[(j, j)]).collect()
                }
                PriorCovariance::Explicit(m) => {
                    if m.nrows() != p || m.ncols() != p {
                        return Err(BvsError::InvalidInput("explicit V has wrong shape".into()));
                    }
                    for i in 0..p {
                        for k in 0..p {
                            if i != k && m[(i, k)] != 0.0 {
                                return Err(BvsError::Unsupported(
                                    "orthogonal DP needs a diagonal prior covariance".into(),
                                ));
                            }
                        }
                    }
                    (0..p).map(|j| m[(j, j)]).collect()
                }
            };
            (vd, Some(*ig), None, false)
        }
        CoefPrior::Pmom { ig, .. } => {
            if !data.is_standardized(1e-8) {
                return Err(BvsError::Validation(
                    "product-moment prior requires zero-mean, unit-variance columns".into(),
                ));
            }
            ((0..p).map(|j| 1.0 / g[(j, j)]).collect(), Some(*ig), None, true)
        }
    };
    let mut logdet = Vec::with_capacity(p);
    let mut u = Vec::with_capacity(p);
    let mut gt = Vec::with_capacity(p);
    let mut th2 = Vec::with_capacity(p);
    let mut vt = Vec::with_capacity(p);
    for j in 0..p {
        let gj = g[(j, j)];
        let vtil = 1.0 / (gj + 1.0 / (tau * v[j]));
        let th = vtil * xty[j];
        logdet.push(-0.5 * (tau * v[j] * gj).ln_1p());
        u.push(xty[j] * xty[j] * vtil);
        gt.push(gj / tau);
        th2.push(th * th);
        vt.push(vtil);
    }
    Ok((
        OrthoTerms {
            n: data.n() as f64,
            yty: data.yty(),
            logdet,
            u,
            pmom: pmom.then_some((gt, th2, vt)),
        },
        ig,
        phi,
    ))
}

/// Unnormalized log posterior quantities at one value of `φ`.
struct DpPoint {
    log_z: f64,
    log_size: Vec<f64>,
    log_pip: Vec<f64>,
    log_sup: Option<Vec<f64>>,
    log_ref: f64,
}

fn dp_point(b: &[f64], lp: &[f64], pbar: usize, reference: Option<&ModelIndex>) -> DpPoint {
    let e = log_esp(b, pbar);
    let log_size: Vec<f64> = (0..=pbar).map(|l| lp[l] + e[l]).collect();
    let log_z = log_sum_exp(&log_size);
    let mut log_pip = vec![f64::NEG_INFINITY; b.len()];
    if pbar >= 1 {
        let loo = log_esp_leave_one_out(b, pbar - 1);
        for (j, ej) in loo.iter().enumerate() {
            let terms: Vec<f64> = (1..=pbar)
                .filter(|&l| l - 1 < ej.len())
                .map(|l| lp[l] + b[j] + ej[l - 1])
                .collect();
            log_pip[j] = log_sum_exp(&terms);
        }
    }
    let mut log_sup = None;
    let mut log_ref = f64::NEG_INFINITY;
    if let Some(t) = reference {
        let pt = t.size();
        let mut sup = vec![f64::NEG_INFINITY; pbar + 1];
        if pt <= pbar {
            let inside: f64 = t.indices().iter().map(|&j| b[j]).sum();
            let rest: Vec<f64> = (0..b.len()).filter(|j| !t.contains(*j)).map(|j| b[j]).collect();
            let er = log_esp(&rest, pbar - pt);
            for l in pt..=pbar {
                sup[l] = lp[l] + inside + er[l - pt];
            }
            log_ref = sup[pt];
        }
        log_sup = Some(sup);
    }
    DpPoint {
        log_z,
        log_size,
        log_pip,
        log_sup,
        log_ref,
    }
}

/// Exact posterior on an orthogonal design.
///
/// Given `φ` the evidence factorizes over variables, so size-stratified sums
/// are elementary symmetric polynomials of the per-variable factors.  When
/// `φ` is unknown it is integrated out with a trapezoid rule in `log φ`.
pub fn orthogonal_dp_posterior(
    data: &Dataset,
    spec: &PosteriorSpec,
    reference: Option<&ModelIndex>,
) -> Result<PosteriorSummary> {
    spec.check_dims(data)?;
    if !data.is_orthogonal(1e-8) {
        return Err(BvsError::InvalidInput(
            "orthogonal DP requires a diagonal X'X".into(),
        ));
    }
    let coef = match &spec.evidence {
        EvidenceSpec::Bayes(c) => c,
        EvidenceSpec::L0(_) => {
            return Err(BvsError::Unsupported(
                "penalized likelihoods do not factorize over variables".into(),
            ))
        }
    };
    coef.validate()?;
    let p = data.p();
    let pbar = spec.pbar();
    let lp: Vec<f64> = (0..=pbar).map(|l| spec.prior.log_prior_size(l).value()).collect();
    let (terms, ig, known_phi) = ortho_terms(data, coef)?;

    // Quadrature nodes (log φ) with their log weights; a single node when φ is known.
    let mut nodes: Vec<(f64, f64)> = Vec::new();
    let mut bbuf = vec![0.0; p];
    match (known_phi, ig) {
        (Some(phi), _) => nodes.push((phi.ln(), terms.common(phi))),
        (None, Some(ig)) => {
            let a = ig.a_phi;
            let log_ig = |phi: f64| {
                let al = 0.5 * a;
                let be = 0.5 * ig.l_phi;
                al * be.ln() - ln_gamma(al) - (al + 1.0) * phi.ln() - be / phi
            };
            let weight = |u: f64| {
                let phi = u.exp();
                terms.common(phi) + log_ig(phi) + u
            };
            let explained: f64 = terms.u.iter().sum();
            let s_hi = ig.l_phi + terms.yty;
            let s_lo = (ig.l_phi + terms.yty - explained).max(ig.l_phi);
            let dof = a + terms.n;
            let sd = (2.0 / dof).sqrt();
            let h = sd / 5.0;
            let mut u_lo = (s_lo / dof).ln() - 3.0;
            let mut u_hi = (s_hi / dof).ln() + 3.0;
            let mut g_at = |u: f64| {
                terms.b(u.exp(), &mut bbuf);
                let e = log_esp(&bbuf, pbar);
                let tot: Vec<f64> = (0..=pbar).map(|l| lp[l] + e[l]).collect();
                weight(u) + log_sum_exp(&tot)
            };
            let mut grid: Vec<(f64, f64)> = Vec::new();
            let steps = ((u_hi - u_lo) / h).ceil() as usize;
            for i in 0..=steps {
                let u = u_lo + i as f64 * h;
                grid.push((u, g_at(u)));
            }
            let cutoff = 45.0;
            loop {
                let gmax = grid.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
                let mut grew = false;
                if grid[0].1 > gmax - cutoff {
                    for _ in 0..20 {
                        u_lo -= h;
                        grid.insert(0, (u_lo, g_at(u_lo)));
                    }
                    grew = true;
                }
                if grid.last().expect("non-empty").1 > gmax - cutoff {
                    for _ in 0..20 {
                        u_hi = grid.last().expect("non-empty").0 + h;
                        grid.push((u_hi, g_at(u_hi)));
                    }
                    grew = true;
                }
                if !grew || grid.len() > 200_000 {
                    break;
                }
            }
            let gmax = grid.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
            for (u, g) in grid {
                if g > gmax - cutoff {
                    nodes.push((u, weight(u) + h.ln()));
                }
            }
        }
        (None, None) => unreachable!("coefficient prior always fixes or integrates φ"),
    }

    let points: Vec<(DpPoint, Vec<f64>)> = nodes
        .par_iter()
        .map(|&(u, _)| {
            let mut b = vec![0.0; p];
            terms.b(u.exp(), &mut b);
            (dp_point(&b, &lp, pbar, reference), b)
        })
        .collect();

    let lw: Vec<f64> = nodes.iter().map(|x| x.1).collect();
    let combine = |f: &dyn Fn(&DpPoint) -> f64| -> f64 {
        let v: Vec<f64> = points.iter().zip(&lw).map(|((pt, _), w)| w + f(pt)).collect();
        log_sum_exp(&v)
    };
    let log_py = combine(&|pt| pt.log_z);
    let size_probs: Vec<f64> = (0..=pbar)
        .map(|l| (combine(&|pt| pt.log_size[l]) - log_py).exp())
        .collect();
    let pip: Vec<f64> = (0..p)
        .map(|j| (combine(&|pt| pt.log_pip[j]) - log_py).exp().min(1.0))
        .collect();
    let masses = reference.map(|t| {
        let pt = t.size();
        let reference_prob = if pt <= pbar {
            (combine(&|x| x.log_ref) - log_py).exp()
        } else {
            0.0
        };
        let mut sigma = vec![0.0; pbar + 1];
        let mut sigma_tilde = size_probs.clone();
        for l in pt..=pbar {
            let sup = (combine(&|x| x.log_sup.as_ref().expect("reference given")[l]) - log_py).exp();
            if l == pt {
                sigma_tilde[l] = (sigma_tilde[l] - sup).max(0.0);
            } else {
                sigma[l] = sup;
                sigma_tilde[l] = (sigma_tilde[l] - sup).max(0.0);
            }
        }
        SubsetMasses {
            reference: t.clone(),
            reference_prob,
            sigma,
            sigma_tilde,
        }
    });

    // Highest-factor model of each size at the dominant node, scored exactly.
    let best = lw
        .iter()
        .zip(&points)
        .map(|(w, (pt, _))| w + pt.log_z)
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc })
        .0;
    let bstar = &points[best].1;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| bstar[y].partial_cmp(&bstar[x]).unwrap_or(std::cmp::Ordering::Equal).then(x.cmp(&y)));
    let mut records = Vec::with_capacity(pbar + 1);
    for l in 0..=pbar {
        let model = ModelIndex::new(order[..l].to_vec()).expect("distinct");
        let v: Vec<f64> = points
            .iter()
            .zip(&lw)
            .map(|((_, b), w)| w + model.indices().iter().map(|&j| b[j]).sum::<f64>())
            .collect();
        let le = log_sum_exp(&v);
        records.push(ModelRecord {
            probability: (le + lp[l] - log_py).exp(),
            model,
            log_evidence: le,
            log_prior: lp[l],
        });
    }
    sort_records(&mut records);
    Ok(PosteriorSummary {
        method: Method::OrthogonalDp,
        p,
        pbar,
        records,
        complete: false,
        pip,
        pip_se: None,
        size_probs,
        masses,
        gibbs: None,
    })
}

// ---------------------------------------------------------------------------
// Gibbs sampling
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct GibbsConfig {
    /// Total sweeps, burn-in included.
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub chains: usize,
    pub rao_blackwell: bool,
    pub random_scan: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            sweeps: 10_000,
            burn_in: 1_000,
            seed: 0,
            chains: 1,
            rao_blackwell: true,
            random_scan: false,
        }
    }
}

struct ChainOutput {
    pip: Vec<f64>,
    pip_se2: Vec<f64>,
    split: f64,
    visits: HashMap<ModelIndex, usize>,
    scores: HashMap<ModelIndex, (f64, f64)>,
}

fn run_chain(data: &Dataset, spec: &PosteriorSpec, cfg: &GibbsConfig, chain: usize) -> Result<ChainOutput> {
    let p = data.p();
    let pbar = spec.pbar();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64 + 1);
    let mut scores: HashMap<ModelIndex, (f64, f64)> = HashMap::new();
    let score = |m: &ModelIndex, scores: &mut HashMap<ModelIndex, (f64, f64)>| -> Result<f64> {
        if m.size() > pbar {
            return Ok(f64::NEG_INFINITY);
        }
        if let Some(s) = scores.get(m) {
            return Ok(s.0 + s.1);
        }
        let s = (spec.log_evidence(data, m)?, spec.log_prior(m));
        scores.insert(m.clone(), s);
        Ok(s.0 + s.1)
    };
    let retained = cfg.sweeps - cfg.burn_in;
    let nbatch = 20.min(retained.max(1));
    let batch_len = (retained / nbatch).max(1);
    let mut cur = ModelIndex::empty();
    let mut cur_score = score(&cur, &mut scores)?;
    let mut sum = vec![0.0; p];
    let mut half = vec![0.0; p];
    let mut batch_acc = vec![0.0; p];
    let mut batch_means: Vec<Vec<f64>> = Vec::new();
    let mut visits: HashMap<ModelIndex, usize> = HashMap::new();
    let mut cond = vec![0.0; p];
    for sweep in 0..cfg.sweeps {
        for step in 0..p {
            let j = if cfg.random_scan { rng.gen_range(0..p) } else { step };
            let (m_in, m_out) = if cur.contains(j) {
                (cur.clone(), cur.without(j))
            } else {
                (cur.with(j), cur.clone())
            };
            let s_in = if cur.contains(j) { cur_score } else { score(&m_in, &mut scores)? };
            let s_out = if cur.contains(j) { score(&m_out, &mut scores)? } else { cur_score };
            let p_in = if s_in == f64::NEG_INFINITY {
                0.0
            } else {
                1.0 / (1.0 + (s_out - s_in).exp())
            };
            cond[j] = p_in;
            if rng.gen::<f64>() < p_in {
                cur = m_in;
                cur_score = s_in;
            } else {
                cur = m_out;
                cur_score = s_out;
            }
        }
        if sweep >= cfg.burn_in {
            let k = sweep - cfg.burn_in;
            for j in 0..p {
                let v = if cfg.rao_blackwell {
                    cond[j]
                } else if cur.contains(j) {
                    1.0
                } else {
                    0.0
                };
                sum[j] += v;
                if k < retained / 2 {
                    half[j] += v;
                }
                batch_acc[j] += v;
            }
            if (k + 1) % batch_len == 0 && batch_means.len() < nbatch {
                batch_means.push(batch_acc.iter().map(|v| v / batch_len as f64).collect());
                batch_acc.iter_mut().for_each(|v| *v = 0.0);
            }
            *visits.entry(cur.clone()).or_insert(0) += 1;
        }
    }
    let r = retained as f64;
    let pip: Vec<f64> = sum.iter().map(|s| s / r).collect();
    let h1 = (retained / 2).max(1) as f64;
    let h2 = (retained - retained / 2).max(1) as f64;
    let split = (0..p)
        .map(|j| (half[j] / h1 - (sum[j] - half[j]) / h2).abs())
        .fold(0.0, f64::max);
    let nb = batch_means.len() as f64;
    let pip_se2 = (0..p)
        .map(|j| {
            if nb < 2.0 {
                return 0.0;
            }
            let m = batch_means.iter().map(|b| b[j]).sum::<f64>() / nb;
            let v = batch_means.iter().map(|b| (b[j] - m).powi(2)).sum::<f64>() / (nb - 1.0);
            v / nb
        })
        .collect();
    Ok(ChainOutput {
        pip,
        pip_se2,
        split,
        visits,
        scores,
    })
}

pub fn gibbs_posterior(
    data: &Dataset,
    spec: &PosteriorSpec,
    cfg: &GibbsConfig,
    reference: Option<&ModelIndex>,
) -> Result<PosteriorSummary> {
    spec.check_dims(data)?;
    if cfg.sweeps <= cfg.burn_in || cfg.chains == 0 {
        return Err(BvsError::InvalidInput(
            "need sweeps > burn_in and at least one chain".into(),
        ));
    }
    let p = data.p();
    let pbar = spec.pbar();
    let outs = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(data, spec, cfg, c))
        .collect::<Result<Vec<_>>>()?;
    let k = outs.len() as f64;
    let pip: Vec<f64> = (0..p).map(|j| outs.iter().map(|o| o.pip[j]).sum::<f64>() / k).collect();
    let pip_se: Vec<f64> = (0..p)
        .map(|j| outs.iter().map(|o| o.pip_se2[j]).sum::<f64>().sqrt() / k)
        .collect();
    let mut visits: HashMap<ModelIndex, usize> = HashMap::new();
    let mut scores: HashMap<ModelIndex, (f64, f64)> = HashMap::new();
    for o in &outs {
        for (m, c) in &o.visits {
            *visits.entry(m.clone()).or_insert(0) += c;
        }
        for (m, s) in &o.scores {
            scores.insert(m.clone(), *s);
        }
    }
    let total: usize = visits.values().sum();
    let mut records: Vec<ModelRecord> = visits
        .iter()
        .map(|(m, c)| {
            let (le, lp) = scores[m];
            ModelRecord {
                model: m.clone(),
                log_evidence: le,
                log_prior: lp,
                probability: *c as f64 / total as f64,
            }
        })
        .collect();
    sort_records(&mut records);
    let mut size_probs = vec![0.0; pbar + 1];
    for r in &records {
        size_probs[r.model.size()] += r.probability;
    }
    let masses = reference.map(|t| masses_from_records(&records, t, pbar));
    Ok(PosteriorSummary {
        method: Method::Gibbs,
        p,
        pbar,
        complete: false,
        pip,
        pip_se: Some(pip_se),
        size_probs,
        masses,
        gibbs: Some(GibbsDiagnostics {
            chains: cfg.chains,
            retained_sweeps: cfg.sweeps - cfg.burn_in,
            split_half_discrepancy: outs.iter().map(|o| o.split).collect(),
            distinct_models: records.len(),
        }),
        records,
    })
}

// ---------------------------------------------------------------------------
// Selection and masses
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectionRule {
    Map,
    /// Include `j` iff `PIP_j > threshold`.
    Median(f64),
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub model: ModelIndex,
    /// `p(M_t | y)` for the reference, when one was supplied and is known.
    pub reference_prob: Option<f64>,
    pub equals_reference: Option<bool>,
}

pub fn select(
    summary: &PosteriorSummary,
    rule: SelectionRule,
    reference: Option<&ModelIndex>,
) -> Result<Selection> {
    let model = match rule {
        SelectionRule::Map => summary
            .records
            .first()
            .map(|r| r.model.clone())
            .ok_or_else(|| BvsError::InvalidInput("summary has no model records".into()))?,
        SelectionRule::Median(t) => ModelIndex::from_flags(
            &summary.pip.iter().map(|&v| v > t).collect::<Vec<_>>(),
        ),
    };
    let reference_prob = reference.and_then(|t| summary.probability_of(t));
    let equals_reference = reference.map(|t| &model == t);
    Ok(Selection {
        model,
        reference_prob,
        equals_reference,
    })
}

pub fn subset_masses(summary: &PosteriorSummary, t: &ModelIndex) -> Result<SubsetMasses> {
    if let Some(m) = &summary.masses {
        if &m.reference == t {
            return Ok(m.clone());
        }
    }
    if summary.complete || summary.method == Method::Gibbs {
        return Ok(masses_from_records(&summary.records, t, summary.pbar));
    }
    Err(BvsError::Unsupported(
        "rerun the dynamic program with this reference model".into(),
    ))
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

/// Columns: model_bitmask, size, log_evidence, log_prior, probability.
pub fn write_models_csv<W: Write>(summary: &PosteriorSummary, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["model_bitmask", "size", "log_evidence", "log_prior", "probability"])?;
    for r in &summary.records {
        wr.write_record([
            r.model.bitstring(summary.p),
            r.model.size().to_string(),
            format!("{:.17e}", r.log_evidence),
            format!("{:.17e}", r.log_prior),
            format!("{:.17e}", r.probability),
        ])?;
    }
    wr.flush().map_err(|e| BvsError::Io {
        path: "<models csv>".into(),
        source: e,
    })
}

/// Columns: variable, pip, se.
pub fn write_pips_csv<W: Write>(summary: &PosteriorSummary, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["variable", "pip", "se"])?;
    for (j, v) in summary.pip.iter().enumerate() {
        let se = summary
            .pip_se
            .as_ref()
            .map(|s| format!("{:.17e}", s[j]))
            .unwrap_or_default();
        wr.write_record([j.to_string(), format!("{v:.17e}"), se])?;
    }
    wr.flush().map_err(|e| BvsError::Io {
        path: "<pips csv>".into(),
        source: e,
    })
}

/// PIP vector as a dense vector, convenient for linear-algebra comparisons.
pub fn pip_vector(summary: &PosteriorSummary) -> DVector<f64> {
    DVector::from_vec(summary.pip.clone())
}
