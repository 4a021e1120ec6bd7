//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use bvs::linear::{Dataset, ModelIndex, Truth};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

/// iid Gaussian design; `y = X_{0..k} θ + ε` with unit noise.
pub fn gaussian_dataset(n: usize, p: usize, theta: &[f64], seed: u64) -> Dataset {
    let mut r = rng(seed);
    let x = DMatrix::from_fn(n, p, |_, _| normal(&mut r));
    let mut y = DVector::from_fn(n, |_, _| normal(&mut r));
    for (j, t) in theta.iter().enumerate() {
        y += x.column(j) * *t;
    }
    let t = ModelIndex::new((0..theta.len()).collect()).unwrap();
    Dataset::new(y, x)
        .unwrap()
        .with_truth(Truth::new(t, DVector::from_vec(theta.to_vec()), 1.0))
        .unwrap()
}

/// Columns centered and scaled so that `x_j'x_j = n`.
pub fn standardize(x: &mut DMatrix<f64>) {
    let n = x.nrows() as f64;
    for mut c in x.column_iter_mut() {
        let m = c.sum() / n;
        c.add_scalar_mut(-m);
        let s = (n / c.norm_squared()).sqrt();
        c *= s;
    }
}

pub fn standardized_dataset(n: usize, p: usize, theta: &[f64], seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut x = DMatrix::from_fn(n, p, |_, _| normal(&mut r));
    standardize(&mut x);
    let mut y = DVector::from_fn(n, |_, _| normal(&mut r));
    for (j, t) in theta.iter().enumerate() {
        y += x.column(j) * *t;
    }
    Dataset::new(y, x).unwrap()
}

/// Exactly orthogonal standardized design built by Gram-Schmidt against the intercept.
pub fn orthogonal_dataset(n: usize, p: usize, theta: &[f64], phi: f64, seed: u64) -> Dataset {
    assert!(p < n);
    let mut r = rng(seed);
    let mut a = DMatrix::from_fn(n, p + 1, |_, _| normal(&mut r));
    a.column_mut(0).fill(1.0);
    let q = a.qr().q();
    let x = q.columns(1, p).into_owned() * (n as f64).sqrt();
    let mut y = DVector::from_fn(n, |_, _| phi.sqrt() * normal(&mut r));
    for (j, t) in theta.iter().enumerate() {
        y += x.column(j) * *t;
    }
    let t = ModelIndex::new((0..theta.len()).collect()).unwrap();
    Dataset::new(y, x)
        .unwrap()
        .with_truth(Truth::new(t, DVector::from_vec(theta.to_vec()), phi))
        .unwrap()
}

/// Equicorrelated design with correlation `rho`, standardized columns.
pub fn equicorrelated_dataset(n: usize, p: usize, rho: f64, theta: &[f64], seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut x = DMatrix::from_fn(n, p, |_, _| 0.0);
    for i in 0..n {
        let common = normal(&mut r);
        for j in 0..p {
            x[(i, j)] = rho.sqrt() * common + (1.0 - rho).sqrt() * normal(&mut r);
        }
    }
    standardize(&mut x);
    let mut y = DVector::from_fn(n, |_, _| normal(&mut r));
    for (j, t) in theta.iter().enumerate() {
        y += x.column(j) * *t;
    }
    let t = ModelIndex::new((0..theta.len()).collect()).unwrap();
    Dataset::new(y, x)
        .unwrap()
        .with_truth(Truth::new(t, DVector::from_vec(theta.to_vec()), 1.0))
        .unwrap()
}

pub fn columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), idx.len(), |i, k| x[(i, idx[k])])
}

/// `(log|C|, y'C⁻¹y)` for the marginal covariance `C = I + X_k S X_k'`.
pub fn marginal_cov_parts(x: &DMatrix<f64>, y: &DVector<f64>, idx: &[usize], s: &DMatrix<f64>) -> (f64, f64) {
    let n = x.nrows();
    let c = if idx.is_empty() {
        DMatrix::identity(n, n)
    } else {
        let xk = columns(x, idx);
        DMatrix::identity(n, n) + &xk * s * xk.transpose()
    };
    let ch = c.cholesky().expect("PD marginal covariance");
    let log_det = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let q = y.dot(&ch.solve(y));
    (log_det, q)
}

/// Zellner block `S = τ (X_k'X_k)⁻¹`.
pub fn zellner_block(x: &DMatrix<f64>, idx: &[usize], tau: f64) -> DMatrix<f64> {
    let xk = columns(x, idx);
    (xk.transpose() * xk).try_inverse().unwrap() * tau
}

/// Diagonal block `S = τ diag(X_k'X_k)⁻¹`.
pub fn diag_block(x: &DMatrix<f64>, idx: &[usize], tau: f64) -> DMatrix<f64> {
    let g = DVector::from_iterator(idx.len(), idx.iter().map(|&j| tau / x.column(j).norm_squared()));
    DMatrix::from_diagonal(&g)
}

/// `log N(y; 0, φC)` from the precomputed parts.
pub fn log_mvn(n: usize, phi: f64, log_det: f64, q: f64) -> f64 {
    -0.5 * n as f64 * (LN_2PI + phi.ln()) - 0.5 * log_det - q / (2.0 * phi)
}

/// Log density of `IG(a/2, l/2)`.
pub fn log_ig(phi: f64, a: f64, l: f64) -> f64 {
    let (sh, sc) = (0.5 * a, 0.5 * l);
    sh * sc.ln() - ln_gamma(sh) - (sh + 1.0) * phi.ln() - sc / phi
}

/// `log ∫₀^∞ exp(f(φ)) dφ` by a fine trapezoid rule in `u = log φ`
/// over a window around the integrand's peak.
pub fn log_integral_phi(f: impl Fn(f64) -> f64) -> f64 {
    let g = |u: f64| f(u.exp()) + u;
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut u = -40.0;
    while u <= 40.0 {
        let v = g(u);
        if v > best.0 {
            best = (v, u);
        }
        u += 0.01;
    }
    let (lo, hi, h) = (best.1 - 30.0, best.1 + 30.0, 2e-4);
    let steps = ((hi - lo) / h) as usize;
    let mut acc = 0.0;
    for i in 0..=steps {
        let u = lo + i as f64 * h;
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        acc += w * (g(u) - best.0).exp();
    }
    best.0 + (acc * h).ln()
}

/// Zellner known-φ evidence by the direct multivariate normal density.
pub fn oracle_zellner_known(d: &Dataset, idx: &[usize], tau: f64, phi: f64) -> f64 {
    let s = if idx.is_empty() { DMatrix::zeros(0, 0) } else { zellner_block(d.x(), idx, tau) };
    let (ld, q) = marginal_cov_parts(d.x(), d.y(), idx, &s);
    log_mvn(d.n(), phi, ld, q)
}

/// Normal-prior evidence with `φ` integrated numerically against `IG(a/2, l/2)`.
pub fn oracle_unknown_phi(d: &Dataset, idx: &[usize], s: &DMatrix<f64>, a: f64, l: f64) -> f64 {
    let (ld, q) = marginal_cov_parts(d.x(), d.y(), idx, s);
    let n = d.n();
    log_integral_phi(|phi| log_mvn(n, phi, ld, q) + log_ig(phi, a, l))
}

/// Product-moment evidence for models of size one or two, with `V = diag(X'X)⁻¹`:
/// the `θ` integral uses the Gaussian moments of the conditional posterior,
/// and `φ` is integrated numerically.
pub fn oracle_pmom(d: &Dataset, idx: &[usize], tau: f64, a: f64, l: f64) -> f64 {
    assert!(!idx.is_empty() && idx.len() <= 2);
    let x = d.x();
    let y = d.y();
    let n = d.n();
    let s = diag_block(x, idx, tau);
    let (ld, q) = marginal_cov_parts(x, y, idx, &s);
    let xk = columns(x, idx);
    let g = xk.transpose() * &xk;
    let gd: Vec<f64> = idx.iter().map(|&j| x.column(j).norm_squared()).collect();
    // Conditional posterior θ | φ, y ~ N(m, φ P⁻¹) with P = X'X + S⁻¹.
    let prec = &g + s.clone().try_inverse().unwrap();
    let pinv = prec.try_inverse().unwrap();
    let m = &pinv * (xk.transpose() * y);
    log_integral_phi(|phi| {
        let cov = &pinv * phi;
        let moment = if idx.len() == 1 {
            m[0] * m[0] + cov[(0, 0)]
        } else {
            let (m1, m2) = (m[0], m[1]);
            let (s11, s22, s12) = (cov[(0, 0)], cov[(1, 1)], cov[(0, 1)]);
            s11 * s22 + 2.0 * s12 * s12 + m1 * m1 * s22 + m2 * m2 * s11 + 4.0 * m1 * m2 * s12 + m1 * m1 * m2 * m2
        };
        let scale: f64 = gd.iter().map(|gj| gj / (tau * phi)).product();
        log_mvn(n, phi, ld, q) + log_ig(phi, a, l) + (moment * scale).ln()
    })
}

/// Log prior of one size-`k` model under Beta-Binomial(1,1) over all `2^p` models.
pub fn log_bb11(p: usize, k: usize) -> f64 {
    -((p + 1) as f64).ln() - bvs::numerics::ln_choose(p, k)
}

pub fn all_subsets(p: usize) -> Vec<Vec<usize>> {
    (0u64..1 << p)
        .map(|mask| (0..p).filter(|j| mask >> j & 1 == 1).collect())
        .collect()
}

pub fn normalize_log(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
    v.iter().map(|x| (x - m).exp() / s).collect()
}

/// Outcome of checking tail bounds against reference probabilities.
#[derive(Debug, Default)]
pub struct Domination {
    pub checked: usize,
    pub skipped: usize,
    pub violations: Vec<String>,
}

impl Domination {
    fn check(&mut self, label: &str, r: bvs::tail_bounds::TailResult, reference: f64, se: f64) {
        if !r.applicable {
            self.skipped += 1;
            return;
        }
        self.checked += 1;
        if r.bound < reference - 3.0 * se - 1e-12 * reference.max(1e-300) {
            self.violations
                .push(format!("{label}: bound {:.6e} < reference {:.6e} (se {:.1e})", r.bound, reference, se));
        }
    }
}

pub const DOF_GRID: [f64; 5] = [1.0, 2.0, 5.0, 20.0, 100.0];
pub const NC_GRID: [f64; 4] = [0.0, 1.0, 25.0, 100.0];

/// Every tail inequality against exact CDFs (central cases) or `draws`
/// Monte Carlo samples (non-central cases), over the degrees-of-freedom,
/// non-centrality and threshold grids.
pub fn tail_domination(draws: usize) -> Domination {
    use bvs::tail_bounds::*;
    let mut out = Domination::default();
    let right_f = [1.01, 1.05, 1.2, 1.5, 2.0, 3.0, 5.0, 10.0, 20.0];
    let left_f = [0.01, 0.05, 0.2, 0.5, 0.8, 0.95, 0.99];
    let mut seed = 1000;
    for &nu in &DOF_GRID {
        for f in right_f {
            let w = nu * f;
            out.check(&format!("chisq right ν={nu} w={w}"), chisq_right(nu, w), chisq_sf(nu, w), 0.0);
        }
        for f in left_f {
            let w = nu * f;
            out.check(&format!("chisq left ν={nu} w={w}"), chisq_left(nu, w), 1.0 - chisq_sf(nu, w), 0.0);
        }
        for &lam in &NC_GRID {
            seed += 1;
            let smp = mc_ncchisq(nu, lam, draws, seed);
            for f in right_f {
                let w = (nu + lam) * f;
                let (p, se) = if lam == 0.0 { (chisq_sf(nu, w), 0.0) } else { smp.right(w) };
                for v in [NcRightVariant::SqrtChoice, NcRightVariant::NuChoice, NcRightVariant::Optimal] {
                    out.check(&format!("ncchisq right {v:?} ν={nu} λ={lam} w={w}"), ncchisq_right(nu, lam, w, v), p, se);
                }
            }
            for f in left_f {
                let w = lam * f;
                let (p, se) = smp.left(w);
                out.check(&format!("ncchisq left ν={nu} λ={lam} w={w}"), ncchisq_left(nu, lam, w, None), p, se);
                for s in [-0.05, -0.5, -3.0] {
                    out.check(&format!("ncchisq left s={s} ν={nu} λ={lam} w={w}"), ncchisq_left(nu, lam, w, Some(s)), p, se);
                }
            }
        }
    }
    for &nu1 in &DOF_GRID {
        for &nu2 in &DOF_GRID {
            for &lam in &NC_GRID {
                seed += 1;
                let smp = (lam > 0.0).then(|| mc_ncf(nu1, nu2, lam, draws, seed));
                let reference = |w: f64, right: bool| match &smp {
                    Some(s) => {
                        if right {
                            s.right(w)
                        } else {
                            s.left(w)
                        }
                    }
                    None => {
                        let sf = f_sf(nu1, nu2, w / nu1);
                        (if right { sf } else { 1.0 - sf }, 0.0)
                    }
                };
                for f in right_f.iter().chain(&[50.0, 200.0]) {
                    let w = (nu1 + lam) * f;
                    let (p, se) = reference(w, true);
                    let s_mid = 0.5 * ((lam + nu1) / w + 1.0);
                    for mode in [FRightMode::ClosedForm, FRightMode::Optimal, FRightMode::Given(s_mid)] {
                        out.check(
                            &format!("F right {mode:?} ν=({nu1},{nu2}) λ={lam} w={w}"),
                            f_right(nu1, nu2, lam, w, mode),
                            p,
                            se,
                        );
                    }
                }
                for f in left_f {
                    let w = (nu1 + lam) * f;
                    let (p, se) = reference(w, false);
                    for s in [1.0, 1.3, 2.0] {
                        for t in [FLeftT::Closed, FLeftT::Optimal, FLeftT::Given(-0.2)] {
                            out.check(
                                &format!("F left s={s} {t:?} ν=({nu1},{nu2}) λ={lam} w={w}"),
                                f_left(nu1, nu2, lam, w, s, t),
                                p,
                                se,
                            );
                        }
                    }
                }
            }
            if nu2 > 4.0 {
                let base = nu2 / (nu2 - 2.0);
                for f in [1.01, 1.2, 1.5, 2.0, 5.0, 10.0, 50.0, 200.0] {
                    let w = base * f;
                    let p = f_sf(nu1, nu2, w);
                    out.check(&format!("F moment ν=({nu1},{nu2}) w={w}"), f_moment(nu1, nu2, w, None), p, 0.0);
                    if let Some((display, _)) = f_moment_regimes(nu1, nu2, w) {
                        let r = TailResult {
                            bound: display.min(1.0),
                            raw: display,
                            applicable: true,
                            param: None,
                        };
                        out.check(&format!("F moment regime ν=({nu1},{nu2}) w={w}"), r, p, 0.0);
                    }
                }
            }
        }
    }
    out
}

/// Brute-force `(spurious, small, large)` sums of the per-model terms over
/// every model of size at most `p̄`, with reference `{0, …, p_t-1}`.
pub fn brute_force_sums(
    sc: &bvs::global_bounds::BoundScenario,
    l0: Option<&bvs::L0Criterion>,
) -> (f64, f64, f64) {
    let t = ModelIndex::new((0..sc.p_t).collect()).unwrap();
    let mut acc = (0.0, 0.0, 0.0);
    for m in bvs::posterior::all_models(sc.p, sc.pbar) {
        let (a, b, c) = match l0 {
            Some(c) => bvs::global_bounds::per_model_terms_l0(sc, c, &t, &m),
            None => bvs::global_bounds::per_model_terms(sc, &t, &m).unwrap(),
        };
        acc.0 += a;
        acc.1 += b;
        acc.2 += c;
    }
    acc
}

/// A random valid bound scenario with the given prior family.
pub fn random_scenario(r: &mut ChaCha8Rng, prior: bvs::ModelPriorKind) -> bvs::global_bounds::BoundScenario {
    use rand::Rng;
    let n = r.gen_range(30..3000);
    let p_t = r.gen_range(1..8);
    let p = r.gen_range(p_t + 1..4 * n);
    let pbar = r.gen_range(p_t..=n.min(p).min(p_t + 60));
    let tau = match r.gen_range(0..4) {
        0 => n as f64,
        1 => (p * p) as f64,
        2 => (n as f64).max((p * p) as f64),
        _ => (p as f64).powi(5),
    };
    let alpha = r.gen_range(0.5..0.99);
    bvs::global_bounds::BoundScenario {
        n,
        p,
        pbar,
        p_t,
        tau,
        prior,
        lambda_lo: r.gen_range(0.5..200.0),
        lambda_hi: r.gen_range(0.5..200.0),
        alpha,
        alpha_prime: alpha * r.gen_range(0.5..0.999),
        gamma: r.gen_range(0.5..0.99),
    }
}
