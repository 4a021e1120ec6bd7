mod common;

use bvs::global_bounds::*;
use bvs::{L0Criterion, ModelPriorKind};
use common::*;

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn base(prior: ModelPriorKind) -> BoundScenario {
    BoundScenario {
        n: 60,
        p: 10,
        pbar: 8,
        p_t: 3,
        tau: 60.0,
        prior,
        lambda_lo: 12.0,
        lambda_hi: 20.0,
        alpha: 0.9,
        alpha_prime: 0.8,
        gamma: 0.9,
    }
}

#[test]
fn size_sums_equal_per_model_sums() {
    for prior in [
        ModelPriorKind::Uniform,
        ModelPriorKind::BetaBinomial11,
        ModelPriorKind::Complexity(1.0),
        ModelPriorKind::Complexity(0.3),
    ] {
        let sc = base(prior.clone());
        let (s, a, l) = brute_force_sums(&sc, None);
        assert!(rel(bound_spurious(&sc).unwrap().raw, s) < 1e-10, "{prior:?}");
        assert!(rel(bound_nonspurious_small(&sc).unwrap().raw, a) < 1e-10);
        assert!(rel(bound_nonspurious_large(&sc).unwrap().raw, l) < 1e-10);
    }
}

#[test]
fn l0_size_sums_equal_per_model_sums() {
    for c in [L0Criterion::Bic, L0Criterion::Ric, L0Criterion::Ebic(0.5)] {
        let sc = base(ModelPriorKind::Uniform);
        let b = bound_l0(&sc, &c).unwrap();
        let (s, a, l) = brute_force_sums(&sc, Some(&c));
        assert!(rel(b.spurious.raw, s) < 1e-10);
        assert!(rel(b.nonspurious_small.raw, a) < 1e-10);
        assert!(rel(b.nonspurious_large.raw, l) < 1e-10);
    }
}

#[test]
fn clamping_and_log_scale_are_consistent() {
    let mut sc = base(ModelPriorKind::Uniform);
    sc.tau = 1.0;
    let b = bound_spurious(&sc).unwrap();
    assert!(b.raw > 1.0);
    assert_eq!(b.clamped, 1.0);
    assert!((b.log.exp() - b.raw).abs() < 1e-12 * b.raw);
}

#[test]
fn invalid_scenarios_are_rejected() {
    let mut sc = base(ModelPriorKind::Uniform);
    sc.alpha_prime = 0.95;
    assert!(bound_spurious(&sc).is_err());
    let mut sc = base(ModelPriorKind::Uniform);
    sc.pbar = 2;
    assert!(bound_spurious(&sc).is_err());
}

#[test]
fn spurious_bound_shrinks_as_tau_grows() {
    let mut prev = f64::INFINITY;
    for tau in [10.0, 100.0, 1e3, 1e4] {
        let mut sc = base(ModelPriorKind::BetaBinomial11);
        sc.tau = tau;
        let v = bound_spurious(&sc).unwrap().raw;
        assert!(v < prev);
        prev = v;
    }
}

#[test]
fn simplified_rates_dominate_exact_sums() {
    let mut r = rng(77);
    let mut applicable = [0usize; 3];
    for i in 0..60 {
        for (k, prior) in [ModelPriorKind::Uniform, ModelPriorKind::BetaBinomial11, ModelPriorKind::Complexity(1.0)]
            .into_iter()
            .enumerate()
        {
            let sc = random_scenario(&mut r, prior);
            let exact = bound_spurious(&sc).unwrap().raw;
            let rates = simplified_rates(&sc).unwrap();
            let s = [rates.uniform, rates.beta_binomial, rates.complexity][k];
            if s.applicable {
                applicable[k] += 1;
                assert!(exact <= s.value * (1.0 + 1e-9), "scenario {i} prior {k}: {exact} > {}", s.value);
            }
        }
    }
    assert!(applicable.iter().all(|&c| c > 5), "{applicable:?}");
}

#[test]
fn uniform_geometric_form_matches_direct_sum() {
    let mut r = rng(3);
    for _ in 0..20 {
        let sc = random_scenario(&mut r, ModelPriorKind::Uniform);
        let rates = simplified_rates(&sc).unwrap();
        let direct = uniform_geometric_direct(&sc);
        if direct.is_finite() && direct < 1e300 {
            assert!(rel(rates.uniform.value, direct) < 1e-8);
        }
    }
}

#[test]
fn curves_have_the_documented_shape() {
    let grid: Vec<usize> = (100..=3000).step_by(100).collect();
    let s = CurveSettings::default();
    for case in 1..=4 {
        let rows = figure1_curves(case, &grid, &s).unwrap();
        assert_eq!(rows.len(), grid.len());
        for w in rows.windows(2) {
            assert!(w[1].spurious.raw < w[0].spurious.raw, "case {case}");
        }
        let p = if case % 2 == 0 { 100 * 100 } else { 100 };
        assert_eq!(rows[0].p, p);
    }
    assert!(figure1_curves(5, &grid, &s).is_err());
}

#[test]
fn curves_csv_has_a_row_per_n() {
    let rows = figure1_curves(1, &[100, 200], &CurveSettings::default()).unwrap();
    let mut buf = Vec::new();
    write_curves_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("case,n,p,lambda,bound_spurious,bound_nonspurious_small"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn lambda_rules_parse() {
    assert_eq!("quarter-n".parse::<LambdaRule>().unwrap(), LambdaRule::QuarterN);
    assert_eq!("theta-squared-n".parse::<LambdaRule>().unwrap(), LambdaRule::ThetaSquaredN);
    assert!("nope".parse::<LambdaRule>().is_err());
    let q = CurveSettings {
        lambda_rule: LambdaRule::QuarterN,
        ..CurveSettings::default()
    };
    assert_eq!(curve_scenario(3, 400, &q).unwrap().lambda_lo, 100.0);
    assert_eq!(curve_scenario(3, 400, &CurveSettings::default()).unwrap().lambda_lo, 25.0);
}

#[test]
fn signal_floor_scan_on_an_orthogonal_design() {
    let d = orthogonal_dataset(40, 8, &[0.5, -1.0, 0.8], 1.0, 2);
    let t = bvs::linear::ModelIndex::new(vec![0, 1, 2]).unwrap();
    let rep = lambda_floor(&d, &t, 10_000, 0).unwrap();
    assert!(rep.exhaustive);
    assert_eq!(rep.rows.len(), 1 + 8 + 28);
    assert!((rep.min_theta_sq - 0.25).abs() < 1e-12);
    for row in &rep.rows {
        // With X'X = nI, the non-centrality equals n times the squared norm
        // of the omitted true coefficients.
        let missing: f64 = [0.5f64, -1.0, 0.8]
            .iter()
            .enumerate()
            .filter(|(j, _)| !row.model.contains(*j))
            .map(|(_, v)| v * v)
            .sum();
        assert!((row.lambda - 40.0 * missing).abs() < 1e-8);
        assert!(row.holds);
    }
    let sampled = lambda_floor(&d, &t, 10, 5).unwrap();
    assert!(!sampled.exhaustive);
    assert_eq!(sampled.rows.len(), 10);
}
