use bvs::sim::*;

fn bundle(name: &str, evidence: EvidenceKind, prior: PriorName) -> Bundle {
    Bundle {
        name: name.into(),
        evidence,
        prior,
        complexity_c: None,
        tau: None,
        ebic_xi: None,
        pbar: None,
        mc_draws: 500,
    }
}

fn scenario(design: Design, engine: Engine) -> Scenario {
    Scenario {
        name: "t".into(),
        n: 40,
        p: 8,
        theta: vec![1.0, 0.5],
        phi_star: 1.0,
        design,
        misspecified: None,
        heteroskedastic: None,
        standardize: true,
        replicates: 4,
        seed: 11,
        engine,
        bundles: vec![
            bundle("z-bb", EvidenceKind::Zellner, PriorName::BetaBinomial),
            bundle("z-cx", EvidenceKind::Zellner, PriorName::Complexity),
        ],
        gibbs_sweeps: 600,
        gibbs_burn_in: 100,
        pip_threshold: 0.5,
        sweep: None,
    }
}

fn tmpdir(tag: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("bvs-sim-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn replicates_are_deterministic_and_distinct() {
    let sc = scenario(Design::Equicorrelated { rho: 0.5 }, Engine::Enumerate);
    let (a, _) = generate(&sc, 0).unwrap();
    let (b, _) = generate(&sc, 0).unwrap();
    let (c, _) = generate(&sc, 1).unwrap();
    assert_eq!(a.x(), b.x());
    assert_eq!(a.y(), b.y());
    assert_ne!(a.x(), c.x());
    let mut other = sc.clone();
    other.seed = 12;
    assert_ne!(generate(&other, 0).unwrap().0.y(), a.y());
}

#[test]
fn noise_stream_is_independent_of_the_modifiers() {
    // Turning on a misspecified mean must leave the design unchanged.
    let sc = scenario(Design::Equicorrelated { rho: 0.3 }, Engine::Enumerate);
    let mut ms = sc.clone();
    ms.misspecified = Some(MisspecSpec { beta: vec![0.7] });
    let (a, _) = generate(&sc, 2).unwrap();
    let (b, _) = generate(&ms, 2).unwrap();
    assert_eq!(a.x(), b.x());
    assert_ne!(a.y(), b.y());
    assert!(b.truth().unwrap().misspecified.is_some());
}

#[test]
fn orthogonal_design_has_scaled_identity_gram() {
    let sc = scenario(Design::Orthogonal, Engine::OrthoDp);
    let (d, warn) = generate(&sc, 0).unwrap();
    assert!(warn.is_none());
    let g = d.x().transpose() * d.x();
    for i in 0..8 {
        for j in 0..8 {
            let want = if i == j { 40.0 } else { 0.0 };
            assert!((g[(i, j)] - want).abs() < 1e-9);
        }
        assert!(d.x().column(i).sum().abs() < 1e-9);
    }
}

#[test]
fn orthogonal_design_warns_when_too_wide() {
    let mut sc = scenario(Design::Orthogonal, Engine::Enumerate);
    sc.n = 8;
    sc.p = 8;
    let (_, warn) = generate(&sc, 0).unwrap();
    assert!(warn.unwrap().contains("exceeds"));
}

#[test]
fn equicorrelated_design_is_standardized() {
    let mut sc = scenario(Design::Equicorrelated { rho: 0.5 }, Engine::Enumerate);
    sc.n = 4000;
    let (d, _) = generate(&sc, 0).unwrap();
    let g = d.x().transpose() * d.x() / 4000.0;
    assert!((g[(0, 0)] - 1.0).abs() < 1e-9);
    assert!((g[(0, 1)] - 0.5).abs() < 0.05);
}

#[test]
fn heteroskedastic_noise_has_trace_n() {
    let mut sc = scenario(Design::Equicorrelated { rho: 0.0 }, Engine::Enumerate);
    sc.heteroskedastic = Some(HeteroSpec { kappa: 1.0, column: 2 });
    let (d, _) = generate(&sc, 0).unwrap();
    match &d.truth().unwrap().noise {
        bvs::NoiseCovariance::Matrix(m) => assert!((m.trace() - 40.0).abs() < 1e-9),
        other => panic!("unexpected {other:?}"),
    }
    sc.heteroskedastic = Some(HeteroSpec { kappa: 1.0, column: 99 });
    assert!(generate(&sc, 0).is_err());
}

#[test]
fn invalid_scenarios_are_rejected() {
    let mut sc = scenario(Design::Orthogonal, Engine::Enumerate);
    sc.theta = vec![1.0; 9];
    assert!(sc.validate().is_err());
    let mut sc = scenario(Design::Orthogonal, Engine::Enumerate);
    sc.bundles.clear();
    assert!(sc.validate().is_err());
}

#[test]
fn run_is_reproducible_and_summarized() {
    let sc = scenario(Design::Orthogonal, Engine::OrthoDp);
    let a = run(&sc).unwrap();
    let b = run(&sc).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.digests.len(), 8);
    assert!(a.failures.is_empty());
    for br in &a.bundles {
        let pt = br.metric("prob_true").unwrap();
        let sp = br.metric("prob_spurious").unwrap();
        let ns = br.metric("prob_nonspurious").unwrap();
        assert!((pt.mean + sp.mean + ns.mean - 1.0).abs() < 1e-9);
        assert!(br.mean_pip.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(br.per_variable.len(), 8);
    }
}

#[test]
fn engines_agree_on_orthogonal_designs() {
    let mut sc = scenario(Design::Orthogonal, Engine::Enumerate);
    sc.replicates = 2;
    let e = run(&sc).unwrap();
    sc.engine = Engine::OrthoDp;
    let o = run(&sc).unwrap();
    for (a, b) in e.digests.iter().zip(&o.digests) {
        assert!((a.prob_true - b.prob_true).abs() < 1e-9);
        for (x, y) in a.pip.iter().zip(&b.pip) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn outputs_round_trip_through_csv() {
    let sc = scenario(Design::Orthogonal, Engine::OrthoDp);
    let res = run(&sc).unwrap();
    let dir = tmpdir("emit");
    emit(&res, &dir, true).unwrap();
    for f in ["summary.csv", "pips.csv", "checks.csv", "plotdata.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let pips = std::fs::read_to_string(dir.join("pips.csv")).unwrap();
    assert_eq!(pips.lines().next().unwrap(), "bundle,variable,theta_star,mean_pip,se");
    assert_eq!(pips.lines().count(), 1 + 2 * 8);
    let rows = read_summary_csv(std::fs::File::open(dir.join("summary.csv")).unwrap()).unwrap();
    let want = res.bundles[0].metric("prob_true").unwrap();
    let got = rows.iter().find(|r| r.0 == "z-bb" && r.1 == "prob_true").unwrap();
    assert_eq!(got.2, want.mean);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn sweep_writes_one_block_per_n() {
    let mut sc = scenario(Design::Equicorrelated { rho: 0.5 }, Engine::Gibbs);
    sc.replicates = 2;
    let res = run_sweep(&sc, &[20, 30], false).unwrap();
    assert_eq!(res.iter().map(|r| r.n).collect::<Vec<_>>(), vec![20, 30]);
    let wide = run_sweep(&sc, &[10, 12], true).unwrap();
    assert!(wide.iter().all(|r| r.p == r.n));
    let mut buf = Vec::new();
    write_curves_csv(&res, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("n,bundle,metric,mean,se"));
    assert!(text.lines().skip(1).any(|l| l.starts_with("30,")));
}

#[test]
fn custom_design_is_read_from_csv() {
    let dir = tmpdir("custom");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("x.csv");
    let mut text = String::from("a,b,c\n");
    for i in 0..12 {
        text.push_str(&format!("{},{},{}\n", i, (i * i) % 7, (i * 5) % 3));
    }
    std::fs::write(&path, text).unwrap();
    let mut sc = scenario(
        Design::Custom {
            path: path.display().to_string(),
        },
        Engine::Enumerate,
    );
    sc.n = 12;
    sc.p = 3;
    sc.theta = vec![1.0];
    let (d, _) = generate(&sc, 0).unwrap();
    assert_eq!(d.x().ncols(), 3);
    sc.n = 13;
    assert!(generate(&sc, 0).is_err());
    let _ = std::fs::remove_dir_all(&dir);
}
