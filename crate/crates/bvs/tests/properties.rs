mod common;

use approx::assert_relative_eq;
use bvs::numerics::{ln_choose, log_add_exp, log_sum_exp, softmax};
use bvs::posterior::{all_models, enumerate_posterior, log_esp, log_esp_leave_one_out, subset_masses};
use bvs::tail_bounds::{chisq_left, chisq_right, chisq_sf, ncchisq_left, ncchisq_right, NcRightVariant};
use bvs::{CoefPrior, InvGammaHyper, ModelIndex, ModelPrior, ModelPriorKind, PosteriorSpec};
use common::*;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn prior_kind() -> impl Strategy<Value = ModelPriorKind> {
    prop_oneof![
        Just(ModelPriorKind::Uniform),
        Just(ModelPriorKind::BetaBinomial11),
        (0.1f64..2.0).prop_map(ModelPriorKind::Complexity),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn posterior_is_a_distribution(
        seed in 0u64..10_000,
        p in 2usize..7,
        tau in 1.0f64..100.0,
        kind in prior_kind(),
    ) {
        let d = gaussian_dataset(25, p, &[0.8], seed);
        let pbar = p.min(5);
        let spec = PosteriorSpec::bayes(
            CoefPrior::ZellnerUnknownPhi { tau, ig: InvGammaHyper::default() },
            ModelPrior::new(kind, p, pbar).unwrap(),
        );
        let t = ModelIndex::new(vec![0]).unwrap();
        let s = enumerate_posterior(&d, &spec, Some(&t)).unwrap();
        let total: f64 = s.records.iter().map(|r| r.probability).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        prop_assert!((s.size_probs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for &v in &s.pip {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        }
        // PIPs are the size-weighted average model size.
        let mean_size: f64 = s.size_probs.iter().enumerate().map(|(l, w)| l as f64 * w).sum();
        prop_assert!((s.pip.iter().sum::<f64>() - mean_size).abs() < 1e-9);
        let m = subset_masses(&s, &t).unwrap();
        prop_assert!((m.reference_prob + m.spurious() + m.nonspurious() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn esp_matches_brute_force(b in prop::collection::vec(-5.0f64..5.0, 1..9)) {
        let p = b.len();
        let got = log_esp(&b, p);
        let mut brute = vec![Vec::new(); p + 1];
        for m in all_models(p, p) {
            brute[m.size()].push(m.indices().iter().map(|&j| b[j]).sum::<f64>());
        }
        for l in 0..=p {
            assert_relative_eq!(got[l], log_sum_exp(&brute[l]), epsilon = 1e-10, max_relative = 1e-10);
        }
        let loo = log_esp_leave_one_out(&b, p - 1);
        for (j, row) in loo.iter().enumerate() {
            let rest: Vec<f64> = b.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, v)| *v).collect();
            let want = log_esp(&rest, p - 1);
            for l in 0..p {
                prop_assert!((row[l] - want[l]).abs() < 1e-9 || (row[l] == want[l]));
            }
        }
    }

    #[test]
    fn chisq_bounds_dominate_the_exact_tail(nu in 0.5f64..200.0, ratio in 0.01f64..6.0) {
        let w = nu * ratio;
        let exact = chisq_sf(nu, w);
        let r = chisq_right(nu, w);
        prop_assert!(r.bound >= exact * (1.0 - 1e-9) - 1e-300);
        let cdf = ChiSquared::new(nu).unwrap().cdf(w);
        let l = chisq_left(nu, w);
        prop_assert!(l.bound >= cdf * (1.0 - 1e-9) - 1e-300);
        prop_assert!((0.0..=1.0).contains(&r.bound) && (0.0..=1.0).contains(&l.bound));
    }

    #[test]
    fn noncentral_bounds_reduce_to_central_ones(nu in 1.0f64..50.0, ratio in 1.05f64..6.0) {
        let w = nu * ratio;
        let nc = ncchisq_right(nu, 0.0, w, NcRightVariant::Optimal);
        prop_assert!(nc.bound >= chisq_sf(nu, w) * (1.0 - 1e-9));
        let left = ncchisq_left(nu, 0.0, nu / ratio, None);
        prop_assert!(left.bound >= ChiSquared::new(nu).unwrap().cdf(nu / ratio) * (1.0 - 1e-9));
    }

    #[test]
    fn log_sum_exp_identities(xs in prop::collection::vec(-700.0f64..700.0, 1..20), c in -50.0f64..50.0) {
        let base = log_sum_exp(&xs);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        assert_relative_eq!(log_sum_exp(&shifted), base + c, epsilon = 1e-9);
        let folded = xs.iter().fold(f64::NEG_INFINITY, |a, &b| log_add_exp(a, b));
        assert_relative_eq!(folded, base, epsilon = 1e-9);
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(base >= max && base <= max + (xs.len() as f64).ln() + 1e-12);
        let w = softmax(&xs);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bitstrings_round_trip(flags in prop::collection::vec(any::<bool>(), 1..64)) {
        let m = ModelIndex::from_flags(&flags);
        let s = m.bitstring(flags.len());
        prop_assert_eq!(s.len(), flags.len());
        prop_assert_eq!(ModelIndex::parse_bitstring(&s).unwrap(), m.clone());
        prop_assert_eq!(m.size(), flags.iter().filter(|&&f| f).count());
    }

    #[test]
    fn model_priors_normalize(p in 1usize..11, frac in 0.0f64..1.0, kind in prior_kind()) {
        let pbar = ((p as f64 * frac).round() as usize).min(p);
        let prior = ModelPrior::new(kind, p, pbar).unwrap();
        let sizes: Vec<f64> = (0..=pbar).map(|l| prior.log_size_mass(l)).collect();
        for l in 0..=pbar {
            prop_assert!((prior.log_prior_size(l).value() + ln_choose(p, l) - prior.log_size_mass(l)).abs() < 1e-10);
        }
        prop_assert!(log_sum_exp(&sizes).abs() < 1e-10);
        let models: Vec<f64> = all_models(p, pbar).iter().map(|m| prior.log_prior(m).value()).collect();
        prop_assert!(log_sum_exp(&models).abs() < 1e-10);
    }
}
