use super::*;
use crate::estimator::{Draws, EstimandSpec, EstimatorConfig};
use crate::nuisance::LearnerSpec;
use crate::policies::PolicySpec;

#[test]
fn covariates_follow_the_design() {
    let data = generate_dgp(&DgpConfig {
        m: 40_000,
        ..DgpConfig::default()
    });
    let mut x2 = (0.0, 0usize);
    let mut a_base = (0.0, 0usize);
    for c in data.clusters() {
        assert!((5..=20).contains(&c.n()));
        for j in 0..c.n() {
            let row = c.x_row(j);
            assert_eq!(row[2], c.x_row(0)[2]);
            x2.0 += row[1];
            x2.1 += 1;
            if row[0].abs() < 0.05 && row[2] <= 0.0 {
                a_base.0 += f64::from(c.a()[j]);
                a_base.1 += 1;
            }
        }
    }
    assert!(x2.1 >= 100_000);
    assert!((x2.0 / x2.1 as f64 - 0.5).abs() < 0.005);
    let expit01 = 1.0 / (1.0 + (-0.1f64).exp());
    let a_mean = a_base.0 / a_base.1 as f64;
    assert!((a_mean - expit01).abs() < 0.01, "{a_mean}");
}

#[test]
fn generation_is_deterministic_per_seed() {
    let cfg = DgpConfig {
        m: 20,
        ..DgpConfig::default()
    };
    let a = generate_dgp(&cfg);
    let b = generate_dgp(&cfg);
    for (x, y) in a.clusters().iter().zip(b.clusters()) {
        assert_eq!(x.y(), y.y());
        assert_eq!(x.a(), y.a());
        assert_eq!(x.x(), y.x());
    }
    let c = generate_dgp(&DgpConfig { seed: 1, ..cfg });
    assert_ne!(a.clusters()[0].x(), c.clusters()[0].x());
}

#[test]
fn size_distribution_grammar() {
    for s in ["uniform:5-20", "point:3", "uniform:3-5"] {
        assert_eq!(s.parse::<SizeDist>().unwrap().to_string(), s);
    }
    assert!("uniform:5-3".parse::<SizeDist>().is_err());
    assert!("poisson:4".parse::<SizeDist>().is_err());
    let bad = DgpConfig {
        size_dist: SizeDist::Point(25),
        ..DgpConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn collapsed_truth_matches_enumeration() {
    let policies = [
        PolicySpec::type_b(0.4),
        PolicySpec::cips(0.5),
        PolicySpec::cips(2.0),
        PolicySpec::tpb(0.3),
        PolicySpec::tpb(0.6),
    ];
    let mut r = rng::stream(42, &[0]);
    for size in [1, 2, 5, 9] {
        for _ in 0..5 {
            let (n, x) = draw_covariates(&mut r, SizeDist::Point(size));
            let fast = cluster_truth(n, &x, &policies).unwrap();
            let slow = truth_by_enumeration(n, &x, &policies).unwrap();
            for (f, s) in fast.iter().zip(&slow) {
                assert!((f.mu - s.mu).abs() < 1e-12, "{f:?} {s:?}");
                assert!((f.mu1 - s.mu1).abs() < 1e-12, "{f:?} {s:?}");
                assert!((f.mu0 - s.mu0).abs() < 1e-12, "{f:?} {s:?}");
            }
        }
    }
}

#[test]
fn truths_are_close_to_reference_values() {
    let est = [
        EstimandSpec::Mu(PolicySpec::cips(1.0)),
        EstimandSpec::Mu(PolicySpec::tpb(0.3)),
        EstimandSpec::De(PolicySpec::cips(1.0)),
    ];
    let t = true_values(&est, &DgpConfig::default(), 20_000, 1).unwrap();
    assert!((t[0].truth - 0.364).abs() < 0.003 + 3.0 * t[0].mc_se);
    assert!((t[1].truth - 0.361).abs() < 0.003 + 3.0 * t[1].mc_se);
    assert!((t[2].truth + 0.287).abs() < 0.003 + 3.0 * t[2].mc_se);
}

#[test]
fn truth_cache_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("truth.json");
    let est = [EstimandSpec::Mu(PolicySpec::cips(2.0))];
    let dgp = DgpConfig::default();
    let a = true_values_cached(&est, &dgp, 500, 3, Some(&path)).unwrap();
    assert!(path.exists());
    let b = true_values_cached(&est, &dgp, 500, 3, Some(&path)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0], true_value(&est[0], &dgp, 500, 3).unwrap());
}

#[test]
fn metric_identity() {
    let truth = 0.3;
    let points = [0.31, 0.28, 0.35, 0.29, 0.30];
    let ses = [0.02; 5];
    let cis: Vec<(f64, f64)> = points.iter().map(|p| (p - 0.04, p + 0.04)).collect();
    let m = metrics(&points, &ses, &cis, truth);
    let d = points.len() as f64;
    assert!((m.rmse * m.rmse - (m.bias * m.bias + m.ese * m.ese * (d - 1.0) / d)).abs() < 1e-12);
    assert!((m.cov - 0.8).abs() < 1e-15);
    assert!((m.ase - 0.02).abs() < 1e-15);
}

#[test]
fn estimator_names() {
    for k in ["nss", "pss", "ipw", "oracle"] {
        assert_eq!(k.parse::<EstimatorKind>().unwrap().to_string(), k);
    }
    assert!("tmle".parse::<EstimatorKind>().is_err());
}

#[test]
fn smoke_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = BenchmarkConfig::new(
        2,
        DgpConfig {
            m: 40,
            size_dist: SizeDist::Uniform { lo: 3, hi: 6 },
            seed: 9,
        },
        vec![EstimandSpec::Mu(PolicySpec::cips(1.0)), EstimandSpec::De(PolicySpec::tpb(0.3))],
    );
    cfg.estimators = vec![EstimatorKind::Nss, EstimatorKind::Pss, EstimatorKind::Ipw, EstimatorKind::Oracle];
    cfg.estimator = EstimatorConfig {
        r: Draws::Exact,
        learner: LearnerSpec::logit_only(),
        ..EstimatorConfig::default()
    };
    cfg.truth_mc = 2000;
    let res = run_benchmark(&cfg).unwrap();
    assert!(res.failures.is_empty(), "{:?}", res.failures);
    assert_eq!(res.rows.len(), 8);
    for r in &res.rows {
        let m = r.metrics;
        assert!(m.rmse * m.rmse >= m.bias * m.bias - 1e-12);
        assert!((0.0..=1.0).contains(&m.cov));
        assert_eq!(r.completed, 2);
        assert!(r.rmse_ratio.is_some());
    }
    let pss = res.row(&cfg.estimands[0].label(), EstimatorKind::Pss).unwrap();
    assert_eq!(pss.rmse_ratio, Some(1.0));
    let path = dir.path().join("bench.csv");
    write_benchmark_csv(&res, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("estimand,estimator,truth,bias,rmse,ase,ese,cov,rmse_ratio\n"));
    assert_eq!(text.lines().count(), 9);

    let sens = run_r_sensitivity(&cfg, &[4, 16]).unwrap();
    assert_eq!(sens.len(), 2);
    assert_eq!(sens[0].1.rows.len(), 2);
}
