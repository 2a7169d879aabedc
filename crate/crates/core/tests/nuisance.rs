use clustereif::data::{load_csv, write_dataset_csv, CsvSchema};
use clustereif::estimator::{estimate, Draws, EstimandSpec, EstimatorConfig};
use clustereif::nuisance::{Design, LearnerSpec, LogitModel};
use clustereif::policies::PolicySpec;
use clustereif::simulation::{generate_dgp, true_values, DgpConfig, SizeDist};

// With the outcome model's own features, the logit fit should land on the
// generating coefficients.
#[test]
fn logit_recovers_outcome_coefficients() {
    let data = generate_dgp(&DgpConfig {
        m: 2000,
        seed: 17,
        ..DgpConfig::default()
    });
    let (mut rows, mut y, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    for (i, c) in data.clusters().iter().enumerate() {
        let n = c.n();
        let total: f64 = c.a().iter().map(|&a| f64::from(a)).sum();
        for j in 0..n {
            let x = c.x_row(j);
            let a = f64::from(c.a()[j]);
            let others = (total - a) / (n - 1) as f64;
            let ax = x[0].abs();
            let cpos = f64::from(u8::from(x[2] > 0.0));
            rows.extend_from_slice(&[a, others, ax, x[1], ax * x[1], cpos]);
            y.push(c.y()[j]);
            groups.push(i as u32);
        }
    }
    let design = Design::new(rows, y.len(), 6, groups);
    let fit = LogitModel::fit(&design, &y);
    assert!(!fit.separated());
    let truth = [3.0, -2.0, -1.0, -1.5, 2.0, -3.0, -2.0];
    for ((b, se), t) in fit.beta.iter().zip(fit.standard_errors()).zip(truth) {
        assert!((b - t).abs() < 3.0 * se, "{b} vs {t} (se {se})");
    }
}

#[test]
fn csv_round_trip_feeds_the_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let dgp = DgpConfig {
        m: 300,
        size_dist: SizeDist::Uniform { lo: 3, hi: 8 },
        seed: 23,
    };
    let data = generate_dgp(&dgp);
    let path = dir.path().join("data.csv");
    write_dataset_csv(&data, &path).unwrap();
    let (loaded, summary) = load_csv(&path, &CsvSchema::default()).unwrap();
    assert_eq!(summary.m, 300);
    assert_eq!(loaded.column_names(), data.column_names());

    let estimands = [
        EstimandSpec::Mu(PolicySpec::cips(1.0)),
        EstimandSpec::De(PolicySpec::tpb(0.3)),
    ];
    let cfg = EstimatorConfig {
        k: 2,
        r: Draws::Exact,
        learner: LearnerSpec::logit_only(),
        ..EstimatorConfig::default()
    };
    let from_file = estimate(&loaded, &estimands, &cfg).unwrap();
    let in_memory = estimate(&data, &estimands, &cfg).unwrap();
    assert_eq!(from_file.to_json().unwrap(), in_memory.to_json().unwrap());

    // Loose sanity: within five standard errors of the truth.
    let truths = true_values(&estimands, &dgp, 20_000, 3).unwrap();
    for (r, t) in from_file.results.iter().zip(&truths) {
        assert!((r.point - t.truth).abs() < 5.0 * r.se, "{} {} vs {}", r.estimand, r.point, t.truth);
    }
}
