use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::enumerate_treatments;

fn tv(a: &[u8]) -> TreatmentVector {
    TreatmentVector::from_slice(a)
}

/// Independent Bernoulli law of the observed treatments.
fn h_of(pi: &[f64], a: TreatmentVector) -> f64 {
    (0..pi.len())
        .map(|l| if a.get(l) == 1 { pi[l] } else { 1.0 - pi[l] })
        .product()
}

struct Fixture {
    x: Vec<f64>,
    pi: Vec<f64>,
    p: usize,
}

impl Fixture {
    fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let p = 2;
        let mut x = Vec::with_capacity(n * p);
        for _ in 0..n {
            x.push(rng.random::<f64>() * 2.0 - 1.0);
            x.push(f64::from(u8::from(rng.random::<bool>())));
        }
        let pi = (0..n).map(|_| 0.05 + 0.9 * rng.random::<f64>()).collect();
        Self { x, pi, p }
    }

    fn ctx(&self, observed: TreatmentVector) -> ClusterContext<'_> {
        ClusterContext {
            n: self.pi.len(),
            p: self.p,
            x: &self.x,
            propensity: &self.pi,
            observed,
        }
    }
}

fn all_specs() -> Vec<PolicySpec> {
    vec![
        PolicySpec::type_b(0.3),
        PolicySpec::cips(0.5),
        PolicySpec::cips(2.0),
        PolicySpec::cips_varying(1.5),
        PolicySpec::cms(0.5, 1, "x2"),
        PolicySpec::cms(0.0, 1, "x2"),
        PolicySpec::tpb(0.0),
        PolicySpec::tpb(0.3),
        PolicySpec::tpb(0.75),
    ]
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn shifted_propensity_examples() {
    assert!(close(shifted_propensity_cips(0.37, 1.0).unwrap(), 0.37, 1e-15));
    assert!(close(shifted_propensity_cips(0.5, 2.0).unwrap(), 2.0 / 3.0, 1e-15));
    assert!(close(shifted_propensity_cips(0.5, 0.5).unwrap(), 1.0 / 3.0, 1e-15));
    assert!(shifted_propensity_cips(1.0, 1.0).is_err());
    assert!(shifted_propensity_cips(0.5, 0.0).is_err());

    assert!(close(shifted_propensity_cms(0.4, 1.0, 1.0).unwrap(), 0.4, 1e-15));
    assert!(close(shifted_propensity_cms(0.4, 0.5, 1.0).unwrap(), 0.7, 1e-15));
    assert!(close(shifted_propensity_cms(0.4, 0.3, 0.0).unwrap(), 0.4, 1e-15));
    assert!(shifted_propensity_cms(0.4, 1.5, 1.0).is_err());
    assert!(shifted_propensity_cms(0.4, 0.5, 0.5).is_err());
}

#[test]
fn type_b_examples() {
    let f = Fixture {
        x: vec![0.0; 6],
        pi: vec![0.5; 3],
        p: 2,
    };
    let ctx = f.ctx(tv(&[0, 0, 0]));
    let spec = PolicySpec::type_b(0.5);
    assert!(close(policy_prob(&spec, tv(&[1, 0, 1]), &ctx).unwrap(), 0.125, 1e-15));
    assert_eq!(phi_q(&spec, tv(&[1, 0, 1]), &ctx).unwrap(), 0.0);

    let f2 = Fixture {
        x: vec![0.0; 4],
        pi: vec![0.5; 2],
        p: 2,
    };
    let ctx2 = f2.ctx(tv(&[1, 1]));
    let spec3 = PolicySpec::type_b(0.3);
    // a_(-1) = (1) for unit index 1 of a size-2 cluster.
    let m = policy_prob_marginal(&spec3, tv(&[1]), 1, &ctx2).unwrap();
    assert!(close(m, 0.3, 1e-15));

    let a = tv(&[1, 0]);
    let w = weight(&spec, WeightKind::Mu, a, &ctx2).unwrap();
    assert!(close(w[0], 0.125, 1e-15) && close(w[1], 0.125, 1e-15));
    let w1 = weight(&spec, WeightKind::MuTreated, a, &ctx2).unwrap();
    assert!(close(w1[0], 0.25, 1e-15) && w1[1] == 0.0);
    let w0 = weight(&spec, WeightKind::MuUntreated, a, &ctx2).unwrap();
    assert!(w0[0] == 0.0 && close(w0[1], 0.25, 1e-15));
    for kind in [WeightKind::Mu, WeightKind::MuTreated, WeightKind::MuUntreated] {
        assert!(phi_weight(&spec, kind, a, &ctx2).unwrap().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn cips_phi_hand_value() {
    let f = Fixture {
        x: vec![0.0],
        pi: vec![0.5],
        p: 1,
    };
    let spec = PolicySpec::cips(2.0);
    let up = phi_q(&spec, tv(&[1]), &f.ctx(tv(&[1]))).unwrap();
    let down = phi_q(&spec, tv(&[1]), &f.ctx(tv(&[0]))).unwrap();
    assert!(close(up, 4.0 / 9.0, 1e-15));
    assert!(close(0.5 * up + 0.5 * down, 0.0, 1e-15));
}

#[test]
fn tpb_examples() {
    let f = Fixture {
        x: vec![0.0; 2],
        pi: vec![0.5, 0.5],
        p: 1,
    };
    let ctx = f.ctx(tv(&[1, 0]));
    let spec = PolicySpec::tpb(0.5);
    let bound = spec.bind(&ctx).unwrap();
    for a in enumerate_treatments(2) {
        let want = if a.count() == 0 { 0.0 } else { 1.0 / 3.0 };
        assert!(close(bound.prob(a), want, 1e-15));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Fixture::random(&mut rng, 4);
    let obs = tv(&[0, 1, 1, 0]);
    let b0 = PolicySpec::tpb(0.0).bind(&g.ctx(obs)).unwrap();
    for a in enumerate_treatments(4) {
        let h = h_of(&g.pi, a);
        assert!(close(b0.prob(a), h, 1e-14));
        let ind = if a == obs { 1.0 } else { 0.0 };
        assert!(close(b0.phi(a), ind - h, 1e-14));
    }
}

#[test]
fn tpb_floor_is_flagged() {
    let pi = vec![0.01; 6];
    let p = TpbPolicy::new(1.0, &pi, tv(&[0; 6])).unwrap();
    assert!(p.floored());
    assert_eq!(p.admissible_mass(), TPB_MASS_FLOOR);
    let q = TpbPolicy::new(0.5, &pi, tv(&[0; 6])).unwrap();
    assert!(!q.floored());
}

#[test]
fn normalization_over_lattice() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for rep in 0..100 {
        let n = 1 + rep % 6;
        let f = Fixture::random(&mut rng, n);
        let obs = TreatmentVector::new(rng.random::<u64>(), n);
        for spec in all_specs() {
            let b = spec.bind(&f.ctx(obs)).unwrap();
            if b.flagged() {
                continue;
            }
            let total: f64 = enumerate_treatments(n).map(|a| b.prob(a)).sum();
            assert!(close(total, 1.0, 1e-10), "{spec} n={n}: {total}");
        }
    }
}

#[test]
fn tpb_zero_below_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = Fixture::random(&mut rng, 5);
    let b = PolicySpec::tpb(0.6).bind(&f.ctx(tv(&[1, 1, 1, 0, 0]))).unwrap();
    for a in enumerate_treatments(5) {
        if a.mean() < 0.6 {
            assert_eq!(b.prob(a), 0.0);
            assert_eq!(b.phi(a), 0.0);
        }
    }
}

#[test]
fn marginals_match_completion_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for rep in 0..40 {
        let n = 1 + rep % 4;
        let f = Fixture::random(&mut rng, n);
        let obs = TreatmentVector::new(rng.random::<u64>(), n);
        for spec in all_specs() {
            let b = spec.bind(&f.ctx(obs)).unwrap();
            let mut via_visit = vec![0.0; n];
            for a in enumerate_treatments(n) {
                let (q, phi) = b.visit(a, &mut via_visit);
                assert!(close(q, b.prob(a), 1e-13));
                assert!(close(phi, b.phi(a), 1e-12));
                for j in 0..n {
                    let q_sum = b.prob(a.with(j, 0)) + b.prob(a.with(j, 1));
                    let phi_sum = b.phi(a.with(j, 0)) + b.phi(a.with(j, 1));
                    assert!(close(b.prob_marginal(a, j), q_sum, 1e-12), "{spec}");
                    assert!(close(b.phi_marginal(a, j), phi_sum, 1e-11), "{spec}");
                    assert!(close(via_visit[j], q_sum + phi_sum, 1e-11), "{spec}");
                }
            }
        }
    }
}

#[test]
fn phi_weight_by_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for n in 1..=3 {
        let f = Fixture::random(&mut rng, n);
        let obs = TreatmentVector::new(rng.random::<u64>(), n);
        for spec in all_specs() {
            let b = spec.bind(&f.ctx(obs)).unwrap();
            for a in enumerate_treatments(n) {
                let mu = b.phi_weight(WeightKind::Mu, a);
                assert!(mu.iter().all(|&v| close(v, b.phi(a) / n as f64, 1e-15)));
                for (kind, t) in [(WeightKind::MuTreated, 1), (WeightKind::MuUntreated, 0)] {
                    let got = b.phi_weight(kind, a);
                    for j in 0..n {
                        let want = if a.get(j) == t {
                            (b.phi(a.with(j, 0)) + b.phi(a.with(j, 1))) / n as f64
                        } else {
                            0.0
                        };
                        assert!(close(got[j], want, 1e-12));
                    }
                }
            }
        }
    }
}

#[test]
fn cips_delta_one_marginal_is_observed_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let f = Fixture::random(&mut rng, 4);
    let b = PolicySpec::cips(1.0).bind(&f.ctx(tv(&[0, 0, 1, 1]))).unwrap();
    for a in enumerate_treatments(4) {
        for j in 0..4 {
            let want: f64 = (0..4)
                .filter(|&l| l != j)
                .map(|l| if a.get(l) == 1 { f.pi[l] } else { 1.0 - f.pi[l] })
                .product();
            assert!(close(b.prob_marginal(a, j), want, 1e-14));
        }
    }
}

#[test]
fn phi_has_mean_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for n in 1..=4 {
        let f = Fixture::random(&mut rng, n);
        for spec in all_specs() {
            let bound: Vec<_> = enumerate_treatments(n)
                .map(|obs| (h_of(&f.pi, obs), spec.bind(&f.ctx(obs)).unwrap()))
                .collect();
            for a in enumerate_treatments(n) {
                let m: f64 = bound.iter().map(|(h, b)| h * b.phi(a)).sum();
                assert!(m.abs() < 1e-10, "{spec} n={n}: {m}");
            }
        }
    }
}

/// `Q̂(a) − Q(a) + Σ_{a'} φ̂(a'; a) H(a')` with `π̂ = π + ε`.
fn remainder(spec: &PolicySpec, f: &Fixture, eps: f64, a: TreatmentVector) -> f64 {
    let n = f.pi.len();
    let truth = spec.bind(&f.ctx(a)).unwrap();
    let shifted = Fixture {
        x: f.x.clone(),
        pi: f.pi.iter().map(|p| p + eps).collect(),
        p: f.p,
    };
    let drift: f64 = enumerate_treatments(n)
        .map(|obs| h_of(&f.pi, obs) * spec.bind(&shifted.ctx(obs)).unwrap().phi(a))
        .sum();
    spec.bind(&shifted.ctx(a)).unwrap().prob(a) - truth.prob(a) + drift
}

#[test]
fn cips_remainder_is_second_order() {
    let f = Fixture {
        x: vec![0.0; 6],
        pi: vec![0.3, 0.55, 0.7],
        p: 2,
    };
    let spec = PolicySpec::cips(2.0);
    let a = tv(&[1, 0, 1]);
    let r: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&e| remainder(&spec, &f, e, a).abs())
        .collect();
    for w in r.windows(2) {
        let slope = (w[0] / w[1]).log2();
        assert!((slope - 2.0).abs() < 0.2, "slope {slope}, residuals {r:?}");
    }
}

#[test]
fn cms_remainder_vanishes_for_one_unit() {
    for xs in [0.0, 1.0] {
        let f = Fixture {
            x: vec![xs],
            pi: vec![0.35],
            p: 1,
        };
        let spec = PolicySpec::cms(0.4, 0, "xs");
        for a in enumerate_treatments(1) {
            for eps in [1e-2, 0.1] {
                assert!(remainder(&spec, &f, eps, a).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn grammar_round_trips() {
    let cols = vec!["x1".to_string(), "x2".to_string()];
    for text in [
        "typeb:alpha=0.5",
        "cips:delta0=2,mode=constant",
        "cips:delta0=0.5,mode=varying",
        "cms:lambda=0.5,xstar=x2",
        "tpb:rho=0.3",
    ] {
        let spec = PolicySpec::parse(text, &cols).unwrap();
        assert_eq!(spec.to_string(), text);
    }
    let e = PolicySpec::parse("cips:delta0=1,expr=delta0*xbar_x1", &cols).unwrap();
    assert_eq!(PolicySpec::parse(&e.to_string(), &cols).unwrap(), e);
    assert_eq!(PolicySpec::parse("cips:delta0=2", &cols).unwrap(), PolicySpec::cips(2.0));

    assert!(matches!(PolicySpec::parse("cms:lambda=0.5,xstar=z", &cols), Err(Error::MissingColumn(_))));
    for bad in ["typeb:alpha=1", "tpb:rho=1.2", "cips:delta0=-1", "foo:x=1", "tpb:rho", "tpb:rho=0.3,k=1"] {
        assert!(PolicySpec::parse(bad, &cols).is_err(), "{bad}");
    }
}

#[test]
fn cms_rejects_non_binary_x_star() {
    let c = crate::data::ClusterObservation::new("c", vec![0.0; 2], vec![0, 1], vec![0.0, 0.5, 1.0, 1.0], 2)
        .unwrap();
    let spec = PolicySpec::cms(0.5, 1, "x2");
    assert!(matches!(spec.check_against(&[c.clone()]), Err(Error::Domain(_))));
    assert!(PolicySpec::cms(0.5, 0, "x1").check_against(&[c]).is_ok());
}

#[test]
fn with_param_keeps_family() {
    let s = PolicySpec::cips_varying(1.0).with_param(2.0);
    assert_eq!(s, PolicySpec::cips_varying(2.0));
    assert_eq!(PolicySpec::tpb(0.1).with_param(0.4).param(), 0.4);
}

proptest! {
    #[test]
    fn cips_preserves_rank(p1 in 0.001f64..0.999, p2 in 0.001f64..0.999, delta in 0.01f64..50.0) {
        prop_assume!((p1 - p2).abs() > 1e-9);
        let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
        let a = shifted_propensity_cips(lo, delta).unwrap();
        let b = shifted_propensity_cips(hi, delta).unwrap();
        prop_assert!(a < b);
        prop_assert!(a > 0.0 && b < 1.0);
    }

    #[test]
    fn insert_unit_inverts_removal(bits in 0u64..(1 << 7), j in 0usize..8) {
        let short = TreatmentVector::new(bits, 7);
        let long = insert_unit(short, j);
        prop_assert_eq!(long.get(j), 0);
        let back: Vec<u8> = (0..8).filter(|&i| i != j).map(|i| long.get(i)).collect();
        prop_assert_eq!(back, short.to_vec());
    }

    #[test]
    fn density_ratio_is_safe(lq in -100.0f64..0.0, lh in -100.0f64..0.0) {
        let r = density_ratio(lq, lh);
        prop_assert!(r.is_finite() && r >= 0.0);
        prop_assert_eq!(density_ratio(f64::NEG_INFINITY, lh), 0.0);
    }
}
