use std::sync::Arc;

use exoed_core::design::{
    classical_criterion, classical_design, fiacco_sensitivity, resolve_sensitivity, Criterion, DesignNoise,
    DesignProblem, Method,
};
use exoed_core::geometry::{anchor_points, AnchorProblem, GeometrySettings};
use exoed_core::model::builtin_second_order;
use exoed_core::nlp::Sense;
use proptest::prelude::*;

fn case2(c: Criterion, m: Method, n: usize) -> DesignProblem {
    let model = Arc::new(builtin_second_order(-4.0).unwrap());
    DesignProblem::new(model, &[0.5, 1.0], c, m, n, DesignNoise::Known(vec![0.4])).unwrap()
}

fn criterion() -> impl Strategy<Value = Criterion> {
    prop_oneof![Just(Criterion::A), Just(Criterion::D), Just(Criterion::E)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn classical_value_ignores_sample_order(u in prop::collection::vec(0.2f64..10.0, 3), c in criterion()) {
        let p = case2(c, Method::Classical, 3);
        let a = classical_criterion(&p.information(&u).unwrap(), c).unwrap();
        let b = classical_criterion(&p.information(&[u[2], u[0], u[1]]).unwrap(), c).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12), "{a} {b}");
    }
}

#[test]
fn classical_optimum_is_locally_optimal() {
    for c in [Criterion::A, Criterion::D, Criterion::E] {
        let p = case2(c, Method::Classical, 2);
        let r = classical_design(&p).unwrap();
        let u = r.flat();
        let best = classical_criterion(&p.information(&u).unwrap(), c).unwrap();
        for k in 0..u.len() {
            for h in [-1e-3, 1e-3] {
                let mut v = u.clone();
                v[k] = (v[k] + h).clamp(0.0, 10.0);
                let val = classical_criterion(&p.information(&v).unwrap(), c).unwrap();
                assert!(val >= best - 1e-9 * best, "{} {k} {h}: {val} < {best}", c.name());
            }
        }
    }
}

#[test]
fn classical_design_is_deterministic() {
    let p = case2(Criterion::D, Method::Classical, 3);
    let mut a = classical_design(&p).unwrap();
    let mut b = classical_design(&p).unwrap();
    a.runtime_s = 0.0;
    b.runtime_s = 0.0;
    assert_eq!(a, b);
}

#[test]
fn exact_a_ignores_sample_order() {
    let p = case2(Criterion::A, Method::Exact, 3);
    let a = p.score(&[1.6, 4.0, 10.0], Criterion::A, None).unwrap().value;
    let b = p.score(&[10.0, 1.6, 4.0], Criterion::A, None).unwrap().value;
    assert!((a - b).abs() <= 1e-9 * a);
}

#[test]
fn anchor_sensitivities_match_resolves() {
    let p = case2(Criterion::A, Method::Exact, 2);
    let u = [1.6, 10.0];
    let geo = GeometrySettings::default();
    let anchors = anchor_points(&p.region(&u).unwrap(), &geo).unwrap();
    for k in 0..4 {
        let sense = if k % 2 == 0 { Sense::Minimize } else { Sense::Maximize };
        let build = |th: &[f64]| -> exoed_core::Result<_> { Ok(AnchorProblem::new(p.region(th)?, k / 2, sense)) };
        let f = fiacco_sensitivity(build, &u, &anchors.solutions[k], &geo.tolerances).unwrap();
        let r = resolve_sensitivity(build, &u, &anchors.solutions[k], &geo.tolerances, 1e-4).unwrap();
        let scale = r.dx.amax().max(1e-12);
        assert!((&f.dx - &r.dx).amax() / scale < 1e-4, "anchor {k}");
        for (a, b) in f.dvalue.iter().zip(&r.dvalue) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-8), "anchor {k}");
        }
    }
}
