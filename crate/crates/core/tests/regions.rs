use std::f64::consts::PI;
use std::sync::Arc;

use exoed_core::estimation::{fisher_information, ConfidenceRegion, Dataset, Noise};
use exoed_core::geometry::{
    anchor_points, boundary_trace, ellipsoid_scalings, farthest_pair, grid_volume, polygon_area, GeometrySettings,
};
use exoed_core::linalg::symmetric_eigenvalues;
use exoed_core::model::{builtin_bod, ModelRef, ModelSpec};
use exoed_core::nlp::Bounds;
use proptest::prelude::*;

const SIGMA: f64 = 0.2;

fn line() -> ModelRef {
    Arc::new(ModelSpec::linear("line", 2, 1, 1, |u: &[f64], q: &mut [f64]| {
        q[0] = 1.0;
        q[1] = u[0];
    }))
}

fn line_region(u: &[f64]) -> ConfidenceRegion {
    let m = line();
    let design: Vec<Vec<f64>> = u.iter().map(|v| vec![*v]).collect();
    let ds = Dataset::noise_free(m.as_ref(), &[5.0, 5.0], &design, Noise::KnownSigma(vec![SIGMA])).unwrap();
    ConfidenceRegion::new(m, ds, &[5.0, 5.0], 0.9545, None).unwrap()
}

fn bod_design() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.5f64..20.0, 3..6)
}

/// Three inputs spread enough for a well-posed region.
fn line_design() -> impl Strategy<Value = Vec<f64>> {
    (-1.0f64..-0.2, -0.2f64..0.3, 0.3f64..1.0).prop_map(|(a, b, c)| vec![a, b, c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fisher_is_psd_and_grows_with_samples(u in bod_design(), extra in 0.5f64..20.0) {
        let m = builtin_bod();
        let design: Vec<Vec<f64>> = u.iter().map(|v| vec![*v]).collect();
        let fim = fisher_information(&m, &[2.5, 0.5], &design, &[0.1]).unwrap().matrix;
        prop_assert!(symmetric_eigenvalues(&fim).iter().all(|l| *l >= -1e-10));
        let mut more = design.clone();
        more.push(vec![extra]);
        let bigger = fisher_information(&m, &[2.5, 0.5], &more, &[0.1]).unwrap().matrix;
        prop_assert!(symmetric_eigenvalues(&(bigger - fim)).iter().all(|l| *l >= -1e-10));
    }

    #[test]
    fn linear_regions_match_their_ellipsoid(u in line_design()) {
        let cr = line_region(&u);
        let ell = cr.linearized().unwrap();
        let geo = GeometrySettings::default();
        let anchors = anchor_points(&cr, &geo).unwrap();
        for (a, e) in anchors.ranges.iter().zip(ell.coordinate_ranges()) {
            prop_assert!((a.0 - e.0).abs() < 1e-7 && (a.1 - e.1).abs() < 1e-7);
        }
        let pair = farthest_pair(&cr, &geo).unwrap();
        prop_assert!((pair.phi_e / ell.squared_diameter() - 1.0).abs() < 1e-7);
        let sc = ellipsoid_scalings(&cr, &cr.fisher(), &geo).unwrap();
        prop_assert!((sc.k_in / cr.threshold() - 1.0).abs() < 1e-7);
        prop_assert!((sc.k_out / cr.threshold() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn membership_is_invariant_to_sample_order(u in line_design(), px in 3.5f64..6.5, py in 3.5f64..6.5) {
        let a = line_region(&u);
        let b = line_region(&[u[2], u[0], u[1]]);
        let p = [px, py];
        prop_assert!((a.excess(&p) - b.excess(&p)).abs() < 1e-12);
    }
}

#[test]
fn grid_volume_converges_to_ellipse_area() {
    let cr = line_region(&[-0.3, 0.4, 0.9]);
    let ell = cr.linearized().unwrap();
    let r = ell.coordinate_ranges();
    let bbox = Bounds::new(vec![r[0].0, r[1].0], vec![r[0].1, r[1].1]);
    let axes: Vec<f64> = symmetric_eigenvalues(&cr.fisher())
        .iter()
        .map(|l| (cr.threshold() / l).sqrt())
        .collect();
    let area = PI * axes[0] * axes[1];
    let mut errors = Vec::new();
    for div in [10.0, 25.0, 50.0, 100.0] {
        let eps = axes[0].min(axes[1]) / div;
        errors.push((grid_volume(&cr, &bbox, eps).unwrap().phi_d_hat - area).abs() / area);
    }
    assert!(errors[3] < errors[0], "{errors:?}");
    assert!(errors[2] < 0.02, "{errors:?}");
    assert!(errors[3] < 0.01, "{errors:?}");
}

#[test]
fn traced_boundary_encloses_ellipse_area() {
    let cr = line_region(&[-0.3, 0.4, 0.9]);
    let ell = cr.linearized().unwrap();
    let r = ell.coordinate_ranges();
    let pad = 0.1;
    let w = [r[0].1 - r[0].0, r[1].1 - r[1].0];
    let bbox = Bounds::new(
        vec![r[0].0 - pad * w[0], r[1].0 - pad * w[1]],
        vec![r[0].1 + pad * w[0], r[1].1 + pad * w[1]],
    );
    let lines = boundary_trace(&cr, &bbox, 201).unwrap();
    assert_eq!(lines.len(), 1);
    for p in &lines[0].points {
        assert!(cr.excess(p).abs() < 1e-8);
    }
    let area = ell.volume();
    assert!((polygon_area(&lines[0].points).abs() - area).abs() / area < 1e-3);
}
