//! Property tests for the algebraic invariants of the transport layer, the
//! entropy density and the dual norm.

use corrode::density::GridDensity;
use corrode::diagnostics::hstar_norm;
use corrode::energy::boltzmann_f;
use corrode::transport::wasserstein_sq;
use proptest::prelude::*;

fn density_strategy(max_cells: usize) -> impl Strategy<Value = GridDensity> {
    (1..=max_cells, 0.3f64..2.0).prop_flat_map(|(n, x)| {
        prop::collection::vec(0.15f64..2.2, n)
            .prop_map(move |vals| GridDensity::new(n, x, vals).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transport_is_symmetric(a in density_strategy(12), b in density_strategy(12)) {
        let ab = wasserstein_sq(&a, &b).w2_sq;
        let ba = wasserstein_sq(&b, &a).w2_sq;
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1e-30));
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn transport_triangle_inequality(
        a in density_strategy(10),
        b in density_strategy(10),
        c in density_strategy(10),
    ) {
        let ab = wasserstein_sq(&a, &b).w2_sq.sqrt();
        let bc = wasserstein_sq(&b, &c).w2_sq.sqrt();
        let ac = wasserstein_sq(&a, &c).w2_sq.sqrt();
        prop_assert!(ac <= ab + bc + 1e-10, "{ac} > {ab} + {bc}");
    }

    #[test]
    fn transport_map_is_monotone(a in density_strategy(12), b in density_strategy(12)) {
        let tr = wasserstein_sq(&a, &b);
        for w in tr.map_samples.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12);
        }
        // The stored decomposition reproduces the cost.
        let back = tr.cost_from_map();
        prop_assert!((back - tr.w2_sq).abs() <= 1e-12 * tr.w2_sq.max(1e-30));
    }

    #[test]
    fn transport_self_distance_is_zero(a in density_strategy(12)) {
        prop_assert!(wasserstein_sq(&a, &a).w2_sq.abs() < 1e-15);
    }

    #[test]
    fn entropy_density_lower_bound(r in 0.0f64..1e3, beta in -1.0f64..0.9) {
        let f = boltzmann_f(r, beta).unwrap();
        prop_assert!(f >= beta - (beta - 1.0).exp() - 1e-14);
    }

    #[test]
    fn mass_excess_survives_cell_splitting(a in density_strategy(10)) {
        let r = a.refine_split();
        prop_assert!((a.mass_excess() - r.mass_excess()).abs() <= 1e-13);
        prop_assert!(a.l1_distance(&r) <= 1e-12);
    }

    #[test]
    fn hstar_norm_is_homogeneous_and_subadditive(
        w in prop::collection::vec(-2.0f64..2.0, 8..48),
        s in 0.1f64..5.0,
        l in 0.5f64..3.0,
    ) {
        let n = hstar_norm(&w, l);
        let scaled: Vec<f64> = w.iter().map(|v| s * v).collect();
        prop_assert!((hstar_norm(&scaled, l) - s * n).abs() <= 1e-9 * (1.0 + s * n));
        let half: Vec<f64> = w.iter().map(|v| 0.5 * v).collect();
        prop_assert!(hstar_norm(&w, l) <= 2.0 * hstar_norm(&half, l) + 1e-10);
    }
}
