use proptest::prelude::*;

use semidisperse::constructions::{embed_pair, EMBED_BOUND};
use semidisperse::diagnostics::{kolmogorov_q, ks_two_sample};
use semidisperse::dynamics::{self, involution, CollisionCoord};
use semidisperse::singularity;
use semidisperse::wavefront;
use semidisperse::{tables, Table, Vec2};

fn material_point(t: &Table, u: f64, phi: f64) -> CollisionCoord {
    let r = u * t.material_length;
    let (component, _) = t.locate(r).unwrap();
    CollisionCoord { component, r, phi, material: true }
}

fn table(i: usize) -> Table {
    [tables::square(), tables::sinai(), tables::pocket()][i].clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn involution_is_an_involution(i in 0usize..3, u in 0.0..1.0f64, phi in -1.5..1.5f64) {
        let t = table(i);
        let x = material_point(&t, u, phi);
        let back = involution(&t, &involution(&t, &x));
        prop_assert_eq!(back.component, x.component);
        prop_assert!((back.r - x.r).abs() < 1e-12 && (back.phi - x.phi).abs() < 1e-12);
    }

    #[test]
    fn reversed_orbit_retraces(i in 0usize..3, u in 0.0..1.0f64, phi in -1.5..1.5f64) {
        let t = table(i);
        let x = material_point(&t, u, phi);
        prop_assume!(dynamics::is_regular_coord(&t, &x, 1e-6));
        let Ok(tx) = dynamics::material_map(&t, &x) else { return Ok(()) };
        let Ok(back) = dynamics::material_map(&t, &involution(&t, &tx)) else { return Ok(()) };
        let mx = involution(&t, &x);
        prop_assert_eq!(back.component, mx.component);
        prop_assert!((back.r - mx.r).abs() < 1e-9 && (back.phi - mx.phi).abs() < 1e-9);
    }

    #[test]
    fn divergent_fronts_expand(i in 0usize..3, u in 0.0..1.0f64, phi in -1.5..1.5f64, b in 0.0..50.0f64, n in 1usize..12) {
        let t = table(i);
        let x = material_point(&t, u, phi);
        let Ok(rec) = wavefront::expansion(&t, &x, n, b) else { return Ok(()) };
        prop_assert!(rec.jacobian >= 1.0 - 1e-12);
        prop_assert!(rec.final_curvature >= 0.0);
        prop_assert!(rec.legs.iter().all(|l| l.factor >= 1.0 - 1e-12));
    }

    #[test]
    fn tubular_radius_is_symmetric(i in 0usize..3, u in 0.0..1.0f64, phi in -1.5..1.5f64) {
        let t = table(i);
        let x = material_point(&t, u, phi);
        let Ok((ev, _)) = dynamics::material_step(&t, &x) else { return Ok(()) };
        let (Ok(a), Ok(b)) = (singularity::z_tub(&t, &x), singularity::z_tub(&t, &involution(&t, &ev.coord))) else {
            return Ok(());
        };
        prop_assert!((a.value - b.value).abs() < 1e-6);
        prop_assert!(a.value >= 0.0);
    }

    #[test]
    fn embedding_meets_bounds(
        ox in -5.0..5.0f64, oy in -5.0..5.0f64, a in 0.0..6.28f64,
        t1 in 0.0..10.0f64, dt in -0.45..0.45f64, dth in -0.45..0.45f64,
    ) {
        let eps0 = 1e-3;
        let o = Vec2::new(ox, oy);
        let (v1, v2) = (Vec2::from_angle(a), Vec2::from_angle(a + dth * eps0 / t1.max(1.0)));
        let e = embed_pair(o + v1 * t1, v1, o + v2 * (t1 + dt * eps0), v2, eps0).unwrap();
        let (on, align) = e.residuals(v1, v2);
        prop_assert!(e.tau1.abs() < EMBED_BOUND * eps0 && e.tau2.abs() < EMBED_BOUND * eps0);
        prop_assert!(on < 1e-9 / e.curvature().max(1.0) && align < 1e-9);
        prop_assert!(e.curvature() >= 0.0);
    }

    #[test]
    fn ks_statistic_is_bounded(a in prop::collection::vec(-10.0..10.0f64, 2..200), b in prop::collection::vec(-10.0..10.0f64, 2..200)) {
        let s = ks_two_sample(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s.statistic));
        prop_assert!((0.0..=1.0).contains(&s.p_value));
        let same = ks_two_sample(&a, &a);
        prop_assert_eq!(same.statistic, 0.0);
    }

    #[test]
    fn kolmogorov_tail_is_monotone(x in 0.0..3.0f64, dx in 0.0..1.0f64) {
        prop_assert!(kolmogorov_q(x + dx) <= kolmogorov_q(x) + 1e-15);
    }
}
