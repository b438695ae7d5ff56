use std::f64::consts::PI;

use corrugate::basis::{PrimitiveBasis, SymMatrix};
use corrugate::corrugation::gamma;
use corrugate::driver::export::{mesh_obj, parse_obj, to_json};
use corrugate::driver::Schedule;
use corrugate::fields::{GridDomain, VectorField};
use corrugate::step::{frame, StepOptions};
use proptest::prelude::*;

fn sym(n: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-10.0f64..10.0, n * (n + 1) / 2)
        .prop_map(move |p| SymMatrix::from_packed(n, p))
}

fn direction(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
        .prop_filter("first component bounded away from 0", |v| v[0].abs() > 0.1)
        .prop_map(|v| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
}

proptest! {
    #[test]
    fn coefficients_reconstruct(n in 2usize..=4, seed in any::<u64>()) {
        let b = PrimitiveBasis::new(n).unwrap();
        let m = SymMatrix::from_fn(n, |i, j| ((seed % 1000) as f64 * 0.01 + (i * 3 + j) as f64).sin());
        prop_assert!(b.reconstruct(&b.coefficients(&m)).sub(&m).max_abs() <= 1e-12);
    }

    #[test]
    fn psi_phi_roundtrip((m, nu) in (2usize..=4).prop_flat_map(|n| (sym(n), direction(n)))) {
        let b = PrimitiveBasis::new(m.dim()).unwrap();
        let map = b.psi_map(&nu, 1e-8).unwrap();
        let back = map.phi(&map.psi(&m));
        prop_assert!(back.sub(&m).max_abs() <= 1e-10 * (1.0 + m.max_abs()) / nu[0].abs());
    }

    #[test]
    fn corrugation_inclusion(t in -100.0f64..100.0) {
        let (g1, g2) = (gamma(1).unwrap().derivative(), gamma(2).unwrap().derivative());
        prop_assert!((2.0 * g1.value(t) + g2.value(t).powi(2) - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn profiles_have_zero_mean(k in 1usize..=4, depth in 0usize..8) {
        let chain = gamma(k).unwrap().antiderivative_chain(depth).unwrap();
        prop_assert!(chain.iter().all(|p| p.mean().abs() <= 1e-15));
    }

    #[test]
    fn schedule_is_monotone(a in 1.5f64..64.0, tau in 0.1f64..0.9, frac in 0.05f64..0.95, q in 0usize..6) {
        let s = Schedule { growth_base: a, tau, b_exponent: 1.0 + frac * tau / 2.0, ..Schedule::default() };
        prop_assert!(s.validate(2).is_ok());
        prop_assert!(s.delta(q + 1) < s.delta(q));
        prop_assert!(s.lambda(2, q + 1) > s.lambda(2, q));
        prop_assert!(s.big_lambda(q) > s.k_factor);
    }

    #[test]
    fn json_floats_are_bit_exact(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let back: f64 = serde_json::from_str(&to_json(&x).unwrap()).unwrap();
        prop_assert_eq!(back.to_bits(), x.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn frame_identities(c in 0.05f64..0.3, k in 1.0f64..3.0, phase in 0.0f64..PI) {
        let d = GridDomain::cube(2, 0.0, 1.0, 33).unwrap();
        let u = VectorField::from_fn(&d, 3, |x, o| {
            o[0] = x[0];
            o[1] = x[1];
            o[2] = c * (k * x[0] + phase).sin() * (k * x[1]).cos();
        });
        let f = frame(&u, &StepOptions::default()).unwrap();
        for idx in 0..d.len() {
            let z: Vec<f64> = (0..3).map(|r| f.zeta.comp(r)[idx]).collect();
            prop_assert!((z.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() <= 1e-12);
            for a in 0..2 {
                let dot: f64 = (0..3).map(|r| f.du.entry(r, a)[idx] * z[r]).sum();
                prop_assert!(dot.abs() <= 1e-12);
                for bb in 0..2 {
                    let dt: f64 = (0..3).map(|r| f.du.entry(r, a)[idx] * f.t.entry(r, bb)[idx]).sum();
                    let want = if a == bb { 1.0 } else { 0.0 };
                    prop_assert!((dt - want).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn obj_vertices_roundtrip(vals in prop::collection::vec(-1e6f64..1e6, 27)) {
        let d = GridDomain::cube(2, 0.0, 1.0, 3).unwrap();
        let u = VectorField::new(d, vals.chunks(9).map(|c| c.to_vec()).collect()).unwrap();
        let m = parse_obj(&mesh_obj(&u).unwrap()).unwrap();
        prop_assert_eq!(m.vertices.len(), 9);
        prop_assert_eq!(m.triangles.len(), 8);
        for (i, v) in m.vertices.iter().enumerate() {
            prop_assert_eq!(v.to_vec(), u.at(i));
        }
    }
}
