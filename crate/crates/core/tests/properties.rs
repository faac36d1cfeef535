//! Randomized invariants across modules.

use std::sync::Arc;

use proptest::prelude::*;

use porolod::coefficients::{sample_field, ElementParams, ParameterBounds};
use porolod::fem::{assemble_forms, assemble_load, FeSpace, FieldKind, Source};
use porolod::interpolation::{nodal_prolongation, quasi_interpolation};
use porolod::mesh::{FaceTag, Mesh};
use porolod::metrics::{dn_norm, fit_slope};
use porolod::sparse::{relative_residual, CsrMatrix, FactorKind, Factorization, TripletBuilder};
use porolod::time::{energies, energy_identity_residuals, run, LoadSchedule, SpaceTag, SystemRef, TimeGrid};

fn triplets(n: usize, m: usize) -> impl Strategy<Value = Vec<(usize, usize, f64)>> {
    prop::collection::vec((0..n, 0..m, -1.0f64..1.0), 0..40)
}

fn build(n: usize, m: usize, t: &[(usize, usize, f64)]) -> CsrMatrix {
    let mut b = TripletBuilder::new(n, m);
    for &(i, j, v) in t {
        b.push(i, j, v);
    }
    b.build()
}

fn dense(n: usize, m: usize, t: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; m]; n];
    for &(i, j, v) in t {
        d[i][j] += v;
    }
    d
}

/// Symmetric, strictly diagonally dominant, hence SPD.
fn spd(n: usize, t: &[(usize, usize, f64)]) -> CsrMatrix {
    let mut b = TripletBuilder::new(n, n);
    let mut diag = vec![1.0; n];
    for &(i, j, v) in t {
        if i != j {
            b.push(i, j, v);
            b.push(j, i, v);
            diag[i] += v.abs();
            diag[j] += v.abs();
        }
    }
    for (i, d) in diag.into_iter().enumerate() {
        b.push(i, i, d);
    }
    b.build()
}

fn vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csr_matches_dense_accumulation(t in triplets(6, 5), x in vector(5), y in vector(6)) {
        let a = build(6, 5, &t);
        let d = dense(6, 5, &t);
        for i in 0..6 {
            for j in 0..5 {
                prop_assert!((a.get(i, j) - d[i][j]).abs() < 1e-14);
            }
        }
        let ax = a.matvec(&x);
        for i in 0..6 {
            let e: f64 = (0..5).map(|j| d[i][j] * x[j]).sum();
            prop_assert!((ax[i] - e).abs() < 1e-13);
        }
        let aty = a.matvec_transpose(&y);
        let aty2 = a.transpose().matvec(&y);
        for (p, q) in aty.iter().zip(&aty2) {
            prop_assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn matmul_is_associative_with_matvec(s in triplets(4, 6), t in triplets(6, 3), x in vector(3)) {
        let (a, b) = (build(4, 6, &s), build(6, 3, &t));
        let lhs = a.matmul(&b).unwrap().matvec(&x);
        let rhs = a.matvec(&b.matvec(&x));
        for (p, q) in lhs.iter().zip(&rhs) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn spd_solves_meet_the_residual_contract(t in triplets(12, 12), b in vector(12)) {
        let a = spd(12, &t);
        let f = Factorization::new(&a, FactorKind::Spd).unwrap();
        let x = f.solve(&b).unwrap();
        prop_assert!(relative_residual(&a, &x, &b) <= 1e-10);
        prop_assert_eq!(f.solve(&b).unwrap(), x);
    }

    #[test]
    fn saddle_solves_meet_the_residual_contract(t in triplets(10, 10), b in vector(13)) {
        let a = spd(10, &t);
        // Three independent constraints: disjoint supports.
        let mut c = TripletBuilder::new(3, 10);
        for r in 0..3 {
            c.push(r, 3 * r, 1.0);
            c.push(r, 3 * r + 1, 0.5);
        }
        let c = c.build();
        let ct = c.transpose();
        let k = CsrMatrix::block(&[vec![Some(&a), Some(&ct)], vec![Some(&c), None]]).unwrap();
        let f = Factorization::new(&k, FactorKind::SymmetricIndefinite).unwrap();
        let x = f.solve(&b).unwrap();
        prop_assert!(relative_residual(&k, &x, &b) <= 1e-10);
        prop_assert_eq!(f.inertia(), (10, 3));
    }

    #[test]
    fn slope_recovers_power_laws(s in 0.2f64..3.0, c in 1e-3f64..1e3) {
        let h = [0.5f64, 0.25, 0.125, 0.0625];
        let e: Vec<f64> = h.iter().map(|x| c * x.powf(s)).collect();
        prop_assert!((fit_slope(&h, &e).unwrap() - s).abs() < 1e-10);
    }

    #[test]
    fn dn_norm_is_a_norm(a in vector(12), b in vector(12), s in -3.0f64..3.0) {
        let g_u = CsrMatrix::identity(2);
        let g_p = spd(2, &[(0, 1, 0.3)]);
        let split = |v: &[f64]| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
            let u = v.chunks(4).map(|c| c[..2].to_vec()).collect();
            let p = v.chunks(4).map(|c| c[2..].to_vec()).collect();
            (u, p)
        };
        let norm = |v: &[f64]| {
            let (u, p) = split(v);
            dn_norm(&u, &p, &g_u, &g_p, 0.1).unwrap()
        };
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        prop_assert!(norm(&sum) <= norm(&a) + norm(&b) + 1e-12);
        let scaled: Vec<f64> = a.iter().map(|x| s * x).collect();
        prop_assert!((norm(&scaled) - s.abs() * norm(&a)).abs() < 1e-12);
        // Index 0 never contributes.
        let mut shifted = a.clone();
        shifted[..4].iter_mut().for_each(|x| *x += 10.0);
        prop_assert!((norm(&shifted) - norm(&a)).abs() < 1e-12);
    }

    #[test]
    fn sampled_coefficients_respect_bounds(seed in any::<u64>()) {
        let eps = Mesh::structured(2, 4).unwrap();
        let b = ParameterBounds::reference();
        let f = sample_field(&eps, &b, 1.0, 1.0, seed).unwrap();
        let v = &f.values;
        for (vals, iv) in [(&v.kappa, b.kappa), (&v.mu, b.mu), (&v.lambda, b.lambda), (&v.alpha, b.alpha)] {
            prop_assert!(vals.iter().all(|&x| iv.contains(x)));
        }
        prop_assert_eq!(sample_field(&eps, &b, 1.0, 1.0, seed).unwrap(), f);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn quasi_interpolation_is_a_left_inverse_of_prolongation(
        dim in 2usize..=3,
        nc in 1usize..=2,
        ratio in 1usize..=2,
        vector_field in any::<bool>(),
        upper in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let kind = if vector_field { FieldKind::Vector } else { FieldKind::Scalar };
        let faces = [FaceTag::new(dim - 1, upper)];
        let fine = FeSpace::new(Arc::new(Mesh::structured(dim, nc * ratio * 2).unwrap()), kind, &faces).unwrap();
        let coarse = FeSpace::new(Arc::new(Mesh::structured(dim, nc * 2).unwrap()), kind, &faces).unwrap();
        let ih = quasi_interpolation(&fine, &coarse).unwrap();
        let p = nodal_prolongation(&fine, &coarse).unwrap();
        let mut u = porolod::coefficients::uniform_stream(seed, 0);
        let v: Vec<f64> = (0..coarse.n_free()).map(|_| u() - 0.5).collect();
        let back = ih.apply(&p.matvec(&v));
        for (a, b) in back.iter().zip(&v) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // Linearity of prolongation.
        let w: Vec<f64> = (0..coarse.n_free()).map(|_| u() - 0.5).collect();
        let sum: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + 2.0 * b).collect();
        let (pv, pw, ps) = (p.matvec(&v), p.matvec(&w), p.matvec(&sum));
        for i in 0..ps.len() {
            prop_assert!((ps[i] - pv[i] - 2.0 * pw[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_identity_holds_for_random_data(
        kappa in 0.01f64..2.0,
        mu in 0.1f64..2.0,
        lambda in 0.1f64..2.0,
        alpha in 0.0f64..1.0,
        tau in 0.001f64..0.5,
        source in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let mesh = Arc::new(Mesh::structured(2, 4).unwrap());
        let faces = [FaceTag::new(1, true)];
        let us = FeSpace::new(mesh.clone(), FieldKind::Vector, &faces).unwrap();
        let ps = FeSpace::new(mesh.clone(), FieldKind::Scalar, &faces).unwrap();
        let params = ElementParams::constant(mesh.n_elements(), kappa, mu, lambda, alpha);
        let forms = assemble_forms(&us, &ps, &params, 1.0, 1.0).unwrap();
        let sys = SystemRef::from(&forms);
        let mut u = porolod::coefficients::uniform_stream(seed, 0);
        let p0: Vec<f64> = (0..ps.n_free()).map(|_| u()).collect();
        let loads = LoadSchedule::Steady(assemble_load(&ps, &Source::Constant(source)).unwrap());
        let sol = run(sys, &p0, &loads, TimeGrid::new(tau, 6).unwrap(), SpaceTag::Fine).unwrap();
        let res = energy_identity_residuals(sys, &sol, &loads);
        prop_assert!(res.iter().all(|&r| r <= 1e-10), "{:?}", res);
        if source == 0.0 {
            let e = energies(sys, &sol);
            prop_assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn energy_decays_without_source(seed in any::<u64>(), tau in 0.001f64..0.5) {
        let mesh = Arc::new(Mesh::structured(2, 4).unwrap());
        let faces = [FaceTag::new(1, true)];
        let us = FeSpace::new(mesh.clone(), FieldKind::Vector, &faces).unwrap();
        let ps = FeSpace::new(mesh.clone(), FieldKind::Scalar, &faces).unwrap();
        let eps = Mesh::structured(2, 2).unwrap();
        let field = sample_field(&eps, &ParameterBounds::reference(), 1.0, 1.0, seed).unwrap();
        let params = field.restrict_to_fine(&mesh).unwrap();
        let forms = assemble_forms(&us, &ps, &params, 1.0, 1.0).unwrap();
        let sys = SystemRef::from(&forms);
        let mut u = porolod::coefficients::uniform_stream(seed, 1);
        let p0: Vec<f64> = (0..ps.n_free()).map(|_| u() - 0.5).collect();
        let loads = LoadSchedule::Steady(vec![0.0; ps.n_free()]);
        let sol = run(sys, &p0, &loads, TimeGrid::new(tau, 8).unwrap(), SpaceTag::Fine).unwrap();
        let e = energies(sys, &sol);
        prop_assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{:?}", e);
    }
}
