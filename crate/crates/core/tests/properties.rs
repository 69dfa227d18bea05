use landscape_lab::critical;
use landscape_lab::landscape::{self, RegionLabel};
use landscape_lab::manifold::{self, FactorPoint};
use landscape_lab::risk::{
    column, MsEmpirical, MsPopulation, PhaseProblem, PrEmpirical, PrPopulation, RiskModel,
    SensingEnsemble, SensingGroundTruth,
};
use landscape_lab::rng::GaussianStream;
use landscape_lab::spectral;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn stream(seed: u64) -> GaussianStream {
    GaussianStream::from_seed(seed)
}

fn factor(s: &mut GaussianStream, n: usize, k: usize) -> FactorPoint {
    loop {
        if let Ok(u) = FactorPoint::new(s.normal_matrix(n, k, 1.0)) {
            if u.sigma_min() > 1e-3 {
                return u;
            }
        }
    }
}

fn ms_truth(seed: u64) -> SensingGroundTruth {
    SensingGroundTruth::random(5, vec![1.5, 1.0, 0.1], 2, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_linear_idempotent_orthogonal(seed in any::<u64>(), n in 3usize..7, k in 2usize..4, a in -3.0f64..3.0) {
        let mut s = stream(seed);
        let u = factor(&mut s, n, k);
        let z1 = s.normal_matrix(n, k, 1.0);
        let z2 = s.normal_matrix(n, k, 1.0);
        let p = |z: &DMatrix<f64>| manifold::horizontal_project(&u, z).unwrap().into_matrix();
        let p1 = p(&z1);
        let scale = 1.0 + z1.norm() + z2.norm();
        prop_assert!((p(&p1) - &p1).norm() <= 1e-9 * scale);
        prop_assert!(p1.dot(&(&z1 - &p1)).abs() <= 1e-9 * scale * scale);
        prop_assert!((p(&(&z1 * a + &z2)) - (&p1 * a + p(&z2))).norm() <= 1e-9 * scale);
        prop_assert!(manifold::horizontal_residual(u.matrix(), &p1) <= 1e-9 * scale);
    }

    #[test]
    fn horizontal_basis_is_orthonormal(seed in any::<u64>(), n in 3usize..6, k in 2usize..4) {
        let mut s = stream(seed);
        let u = factor(&mut s, n, k);
        let basis = manifold::horizontal_basis(&u).unwrap();
        prop_assert_eq!(basis.len(), n * k - k * (k - 1) / 2);
        for (i, a) in basis.iter().enumerate() {
            for (j, b) in basis.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((a.matrix().dot(b.matrix()) - want).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn procrustes_is_a_pseudometric(seed in any::<u64>(), n in 2usize..6, k in 1usize..4) {
        let mut s = stream(seed);
        let a = s.normal_matrix(n, k, 1.0);
        let b = s.normal_matrix(n, k, 1.0);
        let c = s.normal_matrix(n, k, 1.0);
        let d = |x: &DMatrix<f64>, y: &DMatrix<f64>| manifold::procrustes_distance_raw(x, y).unwrap();
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-10);
        prop_assert!(d(&a, &b) <= (&a - &b).norm() + 1e-10);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-10);
        let q = s.orthogonal(k);
        let q2 = s.orthogonal(k);
        prop_assert!((d(&(&a * &q), &(&b * &q2)) - d(&a, &b)).abs() <= 1e-10);
        prop_assert!(d(&a, &(&a * q)) <= 1e-10 * (1.0 + a.norm()));
    }

    #[test]
    fn thin_svd_reconstructs_rank_deficient_products(seed in any::<u64>(), inner in 1usize..4, rows in 1usize..5, extra in 0usize..3) {
        let mut s = stream(seed);
        let cols = rows.min(4);
        let rows = rows + extra;
        let m = s.normal_matrix(rows, inner, 1.0) * s.normal_matrix(inner, cols, 1.0);
        let svd = manifold::thin_svd(&m);
        let back = &svd.a * DMatrix::from_diagonal(&svd.sigma) * svd.b.transpose();
        prop_assert!((back - &m).norm() <= 1e-12 * (1.0 + m.norm()));
        prop_assert!((svd.a.transpose() * &svd.a - DMatrix::identity(cols, cols)).norm() <= 1e-12);
        prop_assert!((svd.b.transpose() * &svd.b - DMatrix::identity(cols, cols)).norm() <= 1e-12);
    }

    #[test]
    fn pr_risks_are_sign_symmetric(seed in any::<u64>(), n in 1usize..5) {
        let mut s = stream(seed);
        let xs = s.normal_vector(n);
        let x = s.normal_matrix(n, 1, 1.0);
        let pop = PrPopulation::new(xs.clone()).unwrap();
        let emp = PrEmpirical::new(PhaseProblem::generate(&xs, 7, seed).unwrap()).unwrap();
        for m in [&pop as &dyn RiskModel, &emp] {
            let v = m.value(&x).unwrap();
            prop_assert!((m.value(&-&x).unwrap() - v).abs() <= 1e-12 * (1.0 + v.abs()));
            let g = m.euclidean_grad(&x).unwrap();
            prop_assert!((m.euclidean_grad(&-&x).unwrap() + &g).norm() <= 1e-12 * (1.0 + g.norm()));
        }
    }

    #[test]
    fn hessians_are_self_adjoint(seed in any::<u64>()) {
        let mut s = stream(seed);
        let truth = ms_truth(seed);
        let xs = s.normal_vector(3);
        let models: Vec<Box<dyn RiskModel>> = vec![
            Box::new(MsPopulation::new(truth.clone())),
            Box::new(MsEmpirical::new(truth.clone(), SensingEnsemble::generate(&truth, 12, seed).unwrap()).unwrap()),
            Box::new(PrPopulation::new(xs.clone()).unwrap()),
            Box::new(PrEmpirical::new(PhaseProblem::generate(&xs, 9, seed).unwrap()).unwrap()),
        ];
        for m in &models {
            let (n, k) = m.dims();
            let p = s.normal_matrix(n, k, 1.0);
            let a = s.normal_matrix(n, k, 1.0);
            let b = s.normal_matrix(n, k, 1.0);
            let ab = m.hess_vec(&p, &b).unwrap().dot(&a);
            let ba = m.hess_vec(&p, &a).unwrap().dot(&b);
            prop_assert!((ab - ba).abs() <= 1e-10 * (1.0 + ab.abs()));
        }
    }

    #[test]
    fn rayleigh_quotient_bounded_by_min_eig(seed in any::<u64>()) {
        let mut s = stream(seed);
        let truth = ms_truth(seed);
        let pop = MsPopulation::new(truth);
        let u = factor(&mut s, 5, 2);
        let spec = spectral::min_eig_horizontal(&pop, &u).unwrap();
        let z = s.normal_matrix(5, 2, 1.0);
        let h = manifold::horizontal_project(&u, &z).unwrap().into_matrix();
        let q = pop.hess_quadratic(u.matrix(), &h).unwrap() / h.norm_squared();
        prop_assert!(q >= spec.lambda_min - 1e-9 * (1.0 + spec.lambda_min.abs()));
    }

    #[test]
    fn ms_risk_and_spectrum_are_gauge_invariant(seed in any::<u64>()) {
        let mut s = stream(seed);
        let truth = ms_truth(seed);
        let emp = MsEmpirical::new(truth.clone(), SensingEnsemble::generate(&truth, 15, seed).unwrap()).unwrap();
        let u = factor(&mut s, 5, 2);
        let q = s.orthogonal(2);
        let uq = FactorPoint::new(u.matrix() * &q).unwrap();
        let v = emp.value(u.matrix()).unwrap();
        prop_assert!((emp.value(uq.matrix()).unwrap() - v).abs() <= 1e-10 * (1.0 + v));
        let l1 = spectral::min_eig_horizontal(&emp, &u).unwrap().lambda_min;
        let l2 = spectral::min_eig_horizontal(&emp, &uq).unwrap().lambda_min;
        prop_assert!((l1 - l2).abs() <= 1e-8 * (1.0 + l1.abs()));
    }

    #[test]
    fn pr_regions_cover_the_space(seed in any::<u64>(), n in 1usize..5, scale in 0.01f64..3.0) {
        let mut s = stream(seed);
        let xs = s.normal_vector(n);
        let x = s.normal_vector(n) * scale;
        let set = landscape::classify_region_pr(&xs, &x).unwrap();
        prop_assert!(!set.labels.is_empty());
        prop_assert!(set.contains(RegionLabel::PrR4) == (set.labels.len() == 1 && !set.contains(RegionLabel::PrR1)
            && !set.contains(RegionLabel::PrR2) && !set.contains(RegionLabel::PrR3)));
    }

    #[test]
    fn pr_near_minima_is_strongly_convex(seed in any::<u64>(), n in 1usize..5, r in 0.0f64..0.1) {
        let mut s = stream(seed);
        let xs = s.normal_vector(n);
        let dir = s.normal_vector(n);
        let x = &xs + dir.normalize() * (r * xs.norm());
        prop_assert!(landscape::classify_region_pr(&xs, &x).unwrap().contains(RegionLabel::PrR2));
        let pop = PrPopulation::new(xs.clone()).unwrap();
        let lm = spectral::min_eig_euclidean(&pop, &column(&x)).unwrap().lambda_min;
        prop_assert!(lm >= 0.22 * xs.norm_squared());
    }

    #[test]
    fn ms_regions_cover_the_space(seed in any::<u64>(), scale in 0.05f64..3.0) {
        let mut s = stream(seed);
        let truth = ms_truth(seed);
        let u = factor(&mut s, 5, 2);
        let u = FactorPoint::new(u.matrix() * scale).unwrap();
        let set = landscape::classify_region_ms(&truth, &u).unwrap();
        prop_assert!(!set.labels.is_empty());
    }

    #[test]
    fn dedupe_keeps_sign_pairs_apart(seed in any::<u64>()) {
        let mut s = stream(seed);
        let xs = s.normal_vector(2);
        let pop = PrPopulation::new(xs.clone()).unwrap();
        let pts = critical::analytic_critical_points_pr(&xs).unwrap();
        let records: Vec<_> = pts
            .iter()
            .chain(pts.iter())
            .map(|p| critical::classify_point(&pop, &p.location, &p.location).unwrap())
            .collect();
        let tol = critical::Tolerances::for_model(&pop).dedupe;
        let kept = critical::dedupe(records, pop.geometry(), tol);
        prop_assert_eq!(kept.len(), pts.len());
    }
}

#[test]
fn orthogonal_completion_is_orthonormal() {
    let v = DVector::from_vec(vec![0.3, -1.2, 0.5, 2.0]);
    let w = critical::orthogonal_completion(&v).unwrap();
    assert_eq!(w.len(), 3);
    for (i, a) in w.iter().enumerate() {
        assert!(a.dot(&v).abs() < 1e-12);
        for (j, b) in w.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((a.dot(b) - want).abs() < 1e-12);
        }
    }
}
