use ggd_core::linalg::{gaussian_matrix, max_abs, random_orthogonal};
use ggd_core::{
    alignment, alignment_global_bound, energy, geodesic_step, grass_gradient, haystack,
    principal_angles, random_subspace, seeded_rng, subspace_at_angle, theta1, Geodesic,
    HaystackParams, Subspace,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (2usize..12).prop_flat_map(|dd| (Just(dd), 1..dd))
}

fn pair(seed: u64, dd: usize, d: usize) -> (Subspace, Subspace) {
    let mut rng = seeded_rng(seed);
    (random_subspace(dd, d, &mut rng).unwrap(), random_subspace(dd, d, &mut rng).unwrap())
}

fn rebased(l: &Subspace, seed: u64) -> Subspace {
    l.with_rotated_basis(&random_orthogonal(l.dim(), &mut seeded_rng(seed))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn angles_ignore_the_choice_of_basis(seed in any::<u64>(), (dd, d) in dims()) {
        let (a, b) = pair(seed, dd, d);
        let before = principal_angles(&a, &b).unwrap();
        let after = principal_angles(&rebased(&a, seed ^ 1), &rebased(&b, seed ^ 2)).unwrap();
        for (x, y) in before.iter().zip(&after) {
            prop_assert!((x - y).abs() <= 1e-10, "{before:?} vs {after:?}");
        }
    }

    #[test]
    fn angles_are_symmetric_and_bounded(seed in any::<u64>(), (dd, d) in dims()) {
        let (a, b) = pair(seed, dd, d);
        let ab = principal_angles(&a, &b).unwrap();
        let ba = principal_angles(&b, &a).unwrap();
        prop_assert_eq!(ab.len(), d);
        for (x, y) in ab.iter().zip(&ba) {
            prop_assert!((x - y).abs() <= 1e-10);
            prop_assert!((0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(x));
        }
        prop_assert!(ab.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(theta1(&a, &a).unwrap() <= 1e-7);
    }

    #[test]
    fn largest_angle_satisfies_triangle_inequality(seed in any::<u64>(), (dd, d) in dims()) {
        let mut rng = seeded_rng(seed);
        let a = random_subspace(dd, d, &mut rng).unwrap();
        let b = random_subspace(dd, d, &mut rng).unwrap();
        let c = random_subspace(dd, d, &mut rng).unwrap();
        let ab = theta1(&a, &b).unwrap();
        let bc = theta1(&b, &c).unwrap();
        let ac = theta1(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-10, "{ac} > {ab} + {bc}");
    }

    #[test]
    fn geodesic_travels_at_constant_speed(
        seed in any::<u64>(),
        (dd, d) in dims(),
        gamma in 0.05f64..1.4,
        t in 0.0f64..1.0,
    ) {
        let mut rng = seeded_rng(seed);
        let a = random_subspace(dd, d, &mut rng).unwrap();
        let b = subspace_at_angle(&a, gamma, &mut rng).unwrap();
        let g = Geodesic::between(&a, &b).unwrap();
        prop_assert!(theta1(&g.at(0.0).unwrap(), &a).unwrap() <= 1e-8);
        prop_assert!(theta1(&g.at(1.0).unwrap(), &b).unwrap() <= 1e-8);
        let mid = g.at(t).unwrap();
        prop_assert!((theta1(&a, &mid).unwrap() - t * gamma).abs() <= 1e-8);
        prop_assert!((theta1(&mid, &b).unwrap() - (1.0 - t) * gamma).abs() <= 1e-8);
    }

    #[test]
    fn gradient_is_tangent_and_basis_equivariant(seed in any::<u64>(), (dd, d) in dims(), n in 1usize..40) {
        let mut rng = seeded_rng(seed);
        let v = random_subspace(dd, d, &mut rng).unwrap();
        let x = gaussian_matrix(dd, n, &mut rng);
        let g = grass_gradient(&v, &x, 1e-12).unwrap();
        prop_assert!(max_abs(&(v.basis().transpose() * &g)) <= 1e-10 * (1.0 + max_abs(&g)));
        let rot = random_orthogonal(d, &mut rng);
        let g_rot = grass_gradient(&v.with_rotated_basis(&rot).unwrap(), &x, 1e-12).unwrap();
        prop_assert!(max_abs(&(&g * &rot - g_rot)) <= 1e-10 * (1.0 + max_abs(&g)));
        let f = energy(&v, &x).unwrap().value;
        let f_rot = energy(&rebased(&v, seed ^ 3), &x).unwrap().value;
        prop_assert!((f - f_rot).abs() <= 1e-10 * (1.0 + f));
    }

    #[test]
    fn alignment_respects_basis_and_global_bound(seed in any::<u64>(), (dd, d) in dims(), n in 0usize..30) {
        let mut rng = seeded_rng(seed);
        let l = random_subspace(dd, d, &mut rng).unwrap();
        let x = gaussian_matrix(dd, n, &mut rng);
        let a = alignment(&x, &l, 1e-12).unwrap();
        let b = alignment(&x, &rebased(&l, seed ^ 5), 1e-12).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a));
        prop_assert!(a <= alignment_global_bound(&x) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn geodesic_step_moves_by_step_times_speed(seed in any::<u64>(), (dd, d) in dims(), t in 0.0f64..1.0) {
        let mut rng = seeded_rng(seed);
        let v = random_subspace(dd, d, &mut rng).unwrap();
        let raw = gaussian_matrix(dd, d, &mut rng);
        let b = v.basis();
        let g: DMatrix<f64> = &raw - b * (b.transpose() * &raw);
        let speed = ggd_core::linalg::spectral_norm(&g);
        let scaled = &g * (1.2 / speed.max(1e-300));
        let w = geodesic_step(&v, &scaled, t).unwrap();
        prop_assert!((theta1(&v, &w).unwrap() - 1.2 * t).abs() <= 1e-8);
    }

    #[test]
    fn haystack_is_a_function_of_its_seed(seed in any::<u64>()) {
        let p = HaystackParams { n_in: 8, n_out: 5, sigma_in: 1.0, sigma_out: 2.0, ambient: 6, d: 2 };
        let a = haystack(&p, &mut seeded_rng(seed)).unwrap();
        let b = haystack(&p, &mut seeded_rng(seed)).unwrap();
        prop_assert_eq!(a.points(), b.points());
        prop_assert_eq!(a.ground_truth(), b.ground_truth());
    }
}
