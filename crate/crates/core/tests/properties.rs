use funqr::bspline::SplineBasis;
use funqr::funcdata::{read_curves, FunctionalDataset};
use funqr::linalg::Matrix;
use funqr::quadrature::uniform_grid;
use funqr::simharness::{theoretical_seminorm, Covariate};
use funqr::solver::{objective, CheckLoss};
use proptest::prelude::*;

fn basis_and_point() -> impl Strategy<Value = (usize, usize, f64)> {
    (0usize..=5, 1usize..=20, 0.0f64..=1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn basis_values_form_a_partition((q, k, t) in basis_and_point()) {
        let b = SplineBasis::<f64>::new(q, k).unwrap();
        let v = b.eval(t).unwrap();
        prop_assert_eq!(v.len(), q + k);
        prop_assert!(v.iter().all(|&x| x >= 0.0));
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().filter(|&&x| x != 0.0).count() <= q + 1);
    }

    #[test]
    fn basis_derivatives_sum_to_zero((q, k, t) in basis_and_point(), d in 1usize..=5) {
        prop_assume!(d <= q);
        let b = SplineBasis::<f64>::new(q, k).unwrap();
        let s: f64 = b.eval_deriv(t, d).unwrap().iter().sum();
        let scale = (k as f64).powi(d as i32);
        prop_assert!(s.abs() < 1e-9 * scale, "{}", s);
    }

    #[test]
    fn out_of_domain_points_rejected(t in prop_oneof![-10.0f64..-1e-9, 1.0 + 1e-9..10.0]) {
        let b = SplineBasis::<f64>::new(3, 4).unwrap();
        prop_assert!(b.eval(t).is_err());
    }

    #[test]
    fn penalty_is_symmetric_psd(q in 1usize..=4, k in 1usize..=10, m in 1usize..=4, seed in any::<u64>()) {
        prop_assume!(m <= q);
        let b = SplineBasis::<f64>::new(q, k).unwrap();
        let g = b.penalty_matrix(m).unwrap();
        prop_assert!(g.is_symmetric(1e-9 * g.max_abs().max(1.0)));
        let mut s = seed;
        let theta: Vec<f64> = (0..b.dim())
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        prop_assert!(g.quad_form(&theta).unwrap() >= -1e-9 * g.max_abs());
    }

    #[test]
    fn check_loss_is_nonnegative_and_zero_only_at_zero(alpha in 0.001f64..0.999, u in -1e6f64..1e6) {
        let loss = CheckLoss::new(alpha).unwrap();
        let v = loss.value(u);
        prop_assert!(v >= 0.0);
        if u != 0.0 {
            prop_assert!(v > 0.0);
        }
        prop_assert_eq!(loss.value(0.0), 0.0);
    }

    #[test]
    fn objective_is_convex(
        alpha in 0.05f64..0.95,
        rho in 0.0f64..1.0,
        lambda in 0.0f64..=1.0,
        a_vals in prop::collection::vec(-2.0f64..2.0, 20),
        y in prop::collection::vec(-3.0f64..3.0, 5),
        t1 in prop::collection::vec(-5.0f64..5.0, 4),
        t2 in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let a = Matrix::from_fn(5, 4, |i, j| a_vals[i * 4 + j]);
        let g = SplineBasis::<f64>::new(2, 2).unwrap().penalty_matrix(1).unwrap();
        let loss = CheckLoss::new(alpha).unwrap();
        let mix: Vec<f64> = t1.iter().zip(&t2).map(|(x, z)| lambda * x + (1.0 - lambda) * z).collect();
        let f = |t: &[f64]| objective(t, &a, &y, rho, &g, &loss).unwrap();
        let bound = lambda * f(&t1) + (1.0 - lambda) * f(&t2);
        prop_assert!(f(&mix) <= bound + 1e-12 * (1.0 + bound.abs()));
    }

    #[test]
    fn centering_removes_the_mean(
        curves in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 7), 1..12),
    ) {
        let n = curves.len();
        let ds = FunctionalDataset::from_curves(uniform_grid(7), curves, vec![0.0; n]).unwrap();
        let c = ds.center_curves().unwrap();
        for m in c.pointwise_mean() {
            prop_assert!(m.abs() <= 1e-10);
        }
        prop_assert!(c.clone().center_curves().is_err());
    }

    #[test]
    fn curves_csv_round_trips(
        curves in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 5), 1..6),
    ) {
        let n = curves.len();
        let ds = FunctionalDataset::from_curves(uniform_grid(5), curves.clone(), vec![0.0; n]).unwrap();
        let mut buf = Vec::new();
        ds.write_curves_csv(&mut buf).unwrap();
        let (grid, _, back) = read_curves::<f64, _>(buf.as_slice()).unwrap();
        prop_assert_eq!(grid, uniform_grid::<f64>(5));
        prop_assert_eq!(back, curves);
    }

    #[test]
    fn theoretical_seminorm_is_nonnegative(u in prop::collection::vec(-10.0f64..10.0, 21), terms in 1usize..8) {
        let grid = uniform_grid::<f64>(21);
        for law in [Covariate::Brownian, Covariate::KarhunenLoeve { terms }] {
            prop_assert!(theoretical_seminorm(&u, &grid, law).unwrap() >= 0.0);
        }
    }
}
