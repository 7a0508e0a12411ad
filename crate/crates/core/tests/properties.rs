use approx::assert_abs_diff_eq;
use duc_core::baselines::kl_gaussian;
use duc_core::duc::{
    assemble_sigma_k, duc_independent, duc_population, fisher_ci, optimal_beta, optimal_beta_nonneg,
    partial_correlation, project_simplex, CRatios, WeightCov,
};
use duc_core::sampling::{budget_plan, size_constrained_plan, BudgetSpec};
use duc_core::summaries::{build_z, SourceSummary, TargetMoments, ZMatrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn psd(k: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, k * k).prop_map(move |v| {
        let g = DMatrix::from_vec(k, k, v);
        &g * g.transpose() * 0.05
    })
}

fn sizes(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(5.0..5000.0f64, k)
}

fn zmat(l: usize, k: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, l * (k + 1)).prop_map(move |v| DMatrix::from_vec(l, k + 1, v))
}

fn c(n: &[f64]) -> CRatios {
    CRatios::from_sizes(n).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn population_duc_in_unit_interval((k, s, n) in (2usize..5).prop_flat_map(|k| (Just(k), psd(k), sizes(k)))) {
        let r = duc_population(&WeightCov::raw_scaled(s), &c(&n)).unwrap().rho2;
        prop_assert!((0.0..=1.0).contains(&r), "k {k}: {r}");
    }

    #[test]
    fn closed_form_grows_with_candidate_size(
        vars in prop::collection::vec(0.0..0.5f64, 1..4),
        n in sizes(4),
        extra in 1.0..1000.0f64,
    ) {
        let mut v = vec![0.0];
        v.extend(vars);
        let n = &n[..v.len()];
        let mut bigger = n.to_vec();
        *bigger.last_mut().unwrap() += extra;
        let a = duc_independent(&v, &c(n)).unwrap().rho2;
        let b = duc_independent(&v, &c(&bigger)).unwrap().rho2;
        prop_assert!(b >= a - 1e-15);
    }

    #[test]
    fn closed_form_shrinks_with_candidate_shift(
        vars in prop::collection::vec(0.0..0.5f64, 1..4),
        n in sizes(4),
        extra in 0.001..1.0f64,
    ) {
        let mut v = vec![0.0];
        v.extend(vars);
        let n = &n[..v.len()];
        let mut shifted = v.clone();
        *shifted.last_mut().unwrap() += extra;
        let a = duc_independent(&v, &c(n)).unwrap().rho2;
        let b = duc_independent(&shifted, &c(n)).unwrap().rho2;
        prop_assert!(b <= a + 1e-15);
    }

    #[test]
    fn closed_form_matches_general_formula(vars in prop::collection::vec(0.0..0.5f64, 1..4), n in sizes(4)) {
        let mut v = vec![0.0];
        v.extend(vars);
        let n = &n[..v.len()];
        let wc = WeightCov::raw_scaled(DMatrix::from_diagonal(&DVector::from_vec(v.clone())));
        let general = duc_population(&wc, &c(n)).unwrap().rho2;
        assert_abs_diff_eq!(general, duc_independent(&v, &c(n)).unwrap().rho2, epsilon = 1e-10);
    }

    #[test]
    fn beta_sums_to_one((s, n) in (2usize..5).prop_flat_map(|k| (psd(k), sizes(k)))) {
        let sk = assemble_sigma_k(&WeightCov::raw_scaled(s), &c(&n)).unwrap();
        assert_abs_diff_eq!(optimal_beta(&sk).unwrap().sum(), 1.0, epsilon = 1e-9);
        let nn = optimal_beta_nonneg(&sk).unwrap().beta;
        assert_abs_diff_eq!(nn.sum(), 1.0, epsilon = 1e-9);
        prop_assert!(nn.iter().all(|&b| b >= 0.0));
    }

    #[test]
    fn simplex_projection_lands_on_simplex(v in prop::collection::vec(-5.0..5.0f64, 1..8)) {
        let p = project_simplex(&DVector::from_vec(v));
        assert_abs_diff_eq!(p.sum(), 1.0, epsilon = 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn partial_correlation_ignores_affine_column_maps(
        z in zmat(12, 2),
        scale in prop::collection::vec(0.1..10.0f64, 3),
        shift in prop::collection::vec(-5.0..5.0f64, 3),
    ) {
        let base = partial_correlation(&ZMatrix::new(z.clone()).unwrap());
        let mut m = z;
        for j in 0..3 {
            for i in 0..m.nrows() {
                m[(i, j)] = scale[j] * m[(i, j)] + shift[j];
            }
        }
        let moved = partial_correlation(&ZMatrix::new(m).unwrap());
        if let (Ok(a), Ok(b)) = (base, moved) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn z_is_unchanged_by_a_common_shift(
        means in prop::collection::vec(-2.0..2.0f64, 12),
        shift in prop::collection::vec(-5.0..5.0f64, 4),
    ) {
        let v = |i: usize, d: &[f64]| DVector::from_iterator(4, (0..4).map(|j| means[i * 4 + j] + d[j]));
        let zero = [0.0; 4];
        let make = |d: &[f64]| {
            let t = TargetMoments::new(v(0, d), true).unwrap();
            let s1 = SourceSummary::new("target", v(1, d), 100, None).unwrap();
            let s2 = SourceSummary::new("cand", v(2, d), 100, None).unwrap();
            build_z(&t, &s1, &[&s2]).unwrap().matrix().clone()
        };
        let diff = (make(&zero) - make(&shift)).amax();
        prop_assert!(diff < 1e-12);
    }

    #[test]
    fn fisher_interval_brackets_and_narrows(r in 0.0..0.99f64, l in 5usize..500, alpha in 0.01..0.5f64) {
        let (lo, hi) = fisher_ci(r, l, alpha).unwrap();
        prop_assert!(lo <= r + 1e-12 && r <= hi + 1e-12);
        let (lo4, hi4) = fisher_ci(r, 4 * l, alpha).unwrap();
        prop_assert!(hi4 - lo4 <= hi - lo + 1e-12);
        let (lo_w, hi_w) = fisher_ci(r, l, alpha / 2.0).unwrap();
        prop_assert!(hi_w - lo_w >= hi - lo - 1e-12);
    }

    #[test]
    fn budget_plan_is_scale_invariant(
        v in 0.0..1.0f64,
        k1 in 0.5..20.0f64,
        k2 in 0.5..20.0f64,
        budget in 10.0..5000.0f64,
        s in 0.1..10.0f64,
    ) {
        let a = budget_plan(v, &BudgetSpec::new(k1, k2, budget).unwrap()).unwrap();
        let b = budget_plan(v, &BudgetSpec::new(s * k1, s * k2, s * budget).unwrap()).unwrap();
        for (x, y) in a.n_continuous.iter().zip(&b.n_continuous) {
            prop_assert!((x - y).abs() <= 1e-8 * (1.0 + x.abs()));
        }
        let spent = k1 * a.n_continuous[0] + k2 * a.n_continuous[1];
        prop_assert!((spent - budget).abs() <= 1e-8 * budget);
    }

    #[test]
    fn size_plan_weights_sum_to_one(
        (k, q) in (2usize..5).prop_flat_map(|k| (Just(k), psd(k))),
        total in 10.0..5000.0f64,
    ) {
        let plan = size_constrained_plan(&WeightCov::differenced_scaled(q), total).unwrap();
        assert_abs_diff_eq!(plan.beta.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(plan.n_continuous.iter().sum::<f64>(), total, epsilon = 1e-6 * total);
        prop_assert_eq!(plan.n_integer.iter().sum::<u64>(), total.round() as u64);
        prop_assert_eq!(plan.n_integer.len(), k);
    }

    #[test]
    fn gaussian_kl_is_nonnegative(
        ms in prop::collection::vec(-2.0..2.0f64, 3),
        mt in prop::collection::vec(-2.0..2.0f64, 3),
        cs in psd(3),
        ct in psd(3),
    ) {
        let eye = DMatrix::<f64>::identity(3, 3) * 0.1;
        let s = SourceSummary::new("s", DVector::from_vec(ms), 50, Some(cs + &eye)).unwrap();
        let t = SourceSummary::new("t", DVector::from_vec(mt), 50, Some(ct + &eye)).unwrap();
        prop_assert!(kl_gaussian(&s, &t).unwrap().value >= 0.0);
        prop_assert_eq!(kl_gaussian(&t, &t).unwrap().value, 0.0);
    }
}
