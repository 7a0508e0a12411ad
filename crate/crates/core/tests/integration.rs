use std::collections::BTreeMap;

use duc_core::baselines::{domain_classifier_score, kl_gaussian};
use duc_core::duc::{duc_population, estimate_weight_cov, CRatios};
use duc_core::erm::{design, validate_duc, weighted_least_squares, RiskEvaluator, ValidationOptions};
use duc_core::seeding::{derive_seed, rng_from_seed};
use duc_core::shift_sim::{CovariateSpec, Marginal, OutcomeSpec, SyntheticWorld, TaskConfig, WeightLaw};
use duc_core::summaries::{SourceSummary, ZMatrix};
use duc_core::Dataset;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn small_task(target_var: f64, sizes: &[(&str, usize, f64)]) -> TaskConfig {
    let covariates = (1..=4)
        .map(|j| CovariateSpec { name: format!("x{j}"), marginal: Marginal::Normal { mean: 0.0, sd: 1.0 } })
        .collect();
    let mut weight_laws = BTreeMap::new();
    let mut sample_sizes = BTreeMap::new();
    let law =
        |v: f64| if v == 0.0 { WeightLaw::degenerate() } else { WeightLaw::shifted_exponential(v).unwrap() };
    weight_laws.insert("target".to_string(), law(target_var));
    sample_sizes.insert("target".to_string(), 100);
    let mut candidates = Vec::new();
    for &(id, n, v) in sizes {
        weight_laws.insert(id.to_string(), law(v));
        sample_sizes.insert(id.to_string(), n);
        candidates.push(id.to_string());
    }
    TaskConfig {
        covariates,
        outcome: OutcomeSpec {
            squared: vec!["x1".into()],
            noise: Marginal::Uniform { low: -1.0, high: 1.0 },
        },
        regions: 200,
        atoms_per_region: 1,
        target: "target".into(),
        existing: vec![],
        candidates,
        weight_laws,
        sample_sizes,
        shared_lambda: BTreeMap::new(),
        test_n: 2000,
        master_seed: 5,
    }
}

#[test]
fn excess_risk_shrinks_with_sample_size() {
    let world = SyntheticWorld::new(small_task(0.0, &[("c", 10, 0.0)])).unwrap();
    let w = vec![1.0; world.cfg.regions];
    let pool = &world.pool;
    let eval = RiskEvaluator::weighted(&pool.x, &pool.y, &pool.atom_probabilities(&w), true).unwrap();
    let oracle = eval.minimiser().unwrap();
    let excess = |n: usize, seed: u64| {
        let d = world.sample(&w, n, seed).unwrap();
        let theta = weighted_least_squares(
            &design(&d.x, true),
            d.outcome().unwrap(),
            &DVector::from_element(n, 1.0),
            0.0,
            true,
        )
        .unwrap();
        eval.excess(&theta, &oracle)
    };
    let (mut small, mut large, mut wins) = (0.0, 0.0, 0);
    for seed in 0..100 {
        let (a, b) = (excess(10, derive_seed(1, seed)), excess(10_000, derive_seed(2, seed)));
        small += a;
        large += b;
        wins += usize::from(b < a);
        assert!(b >= 0.0 && a >= 0.0);
    }
    assert!(large < 0.05 * small, "{large} vs {small}");
    assert!(wins >= 95, "{wins}");
}

#[test]
fn validation_is_deterministic() {
    let cfg = small_task(0.0, &[("a", 100, 0.0), ("b", 400, 0.3)]);
    let opts = ValidationOptions { trials: 6, seed: 9, ..Default::default() };
    let one = validate_duc(&cfg, &opts).unwrap();
    let two = validate_duc(&cfg, &opts).unwrap();
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&two).unwrap());
}

#[test]
fn unshifted_sources_are_exchangeable() {
    let world = SyntheticWorld::new(small_task(0.0, &[("a", 300, 0.0), ("b", 300, 0.0)])).unwrap();
    let wc = world.true_weight_cov().unwrap();
    assert!(wc.matrix.amax() == 0.0);
    let n: Vec<f64> = world.sample_sizes().iter().map(|&n| n as f64).collect();
    let pair = |k: usize| {
        let idx = [0, k];
        let sub = wc.matrix.select_rows(&idx).select_columns(&idx);
        let c = CRatios::from_sizes(&[n[0], n[k]]).unwrap();
        duc_population(&duc_core::duc::WeightCov::raw_scaled(sub), &c).unwrap().rho2
    };
    assert_eq!(pair(1), pair(2));
    assert!((pair(1) - 300.0 / 400.0).abs() < 1e-12);
}

fn gaussian(n: usize, shift: f64, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    Dataset::from_covariates(DMatrix::from_fn(n, 3, |_, j| {
        let z: f64 = rng.sample(StandardNormal);
        z + if j == 0 { shift } else { 0.0 }
    }))
}

#[test]
fn classifier_score_grows_with_mean_shift() {
    let target = gaussian(600, 0.0, 1);
    let scores: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|&s| domain_classifier_score("s", &gaussian(600, s, 2), &target).unwrap().value)
        .collect();
    assert!(scores.windows(2).all(|w| w[1] > w[0]), "{scores:?}");
    assert!((scores[0] - 0.5).abs() < 0.05);
}

#[test]
fn gaussian_kl_matches_monte_carlo() {
    let cs = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, 0.3, 0.8]);
    let ct = DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 1.2]);
    let (ms, mt) = (DVector::from_row_slice(&[0.5, -0.4]), DVector::from_row_slice(&[0.0, 0.2]));
    let s = SourceSummary::new("s", ms.clone(), 100, Some(cs.clone())).unwrap();
    let t = SourceSummary::new("t", mt.clone(), 100, Some(ct.clone())).unwrap();
    let exact = kl_gaussian(&s, &t).unwrap().value;
    let logpdf = |x: &DVector<f64>, m: &DVector<f64>, c: &DMatrix<f64>| {
        let d = x - m;
        -0.5 * (d.dot(&(c.clone().try_inverse().unwrap() * &d)) + c.determinant().ln())
    };
    let chol = cs.clone().cholesky().unwrap().l();
    let mut rng = rng_from_seed(77);
    let draws = 200_000;
    let mc: f64 = (0..draws)
        .map(|_| {
            let x = &ms + &chol * DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            logpdf(&x, &ms, &cs) - logpdf(&x, &mt, &ct)
        })
        .sum::<f64>()
        / draws as f64;
    assert!((mc - exact).abs() < 0.02 * exact, "mc {mc} exact {exact}");
}

#[test]
fn weight_cov_recovered_from_z() {
    let sigma = DMatrix::from_row_slice(3, 3, &[0.004, 0.001, 0.0, 0.001, 0.006, 0.002, 0.0, 0.002, 0.005]);
    let chol = sigma.clone().cholesky().unwrap().l();
    let mut rng = rng_from_seed(31);
    let l = 3000;
    let mut z = DMatrix::zeros(l, 3);
    for i in 0..l {
        let g = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = &chol * g;
        z[(i, 0)] = -v[0];
        z[(i, 1)] = v[1] - v[0];
        z[(i, 2)] = v[2] - v[0];
    }
    let est = estimate_weight_cov(&ZMatrix::new(z).unwrap()).unwrap().matrix;
    let rel = (&est - &sigma).norm() / sigma.norm();
    assert!(rel < 0.15, "relative error {rel}");
}
