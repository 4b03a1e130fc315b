use posi::adjust::{reconstruction_residual, selection_maps_for};
use posi::groupsolve::{select, solve, SolveOptions};
use posi::linalg::{max_abs_diff, thin_qr, Mat, Vector};
use posi::model::{
    draw_randomization, load_dataset, Dataset, GroupStructure, RandomizationConfig, RandomizationCovariance, SigmaSpec,
};
use posi::oracle::{completion_basis_gap, factorization_spread, gradient_error, random_instance, VARIANTS};
use posi::posterior::{log_posterior, Prior};
use posi::sampler::{functional_intervals, Chain, Functional};
use posi::simlab::f1_score;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_mat(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn csv_round_trip_is_bitwise(seed in any::<u64>(), n in 2usize..20, p in 1usize..6) {
        let dir = tempfile::TempDir::new().unwrap();
        let x = gaussian_mat(n, p, seed) * 1e3;
        let y = Vector::from_iterator(n, gaussian_mat(n, 1, seed ^ 1).iter().copied());
        let ds = Dataset::new(x, y, SigmaSpec::Estimate).unwrap();
        let (xp, yp) = (dir.path().join("x.csv"), dir.path().join("y.csv"));
        ds.write_csv(&xp, &yp).unwrap();
        let back = load_dataset(&xp, &yp, false).unwrap();
        prop_assert_eq!(back.x, ds.x);
        prop_assert_eq!(back.y, ds.y);
    }

    #[test]
    fn standardization_is_idempotent(seed in any::<u64>(), n in 3usize..30, p in 1usize..6) {
        let x = gaussian_mat(n, p, seed) * 7.0 + Mat::from_element(n, p, 3.0);
        let ds = Dataset::new(x, Vector::zeros(n), SigmaSpec::Estimate).unwrap();
        let once = ds.standardize();
        let twice = once.clone().standardize();
        prop_assert!(max_abs_diff(&once.x, &twice.x) < 1e-12);
    }

    #[test]
    fn correlated_randomization_is_the_cholesky_factor_times_white_noise(seed in any::<u64>(), dim in 1usize..6) {
        let a = gaussian_mat(dim, dim, seed ^ 0xabc);
        let cov = &a * a.transpose() + Mat::identity(dim, dim);
        let l = cov.clone().cholesky().unwrap().l();
        let corr = draw_randomization(&RandomizationConfig { covariance: RandomizationCovariance::Matrix(cov), seed }, dim).unwrap();
        let white = draw_randomization(&RandomizationConfig::isotropic(1.0, seed), dim).unwrap();
        prop_assert!((corr - l * white).amax() < 1e-12);
    }

    #[test]
    fn atomic_groups_soft_threshold_on_identity_designs(ys in prop::collection::vec(-5.0f64..5.0, 2..6), lam in 0.1f64..3.0) {
        let p = ys.len();
        let ds = Dataset::new(Mat::identity(p, p), Vector::from_vec(ys.clone()), SigmaSpec::Known(1.0)).unwrap();
        let gs = GroupStructure::disjoint((0..p).map(|j| vec![j]).collect(), lam, p).unwrap();
        let sol = solve(&ds, &gs, &Vector::zeros(p), &SolveOptions::default()).unwrap();
        for j in 0..p {
            prop_assert!((sol.coef[j] - soft_threshold(ys[j], lam)).abs() < 1e-7);
        }
    }

    #[test]
    fn randomization_only_shifts_the_origin(seed in any::<u64>(), lam in 0.2f64..2.0) {
        let p = 4;
        let y = Vector::from_iterator(p, gaussian_mat(p, 1, seed).iter().map(|v| 2.0 * v));
        let omega = Vector::from_iterator(p, gaussian_mat(p, 1, seed ^ 7).iter().copied());
        let gs = GroupStructure::disjoint(vec![vec![0, 1], vec![2, 3]], lam, p).unwrap();
        let opts = SolveOptions::default();
        let a = solve(&Dataset::new(Mat::identity(p, p), y.clone(), SigmaSpec::Known(1.0)).unwrap(), &gs, &omega, &opts).unwrap();
        let b = solve(&Dataset::new(Mat::identity(p, p), y + &omega, SigmaSpec::Known(1.0)).unwrap(), &gs, &Vector::zeros(p), &opts).unwrap();
        prop_assert!((a.coef - b.coef).amax() < 1e-7);
    }

    #[test]
    fn f1_is_a_bounded_symmetric_score(a in prop::collection::btree_set(0usize..30, 0..10), b in prop::collection::btree_set(0usize..30, 0..10)) {
        let (a, b): (Vec<usize>, Vec<usize>) = (a.into_iter().collect(), b.into_iter().collect());
        let f = f1_score(&a, &b);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((f - f1_score(&b, &a)).abs() < 1e-15);
        if !a.is_empty() {
            prop_assert!((f1_score(&a, &a) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn functional_intervals_nest_across_levels(seed in any::<u64>(), lo in 0.05f64..0.5, hi in 0.5f64..0.99) {
        let draws = gaussian_mat(300, 3, seed);
        let chain = Chain {
            draws,
            init: Vector::zeros(3),
            grad_norms: vec![],
            inner_iters: vec![],
            preconditioner: Mat::identity(3, 3),
            eta: 1.0,
        };
        for f in [Functional::Mean, Functional::Variance, Functional::L2Norm, Functional::MaxAbs] {
            let small = functional_intervals(&chain, f, &[0, 1, 2], lo).unwrap();
            let large = functional_intervals(&chain, f, &[0, 1, 2], hi).unwrap();
            prop_assert!(small.within(&large));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn frozen_selections_reconstruct_the_randomization(seed in 0u64..10_000, v in 0usize..4) {
        let inst = random_instance(seed, VARIANTS[v]).unwrap();
        prop_assert!(inst.record.kkt_residual <= 1e-8);
        let (a, b, c) = selection_maps_for(&inst.problem, &inst.record, &inst.dataset).unwrap();
        prop_assert!(reconstruction_residual(&a, &b, &c, &inst.record) < 1e-8);
    }

    #[test]
    fn adjustment_is_invariant_to_the_completion_basis(seed in 0u64..10_000, v in 0usize..4) {
        let inst = random_instance(seed, VARIANTS[v]).unwrap();
        prop_assert!(completion_basis_gap(&inst, seed).unwrap() < 1e-10);
        prop_assert!(factorization_spread(&inst).unwrap() < 1e-8);
    }

    #[test]
    fn posterior_gradient_is_exact(seed in 0u64..10_000, v in 0usize..4) {
        let inst = random_instance(seed, VARIANTS[v]).unwrap();
        let spec = inst.spec().unwrap();
        let noise = gaussian_mat(spec.dim(), 1, seed ^ 99);
        let beta = &spec.beta_hat + Vector::from_iterator(spec.dim(), noise.iter().map(|z| 0.2 * z));
        prop_assert!(gradient_error(&spec, &beta).unwrap() < 1e-5);
    }

    #[test]
    fn gaussian_prior_adds_its_log_density(seed in 0u64..10_000, var in 0.5f64..50.0) {
        let inst = random_instance(seed, VARIANTS[(seed % 4) as usize]).unwrap();
        let flat = inst.spec().unwrap();
        let prior = Prior::isotropic(flat.dim(), var).unwrap();
        let mut informed = flat.clone();
        informed.prior = prior.clone();
        let beta = &flat.beta_hat * 0.9;
        let diff = log_posterior(&beta, &informed).unwrap() - log_posterior(&beta, &flat).unwrap();
        prop_assert!((diff - prior.log_density(&beta)).abs() < 1e-12 * (1.0 + diff.abs()));
    }

    #[test]
    fn standardized_solutions_satisfy_their_stationarity_system(seed in 0u64..10_000) {
        let p = 6;
        let (q, _) = thin_qr(&gaussian_mat(40, p, seed));
        let x = q * gaussian_mat(p, p, seed ^ 5);
        let y = Vector::from_iterator(40, gaussian_mat(40, 1, seed ^ 6).iter().map(|v| 3.0 * v)) + &x.column(0);
        let ds = Dataset::new(x, y, SigmaSpec::Known(1.0)).unwrap();
        let gs = GroupStructure::new(posi::model::Variant::Standardized, vec![vec![0, 1, 2], vec![3, 4, 5]], vec![2.0, 2.0], 0.0, 0.0, p).unwrap();
        match select(&ds, &gs, &Vector::zeros(p), &SolveOptions::default()) {
            Ok((_, rec)) => prop_assert!(rec.kkt_residual <= 1e-8),
            Err(posi::Error::EmptySelection) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }
}
