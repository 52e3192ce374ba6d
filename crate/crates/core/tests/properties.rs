use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mabt::criteria::{btma_criterion, jma_criterion, mma_criterion};
use mabt::data::standardize;
use mabt::inference::{ci_averaging, estimate_asymptotics_with_m0, simulate_limit_draws};
use mabt::linalg::{min_eigenvalue, symmetric_eigen};
use mabt::qp::{kkt_residual, qp_objective, QpStatus};
use mabt::regression::fit_all;
use mabt::resampling::resampled_fit;
use mabt::sim::{run_risk_experiment, write_json, HansenConfig};
use mabt::{
    draw_fullrank_plan, draw_plan, solve_simplex_qp_default, CandidateModelSet, Dataset, Matrix,
    Method, ResampleKind, SeedSpec,
};

fn random_dataset(seed: u64, n: usize, p: usize) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let y = (0..n)
        .map(|i| (0..p).map(|j| x[(i, j)] / (j + 1) as f64).sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
        .collect();
    Dataset::new(y, x, None).unwrap()
}

fn nested(n: usize, p: usize) -> CandidateModelSet {
    CandidateModelSet::nested_prefix(&(1..=p).collect::<Vec<_>>(), n, p).unwrap()
}

fn random_psd(seed: u64, m: usize) -> (Matrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rank = rng.random_range(1..=m + 1);
    let g = Matrix::from_fn(rank, m, |_, _| rng.random_range(-1.0..1.0));
    let b = (0..m).map(|_| if seed % 2 == 0 { 0.0 } else { rng.random_range(-0.5..0.5) }).collect();
    (g.gram(), b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn qp_solution_is_feasible_and_stationary(seed in any::<u64>(), m in 1usize..8) {
        let (a, b) = random_psd(seed, m);
        let sol = solve_simplex_qp_default(&a, &b).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Converged);
        prop_assert!(sol.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() <= 4.0 * f64::EPSILON);
        let scale = 1f64.max(a.max_abs()).max(b.iter().fold(0.0, |s: f64, v| s.max(v.abs())));
        prop_assert!(kkt_residual(&a, &b, &sol.weights) <= 1e-7 * scale);
    }

    #[test]
    fn qp_vertex_dominance(seed in any::<u64>(), m in 1usize..8) {
        let (a, b) = random_psd(seed, m);
        let sol = solve_simplex_qp_default(&a, &b).unwrap();
        let best_vertex = (0..m).map(|q| a[(q, q)] + b[q]).fold(f64::INFINITY, f64::min);
        prop_assert!(sol.objective <= best_vertex + 1e-12);
        prop_assert!((qp_objective(&a, &b, &sol.weights) - sol.objective).abs() <= 1e-12 * (1.0 + sol.objective.abs()));
    }

    #[test]
    fn qp_scale_invariance(seed in any::<u64>(), m in 2usize..7, log_c in -2.0f64..2.0) {
        let (a, b) = random_psd(seed, m);
        let c = 10f64.powf(log_c);
        let s1 = solve_simplex_qp_default(&a, &b).unwrap();
        let s2 = solve_simplex_qp_default(&a.scale(c), &b.iter().map(|v| v * c).collect::<Vec<_>>()).unwrap();
        // Weights agree when the minimizer is unique; the objective always scales.
        prop_assert!((s2.objective - c * s1.objective).abs() <= 1e-8 * c * (1.0 + s1.objective.abs()));
        if min_eigenvalue(&a) > 1e-3 {
            for (x, y) in s1.weights.iter().zip(&s2.weights) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn qp_restart_stability(seed in any::<u64>(), m in 1usize..8) {
        let (a, b) = random_psd(seed, m);
        prop_assert_eq!(solve_simplex_qp_default(&a, &b).unwrap(), solve_simplex_qp_default(&a, &b).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hat_traces_rss_and_orthogonality(seed in any::<u64>(), n in 12usize..40, p in 2usize..6) {
        let ds = random_dataset(seed, n, p);
        let models = nested(n, p);
        let bundle = fit_all(&ds, &models).unwrap();
        let mut prev = f64::INFINITY;
        for f in &bundle.fits {
            prop_assert!((f.hat_diag.iter().sum::<f64>() - f.k as f64).abs() < 1e-8);
            prop_assert!(f.rss <= prev * (1.0 + 1e-12));
            prev = f.rss;
            let scale = ds.y().iter().map(|v| v.abs()).fold(1.0, f64::max);
            for &c in &f.columns {
                let dot: f64 = ds.x().col(c).iter().zip(&f.resid).map(|(a, b)| a * b).sum();
                prop_assert!(dot.abs() <= 1e-8 * scale * n as f64);
            }
        }
    }

    #[test]
    fn averaged_fit_is_affine(seed in any::<u64>(), raw in prop::collection::vec(0.0f64..1.0, 4)) {
        let ds = random_dataset(seed, 25, 4);
        let bundle = fit_all(&ds, &nested(25, 4)).unwrap();
        let total: f64 = raw.iter().sum::<f64>() + 1e-9;
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let direct = bundle.averaged_fit(&w);
        let mut by_vertex = vec![0.0; 25];
        for (q, f) in bundle.fits.iter().enumerate() {
            for (o, m) in by_vertex.iter_mut().zip(&f.mu_hat) {
                *o += w[q] * m;
            }
        }
        for (a, b) in direct.iter().zip(&by_vertex) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn plans_are_deterministic(seed in any::<u64>(), b in 0u64..1000, n in 1usize..60, frac in 0.05f64..1.0) {
        let m = ((n as f64 * frac) as usize).max(1);
        for kind in [ResampleKind::WithReplacement, ResampleKind::WithoutReplacement] {
            let s = SeedSpec::new(seed);
            let p1 = draw_plan(n, m, kind, &mut s.stream(b)).unwrap();
            let p2 = draw_plan(n, m, kind, &mut s.stream(b)).unwrap();
            prop_assert_eq!(&p1, &p2);
            prop_assert_eq!(p1.counts.iter().map(|&c| c as usize).sum::<usize>(), m);
            if kind == ResampleKind::WithoutReplacement {
                prop_assert!(p1.counts.iter().all(|&c| c <= 1));
            }
        }
    }

    #[test]
    fn criterion_matrices_are_psd(seed in any::<u64>()) {
        let ds = random_dataset(seed, 30, 4);
        let models = nested(30, 4);
        let bundle = fit_all(&ds, &models).unwrap();
        let crits = [
            mma_criterion(&bundle),
            jma_criterion(&bundle).unwrap(),
            btma_criterion(&ds, &models, 15, 40, SeedSpec::new(seed)).unwrap(),
        ];
        for c in &crits {
            prop_assert!(c.a.is_symmetric(0.0));
            let (vals, _) = symmetric_eigen(&c.a);
            let max = vals.iter().fold(0.0f64, |s, v| s.max(*v));
            prop_assert!(vals.iter().all(|&v| v >= -1e-10 * max));
        }
    }

    #[test]
    fn standardize_is_idempotent(seed in any::<u64>(), n in 5usize..40) {
        let ds = random_dataset(seed, n, 4);
        let (s1, _) = standardize(&ds).unwrap();
        let (s2, _) = standardize(&s1).unwrap();
        for (a, b) in s1.x().as_slice().iter().zip(s2.x().as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in s1.y().iter().zip(s2.y()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn btma_objective_matches_direct_evaluation_at_vertices() {
    let ds = random_dataset(1, 30, 4);
    let models = nested(30, 4);
    let (m, reps, seeds) = (12, 20, SeedSpec::new(5));
    let crit = btma_criterion::<f64>(&ds, &models, m, reps, seeds).unwrap();
    for q in 0..4 {
        let mut total = 0.0;
        for b in 0..reps {
            let plan = draw_fullrank_plan(&ds, &models, m, ResampleKind::WithReplacement, &mut seeds.stream(b as u64), 100).unwrap();
            let theta = resampled_fit(&ds, models.model(q), &plan).unwrap();
            let mu = ds.design(models.model(q)).matvec(&theta);
            total += ds.y().iter().zip(&mu).map(|(y, m)| (y - m) * (y - m)).sum::<f64>();
        }
        let mut w = vec![0.0; 4];
        w[q] = 1.0;
        let direct = total / (30.0 * reps as f64);
        assert!((crit.objective(&w) - direct).abs() <= 1e-10 * direct, "vertex {q}");
    }
}

#[test]
fn btma_doubling_replicates_averages_halves() {
    let ds = random_dataset(2, 30, 3);
    let models = nested(30, 3);
    let (m, reps, seeds) = (15, 16, SeedSpec::new(9));
    let a1 = btma_criterion::<f64>(&ds, &models, m, reps, seeds).unwrap().a;
    let a2 = btma_criterion::<f64>(&ds, &models, m, 2 * reps, seeds).unwrap().a;
    // Second half rebuilt from streams reps..2 reps.
    let mut second = Matrix::<f64>::zeros(3, 3);
    for b in reps..2 * reps {
        let plan = draw_fullrank_plan(&ds, &models, m, ResampleKind::WithReplacement, &mut seeds.stream(b as u64), 100).unwrap();
        let res: Vec<Vec<f64>> = (0..3)
            .map(|q| {
                let theta = resampled_fit(&ds, models.model(q), &plan).unwrap();
                let mu = ds.design(models.model(q)).matvec(&theta);
                ds.y().iter().zip(&mu).map(|(y, m)| y - m).collect()
            })
            .collect();
        for q in 0..3 {
            for r in 0..3 {
                second[(q, r)] += res[q].iter().zip(&res[r]).map(|(a, b)| a * b).sum::<f64>() / (30.0 * reps as f64);
            }
        }
    }
    for q in 0..3 {
        for r in 0..3 {
            let avg = 0.5 * (a1[(q, r)] + second[(q, r)]);
            assert!((a2[(q, r)] - avg).abs() <= 1e-10 * avg.abs().max(1.0));
        }
    }
}

#[test]
fn widening_level_never_shrinks_intervals() {
    let ds = random_dataset(3, 60, 5);
    let models = nested(60, 5);
    let bundle = fit_all(&ds, &models).unwrap();
    let inputs = estimate_asymptotics_with_m0(&ds, &models, 30, 1).unwrap();
    let w = vec![0.0, 0.2, 0.3, 0.5, 0.0];
    let draws = simulate_limit_draws(&inputs, 300, Method::Btma, SeedSpec::new(4)).unwrap();
    for j in 1..5 {
        let mut prev: Option<(f64, f64)> = None;
        for level in [0.5, 0.8, 0.9, 0.95, 0.99] {
            let ci = ci_averaging(&bundle, &inputs, &w, &draws, j, level).unwrap();
            assert!(ci.lower <= ci.upper);
            if let Some((lo, hi)) = prev {
                assert!(ci.lower <= lo && ci.upper >= hi, "coef {j} level {level}");
            }
            prev = Some((ci.lower, ci.upper));
        }
    }
}

#[test]
fn risk_reports_are_reproducible() {
    let cfg = HansenConfig { n: 50, reps: 3, replicates: 20, ..HansenConfig::default() };
    let render = || {
        let rep = run_risk_experiment(&cfg, &[Method::Btma, Method::Jma, Method::Bag], SeedSpec::new(12)).unwrap();
        let mut buf = Vec::new();
        write_json(&rep, &mut buf).unwrap();
        buf
    };
    assert_eq!(render(), render());
}
