//! Bootstrap-pairs and subsampling plans with counter-derived seeding and
//! a full-rank guard on the resampled design.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Qr};
use crate::regression::{CandidateModelSet, Dataset};
use crate::scalar::Real;

/// Which resampling scheme a plan uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResampleKind {
    /// Bootstrap pairs: `m` i.i.d. uniform draws from the `n` rows.
    WithReplacement,
    /// Subsampling: simple random sample of `m` distinct rows.
    WithoutReplacement,
}

/// One resample of the rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResamplePlan {
    pub kind: ResampleKind,
    pub m: usize,
    /// Selection multiplicity of each original row; sums to `m`.
    pub counts: Vec<u32>,
    /// Selected rows in draw order, length `m`.
    pub indices: Vec<usize>,
}

impl ResamplePlan {
    fn from_indices(n: usize, kind: ResampleKind, indices: Vec<usize>) -> Self {
        let mut counts = vec![0u32; n];
        for &i in &indices {
            counts[i] += 1;
        }
        Self { kind, m: indices.len(), counts, indices }
    }

    /// The plan that takes every row once (`pi = 1`, `m = n`).
    pub fn identity(n: usize) -> Self {
        Self::from_indices(n, ResampleKind::WithoutReplacement, (0..n).collect())
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }
}

/// Master seed for a family of independent random streams.
///
/// Stream `b` is the ChaCha8 stream number `b` under the key derived from
/// the master seed, so replicates can be generated in any order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3))
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// Independent seed family for sub-task `tag`.
    pub fn child(&self, tag: u64) -> Self {
        Self { master_seed: splitmix64(self.master_seed ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D))) }
    }

    /// Independent seed family for a named sub-task (e.g. a method).
    pub fn tagged(&self, label: &str) -> Self {
        self.child(fnv1a(label))
    }

    /// Random stream for replicate `b`.
    pub fn stream(&self, b: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(b);
        rng
    }
}

pub const DEFAULT_MAX_RETRIES: usize = 100;

pub fn draw_plan<R: Rng + ?Sized>(n: usize, m: usize, kind: ResampleKind, rng: &mut R) -> Result<ResamplePlan> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidSize { n, m, reason: "m and n must be positive" });
    }
    let indices = match kind {
        ResampleKind::WithReplacement => (0..m).map(|_| rng.random_range(0..n)).collect(),
        ResampleKind::WithoutReplacement => {
            if m > n {
                return Err(Error::InvalidSize { n, m, reason: "subsampling needs m <= n" });
            }
            index::sample(rng, n, m).into_vec()
        }
    };
    Ok(ResamplePlan::from_indices(n, kind, indices))
}

/// Draws plans until the resampled design has full column rank.
///
/// Nested sets check only the largest design (sub-designs of a full-rank
/// design are full rank); other sets check every candidate.
pub fn draw_fullrank_plan<T: Real, R: Rng + ?Sized>(
    dataset: &Dataset<T>,
    models: &CandidateModelSet,
    m: usize,
    kind: ResampleKind,
    rng: &mut R,
    max_retries: usize,
) -> Result<ResamplePlan> {
    let guard = RankGuard::new(dataset, models);
    draw_guarded(&guard, dataset.n(), m, kind, rng, max_retries)
}

pub(crate) fn draw_guarded<T: Real, R: Rng + ?Sized>(
    guard: &RankGuard<T>,
    n: usize,
    m: usize,
    kind: ResampleKind,
    rng: &mut R,
    max_retries: usize,
) -> Result<ResamplePlan> {
    if max_retries == 0 {
        return Err(Error::InvalidConfig("max_retries must be at least 1".into()));
    }
    for _ in 0..max_retries {
        let plan = draw_plan(n, m, kind, rng)?;
        if guard.is_full_rank(&plan) {
            return Ok(plan);
        }
    }
    Err(Error::RankRetryExhausted { retries: max_retries, replicate: 0 })
}

pub(crate) struct RankGuard<T> {
    designs: Vec<Matrix<T>>,
}

impl<T: Real> RankGuard<T> {
    pub(crate) fn new(dataset: &Dataset<T>, models: &CandidateModelSet) -> Self {
        let designs = if models.is_nested() {
            vec![dataset.design(models.model(models.largest()))]
        } else {
            models.models().iter().map(|c| dataset.design(c)).collect()
        };
        Self { designs }
    }

    pub(crate) fn is_full_rank(&self, plan: &ResamplePlan) -> bool {
        self.designs.iter().all(|x| {
            let k = x.ncols();
            if plan.m < k {
                return false;
            }
            Qr::pivoted_owned(x.select_rows(&plan.indices)).rank() == k
        })
    }
}

/// OLS coefficients on the resampled pairs `(X*, Y*)`, by index expansion.
pub fn resampled_fit<T: Real>(dataset: &Dataset<T>, model: &[usize], plan: &ResamplePlan) -> Result<Vec<T>> {
    dataset.check_columns(model)?;
    let k = model.len();
    let xs = dataset.design(model).select_rows(&plan.indices);
    let ys: Vec<T> = plan.indices.iter().map(|&i| dataset.y()[i]).collect();
    let qr = Qr::pivoted_owned(xs);
    if qr.rank() < k || plan.m < k {
        return Err(Error::RankDeficient { model: 1, rank: qr.rank(), k });
    }
    Ok(qr.solve(&ys))
}

/// Same coefficients as [`resampled_fit`], computed as weighted least
/// squares on the original rows with weights `pi`.
pub fn weighted_resampled_fit<T: Real>(dataset: &Dataset<T>, model: &[usize], plan: &ResamplePlan) -> Result<Vec<T>> {
    dataset.check_columns(model)?;
    let k = model.len();
    let rows: Vec<usize> = (0..dataset.n()).filter(|&i| plan.counts[i] > 0).collect();
    let sw: Vec<T> = rows.iter().map(|&i| T::from_u32(plan.counts[i]).unwrap().sqrt()).collect();
    let mut xw = dataset.design(model).select_rows(&rows);
    for j in 0..k {
        for (v, &s) in xw.col_mut(j).iter_mut().zip(&sw) {
            *v *= s;
        }
    }
    let yw: Vec<T> = rows.iter().zip(&sw).map(|(&i, &s)| dataset.y()[i] * s).collect();
    let qr = Qr::pivoted_owned(xw);
    if qr.rank() < k {
        return Err(Error::RankDeficient { model: 1, rank: qr.rank(), k });
    }
    Ok(qr.solve(&yw))
}

/// Fits every candidate on a resample, sharing one factorisation across a
/// nested chain.
pub(crate) struct ReplicateFitter<'a, T> {
    dataset: &'a Dataset<T>,
    models: &'a CandidateModelSet,
    chain: Option<ChainDesign<T>>,
    pub(crate) guard: RankGuard<T>,
}

struct ChainDesign<T> {
    x: Matrix<T>,
    /// For each model, chain position of each of its (ordered) columns.
    positions: Vec<Vec<usize>>,
}

impl<'a, T: Real> ReplicateFitter<'a, T> {
    pub(crate) fn new(dataset: &'a Dataset<T>, models: &'a CandidateModelSet) -> Self {
        let chain = models.chain_order().map(|order| {
            let positions = models
                .models()
                .iter()
                .map(|cols| cols.iter().map(|c| order.iter().position(|o| o == c).unwrap()).collect())
                .collect();
            ChainDesign { x: dataset.design(&order), positions }
        });
        Self { dataset, models, chain, guard: RankGuard::new(dataset, models) }
    }

    /// Per-model coefficients on the resample, each in its model's column order.
    pub(crate) fn fit(&self, plan: &ResamplePlan) -> Result<Vec<Vec<T>>> {
        match &self.chain {
            Some(chain) => {
                let xs = chain.x.select_rows(&plan.indices);
                let mut qty: Vec<T> = plan.indices.iter().map(|&i| self.dataset.y()[i]).collect();
                let qr = Qr::new_owned(xs);
                qr.apply_qt(&mut qty);
                Ok(chain
                    .positions
                    .iter()
                    .map(|pos| {
                        let z = qr.solve_upper_prefix(pos.len(), &qty);
                        pos.iter().map(|&p| z[p]).collect()
                    })
                    .collect())
            }
            None => self
                .models
                .models()
                .iter()
                .enumerate()
                .map(|(q, cols)| {
                    resampled_fit(self.dataset, cols, plan).map_err(|e| match e {
                        Error::RankDeficient { rank, k, .. } => Error::RankDeficient { model: q + 1, rank, k },
                        other => other,
                    })
                })
                .collect(),
        }
    }

    /// Residuals of each resampled fit against the original responses,
    /// as the `n x M` matrix whose columns are `y - X_(q) theta*_q`.
    pub(crate) fn residuals(&self, coefs: &[Vec<T>]) -> Matrix<T> {
        let n = self.dataset.n();
        let mut e = Matrix::zeros(n, coefs.len());
        for (q, theta) in coefs.iter().enumerate() {
            let col = e.col_mut(q);
            col.copy_from_slice(self.dataset.y());
            match &self.chain {
                Some(chain) => {
                    for (&p, &t) in chain.positions[q].iter().zip(theta) {
                        for (c, &x) in col.iter_mut().zip(chain.x.col(p)) {
                            *c -= x * t;
                        }
                    }
                }
                None => {
                    for (&j, &t) in self.models.model(q).iter().zip(theta) {
                        for (c, &x) in col.iter_mut().zip(self.dataset.x().col(j)) {
                            *c -= x * t;
                        }
                    }
                }
            }
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_dataset(n: usize, p: usize, seed: u64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
        let y = (0..n).map(|i| 1.0 - x[(i, p - 1)] + rng.random_range(-1.0..1.0)).collect();
        Dataset::new(y, x, None).unwrap()
    }

    #[test]
    fn single_row_with_replacement() {
        let mut rng = SeedSpec::new(1).stream(0);
        let plan = draw_plan(1, 3, ResampleKind::WithReplacement, &mut rng).unwrap();
        assert_eq!(plan.counts, vec![3]);
        assert_eq!(plan.indices, vec![0, 0, 0]);
    }

    #[test]
    fn full_subsample_is_permutation() {
        let mut rng = SeedSpec::new(2).stream(0);
        let plan = draw_plan(5, 5, ResampleKind::WithoutReplacement, &mut rng).unwrap();
        assert_eq!(plan.counts, vec![1; 5]);
        let mut idx = plan.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..5).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_sizes() {
        let mut rng = SeedSpec::new(2).stream(0);
        assert!(matches!(draw_plan(5, 0, ResampleKind::WithReplacement, &mut rng), Err(Error::InvalidSize { .. })));
        assert!(matches!(draw_plan(5, 6, ResampleKind::WithoutReplacement, &mut rng), Err(Error::InvalidSize { .. })));
        assert!(draw_plan(5, 6, ResampleKind::WithReplacement, &mut rng).is_ok());
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let s = SeedSpec::new(42);
        let a = draw_plan(50, 25, ResampleKind::WithReplacement, &mut s.stream(3)).unwrap();
        let b = draw_plan(50, 25, ResampleKind::WithReplacement, &mut s.stream(3)).unwrap();
        let c = draw_plan(50, 25, ResampleKind::WithReplacement, &mut s.stream(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(s.tagged("BTMA"), s.tagged("Sub1"));
        assert_eq!(s.child(7), s.child(7));
    }

    #[test]
    fn fullrank_plan_has_full_rank() {
        let ds = random_dataset(30, 3, 5);
        let models = CandidateModelSet::nested_prefix(&[1, 2, 3], 30, 3).unwrap();
        let mut rng = SeedSpec::new(9).stream(0);
        let plan = draw_fullrank_plan(&ds, &models, 15, ResampleKind::WithReplacement, &mut rng, 100).unwrap();
        let xs = ds.x().select_rows(&plan.indices);
        // Independent rank oracle: Gram determinant via eigenvalues.
        let g = xs.gram();
        assert!(crate::linalg::min_eigenvalue(&g) > 1e-8);
    }

    #[test]
    fn too_small_m_exhausts_retries() {
        let ds = random_dataset(30, 2, 5);
        let models = CandidateModelSet::nested_prefix(&[1, 2], 30, 2).unwrap();
        let mut rng = SeedSpec::new(9).stream(0);
        let err = draw_fullrank_plan(&ds, &models, 1, ResampleKind::WithReplacement, &mut rng, 10).unwrap_err();
        assert_eq!(err, Error::RankRetryExhausted { retries: 10, replicate: 0 });
    }

    #[test]
    fn identity_block_subsample_full_rank_first_draw() {
        let ds = Dataset::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], Matrix::identity(5), None).unwrap();
        let models = CandidateModelSet::new(vec![(0..4).collect()], false, 5, 5).unwrap();
        let mut rng = SeedSpec::new(3).stream(0);
        let plan = draw_fullrank_plan(&ds, &models, 5, ResampleKind::WithoutReplacement, &mut rng, 1).unwrap();
        assert_eq!(plan.m, 5);
    }

    #[test]
    fn identity_plan_reproduces_ols() {
        let ds = random_dataset(20, 3, 7);
        let plan = ResamplePlan::identity(20);
        let star = resampled_fit(&ds, &[0, 1, 2], &plan).unwrap();
        let ols = crate::regression::fit_ols(&ds, &[0, 1, 2]).unwrap();
        for (a, b) in star.iter().zip(&ols.theta_hat) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn alternating_counts_match_weighted_normal_equations() {
        let ds = random_dataset(12, 3, 8);
        let indices: Vec<usize> = (0..12).step_by(2).flat_map(|i| [i, i]).collect();
        let plan = ResamplePlan::from_indices(12, ResampleKind::WithReplacement, indices);
        assert_eq!(plan.counts[..4], [2, 0, 2, 0]);
        let star = resampled_fit(&ds, &[0, 1, 2], &plan).unwrap();
        // Oracle: (X' W X) theta = X' W y with W = diag(pi).
        let x = ds.x();
        let mut xtwx = Matrix::zeros(3, 3);
        let mut xtwy = vec![0.0; 3];
        for i in 0..12 {
            let w = plan.counts[i] as f64;
            for a in 0..3 {
                xtwy[a] += w * x[(i, a)] * ds.y()[i];
                for b in 0..3 {
                    xtwx[(a, b)] += w * x[(i, a)] * x[(i, b)];
                }
            }
        }
        let l = crate::linalg::cholesky(&xtwx).unwrap();
        let oracle = crate::linalg::cholesky_solve_prefix(&l, 3, &xtwy);
        let weighted = weighted_resampled_fit(&ds, &[0, 1, 2], &plan).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(star[i], oracle[i], epsilon = 1e-10);
            assert_abs_diff_eq!(weighted[i], oracle[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn saturated_model_on_duplicates_interpolates() {
        let ds = random_dataset(8, 3, 10);
        let indices = vec![1, 1, 4, 6, 6, 6];
        let plan = ResamplePlan::from_indices(8, ResampleKind::WithReplacement, indices.clone());
        let theta = resampled_fit(&ds, &[0, 1, 2], &plan).unwrap();
        for &i in &indices {
            let fitted: f64 = (0..3).map(|j| ds.x()[(i, j)] * theta[j]).sum();
            assert_abs_diff_eq!(fitted, ds.y()[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn chain_fitter_matches_per_model_fits() {
        let ds = random_dataset(25, 4, 12);
        let models = CandidateModelSet::new(vec![vec![3], vec![3, 0], vec![0, 1, 3], vec![2, 0, 1, 3]], true, 25, 4).unwrap();
        let fitter = ReplicateFitter::new(&ds, &models);
        let plan = draw_fullrank_plan(&ds, &models, 15, ResampleKind::WithReplacement, &mut SeedSpec::new(4).stream(0), 100).unwrap();
        let chained = fitter.fit(&plan).unwrap();
        for (q, cols) in models.models().iter().enumerate() {
            let direct = resampled_fit(&ds, cols, &plan).unwrap();
            for (a, b) in chained[q].iter().zip(&direct) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }
}
