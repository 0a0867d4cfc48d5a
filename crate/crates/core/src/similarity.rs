//! L2 norm, Euclidean distance and cosine similarity, their restriction to a
//! random parameter subset, and the model-difference measures.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelVector, ScalarVector};
use crate::numeric::pairwise_sum_by;

/// Absolute tolerance for equality-type similarity constraints.
pub const SIMILARITY_TOL: f64 = 1e-9;

/// Slack allowed on the cosine range.
const COSINE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `L(a) / L(b)`.
    L2Ratio,
    /// `E(a, b)`.
    Euclidean,
    /// `C(a, b)`.
    Cosine,
    /// `C(a, b) · L(b) / L(a)`, the norm-rescaled trust FLTrust assigns to `a`
    /// against reference `b`.
    CosineTimesNormRatio,
}

/// Operational acceptance band `[lower, upper]` on a metric value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRequirement {
    pub metric: Metric,
    pub lower: f64,
    pub upper: f64,
}

impl SimilarityRequirement {
    pub fn new(metric: Metric, lower: f64, upper: f64) -> Result<Self> {
        if !(lower <= upper) {
            return Err(Error::BadRequirement(format!("lower {lower} > upper {upper}")));
        }
        if metric == Metric::Cosine && (lower < -1.0 || upper > 1.0) {
            return Err(Error::BadRequirement("cosine bounds outside [-1, 1]".into()));
        }
        Ok(Self { metric, lower, upper })
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower - SIMILARITY_TOL && value <= self.upper + SIMILARITY_TOL
    }
}

/// Strictly increasing parameter indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSubset {
    indices: Vec<usize>,
}

impl IndexSubset {
    pub fn new(indices: Vec<usize>, dim: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::BadSubset("empty subset".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadSubset("indices must be strictly increasing".into()));
        }
        if *indices.last().expect("non-empty") >= dim {
            return Err(Error::BadSubset(format!("index out of range for J = {dim}")));
        }
        Ok(Self { indices })
    }

    pub fn full(dim: usize) -> Self {
        Self {
            indices: (0..dim).collect(),
        }
    }

    /// A uniformly random subset of `size` indices out of `dim`.
    pub fn random<R: Rng + ?Sized>(dim: usize, size: usize, rng: &mut R) -> Result<Self> {
        if size == 0 || size > dim {
            return Err(Error::BadSubset(format!("size {size} for J = {dim}")));
        }
        let mut indices = rand::seq::index::sample(rng, dim, size).into_vec();
        indices.sort_unstable();
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_full(&self, dim: usize) -> bool {
        self.indices.len() == dim
    }

    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&j| values[j]).collect()
    }
}

// Slice kernels. Callers have already checked dimensions.

pub(crate) fn norm_of(a: &[f64]) -> f64 {
    pairwise_sum_by(a.len(), |j| a[j] * a[j]).sqrt()
}

pub(crate) fn dot_of(a: &[f64], b: &[f64]) -> f64 {
    pairwise_sum_by(a.len(), |j| a[j] * b[j])
}

pub(crate) fn distance_of(a: &[f64], b: &[f64]) -> f64 {
    pairwise_sum_by(a.len(), |j| {
        let d = a[j] - b[j];
        d * d
    })
    .sqrt()
}

pub(crate) fn cosine_of(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = norm_of(a);
    let nb = norm_of(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot_of(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 − C(a, b)` as `½‖â − b̂‖²`, exact for nearly parallel vectors.
pub(crate) fn cosine_gap_of(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = norm_of(a);
    let nb = norm_of(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let half = pairwise_sum_by(a.len(), |j| {
        let d = a[j] / na - b[j] / nb;
        d * d
    }) / 2.0;
    Ok(half.clamp(0.0, 2.0))
}

pub(crate) fn metric_of(metric: Metric, a: &[f64], b: &[f64]) -> Result<f64> {
    match metric {
        Metric::L2Ratio => {
            let nb = norm_of(b);
            if nb == 0.0 {
                return Err(Error::ZeroVector);
            }
            Ok(norm_of(a) / nb)
        }
        Metric::Euclidean => Ok(distance_of(a, b)),
        Metric::Cosine => cosine_of(a, b),
        Metric::CosineTimesNormRatio => {
            let na = norm_of(a);
            if na == 0.0 || norm_of(b) == 0.0 {
                return Err(Error::ZeroVector);
            }
            // C(a,b)·L(b)/L(a) = <a,b> / L(a)^2
            Ok(dot_of(a, b) / (na * na))
        }
    }
}

fn same_dim(a: &ModelVector, b: &ModelVector) -> Result<()> {
    a.check_dim(b)
}

pub fn l2_norm(w: &ModelVector) -> f64 {
    norm_of(w.values())
}

pub fn euclidean_distance(a: &ModelVector, b: &ModelVector) -> Result<f64> {
    same_dim(a, b)?;
    Ok(distance_of(a.values(), b.values()))
}

/// Cosine similarity, clamped to `[-1, 1]`. Zero operands are an error; the
/// calling defense decides what a zero submission means.
pub fn cosine_similarity(a: &ModelVector, b: &ModelVector) -> Result<f64> {
    same_dim(a, b)?;
    let c = cosine_of(a.values(), b.values())?;
    debug_assert!(c.abs() <= 1.0 + COSINE_SLACK);
    Ok(c)
}

pub fn similarity(metric: Metric, a: &ModelVector, b: &ModelVector) -> Result<f64> {
    same_dim(a, b)?;
    metric_of(metric, a.values(), b.values())
}

/// `metric` evaluated on the coordinates in `s` only.
pub fn subset_similarity(
    a: &ModelVector,
    b: &ModelVector,
    s: &IndexSubset,
    metric: Metric,
) -> Result<f64> {
    same_dim(a, b)?;
    if *s.indices().last().expect("non-empty subset") >= a.dim() {
        return Err(Error::BadSubset("subset exceeds model dimension".into()));
    }
    if s.is_full(a.dim()) {
        return metric_of(metric, a.values(), b.values());
    }
    metric_of(metric, &s.project(a.values()), &s.project(b.values()))
}

/// `Σ_j |a_j − b_j|`.
pub fn model_difference(a: &ModelVector, b: &ModelVector) -> Result<f64> {
    same_dim(a, b)?;
    let (x, y) = (a.values(), b.values());
    Ok(pairwise_sum_by(x.len(), |j| (x[j] - y[j]).abs()))
}

/// `Σ_j α_j`, the scalar-only stand-in for the parameter difference.
pub fn difference_proxy(a: &ScalarVector) -> f64 {
    let v = a.values();
    pairwise_sum_by(v.len(), |j| v[j])
}

/// `f(α) = s̄(α ⊗ w, w) · Σ α` with `s̄` the metric the target defense checks.
pub fn objective_f(w: &ModelVector, a: &ScalarVector, metric: Metric) -> Result<f64> {
    let poisoned = crate::model::apply_scalars(w, a)?;
    let s = metric_of(metric, poisoned.values(), w.values())?;
    Ok(s * difference_proxy(a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mv(v: &[f64]) -> ModelVector {
        ModelVector::from_values(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_gap_matches_and_resolves_near_parallel() {
        let a = [1.0, 2.0, -0.5];
        let b = [0.3, -1.0, 2.0];
        let direct = 1.0 - cosine_of(&a, &b).unwrap();
        assert!((cosine_gap_of(&a, &b).unwrap() - direct).abs() < 1e-12);
        let big = [1e9, 1e9];
        let nudged = [1e9, 1e9 + 1.0];
        // 1 − dot/(|a||b|) rounds to zero here
        assert_eq!(1.0 - cosine_of(&big, &nudged).unwrap(), 0.0);
        let g = cosine_gap_of(&big, &nudged).unwrap();
        assert!((g - 1.25e-19).abs() < 1e-21, "{g}");
    }

    #[test]
    fn norm_examples() {
        assert_eq!(l2_norm(&mv(&[3.0, 4.0])), 5.0);
        assert_eq!(l2_norm(&mv(&[0.0, 0.0, 0.0])), 0.0);
        assert_eq!(l2_norm(&mv(&[1.0, 1.0, 1.0, 1.0])), 2.0);
    }

    #[test]
    fn distance_examples() {
        let a = mv(&[1.5, -2.0]);
        assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&mv(&[0.0, 0.0]), &mv(&[3.0, 4.0])).unwrap(), 5.0);
        assert!(euclidean_distance(&mv(&[0.0]), &mv(&[3.0, 4.0])).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&mv(&[1.0, 0.0]), &mv(&[0.0, 1.0])).unwrap(), 0.0);
        let w = mv(&[0.3, -1.2, 4.0]);
        let kw = w.scaled(7.5).unwrap();
        assert!((cosine_similarity(&w, &kw).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&mv(&[1.0, 2.0]), &mv(&[2.0, 1.0])).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(
            cosine_similarity(&mv(&[0.0, 0.0]), &mv(&[1.0, 1.0])),
            Err(Error::ZeroVector)
        );
    }

    #[test]
    fn subset_restriction() {
        let a = mv(&[1.0, 2.0, 3.0, -4.0]);
        let b = mv(&[0.5, 2.5, -1.0, 4.0]);
        for metric in [Metric::L2Ratio, Metric::Euclidean, Metric::Cosine, Metric::CosineTimesNormRatio] {
            let full = subset_similarity(&a, &b, &IndexSubset::full(4), metric).unwrap();
            assert_eq!(full.to_bits(), similarity(metric, &a, &b).unwrap().to_bits());
        }
        let single = IndexSubset::new(vec![2], 4).unwrap();
        assert!((subset_similarity(&a, &a, &single, Metric::Cosine).unwrap() - 1.0).abs() < 1e-15);
        let zero_b = mv(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            subset_similarity(&a, &zero_b, &IndexSubset::new(vec![1, 2], 4).unwrap(), Metric::Cosine),
            Err(Error::ZeroVector)
        );
    }

    #[test]
    fn subset_validation() {
        assert!(IndexSubset::new(vec![], 3).is_err());
        assert!(IndexSubset::new(vec![1, 1], 3).is_err());
        assert!(IndexSubset::new(vec![0, 3], 3).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = IndexSubset::random(100, 50, &mut rng).unwrap();
        assert_eq!(s.len(), 50);
        assert!(s.indices().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn difference_examples() {
        let a = mv(&[1.0, 2.0]);
        assert_eq!(model_difference(&a, &a).unwrap(), 0.0);
        assert_eq!(model_difference(&a, &mv(&[2.0, 2.0])).unwrap(), 1.0);
        assert_eq!(difference_proxy(&ScalarVector::ones(7)), 7.0);
        assert_eq!(difference_proxy(&ScalarVector::new(vec![2.0, 0.5]).unwrap()), 2.5);
    }

    #[test]
    fn objective_examples() {
        let w = mv(&[1.0, 1.0]);
        let f = objective_f(&w, &ScalarVector::ones(2), Metric::CosineTimesNormRatio).unwrap();
        assert!((f - 2.0).abs() < 1e-15);

        let w = mv(&[1.0, 2.0]);
        let a = ScalarVector::new(vec![2.0, 1.0]).unwrap();
        let f = objective_f(&w, &a, Metric::CosineTimesNormRatio).unwrap();
        assert!((f - 2.25).abs() < 1e-15);

        // relabeling parameters together with their scalars
        let w2 = mv(&[2.0, 1.0]);
        let a2 = ScalarVector::new(vec![1.0, 2.0]).unwrap();
        let f2 = objective_f(&w2, &a2, Metric::CosineTimesNormRatio).unwrap();
        assert!((f - f2).abs() < 1e-15);
    }

    #[test]
    fn benign_objective_is_similarity_times_dim() {
        let w = mv(&[0.4, -2.0, 1.0, 3.0, 0.1]);
        for metric in [Metric::L2Ratio, Metric::Euclidean, Metric::Cosine, Metric::CosineTimesNormRatio] {
            let f = objective_f(&w, &ScalarVector::ones(5), metric).unwrap();
            let s = similarity(metric, &w, &w).unwrap();
            assert!((f - 5.0 * s).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_model_peaks_at_one() {
        // f(α) = (α + 1)^2 / (α^2 + 1) for w = (1, 1), second scalar fixed at 1
        let w = mv(&[1.0, 1.0]);
        let f = |x: f64| {
            objective_f(&w, &ScalarVector::new(vec![x, 1.0]).unwrap(), Metric::CosineTimesNormRatio).unwrap()
        };
        let (mut best_x, mut best_f) = (0.0, f64::MIN);
        for i in 1..=20_000 {
            let x = i as f64 * 0.0005;
            let v = f(x);
            if v > best_f {
                best_f = v;
                best_x = x;
            }
        }
        assert!((best_x - 1.0).abs() <= 0.0005);
        assert!((best_f - 2.0).abs() < 1e-9);
    }

    #[test]
    fn requirement_bounds() {
        assert!(SimilarityRequirement::new(Metric::Cosine, 0.5, 0.2).is_err());
        assert!(SimilarityRequirement::new(Metric::Cosine, -1.5, 0.2).is_err());
        let r = SimilarityRequirement::new(Metric::L2Ratio, 0.8, 1.0).unwrap();
        assert!(r.contains(1.0 + 1e-10));
        assert!(!r.contains(1.0 + 1e-6));
    }

    fn vecs(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, n)
    }

    proptest! {
        #[test]
        fn distance_is_absolutely_homogeneous(a in vecs(12), b in vecs(12), k in -50.0f64..50.0) {
            let (a, b) = (mv(&a), mv(&b));
            let lhs = euclidean_distance(&a.scaled(k).unwrap(), &b.scaled(k).unwrap()).unwrap();
            let rhs = k.abs() * euclidean_distance(&a, &b).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
        }

        #[test]
        fn norm_is_absolutely_homogeneous(a in vecs(20), k in -50.0f64..50.0) {
            let a = mv(&a);
            let lhs = l2_norm(&a.scaled(k).unwrap());
            let rhs = k.abs() * l2_norm(&a);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
        }

        #[test]
        fn cosine_is_positive_scale_invariant(a in vecs(20), k in 1e-3f64..1e3) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-6));
            let a = mv(&a);
            let c = cosine_similarity(&a.scaled(k).unwrap(), &a).unwrap();
            prop_assert!((c - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn difference_matches_scalar_form(
            w in prop::collection::vec(-10.0f64..10.0, 1..40),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..w.len()).map(|_| rng.random_range(0.01..3.0)).collect();
            let wm = mv(&w);
            let poisoned = crate::model::apply_scalars(&wm, &ScalarVector::new(a.clone()).unwrap()).unwrap();
            let lhs = model_difference(&poisoned, &wm).unwrap();
            let rhs: f64 = w.iter().zip(&a).map(|(x, s)| x.abs() * (s - 1.0).abs()).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
        }

        #[test]
        fn proxy_is_monotone(a in prop::collection::vec(0.01f64..5.0, 1..20), idx in 0usize..20, bump in 0.0f64..3.0) {
            let idx = idx % a.len();
            let base = difference_proxy(&ScalarVector::new(a.clone()).unwrap());
            let mut b = a.clone();
            b[idx] += bump;
            prop_assert!(difference_proxy(&ScalarVector::new(b).unwrap()) >= base);
        }
    }
}
