use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{outcome, AggregationOutcome, ClientUpdate, DefenseContext, DefenseParams, EvalView};
use crate::error::{Error, Result};
use crate::numeric::median;
use crate::similarity::{cosine_gap_of, norm_of};

fn cosine_distances(points: &[&[f64]]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            // a zero vector has no direction; treat it as orthogonal
            let g = cosine_gap_of(points[i], points[j]).unwrap_or(1.0);
            d[i][j] = g;
            d[j][i] = g;
        }
    }
    d
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Single-linkage components of the graph whose edges are at most `tau`.
fn components(dist: &[Vec<f64>], tau: f64) -> Vec<usize> {
    let n = dist.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if dist[i][j] <= tau {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

/// Admission mask from a symmetric matrix of cosine distances.
///
/// The link threshold is `max(slack · τ*, min_link)`, where τ* is the
/// smallest distance at which some component holds `⌊n/2⌋ + 1` points.
/// The largest component at that threshold is admitted; ties go to the
/// component holding the lowest index.
pub fn flame_admission_from_distances(dist: &[Vec<f64>], params: &DefenseParams) -> Vec<bool> {
    let n = dist.len();
    let floor = n / 2 + 1;
    let mut edges: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push(dist[i][j]);
        }
    }
    edges.sort_by(|a, b| a.total_cmp(b));
    edges.dedup();

    let largest = |tau: f64| {
        let comp = components(dist, tau);
        let mut size = vec![0usize; n];
        for &c in &comp {
            size[c] += 1;
        }
        // roots are the lowest index of their component
        let best = (0..n).max_by(|&a, &b| size[a].cmp(&size[b]).then(b.cmp(&a))).unwrap_or(0);
        (comp, best, size[best])
    };

    let tau_star = if floor <= 1 {
        Some(0.0)
    } else {
        let mut lo = 0usize;
        let mut hi = edges.len();
        // smallest edge index whose threshold forms a majority component
        while lo < hi {
            let mid = (lo + hi) / 2;
            if largest(edges[mid]).2 >= floor {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        edges.get(lo).copied()
    };
    let Some(tau_star) = tau_star else {
        return vec![true; n];
    };
    let tau = (params.flame_link_slack * tau_star).max(params.flame_min_link);
    let (comp, best, size) = largest(tau);
    if size < floor {
        return vec![true; n];
    }
    comp.iter().map(|&c| c == best).collect()
}

/// Which of `points` FLAME's clustering admits.
pub fn flame_admission(points: &[&[f64]], params: &DefenseParams) -> Vec<bool> {
    flame_admission_from_distances(&cosine_distances(points), params)
}

pub(crate) fn flame_on(
    updates: &[ClientUpdate],
    views: &EvalView<'_>,
    params: &DefenseParams,
    seed: u64,
) -> Result<AggregationOutcome> {
    let n = updates.len();
    if n < 3 {
        return Err(Error::TooFewClients { needed: 3, actual: n });
    }
    if !(params.flame_noise >= 0.0) {
        return Err(Error::Config {
            path: "flame_noise".into(),
            message: format!("must be non-negative, got {}", params.flame_noise),
        });
    }
    let accepted = flame_admission(&views.clients, params);
    let norms: Vec<f64> = views.clients.iter().map(|v| norm_of(v)).collect();
    let admitted_norms: Vec<f64> = norms
        .iter()
        .zip(&accepted)
        .filter(|(_, &a)| a)
        .map(|(&x, _)| x)
        .collect();
    let clip = median(&admitted_norms);

    let dim = updates[0].model.dim();
    let count = admitted_norms.len() as f64;
    let mut acc = vec![0.0; dim];
    for ((u, &a), &norm) in updates.iter().zip(&accepted).zip(&norms) {
        if !a {
            continue;
        }
        let factor = if norm > clip { clip / norm } else { 1.0 };
        let c = factor / count;
        for (s, x) in acc.iter_mut().zip(u.model.values()) {
            *s += c * x;
        }
    }
    let sigma = params.flame_noise * clip;
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config {
            path: "flame_noise".into(),
            message: e.to_string(),
        })?;
        for s in acc.iter_mut() {
            *s += noise.sample(&mut rng);
        }
    }
    let global = updates[0].model.with_values(acc)?;
    let weights: Vec<f64> = accepted
        .iter()
        .map(|&a| if a { 1.0 / count } else { 0.0 })
        .collect();
    Ok(outcome(updates, global, &weights, &accepted, &norms))
}

/// Cosine clustering admission, median-norm clipping and Gaussian noise.
pub fn flame(updates: &[ClientUpdate], ctx: &DefenseContext) -> Result<AggregationOutcome> {
    super::Defense::new(super::DefenseKind::Flame).aggregate(updates, ctx)
}

#[cfg(test)]
mod tests {
    use super::super::test_util::update;
    use super::super::{Defense, DefenseKind};
    use super::*;
    use rand::Rng;

    fn quiet() -> Defense {
        let mut d = Defense::new(DefenseKind::Flame);
        d.params.flame_noise = 0.0;
        d
    }

    #[test]
    fn identical_models_without_noise() {
        let u: Vec<_> = (0..5).map(|i| update(i, &[1.0, 2.0, -1.0])).collect();
        let o = quiet().aggregate(&u, &DefenseContext::default()).unwrap();
        for (g, e) in o.global_model.values().iter().zip([1.0, 2.0, -1.0]) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn opposite_update_is_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = [1.0, 2.0, 3.0, 4.0];
        let mut u: Vec<_> = (0..6)
            .map(|i| {
                let v: Vec<f64> = base.iter().map(|x| x + rng.random_range(-0.01..0.01)).collect();
                update(i, &v)
            })
            .collect();
        u.push(update(6, &base.map(|x| -x)));
        let o = quiet().aggregate(&u, &DefenseContext::default()).unwrap();
        assert!(!o.is_accepted(6));
        assert!((0..6).all(|i| o.is_accepted(i)));
    }

    #[test]
    fn large_norm_is_clipped_to_median() {
        let u = vec![
            update(0, &[1.0, 0.0]),
            update(1, &[1.0, 0.0]),
            update(2, &[2.0, 0.0]),
        ];
        let o = quiet().aggregate(&u, &DefenseContext::default()).unwrap();
        // median norm is 1, so the third model contributes (1, 0)
        assert!((o.global_model.values()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_majority_admits_all() {
        let u = vec![
            update(0, &[1.0, 0.0, 0.0, 0.0]),
            update(1, &[0.0, 1.0, 0.0, 0.0]),
            update(2, &[0.0, 0.0, 1.0, 0.0]),
            update(3, &[0.0, 0.0, 0.0, 1.0]),
        ];
        let mut d = quiet();
        d.params.flame_link_slack = 0.1;
        let o = d.aggregate(&u, &DefenseContext::default()).unwrap();
        assert!((0..4).all(|i| o.is_accepted(i)));
    }

    #[test]
    fn noise_is_seeded() {
        let u: Vec<_> = (0..4).map(|i| update(i, &[1.0, 1.0])).collect();
        let ctx = DefenseContext {
            rng_seed: 9,
            ..Default::default()
        };
        let a = flame(&u, &ctx).unwrap();
        let b = flame(&u, &ctx).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.global_model.values(), &[1.0, 1.0]);
    }

    #[test]
    fn too_few_clients() {
        let u = vec![update(0, &[1.0]), update(1, &[1.0])];
        assert!(matches!(
            flame(&u, &DefenseContext::default()),
            Err(Error::TooFewClients { .. })
        ));
    }
}
