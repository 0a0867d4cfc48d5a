use super::{outcome, weighted_mean, AggregationOutcome, ClientUpdate, DefenseContext, EvalView};
use crate::error::{Error, Result};
use crate::similarity::cosine_gap_of;

/// Index of the submission with the lowest mean cosine to all others.
fn baseline_index(points: &[&[f64]]) -> usize {
    let n = points.len();
    let mut gap = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let g = cosine_gap_of(points[i], points[j]).unwrap_or(1.0);
            gap[i] += g;
            gap[j] += g;
        }
    }
    (0..n)
        .max_by(|&a, &b| gap[a].total_cmp(&gap[b]).then(b.cmp(&a)))
        .unwrap_or(0)
}

pub(crate) fn shieldfl_on(
    updates: &[ClientUpdate],
    views: &EvalView<'_>,
) -> Result<AggregationOutcome> {
    let n = updates.len();
    if n < 2 {
        return Err(Error::TooFewClients { needed: 2, actual: n });
    }
    let base = views.clients[baseline_index(&views.clients)];
    let confidence: Vec<f64> = views
        .clients
        .iter()
        .map(|v| cosine_gap_of(v, base).unwrap_or(1.0))
        .collect();
    let total: f64 = confidence.iter().sum();
    let weights: Vec<f64> = if total > 0.0 {
        confidence.iter().map(|c| c / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    let accepted: Vec<bool> = weights.iter().map(|&w| w > 0.0).collect();
    let global = weighted_mean(updates, &weights)?;
    Ok(outcome(updates, global, &weights, &accepted, &confidence))
}

/// Two-pass cosine weighting: pick the least aligned submission as the
/// baseline, then weight every submission by its cosine distance to it.
pub fn shieldfl(updates: &[ClientUpdate], ctx: &DefenseContext) -> Result<AggregationOutcome> {
    super::Defense::new(super::DefenseKind::ShieldFl).aggregate(updates, ctx)
}

#[cfg(test)]
mod tests {
    use super::super::test_util::{update, weight_sum};
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn opposite_update_becomes_baseline() {
        let mut u: Vec<_> = (0..4)
            .map(|i| update(i, &[1.0 + 0.01 * i as f64, 2.0, 3.0]))
            .collect();
        u.push(update(4, &[-1.0, -2.0, -3.0]));
        let o = shieldfl(&u, &DefenseContext::default()).unwrap();
        assert_eq!(o.weight(4), 0.0);
        for i in 0..4 {
            assert!(o.weight(i) > 0.2);
        }
    }

    #[test]
    fn identical_round_has_equal_weights() {
        let u: Vec<_> = (0..5).map(|i| update(i, &[0.5, -1.0])).collect();
        let o = shieldfl(&u, &DefenseContext::default()).unwrap();
        for i in 0..5 {
            assert!((o.weight(i) - 0.2).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 2..8)) {
            let u: Vec<_> = pts.iter().enumerate().map(|(i, p)| update(i as u32, p)).collect();
            if let Ok(o) = shieldfl(&u, &DefenseContext::default()) {
                prop_assert!((weight_sum(&o) - 1.0).abs() < 1e-12);
            }
        }
    }
}
