use super::{outcome, ClientUpdate, DefenseContext, EvalView, AggregationOutcome};
use crate::error::{Error, Result};
use crate::similarity::distance_of;

/// Krum score of every point: the sum of its `n − m − 1` smallest distances
/// to the other points.
pub fn krum_scores(points: &[&[f64]], m: usize) -> Result<Vec<f64>> {
    let n = points.len();
    if n < m + 2 {
        return Err(Error::TooFewClients {
            needed: m + 2,
            actual: n,
        });
    }
    let k = n - m - 1;
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance_of(points[i], points[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
            row.sort_by(|a, b| a.total_cmp(b));
            row[..k].iter().sum()
        })
        .collect())
}

pub(crate) fn krum_on(
    updates: &[ClientUpdate],
    views: &EvalView<'_>,
    m: usize,
) -> Result<AggregationOutcome> {
    let scores = krum_scores(&views.clients, m)?;
    let best = (0..updates.len())
        .min_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then(updates[a].client_id.cmp(&updates[b].client_id))
        })
        .expect("non-empty round");
    let accepted: Vec<bool> = (0..updates.len()).map(|i| i == best).collect();
    let weights: Vec<f64> = accepted.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    let mut out = outcome(
        updates,
        updates[best].model.clone(),
        &weights,
        &accepted,
        &scores,
    );
    out.selected = Some(updates[best].client_id);
    Ok(out)
}

/// Selects the single update with the smallest Krum score.
pub fn krum(updates: &[ClientUpdate], ctx: &DefenseContext) -> Result<AggregationOutcome> {
    super::Defense::new(super::DefenseKind::Krum).aggregate(updates, ctx)
}

#[cfg(test)]
mod tests {
    use super::super::test_util::update;
    use super::*;
    use proptest::prelude::*;

    fn ctx(m: usize) -> DefenseContext {
        DefenseContext {
            m_assumed: Some(m),
            ..Default::default()
        }
    }

    #[test]
    fn identical_updates_pick_lowest_id() {
        let u = vec![update(7, &[1.0, 1.0]), update(2, &[1.0, 1.0]), update(5, &[1.0, 1.0])];
        let o = krum(&u, &ctx(0)).unwrap();
        assert_eq!(o.selected, Some(2));
    }

    #[test]
    fn three_point_instance() {
        let u = vec![update(0, &[0.0, 0.0]), update(1, &[0.0, 0.0]), update(2, &[10.0, 10.0])];
        let o = krum(&u, &ctx(0)).unwrap();
        // brute force: each score sums the two distances to the other points
        let d = 200f64.sqrt();
        assert!((o.scores[&0] - d).abs() < 1e-12);
        assert!((o.scores[&1] - d).abs() < 1e-12);
        assert!((o.scores[&2] - 2.0 * d).abs() < 1e-12);
        assert_eq!(o.selected, Some(0));
        assert_eq!(o.global_model.values(), &[0.0, 0.0]);
        assert_eq!(o.weight(0), 1.0);
        assert_eq!(o.weight(1), 0.0);
    }

    #[test]
    fn too_few_clients() {
        let u = vec![update(0, &[0.0]), update(1, &[1.0])];
        assert_eq!(
            krum(&u, &ctx(1)).unwrap_err(),
            Error::TooFewClients { needed: 3, actual: 2 }
        );
    }

    proptest! {
        #[test]
        fn selection_is_permutation_and_relabel_invariant(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 4..9),
            rot in 0usize..9,
            shift in 0u32..1000,
        ) {
            let u: Vec<_> = pts.iter().enumerate().map(|(i, p)| update(i as u32, p)).collect();
            let base = krum(&u, &ctx(1)).unwrap();
            let mut permuted = u.clone();
            permuted.rotate_left(rot % u.len());
            let again = krum(&permuted, &ctx(1)).unwrap();
            prop_assert_eq!(base.global_model.values(), again.global_model.values());

            let shifted: Vec<_> = u.iter().map(|x| ClientUpdate { client_id: x.client_id + shift, ..x.clone() }).collect();
            let s = krum(&shifted, &ctx(1)).unwrap();
            prop_assert_eq!(base.global_model.values(), s.global_model.values());
            prop_assert_eq!(s.selected, base.selected.map(|id| id + shift));
        }
    }
}
