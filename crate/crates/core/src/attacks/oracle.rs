use crate::error::{Error, Result};
use crate::model::{apply_scalars, expand_group_scalars, GroupPartition, ModelVector};
use crate::similarity::{objective_f, Metric};

const MIN_POINTS: usize = 1000;

/// Brute-force maximum of `f` over `points` evenly spaced samples of
/// `(lo, hi]`, skipping points where `feasible` fails.
pub fn grid_max_1d<F, C>(f: F, feasible: C, lo: f64, hi: f64, points: usize) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
    C: Fn(f64) -> bool,
{
    if points < MIN_POINTS {
        return Err(Error::Config {
            path: "points".into(),
            message: format!("need at least {MIN_POINTS} grid points, got {points}"),
        });
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config {
            path: "grid".into(),
            message: format!("empty grid range ({lo}, {hi}]"),
        });
    }
    let step = (hi - lo) / points as f64;
    let mut best: Option<(f64, f64)> = None;
    for i in 1..=points {
        let x = lo + step * i as f64;
        if !feasible(x) {
            continue;
        }
        let v = f(x);
        if v.is_finite() && best.is_none_or(|(_, b)| v > b) {
            best = Some((x, v));
        }
    }
    best.ok_or(Error::NoFeasiblePoint)
}

/// Grid search over one group's scalar with the other groups held at
/// `fixed`, scoring the poisoned model itself with [`objective_f`].
#[allow(clippy::too_many_arguments)]
pub fn oracle_grid_max<C: Fn(&ModelVector) -> bool>(
    w: &ModelVector,
    p: &GroupPartition,
    fixed: &[f64],
    free_group: usize,
    metric: Metric,
    constraint: C,
    (lo, hi): (f64, f64),
    points: usize,
) -> Result<(f64, f64)> {
    if !(lo >= 0.0) {
        return Err(Error::Config {
            path: "grid".into(),
            message: "scalars are positive; the grid must start at 0 or above".into(),
        });
    }
    if free_group >= fixed.len() {
        return Err(Error::BadPartition(format!("free group {free_group} out of range")));
    }
    let eval = |x: f64| -> Option<f64> {
        let mut alphas = fixed.to_vec();
        alphas[free_group] = x;
        let a = expand_group_scalars(&alphas, p).ok()?;
        let poisoned = apply_scalars(w, &a).ok()?;
        if !constraint(&poisoned) {
            return None;
        }
        objective_f(w, &a, metric).ok()
    };
    // infeasible points score NaN and are skipped
    grid_max_1d(|x| eval(x).unwrap_or(f64::NAN), |_| true, lo, hi, points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_peak() {
        let (x, v) = grid_max_1d(|x| -(x - 2.0).powi(2), |_| true, 0.0, 4.0, 100_000).unwrap();
        assert!((x - 2.0).abs() <= 4e-5);
        assert!(v <= 0.0);
    }

    #[test]
    fn constrained_peak_sits_at_the_boundary() {
        let (x, _) = grid_max_1d(|x| -(x - 2.0).powi(2), |x| x <= 1.0, 0.0, 4.0, 10_000).unwrap();
        assert!((x - 1.0).abs() <= 4e-4 && x <= 1.0);
    }

    #[test]
    fn rejects_small_grids_and_empty_feasible_sets() {
        assert!(grid_max_1d(|x| x, |_| true, 0.0, 1.0, 999).is_err());
        assert_eq!(
            grid_max_1d(|x| x, |_| false, 0.0, 1.0, 1000),
            Err(Error::NoFeasiblePoint)
        );
    }

    #[test]
    fn fltrust_example_via_vectors() {
        let w = ModelVector::from_values(vec![1.0, 2.0]).unwrap();
        let p = GroupPartition::new(vec![0, 1], 2).unwrap();
        let (x, v) = oracle_grid_max(
            &w,
            &p,
            &[1.0, 1.0],
            0,
            Metric::CosineTimesNormRatio,
            |_| true,
            (0.0, 10.0),
            100_000,
        )
        .unwrap();
        assert!((x - 2.0).abs() <= 1e-3);
        assert!((v - 2.25).abs() < 1e-6);
    }
}
