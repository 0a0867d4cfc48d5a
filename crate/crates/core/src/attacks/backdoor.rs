use super::{ConstraintCheck, PoisonResult};
use crate::error::Result;
use crate::model::{ModelVector, ScalarVector};
use crate::similarity::{metric_of, IndexSubset, SimilarityRequirement};

const LOG_GRID: usize = 241;
const LOG_SPAN: f64 = 3.0;
const REFINE_STEPS: usize = 40;

/// Similarity band the backdoored model must land in, against `reference`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackdoorTarget {
    pub requirement: SimilarityRequirement,
    pub reference: ModelVector,
}

fn rescaled(w: &[f64], frozen: &[bool], k: f64) -> Vec<f64> {
    w.iter()
        .zip(frozen)
        .map(|(&x, &f)| if f { x } else { k * x })
        .collect()
}

/// Freezes the `critical` parameters and scales the rest by one shared
/// scalar `k`, chosen as close to 1 as the requirement allows.
pub fn faker_backdoor(
    w_backdoored: &ModelVector,
    critical: &IndexSubset,
    target: &BackdoorTarget,
) -> Result<PoisonResult> {
    w_backdoored.check_dim(&target.reference)?;
    let dim = w_backdoored.dim();
    let mut frozen = vec![false; dim];
    for &j in critical.indices() {
        if j < dim {
            frozen[j] = true;
        }
    }
    let w = w_backdoored.values();
    let r = target.reference.values();
    let req = target.requirement;
    let value = |k: f64| metric_of(req.metric, &rescaled(w, &frozen, k), r).ok();
    let feasible = |k: f64| value(k).is_some_and(|v| req.contains(v));

    let mut iterations = 1;
    let adjustable = frozen.iter().any(|f| !f);
    let k = if feasible(1.0) || !adjustable {
        1.0
    } else {
        // nearest feasible point to 1 on a log grid, refined toward 1
        let grid: Vec<f64> = (0..LOG_GRID)
            .map(|i| 10f64.powf(-LOG_SPAN + 2.0 * LOG_SPAN * i as f64 / (LOG_GRID - 1) as f64))
            .collect();
        iterations += LOG_GRID;
        match grid
            .iter()
            .copied()
            .filter(|&k| feasible(k))
            .min_by(|a, b| a.ln().abs().total_cmp(&b.ln().abs()))
        {
            None => 1.0,
            Some(kf) => {
                let (mut ok, mut bad) = (kf, 1.0);
                for _ in 0..REFINE_STEPS {
                    let mid = (ok * bad).sqrt();
                    iterations += 1;
                    if feasible(mid) {
                        ok = mid;
                    } else {
                        bad = mid;
                    }
                }
                ok
            }
        }
    };

    let poisoned = w_backdoored.with_values(rescaled(w, &frozen, k))?;
    let scalars = ScalarVector::new(frozen.iter().map(|&f| if f { 1.0 } else { k }).collect())?;
    let v = metric_of(req.metric, poisoned.values(), r).unwrap_or(f64::NAN);
    let untouched = critical
        .indices()
        .iter()
        .all(|&j| poisoned.values()[j].to_bits() == w[j].to_bits());
    let checks = vec![
        ConstraintCheck::new("requirement", v, req.upper, req.contains(v)),
        ConstraintCheck::new("critical_frozen", k, 1.0, untouched),
    ];
    let f = v * scalars.values().iter().sum::<f64>();
    Ok(PoisonResult::from_checks(poisoned, Some(scalars), f, checks, iterations))
}
