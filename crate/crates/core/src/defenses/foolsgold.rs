use super::{outcome, weighted_mean, AggregationOutcome, ClientUpdate, DefenseContext, EvalView};
use crate::error::{Error, Result};
use crate::similarity::cosine_of;

/// Per-client learning rates from accumulated update histories.
pub fn foolsgold_rates(histories: &[&[f64]]) -> Vec<f64> {
    let n = histories.len();
    if n == 1 {
        return vec![1.0];
    }
    let mut max_cs = vec![f64::NEG_INFINITY; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let c = cosine_of(histories[i], histories[j]).unwrap_or(0.0);
            max_cs[i] = max_cs[i].max(c);
            max_cs[j] = max_cs[j].max(c);
        }
    }
    let mut lr: Vec<f64> = max_cs.iter().map(|c| (1.0 - c).clamp(0.0, 1.0)).collect();
    let top = lr.iter().copied().fold(0.0, f64::max);
    if top > 0.0 {
        for v in lr.iter_mut() {
            *v /= top;
        }
    }
    lr.iter()
        .map(|&v| {
            let v = if v >= 1.0 { 0.99 } else { v };
            ((v / (1.0 - v)).ln() + 0.5).clamp(0.0, 1.0)
        })
        .collect()
}

pub(crate) fn foolsgold_on(
    updates: &[ClientUpdate],
    views: &EvalView<'_>,
    ctx: &DefenseContext,
) -> Result<AggregationOutcome> {
    let hist: Vec<&[f64]> = views
        .history
        .iter()
        .zip(&views.clients)
        .map(|(h, c)| h.unwrap_or(c))
        .collect();
    let lr = foolsgold_rates(&hist);
    let accepted: Vec<bool> = lr.iter().map(|&v| v > 0.0).collect();
    let global = match weighted_mean(updates, &lr) {
        Ok(g) => g,
        Err(Error::NoSurvivors) => ctx.previous_global.clone().ok_or(Error::NoSurvivors)?,
        Err(e) => return Err(e),
    };
    let total: f64 = lr.iter().sum();
    let weights: Vec<f64> = lr
        .iter()
        .map(|&v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(outcome(updates, global, &weights, &accepted, &lr))
}

/// Down-weights clients whose accumulated updates look alike.
pub fn foolsgold(updates: &[ClientUpdate], ctx: &DefenseContext) -> Result<AggregationOutcome> {
    super::Defense::new(super::DefenseKind::FoolsGold).aggregate(updates, ctx)
}
