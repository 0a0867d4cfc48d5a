use super::{average_accepted, AggregationOutcome, ClientUpdate, DefenseContext, EvalView};
use crate::error::{Error, Result};
use crate::similarity::{norm_of, SIMILARITY_TOL};

pub(crate) fn norm_clipping_on(
    updates: &[ClientUpdate],
    views: &EvalView<'_>,
    (lower, upper): (f64, f64),
) -> Result<AggregationOutcome> {
    if !(0.0 <= lower && lower <= upper) {
        return Err(Error::Config {
            path: "norm_bounds".into(),
            message: format!("need 0 <= lower <= upper, got ({lower}, {upper})"),
        });
    }
    let norms: Vec<f64> = views.clients.iter().map(|v| norm_of(v)).collect();
    let accepted: Vec<bool> = norms
        .iter()
        .map(|&n| n >= lower - SIMILARITY_TOL && n <= upper + SIMILARITY_TOL)
        .collect();
    if !accepted.iter().any(|&a| a) {
        return Err(Error::NoSurvivors);
    }
    average_accepted(updates, &accepted, &norms)
}

/// Discards updates whose L2 norm leaves `[lower, upper]` and averages the rest.
pub fn norm_clipping(updates: &[ClientUpdate], ctx: &DefenseContext) -> Result<AggregationOutcome> {
    super::Defense::new(super::DefenseKind::NormClipping).aggregate(updates, ctx)
}
