use super::{average_accepted, outcome, AggregationOutcome, ClientUpdate, DefenseContext};
use crate::error::{Error, Result};
use crate::numeric::median;

pub(crate) fn err_on(
    updates: &[ClientUpdate],
    ctx: &DefenseContext,
    tau: f64,
) -> Result<AggregationOutcome> {
    let eval = ctx.clean_eval.as_ref().ok_or(Error::MissingContext("clean_eval"))?;
    let errors: Vec<f64> = updates.iter().map(|u| eval.error_rate(&u.model)).collect();
    let cut = median(&errors) + tau;
    let accepted: Vec<bool> = errors.iter().map(|&e| e <= cut).collect();
    if !accepted.iter().any(|&a| a) {
        let carried = ctx.previous_global.clone().ok_or(Error::NoSurvivors)?;
        return Ok(outcome(updates, carried, &vec![0.0; updates.len()], &accepted, &errors));
    }
    average_accepted(updates, &accepted, &errors)
}

/// Rejects models whose clean-set error exceeds the round median by more
/// than `err_tau`.
pub fn err_baseline(updates: &[ClientUpdate], ctx: &DefenseContext) -> Result<AggregationOutcome> {
    super::Defense::new(super::DefenseKind::Err).aggregate(updates, ctx)
}
