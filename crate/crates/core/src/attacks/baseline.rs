use rand::Rng;

use super::{ConstraintCheck, PoisonResult};
use crate::error::Result;
use crate::model::ModelVector;

/// Initial shared scalar of the halving search.
pub const HALVING_START: f64 = 10.0;
/// The search stops once the scalar drops below this.
pub const HALVING_THRESHOLD: f64 = 1e-5;

fn halving<F: Fn(&ModelVector) -> bool>(
    w: &ModelVector,
    direction: &[f64],
    accept: F,
) -> Result<PoisonResult> {
    let mut lambda = HALVING_START;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let candidate = w.with_values(
            w.values()
                .iter()
                .zip(direction)
                .map(|(x, d)| lambda * d * x)
                .collect(),
        )?;
        let ok = accept(&candidate);
        if ok || lambda / 2.0 < HALVING_THRESHOLD {
            let checks = vec![ConstraintCheck::new("accepted", lambda, HALVING_THRESHOLD, ok)];
            return Ok(PoisonResult::from_checks(candidate, None, lambda, checks, iterations));
        }
        lambda /= 2.0;
    }
}

/// Random sign flips under a shared scalar, halved from 10 until `accept`
/// passes or the scalar falls below 10⁻⁵.
pub fn la_attack<R: Rng + ?Sized, F: Fn(&ModelVector) -> bool>(
    w: &ModelVector,
    accept: F,
    rng: &mut R,
) -> Result<PoisonResult> {
    let signs: Vec<f64> = (0..w.dim())
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    halving(w, &signs, accept)
}

/// `−λ·w` with the same halving search on `λ`.
pub fn mb_attack<F: Fn(&ModelVector) -> bool>(w: &ModelVector, accept: F) -> Result<PoisonResult> {
    halving(w, &vec![-1.0; w.dim()], accept)
}
