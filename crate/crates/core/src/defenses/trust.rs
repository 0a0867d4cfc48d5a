use super::{
    average_accepted, outcome, AggregationOutcome, ClientUpdate, DefenseContext, EvalView,
};
use crate::error::{Error, Result};
use crate::similarity::{cosine_of, norm_of, SIMILARITY_TOL};

fn server_view<'a>(views: &EvalView<'a>) -> Result<&'a [f64]> {
    let s = views.server.ok_or(Error::MissingContext("server_model"))?;
    if norm_of(s) == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(s)
}

pub(crate) fn fltrust_on(
    updates: &[ClientUpdate],
    views: &EvalView<'_>,
    ctx: &DefenseContext,
) -> Result<AggregationOutcome> {
    let server = server_view(views)?;
    let server_norm = norm_of(server);
    let trust: Vec<f64> = views
        .clients
        .iter()
        .map(|v| cosine_of(v, server).map(|c| c.max(0.0)).unwrap_or(0.0))
        .collect();
    let total: f64 = trust.iter().sum();
    let accepted: Vec<bool> = trust.iter().map(|&t| t > 0.0).collect();
    if total <= 0.0 {
        let fallback = ctx
            .server_model
            .clone()
            .ok_or(Error::MissingContext("server_model"))?;
        return Ok(outcome(updates, fallback, &vec![0.0; updates.len()], &accepted, &trust));
    }

    let dim = updates[0].model.dim();
    let mut acc = vec![0.0; dim];
    for ((u, v), &t) in updates.iter().zip(&views.clients).zip(&trust) {
        if t == 0.0 {
            continue;
        }
        // rescale to the server model's magnitude, then weight by trust
        let c = t / total * server_norm / norm_of(v);
        for (a, x) in acc.iter_mut().zip(u.model.values()) {
            *a += c * x;
        }
    }
    let global = updates[0].model.with_values(acc)?;
    let weights: Vec<f64> = trust.iter().map(|t| t / total).collect();
    Ok(outcome(updates, global, &weights, &accepted, &trust))
}

/// ReLU-cosine trust against the server model, with every accepted update
/// rescaled to the server model's norm.
pub fn fltrust(updates: &[ClientUpdate], ctx: &DefenseContext) -> Result<AggregationOutcome> {
    super::Defense::new(super::DefenseKind::FlTrust).aggregate(updates, ctx)
}

pub(crate) fn diversefl_on(
    updates: &[ClientUpdate],
    views: &EvalView<'_>,
    ctx: &DefenseContext,
    kappa: f64,
) -> Result<AggregationOutcome> {
    if !(kappa > 1.0) {
        return Err(Error::Config {
            path: "diversefl_kappa".into(),
            message: format!("must exceed 1, got {kappa}"),
        });
    }
    let server = server_view(views)?;
    let server_norm = norm_of(server);
    let mut cosines = Vec::with_capacity(updates.len());
    let accepted: Vec<bool> = views
        .clients
        .iter()
        .map(|v| {
            let c = cosine_of(v, server).unwrap_or(-1.0);
            cosines.push(c);
            let ratio = norm_of(v) / server_norm;
            c > 0.0 && ratio >= 1.0 / kappa - SIMILARITY_TOL && ratio <= kappa + SIMILARITY_TOL
        })
        .collect();
    if !accepted.iter().any(|&a| a) {
        let carried = ctx.previous_global.clone().ok_or(Error::NoSurvivors)?;
        return Ok(outcome(
            updates,
            carried,
            &vec![0.0; updates.len()],
            &accepted,
            &cosines,
        ));
    }
    average_accepted(updates, &accepted, &cosines)
}

/// Rejects non-positive cosine or an out-of-band norm ratio against the
/// server model; averages the survivors by data size.
pub fn diversefl(updates: &[ClientUpdate], ctx: &DefenseContext) -> Result<AggregationOutcome> {
    super::Defense::new(super::DefenseKind::DiverseFl).aggregate(updates, ctx)
}

#[cfg(test)]
mod tests {
    use super::super::test_util::{update, weight_sum};
    use super::*;
    use crate::model::ModelVector;

    fn ctx(server: &[f64]) -> DefenseContext {
        DefenseContext {
            server_model: Some(ModelVector::from_values(server.to_vec()).unwrap()),
            previous_global: Some(ModelVector::from_values(vec![9.0; server.len()]).unwrap()),
            ..Default::default()
        }
    }

    #[test]
    fn fltrust_identical_to_server() {
        let s = [1.0, -2.0, 0.5];
        let u: Vec<_> = (0..4).map(|i| update(i, &s)).collect();
        let o = fltrust(&u, &ctx(&s)).unwrap();
        for (g, e) in o.global_model.values().iter().zip(&s) {
            assert!((g - e).abs() < 1e-12);
        }
        for i in 0..4 {
            assert!((o.weight(i) - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn fltrust_cuts_opposite_direction() {
        let s = [1.0, 2.0];
        let u = vec![update(0, &s), update(1, &[-1.0, -2.0])];
        let o = fltrust(&u, &ctx(&s)).unwrap();
        assert!(!o.is_accepted(1));
        assert_eq!(o.weight(1), 0.0);
    }

    #[test]
    fn fltrust_mixed_weights_match_recomputation() {
        let s = [1.0, 0.0];
        // cosines 1, 0.6, 0 and -0.8
        let u = vec![
            update(0, &[2.0, 0.0]),
            update(1, &[3.0, 4.0]),
            update(2, &[0.0, 1.0]),
            update(3, &[-4.0, 3.0]),
        ];
        let o = fltrust(&u, &ctx(&s)).unwrap();
        assert!((o.weight(0) - 1.0 / 1.6).abs() < 1e-12);
        assert!((o.weight(1) - 0.6 / 1.6).abs() < 1e-12);
        assert_eq!(o.weight(2), 0.0);
        assert_eq!(o.weight(3), 0.0);
        // rescaled to unit norm: (1,0) and (0.6,0.8)
        let expect = [(1.0 + 0.6 * 0.6) / 1.6, (0.6 * 0.8) / 1.6];
        for (g, e) in o.global_model.values().iter().zip(expect) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!((weight_sum(&o) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fltrust_falls_back_to_server_model() {
        let s = [1.0, 1.0];
        let u = vec![update(0, &[-1.0, -1.0])];
        let o = fltrust(&u, &ctx(&s)).unwrap();
        assert_eq!(o.global_model.values(), &s);
    }

    #[test]
    fn fltrust_scale_does_not_change_trust_or_contribution() {
        let s = [1.0, 2.0, 3.0];
        let u = vec![update(0, &[1.0, 1.5, 3.5]), update(1, &[0.5, 2.0, 2.0])];
        let scaled = vec![update(0, &[10.0, 15.0, 35.0]), update(1, &[0.5, 2.0, 2.0])];
        let a = fltrust(&u, &ctx(&s)).unwrap();
        let b = fltrust(&scaled, &ctx(&s)).unwrap();
        assert!((a.scores[&0] - b.scores[&0]).abs() < 1e-12);
        for (x, y) in a.global_model.values().iter().zip(b.global_model.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn diversefl_checks() {
        let s = [1.0, 2.0];
        let u = vec![update(0, &s), update(1, &[-1.0, -2.0]), update(2, &[3.0, 6.0])];
        let o = diversefl(&u, &ctx(&s)).unwrap();
        assert!(o.is_accepted(0));
        assert!(!o.is_accepted(1));
        assert!(!o.is_accepted(2));
        assert_eq!(o.global_model.values(), &s);
    }

    #[test]
    fn diversefl_all_rejected_keeps_global() {
        let s = [1.0, 2.0];
        let u = vec![update(0, &[-1.0, -2.0])];
        let o = diversefl(&u, &ctx(&s)).unwrap();
        assert_eq!(o.global_model.values(), &[9.0, 9.0]);
    }
}
