use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{outcome, AggregationOutcome, ClientUpdate, Defense, DefenseContext, DefenseKind, EvalView};
use crate::error::{Error, Result};
use crate::numeric::median;
use crate::similarity::{metric_of, norm_of, IndexSubset, Metric};

/// Similarity of partial parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SppConfig {
    /// Share of the parameters drawn each round, in `(0, 1]`.
    pub fraction: f64,
    /// Absolute deviation between subset and full similarity always tolerated.
    pub tolerance: f64,
    /// A client is flagged when its deviation exceeds this multiple of the
    /// round's median deviation (and the absolute tolerance).
    pub spread_factor: f64,
}

impl Default for SppConfig {
    fn default() -> Self {
        Self {
            fraction: 0.5,
            tolerance: 0.05,
            spread_factor: 4.0,
        }
    }
}

impl SppConfig {
    fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config {
                path: "spp.fraction".into(),
                message: format!("must lie in (0, 1], got {}", self.fraction),
            });
        }
        if !(self.tolerance >= 0.0 && self.spread_factor >= 0.0) {
            return Err(Error::Config {
                path: "spp".into(),
                message: "tolerance and spread_factor must be non-negative".into(),
            });
        }
        Ok(())
    }

    pub fn subset_size(&self, dim: usize) -> usize {
        ((self.fraction * dim as f64).ceil() as usize).clamp(1, dim)
    }
}

/// Wraps `inner` so every similarity it computes uses a fresh random subset
/// of `⌈fraction·J⌉` parameters.
pub fn spp_wrap(inner: Defense, fraction: f64) -> Result<Defense> {
    let cfg = SppConfig {
        fraction,
        ..SppConfig::default()
    };
    cfg.validate()?;
    Ok(Defense {
        spp: Some(cfg),
        ..inner
    })
}

fn screen_metric(kind: DefenseKind) -> Metric {
    match kind {
        DefenseKind::Krum => Metric::Euclidean,
        DefenseKind::NormClipping => Metric::L2Ratio,
        DefenseKind::FlTrust | DefenseKind::DiverseFl => Metric::CosineTimesNormRatio,
        _ => Metric::Cosine,
    }
}

fn coordinate_median(points: &[&[f64]]) -> Vec<f64> {
    let mut col = vec![0.0; points.len()];
    (0..points[0].len())
        .map(|j| {
            for (c, p) in col.iter_mut().zip(points) {
                *c = p[j];
            }
            median(&col)
        })
        .collect()
}

/// Scale-free similarity of `x` to `r`.
fn screen_value(metric: Metric, x: &[f64], r: &[f64]) -> f64 {
    let v = match metric {
        Metric::Euclidean => {
            let nr = norm_of(r);
            metric_of(metric, x, r).map(|d| if nr > 0.0 { d / nr } else { d })
        }
        _ => metric_of(metric, x, r),
    };
    v.unwrap_or(0.0)
}

/// Flags clients whose similarity on the subset disagrees with the full one.
fn consistency_flags(
    kind: DefenseKind,
    cfg: &SppConfig,
    full: &EvalView<'_>,
    part: &EvalView<'_>,
    subset: &IndexSubset,
) -> Vec<bool> {
    let metric = screen_metric(kind);
    let (r_full, r_part) = match full.server {
        Some(s) => (s.to_vec(), part.server.expect("projected with the server").to_vec()),
        None => {
            let m = coordinate_median(&full.clients);
            let p = subset.project(&m);
            (m, p)
        }
    };
    let dev: Vec<f64> = full
        .clients
        .iter()
        .zip(&part.clients)
        .map(|(f, p)| (screen_value(metric, p, &r_part) - screen_value(metric, f, &r_full)).abs())
        .collect();
    let cut = cfg.tolerance.max(cfg.spread_factor * median(&dev));
    dev.iter().map(|&d| d > cut).collect()
}

pub(crate) fn aggregate_with_spp(
    defense: &Defense,
    cfg: &SppConfig,
    updates: &[ClientUpdate],
    ctx: &DefenseContext,
) -> Result<AggregationOutcome> {
    cfg.validate()?;
    let full = EvalView::full(updates, ctx);
    let dim = updates[0].model.dim();
    let size = cfg.subset_size(dim);
    if size == dim {
        return defense.aggregate_on(updates, &full, ctx);
    }
    // drawn only now that every submission is in
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.rng_seed);
    rng.set_stream(1);
    let subset = IndexSubset::random(dim, size, &mut rng)?;

    let clients: Vec<Vec<f64>> = full.clients.iter().map(|c| subset.project(c)).collect();
    let server = full.server.map(|s| subset.project(s));
    let history: Vec<Option<Vec<f64>>> = full.history.iter().map(|h| h.map(|h| subset.project(h))).collect();
    let part = EvalView {
        clients: clients.iter().map(Vec::as_slice).collect(),
        server: server.as_deref(),
        history: history.iter().map(Option::as_deref).collect(),
    };

    let flagged = consistency_flags(defense.kind, cfg, &full, &part, &subset);
    let keep: Vec<usize> = (0..updates.len()).filter(|&i| !flagged[i]).collect();
    let flagged_ids: BTreeSet<u32> = (0..updates.len())
        .filter(|&i| flagged[i])
        .map(|i| updates[i].client_id)
        .collect();

    let mut out = if keep.is_empty() {
        let carried = ctx.previous_global.clone().ok_or(Error::NoSurvivors)?;
        let n = updates.len();
        outcome(updates, carried, &vec![0.0; n], &vec![false; n], &vec![0.0; n])
    } else {
        let kept: Vec<ClientUpdate> = keep.iter().map(|&i| updates[i].clone()).collect();
        let view = EvalView {
            clients: keep.iter().map(|&i| part.clients[i]).collect(),
            server: part.server,
            history: keep.iter().map(|&i| part.history[i]).collect(),
        };
        let mut o = match (defense.kind, ctx.norm_bounds) {
            // subset norms shrink by about the square root of the kept share
            (DefenseKind::NormClipping, Some((lo, hi))) => {
                let s = (size as f64 / dim as f64).sqrt();
                let scaled = DefenseContext {
                    norm_bounds: Some((lo * s, hi * s)),
                    ..ctx.clone()
                };
                defense.aggregate_on(&kept, &view, &scaled)?
            }
            _ => defense.aggregate_on(&kept, &view, ctx)?,
        };
        for &id in &flagged_ids {
            o.accepted.insert(id, false);
            o.weights.insert(id, 0.0);
        }
        o
    };
    out.spp_flagged = flagged_ids;
    Ok(out)
}
