//! Server-side aggregation rules. Every rule consumes one round of client
//! updates and returns an [`AggregationOutcome`].
//!
//! Rules score submissions on an *evaluation view* of each model (the full
//! vector, or a random coordinate subset under SPP) and aggregate the full
//! models.

mod err;
mod flame;
mod foolsgold;
mod krum;
mod norm_clip;
mod shieldfl;
mod spp;
mod trust;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelVector;

pub use err::err_baseline;
pub use flame::{flame, flame_admission, flame_admission_from_distances};
pub use foolsgold::{foolsgold, foolsgold_rates};
pub use krum::{krum, krum_scores};
pub use norm_clip::norm_clipping;
pub use shieldfl::shieldfl;
pub use spp::{spp_wrap, SppConfig};
pub use trust::{diversefl, fltrust};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: u32,
    pub model: ModelVector,
    pub data_size: usize,
    pub round: u32,
}

/// Verdict of one aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationOutcome {
    pub global_model: ModelVector,
    pub accepted: BTreeMap<u32, bool>,
    pub weights: BTreeMap<u32, f64>,
    /// Client chosen by selection rules (Krum).
    pub selected: Option<u32>,
    /// Rule-specific per-client score (trust, Krum score, norm, learning rate, ...).
    pub scores: BTreeMap<u32, f64>,
    /// Clients discarded by the partial-parameter consistency screen.
    pub spp_flagged: BTreeSet<u32>,
}

impl AggregationOutcome {
    pub fn is_accepted(&self, id: u32) -> bool {
        self.accepted.get(&id).copied().unwrap_or(false)
    }

    pub fn weight(&self, id: u32) -> f64 {
        self.weights.get(&id).copied().unwrap_or(0.0)
    }
}

/// Error-rate oracle over a clean evaluation set.
#[derive(Clone)]
pub struct CleanEvaluator(pub Arc<dyn Fn(&ModelVector) -> f64 + Send + Sync>);

impl CleanEvaluator {
    pub fn new<F: Fn(&ModelVector) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self(Arc::new(f))
    }

    pub fn error_rate(&self, model: &ModelVector) -> f64 {
        (self.0)(model)
    }
}

impl fmt::Debug for CleanEvaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CleanEvaluator")
    }
}

/// What the server knows when it aggregates a round.
#[derive(Debug, Clone, Default)]
pub struct DefenseContext {
    /// Model trained by the server on its clean data.
    pub server_model: Option<ModelVector>,
    pub norm_bounds: Option<(f64, f64)>,
    /// Number of attackers assumed by Krum.
    pub m_assumed: Option<usize>,
    /// Accumulated per-client updates (FoolsGold), current round included.
    pub history: BTreeMap<u32, Vec<f64>>,
    /// Global model carried over when a rule rejects everything.
    pub previous_global: Option<ModelVector>,
    pub clean_eval: Option<CleanEvaluator>,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    FedAvg,
    Krum,
    NormClipping,
    FlTrust,
    Flame,
    DiverseFl,
    ShieldFl,
    FoolsGold,
    Err,
}

impl DefenseKind {
    pub const SIMILARITY_BASED: [DefenseKind; 6] = [
        DefenseKind::Krum,
        DefenseKind::NormClipping,
        DefenseKind::FlTrust,
        DefenseKind::Flame,
        DefenseKind::DiverseFl,
        DefenseKind::ShieldFl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DefenseKind::FedAvg => "fedavg",
            DefenseKind::Krum => "krum",
            DefenseKind::NormClipping => "norm_clipping",
            DefenseKind::FlTrust => "fltrust",
            DefenseKind::Flame => "flame",
            DefenseKind::DiverseFl => "diversefl",
            DefenseKind::ShieldFl => "shieldfl",
            DefenseKind::FoolsGold => "foolsgold",
            DefenseKind::Err => "err",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            DefenseKind::FedAvg,
            DefenseKind::Krum,
            DefenseKind::NormClipping,
            DefenseKind::FlTrust,
            DefenseKind::Flame,
            DefenseKind::DiverseFl,
            DefenseKind::ShieldFl,
            DefenseKind::FoolsGold,
            DefenseKind::Err,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    pub fn needs_server_model(self) -> bool {
        matches!(
            self,
            DefenseKind::FlTrust | DefenseKind::DiverseFl | DefenseKind::Err
        )
    }
}

/// Tunable knobs of the rules. None of these are fixed by the rules' authors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseParams {
    /// FLAME noise deviation as a multiple of the clipping norm.
    pub flame_noise: f64,
    /// FLAME admits points linked within `flame_link_slack` × the distance at
    /// which a majority cluster first forms.
    pub flame_link_slack: f64,
    /// FLAME's smallest link distance (cosine distance).
    pub flame_min_link: f64,
    /// DiverseFL accepts norm ratios in `[1/kappa, kappa]`.
    pub diversefl_kappa: f64,
    /// ERR rejects errors above the round median plus `err_tau`.
    pub err_tau: f64,
}

impl Default for DefenseParams {
    fn default() -> Self {
        Self {
            flame_noise: 0.001,
            flame_link_slack: 2.0,
            flame_min_link: 0.02,
            diversefl_kappa: 2.0,
            err_tau: 0.10,
        }
    }
}

/// An aggregation rule, optionally wrapped by SPP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defense {
    pub kind: DefenseKind,
    #[serde(default)]
    pub params: DefenseParams,
    #[serde(default)]
    pub spp: Option<SppConfig>,
}

impl Defense {
    pub fn new(kind: DefenseKind) -> Self {
        Self {
            kind,
            params: DefenseParams::default(),
            spp: None,
        }
    }

    pub fn aggregate(
        &self,
        updates: &[ClientUpdate],
        ctx: &DefenseContext,
    ) -> Result<AggregationOutcome> {
        if updates.is_empty() {
            return Err(Error::EmptyRound);
        }
        let dim = updates[0].model.dim();
        for u in updates {
            if u.model.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: u.model.dim(),
                });
            }
        }
        match &self.spp {
            Some(cfg) => spp::aggregate_with_spp(self, cfg, updates, ctx),
            None => {
                let views = EvalView::full(updates, ctx);
                self.aggregate_on(updates, &views, ctx)
            }
        }
    }

    /// Runs the inner rule with similarity evaluated on `views`.
    pub(crate) fn aggregate_on(
        &self,
        updates: &[ClientUpdate],
        views: &EvalView<'_>,
        ctx: &DefenseContext,
    ) -> Result<AggregationOutcome> {
        match self.kind {
            DefenseKind::FedAvg => fedavg(updates),
            DefenseKind::Krum => {
                let m = ctx.m_assumed.ok_or(Error::MissingContext("m_assumed"))?;
                krum::krum_on(updates, views, m)
            }
            DefenseKind::NormClipping => {
                let bounds = ctx.norm_bounds.ok_or(Error::MissingContext("norm_bounds"))?;
                norm_clip::norm_clipping_on(updates, views, bounds)
            }
            DefenseKind::FlTrust => trust::fltrust_on(updates, views, ctx),
            DefenseKind::Flame => flame::flame_on(updates, views, &self.params, ctx.rng_seed),
            DefenseKind::DiverseFl => {
                trust::diversefl_on(updates, views, ctx, self.params.diversefl_kappa)
            }
            DefenseKind::ShieldFl => shieldfl::shieldfl_on(updates, views),
            DefenseKind::FoolsGold => foolsgold::foolsgold_on(updates, views, ctx),
            DefenseKind::Err => err::err_on(updates, ctx, self.params.err_tau),
        }
    }
}

/// Coordinates each rule scores. `clients[i]` belongs to `updates[i]`.
pub(crate) struct EvalView<'a> {
    pub clients: Vec<&'a [f64]>,
    pub server: Option<&'a [f64]>,
    /// FoolsGold histories, aligned with `clients`.
    pub history: Vec<Option<&'a [f64]>>,
}

impl<'a> EvalView<'a> {
    pub fn full(updates: &'a [ClientUpdate], ctx: &'a DefenseContext) -> Self {
        Self {
            clients: updates.iter().map(|u| u.model.values()).collect(),
            server: ctx.server_model.as_ref().map(|m| m.values()),
            history: updates
                .iter()
                .map(|u| ctx.history.get(&u.client_id).map(Vec::as_slice))
                .collect(),
        }
    }
}

/// Weighted mean of the full models; `weights` need not be normalized.
pub(crate) fn weighted_mean(updates: &[ClientUpdate], weights: &[f64]) -> Result<ModelVector> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoSurvivors);
    }
    let dim = updates[0].model.dim();
    let mut acc = vec![0.0; dim];
    for (u, &w) in updates.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let c = w / total;
        for (a, x) in acc.iter_mut().zip(u.model.values()) {
            *a += c * x;
        }
    }
    updates[0].model.with_values(acc)
}

pub(crate) fn normalized(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![0.0; weights.len()]
    }
}

pub(crate) fn outcome(
    updates: &[ClientUpdate],
    global_model: ModelVector,
    weights: &[f64],
    accepted: &[bool],
    scores: &[f64],
) -> AggregationOutcome {
    let ids = updates.iter().map(|u| u.client_id);
    AggregationOutcome {
        global_model,
        accepted: ids.clone().zip(accepted.iter().copied()).collect(),
        weights: ids
            .clone()
            .zip(weights.iter().zip(accepted).map(|(&w, &a)| if a { w } else { 0.0 }))
            .collect(),
        selected: None,
        scores: ids.zip(scores.iter().copied()).collect(),
        spp_flagged: BTreeSet::new(),
    }
}

/// Data-size weighted average of the accepted updates.
pub(crate) fn average_accepted(
    updates: &[ClientUpdate],
    accepted: &[bool],
    scores: &[f64],
) -> Result<AggregationOutcome> {
    let raw: Vec<f64> = updates
        .iter()
        .zip(accepted)
        .map(|(u, &a)| if a { u.data_size as f64 } else { 0.0 })
        .collect();
    let global = weighted_mean(updates, &raw)?;
    Ok(outcome(updates, global, &normalized(&raw), accepted, scores))
}

/// Plain federated averaging weighted by data size.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<AggregationOutcome> {
    if updates.is_empty() {
        return Err(Error::EmptyRound);
    }
    let accepted = vec![true; updates.len()];
    let scores = vec![0.0; updates.len()];
    average_accepted(updates, &accepted, &scores)
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fedavg_single_client_is_identity() {
        let u = vec![update(3, &[1.5, -2.0])];
        let o = fedavg(&u).unwrap();
        assert_eq!(o.global_model.values(), &[1.5, -2.0]);
        assert_eq!(o.weight(3), 1.0);
    }

    #[test]
    fn fedavg_mean_of_two() {
        let o = fedavg(&[update(0, &[0.0, 0.0]), update(1, &[2.0, 2.0])]).unwrap();
        assert_eq!(o.global_model.values(), &[1.0, 1.0]);
        assert!(o.accepted.values().all(|&a| a));
    }

    #[test]
    fn fedavg_rejects_empty_round() {
        assert_eq!(fedavg(&[]), Err(Error::EmptyRound));
    }

    #[test]
    fn defense_kind_names_round_trip() {
        for k in DefenseKind::SIMILARITY_BASED {
            assert_eq!(DefenseKind::parse(k.name()), Some(k));
        }
        assert_eq!(DefenseKind::parse("bulyan"), None);
    }

    proptest! {
        #[test]
        fn fedavg_weights_follow_data_size(
            sizes in prop::collection::vec(1usize..1000, 1..8),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let updates: Vec<ClientUpdate> = sizes.iter().enumerate().map(|(i, &s)| ClientUpdate {
                client_id: i as u32,
                model: ModelVector::from_values((0..4).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap(),
                data_size: s,
                round: 0,
            }).collect();
            let o = fedavg(&updates).unwrap();
            let total: usize = sizes.iter().sum();
            for j in 0..4 {
                let direct: f64 = updates.iter().map(|u| u.data_size as f64 / total as f64 * u.model.values()[j]).sum();
                prop_assert!((o.global_model.values()[j] - direct).abs() < 1e-9);
            }
            prop_assert!((weight_sum(&o) - 1.0).abs() < 1e-12);
        }
    }
}
