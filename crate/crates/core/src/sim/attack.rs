//! Poison generation for one round: who attacks, against what requirement,
//! and how long the first attacker took.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::attacks::{
    faker_backdoor, faker_for, faker_sybil, krum_budget, la_attack, mb_attack, AttackKind,
    AttackMode, AttackPlan, BackdoorTarget, FakerInputs, KrumSetting, PoisonResult,
};
use crate::defenses::{flame_admission, DefenseKind, DefenseParams};
use crate::error::Result;
use crate::model::{partition_groups, ModelVector};
use crate::similarity::{cosine_of, distance_of, norm_of, IndexSubset, Metric, SimilarityRequirement};

/// What the attackers know this round.
pub(crate) struct AttackInputs<'a> {
    pub plan: &'a AttackPlan,
    pub params: DefenseParams,
    /// Honest local models of the attackers, in client order.
    pub honest: Vec<&'a ModelVector>,
    /// Backdoor-trained models, present for backdoor plans.
    pub backdoored: Option<Vec<&'a ModelVector>>,
    pub critical_fraction: f64,
    pub previous_global: &'a ModelVector,
    pub n: usize,
    pub norm_bounds: (f64, f64),
    pub seeds: Vec<u64>,
}

pub(crate) struct Generated {
    pub results: Vec<PoisonResult>,
    pub first_seconds: f64,
}

fn mean_model(models: &[&ModelVector]) -> Result<ModelVector> {
    let k = models.len() as f64;
    let mut acc = vec![0.0; models[0].dim()];
    for m in models {
        for (a, x) in acc.iter_mut().zip(m.values()) {
            *a += x / k;
        }
    }
    models[0].with_values(acc)
}

/// The requirement an attacker believes `defense` imposes, with the
/// reference it is measured against.
pub(crate) fn believed_requirement(
    defense: DefenseKind,
    x: &AttackInputs<'_>,
    w: &ModelVector,
    m: usize,
) -> Result<(SimilarityRequirement, ModelVector)> {
    let lw = norm_of(w.values());
    Ok(match defense {
        DefenseKind::Krum => {
            let s = KrumSetting {
                mode: x.plan.mode,
                n: x.n,
                m,
                margin: x.plan.margin,
            };
            let e = distance_of(x.previous_global.values(), w.values());
            let b = krum_budget(e, &s)?;
            (SimilarityRequirement::new(Metric::Euclidean, 0.0, b)?, x.previous_global.clone())
        }
        DefenseKind::NormClipping => {
            let (lo, hi) = x.norm_bounds;
            (SimilarityRequirement::new(Metric::L2Ratio, lo / lw, hi / lw)?, w.clone())
        }
        DefenseKind::DiverseFl => {
            let k = x.params.diversefl_kappa;
            (SimilarityRequirement::new(Metric::L2Ratio, 1.0 / k, k)?, w.clone())
        }
        DefenseKind::Flame => {
            let lo = 1.0 - x.params.flame_min_link;
            (SimilarityRequirement::new(Metric::Cosine, lo, 1.0)?, w.clone())
        }
        _ => (SimilarityRequirement::new(Metric::Cosine, 1e-6, 1.0)?, w.clone()),
    })
}

/// Acceptance test the halving baselines query, built from the attacker's
/// own model in place of the server's reference.
fn believed_accept<'a>(
    defense: DefenseKind,
    x: &'a AttackInputs<'a>,
    w: &'a ModelVector,
    m: usize,
) -> Result<Box<dyn Fn(&ModelVector) -> bool + 'a>> {
    let positive = move |c: &ModelVector| cosine_of(c.values(), w.values()).is_ok_and(|v| v > 0.0);
    Ok(match defense {
        DefenseKind::Flame => {
            let n = x.n;
            let params = x.params;
            Box::new(move |c: &ModelVector| {
                let mut pts: Vec<&[f64]> = vec![c.values()];
                pts.extend(std::iter::repeat_n(w.values(), n.saturating_sub(1)));
                flame_admission(&pts, &params)[0]
            })
        }
        DefenseKind::DiverseFl => {
            let (req, r) = believed_requirement(defense, x, w, m)?;
            Box::new(move |c: &ModelVector| {
                positive(c) && req.contains(norm_of(c.values()) / norm_of(r.values()))
            })
        }
        DefenseKind::Krum | DefenseKind::NormClipping => {
            let (req, r) = believed_requirement(defense, x, w, m)?;
            let metric = req.metric;
            Box::new(move |c: &ModelVector| {
                let v = match metric {
                    Metric::Euclidean => distance_of(c.values(), r.values()),
                    _ => norm_of(c.values()) / norm_of(r.values()),
                };
                // strict for Krum's distance bound
                req.contains(v) && (metric != Metric::Euclidean || v < req.upper)
            })
        }
        _ => Box::new(positive),
    })
}

fn faker_inputs<'a>(
    x: &'a AttackInputs<'a>,
    w: &'a ModelVector,
    partition: &'a crate::model::GroupPartition,
    m: usize,
) -> FakerInputs<'a> {
    FakerInputs {
        w,
        w_g: Some(x.previous_global),
        partition,
        n: x.n,
        m,
        mode: x.plan.mode,
        margin: x.plan.margin,
        norm_upper: Some(x.norm_bounds.1),
        params: x.params,
    }
}

/// Largest `|w_bd − w|` coordinates, the parameters the backdoor lives in.
fn critical_set(w_bd: &ModelVector, w: &ModelVector, fraction: f64) -> Result<IndexSubset> {
    let mut order: Vec<usize> = (0..w.dim()).collect();
    let d: Vec<f64> = w_bd.values().iter().zip(w.values()).map(|(a, b)| (a - b).abs()).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let k = ((fraction * w.dim() as f64).round() as usize).min(w.dim());
    let mut idx = order[..k].to_vec();
    idx.sort_unstable();
    IndexSubset::new(idx, w.dim())
}

fn one(x: &AttackInputs<'_>, i: usize, w: &ModelVector, m: usize) -> Result<PoisonResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(x.seeds[i]);
    let defense = x.plan.target_defense;
    match x.plan.kind {
        AttackKind::Faker | AttackKind::FakerSybil | AttackKind::Duplicate => {
            let p = partition_groups(w, x.plan.partition)?;
            faker_for(defense, &faker_inputs(x, w, &p, m), &mut rng)
        }
        AttackKind::La => la_attack(w, believed_accept(defense, x, w, m)?, &mut rng),
        AttackKind::Mb => mb_attack(w, believed_accept(defense, x, w, m)?),
        AttackKind::FakerBackdoor => {
            let bd = x.backdoored.as_ref().expect("backdoor models trained")[i];
            let (requirement, reference) = believed_requirement(defense, x, w, m)?;
            let critical = critical_set(bd, w, x.critical_fraction)?;
            faker_backdoor(bd, &critical, &BackdoorTarget { requirement, reference })
        }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64())
}

pub(crate) fn generate(x: &AttackInputs<'_>) -> Result<Generated> {
    let m = x.honest.len();
    match (x.plan.kind, x.plan.mode) {
        (AttackKind::FakerSybil, _) => {
            // one adversary behind every identity, seeded from its first model
            let w = x.honest[0];
            let p = partition_groups(w, x.plan.partition)?;
            let inputs = faker_inputs(x, w, &p, m);
            let mut rng = ChaCha8Rng::seed_from_u64(x.seeds[0]);
            let (first, secs) = timed(|| faker_sybil(&inputs, 1, x.plan.target_defense, &mut rng));
            let mut results = first?;
            if m > 1 {
                results.extend(faker_sybil(&inputs, m - 1, x.plan.target_defense, &mut rng)?);
            }
            Ok(Generated {
                results,
                first_seconds: secs,
            })
        }
        (AttackKind::Duplicate, _) => {
            let (r, secs) = timed(|| one(x, 0, x.honest[0], m));
            let r = r?;
            Ok(Generated {
                results: vec![r; m],
                first_seconds: secs,
            })
        }
        (_, AttackMode::Cooperative) => {
            let shared = mean_model(&x.honest)?;
            let (r, secs) = timed(|| one(x, 0, &shared, m));
            let r = r?;
            Ok(Generated {
                results: vec![r; m],
                first_seconds: secs,
            })
        }
        (_, AttackMode::Single) => {
            let runs: Vec<(Result<PoisonResult>, f64)> = (0..m)
                .into_par_iter()
                .map(|i| timed(|| one(x, i, x.honest[i], m)))
                .collect();
            let first_seconds = runs[0].1;
            let results = runs.into_iter().map(|(r, _)| r).collect::<Result<Vec<_>>>()?;
            Ok(Generated {
                results,
                first_seconds,
            })
        }
    }
}
