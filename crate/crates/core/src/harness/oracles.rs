//! Independent checks of the attack constructions: brute-force grids against
//! the closed forms, constraint satisfaction, and end-to-end acceptance by the
//! defenses themselves.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::attacks::{
    faker_diversefl, faker_flame, faker_fltrust, faker_fltrust_with, faker_krum, faker_normclip,
    faker_normclip_with, faker_shieldfl, faker_sybil, la_attack, oracle_grid_max, AttackMode, FakerInputs,
    KrumSetting, PoisonResult, DEFAULT_MARGIN, FLTRUST_FIXED_RANGE,
};
use crate::defenses::{spp_wrap, ClientUpdate, Defense, DefenseContext, DefenseKind, DefenseParams};
use crate::model::{
    apply_scalars, expand_group_scalars, partition_groups, GroupPartition, ModelVector, PartitionStrategy,
};
use crate::sim::MlpShape;
use crate::similarity::{
    cosine_similarity, euclidean_distance, l2_norm, objective_f, subset_similarity, IndexSubset, Metric,
};

/// Root seed of every oracle's instance stream.
pub const ORACLE_SEED: u64 = 0x0fa4e5;
/// Grid resolution of the closed-form comparisons.
pub const GRID_POINTS: usize = 100_000;
const INSTANCES: usize = 100;
const DIMS: [usize; 3] = [2, 8, 64];

/// Deliberate defects for checking that the oracles can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Adds one to `λ` in the FLTrust free-scalar formula.
    FltrustLambdaOffByOne,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleEntry {
    pub name: String,
    pub passed: bool,
    pub seconds: f64,
    pub detail: String,
    /// Inputs of the first failing instance.
    pub replay: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub entries: Vec<OracleEntry>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn first_failure(&self) -> Option<&OracleEntry> {
        self.entries.iter().find(|e| !e.passed)
    }

    pub fn entry(&self, name: &str) -> Option<&OracleEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

struct Verdict {
    passed: bool,
    detail: String,
    replay: Option<Value>,
}

impl Verdict {
    fn count(hits: usize, trials: usize, needed: usize, what: &str, replay: Option<Value>) -> Self {
        Self {
            passed: hits >= needed,
            detail: format!("{what}: {hits}/{trials} (need {needed})"),
            replay: if hits >= needed { None } else { replay },
        }
    }
}

type OracleFn = fn(Mutation) -> Verdict;

const ORACLES: &[(&str, OracleFn)] = &[
    ("fltrust_closed_vs_grid", fltrust_closed_vs_grid),
    ("normclip_closed_vs_grid", normclip_closed_vs_grid),
    ("krum_bound_form", krum_bound_form),
    ("normclip_norm_exact", normclip_norm_exact),
    ("fltrust_cosine_positive", fltrust_cosine_positive),
    ("shieldfl_cosine_one", shieldfl_cosine_one),
    ("feasibility_all_constructions", feasibility_all_constructions),
    ("krum_selects_poison", krum_selects_poison),
    ("shieldfl_poison_weight", shieldfl_poison_weight),
    ("diversefl_accepts_poison", diversefl_accepts_poison),
    ("flame_admits_poison", flame_admits_poison),
    ("foolsgold_keeps_sybils", foolsgold_keeps_sybils),
    ("la_normclip_sometimes_rejected", la_normclip_sometimes_rejected),
    ("spp_subset_deviation", spp_subset_deviation),
    ("spp_rejects_fltrust_poison", spp_rejects_fltrust_poison),
];

pub fn oracle_names() -> Vec<&'static str> {
    ORACLES.iter().map(|(n, _)| *n).collect()
}

fn timed(name: &str, f: OracleFn, mutation: Mutation) -> OracleEntry {
    let start = Instant::now();
    let v = f(mutation);
    OracleEntry {
        name: name.to_string(),
        passed: v.passed,
        seconds: start.elapsed().as_secs_f64(),
        detail: v.detail,
        replay: v.replay,
    }
}

/// Runs one registered oracle.
pub fn run_oracle(name: &str, mutation: Mutation) -> Option<OracleEntry> {
    ORACLES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, f)| timed(n, *f, mutation))
}

pub fn oracle_check() -> OracleReport {
    oracle_check_with(Mutation::None)
}

pub fn oracle_check_with(mutation: Mutation) -> OracleReport {
    OracleReport {
        entries: ORACLES.iter().map(|(n, f)| timed(n, *f, mutation)).collect(),
    }
}

fn rng_for(name: &str) -> ChaCha8Rng {
    let tag = name.bytes().fold(ORACLE_SEED, |h, b| h.rotate_left(5) ^ b as u64);
    ChaCha8Rng::seed_from_u64(tag)
}

/// Entries in `±[0.1, 1]`.
fn random_model(rng: &mut ChaCha8Rng, j: usize) -> ModelVector {
    let v = (0..j)
        .map(|_| {
            let x: f64 = rng.random_range(0.1..1.0);
            if rng.random::<bool>() { x } else { -x }
        })
        .collect();
    ModelVector::from_values(v).expect("non-empty")
}

fn per_param(j: usize) -> GroupPartition {
    GroupPartition::new((0..j).collect(), j).expect("identity partition")
}

fn near(rng: &mut ChaCha8Rng, w: &ModelVector, sigma: f64) -> ModelVector {
    let noise = Normal::new(0.0, sigma).expect("positive deviation");
    w.with_values(w.values().iter().map(|x| x + noise.sample(rng)).collect())
        .expect("same shape")
}

fn updates(models: Vec<ModelVector>) -> Vec<ClientUpdate> {
    models
        .into_iter()
        .enumerate()
        .map(|(i, model)| ClientUpdate {
            client_id: i as u32,
            model,
            data_size: 1,
            round: 0,
        })
        .collect()
}

/// Desk-shaped model with every entry non-zero.
fn desk_model(rng: &mut ChaCha8Rng) -> ModelVector {
    let shape = MlpShape {
        input: 64,
        hidden: 32,
        output: 10,
    };
    let w = shape.init(rng).expect("valid shape");
    near(rng, &w, 0.05)
}

fn fltrust_fixed(rng: &mut ChaCha8Rng, t: usize) -> Vec<f64> {
    let (lo, hi) = FLTRUST_FIXED_RANGE;
    (0..t).map(|g| if g == 0 { 1.0 } else { rng.random_range(lo..hi) }).collect()
}

/// The FLTrust free-scalar root with `λ` shifted by one.
fn mutant_fltrust_root(psi: &[f64], sizes: &[f64], alphas: &[f64]) -> f64 {
    let a = psi[0];
    let lambda: f64 = (1..psi.len()).map(|t| psi[t] * alphas[t]).sum::<f64>() + 1.0;
    let beta: f64 = (1..psi.len()).map(|t| psi[t] * alphas[t] * alphas[t]).sum();
    let gamma = (1..psi.len()).map(|t| sizes[t] * alphas[t]).sum::<f64>() / sizes[0];
    let rad = a * (lambda * lambda + a * beta) * (a * gamma * gamma + beta);
    (a * (beta - lambda * gamma) + rad.sqrt()) / (a * (lambda + a * gamma))
}

fn free_scalar(r: &PoisonResult) -> f64 {
    r.scalars.as_ref().expect("scalar construction").values()[0]
}

/// Evaluates every instance in parallel; the replay is the first failure in order.
fn count_instances<I: Sync>(instances: &[I], check: impl Fn(&I) -> Option<Value> + Sync + Send) -> (usize, Option<Value>) {
    let failures: Vec<Option<Value>> = instances.par_iter().map(check).collect();
    let good = failures.iter().filter(|f| f.is_none()).count();
    (good, failures.into_iter().flatten().next())
}

fn fltrust_closed_vs_grid(mutation: Mutation) -> Verdict {
    let mut rng = rng_for("fltrust_closed_vs_grid");
    let mut instances = Vec::new();
    for &j in &DIMS {
        for _ in 0..INSTANCES {
            let w = random_model(&mut rng, j);
            let fixed = fltrust_fixed(&mut rng, j);
            instances.push((w, fixed));
        }
    }
    let (good, replay) = count_instances(&instances, |(w, fixed)| {
        let p = per_param(w.dim());
        let closed = match mutation {
            Mutation::None => free_scalar(&faker_fltrust_with(w, &p, fixed).expect("valid instance")),
            Mutation::FltrustLambdaOffByOne => {
                let psi = p.group_square_sums(w.values());
                let sizes: Vec<f64> = p.group_sizes().iter().map(|&s| s as f64).collect();
                mutant_fltrust_root(&psi, &sizes, fixed)
            }
        };
        let hi = 10.0 * closed.max(1.0);
        let step = hi / GRID_POINTS as f64;
        let positive = |m: &ModelVector| cosine_similarity(m, w).is_ok_and(|c| c > 0.0);
        let (x, best) = oracle_grid_max(
            w,
            &p,
            fixed,
            0,
            Metric::CosineTimesNormRatio,
            positive,
            (0.0, hi),
            GRID_POINTS,
        )
        .expect("feasible grid");
        let mut alphas = fixed.clone();
        alphas[0] = closed;
        let f = objective_f(w, &expand_group_scalars(&alphas, &p).expect("positive"), Metric::CosineTimesNormRatio)
            .unwrap_or(f64::NEG_INFINITY);
        if (closed - x).abs() <= step && f >= (1.0 - 1e-6) * best {
            None
        } else {
            Some(json!({"w": w.values(), "fixed": fixed, "closed": closed, "grid": x, "step": step, "f_closed": f, "f_grid": best}))
        }
    });
    let trials = instances.len();
    Verdict::count(good, trials, trials, "within one grid step and (1-1e-6) of the grid max", replay)
}

fn normclip_fixed(rng: &mut ChaCha8Rng, w: &ModelVector) -> Vec<f64> {
    let v = w.values();
    let max_sq = v[1..].iter().map(|x| x * x).fold(0.0, f64::max);
    let l2 = v.iter().map(|x| x * x).sum::<f64>();
    let bound = (l2 / ((v.len() - 1) as f64 * max_sq)).sqrt();
    (0..v.len())
        .map(|t| if t == 0 { 1.0 } else { bound * (1.0 - rng.random::<f64>()) })
        .collect()
}

fn normclip_closed_vs_grid(_: Mutation) -> Verdict {
    let mut rng = rng_for("normclip_closed_vs_grid");
    let mut instances = Vec::new();
    for &j in &DIMS {
        for _ in 0..INSTANCES {
            let w = random_model(&mut rng, j);
            let fixed = normclip_fixed(&mut rng, &w);
            instances.push((w, fixed));
        }
    }
    let (good, replay) = count_instances(&instances, |(w, fixed)| {
        let p = per_param(w.dim());
        let upper = l2_norm(w);
        let r = faker_normclip_with(w, &p, upper, fixed).expect("valid instance");
        let closed = free_scalar(&r);
        let hi = 1.7 * closed;
        let step = hi / GRID_POINTS as f64;
        let within = |m: &ModelVector| l2_norm(m) <= upper;
        let (x, best) = oracle_grid_max(w, &p, fixed, 0, Metric::L2Ratio, within, (0.0, hi), GRID_POINTS)
            .expect("feasible grid");
        let f = objective_f(w, r.scalars.as_ref().expect("scalars"), Metric::L2Ratio).unwrap_or(f64::NEG_INFINITY);
        if (closed - x).abs() <= step * (1.0 + 1e-9) && f >= (1.0 - 1e-6) * best {
            None
        } else {
            Some(json!({"w": w.values(), "fixed": fixed, "closed": closed, "grid": x, "step": step}))
        }
    });
    let trials = instances.len();
    Verdict::count(good, trials, trials, "within one grid step and (1-1e-6) of the grid max", replay)
}

fn krum_bound_form(_: Mutation) -> Verdict {
    let mut rng = rng_for("krum_bound_form");
    let setting = KrumSetting {
        mode: AttackMode::Single,
        n: 10,
        m: 1,
        margin: DEFAULT_MARGIN,
    };
    let mut good = 0;
    let mut trials = 0;
    let mut replay = None;
    for &j in &DIMS {
        let p = per_param(j);
        for _ in 0..INSTANCES {
            trials += 1;
            let w = random_model(&mut rng, j);
            let w_g = near(&mut rng, &w, 0.1);
            let budget = euclidean_distance(&w_g, &w).expect("same shape");
            let r = faker_krum(&w, &w_g, &p, &setting, &mut rng).expect("valid instance");
            let d = euclidean_distance(&r.poisoned, &w).expect("same shape");
            let scalars = r.scalars.as_ref().expect("scalars").values().to_vec();
            let spent: f64 = (1..j).map(|t| ((scalars[t] - 1.0) * w.values()[t]).powi(2)).sum();
            let top = 1.0 + ((budget * budget - spent) / w.values()[0].powi(2)).sqrt();
            // objective along [1, top): strictly rising and feasible; infeasible past top
            let f_at = |x: f64| -> (f64, f64) {
                let mut a = scalars.clone();
                a[0] = x;
                let sv = expand_group_scalars(&a, &p).expect("positive");
                let m = apply_scalars(&w, &sv).expect("same shape");
                let dist = euclidean_distance(&m, &w).expect("same shape");
                (dist * sv.values().iter().sum::<f64>(), dist)
            };
            let mut rising = true;
            let mut prev = f64::NEG_INFINITY;
            let probes = GRID_POINTS / 10;
            for i in 0..probes {
                let x = 1.0 + (top - 1.0) * i as f64 / probes as f64;
                let (f, dist) = f_at(x);
                if !(f > prev && dist < budget) {
                    rising = false;
                    break;
                }
                prev = f;
            }
            let past = f_at(top * (1.0 + 1e-6) + 1e-9).1 >= budget;
            if d < budget && rising && past {
                good += 1;
            } else if replay.is_none() {
                replay = Some(json!({"w": w.values(), "w_g": w_g.values(), "scalars": scalars, "distance": d, "budget": budget}));
            }
        }
    }
    Verdict::count(good, trials, trials, "strictly below the bound, rising up to it", replay)
}

fn random_dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(2..=256)
}

fn normclip_norm_exact(_: Mutation) -> Verdict {
    let mut rng = rng_for("normclip_norm_exact");
    let mut good = 0;
    let mut replay = None;
    for _ in 0..1000 {
        let j = random_dim(&mut rng);
        let w = random_model(&mut rng, j);
        let r = faker_normclip(&w, &per_param(w.dim()), l2_norm(&w), &mut rng).expect("valid instance");
        let ratio = l2_norm(&r.poisoned) / l2_norm(&w);
        if (ratio - 1.0).abs() <= 1e-9 {
            good += 1;
        } else if replay.is_none() {
            replay = Some(json!({"w": w.values(), "ratio": ratio}));
        }
    }
    Verdict::count(good, 1000, 1000, "L ratio within 1e-9 of 1", replay)
}

fn fltrust_cosine_positive(_: Mutation) -> Verdict {
    let mut rng = rng_for("fltrust_cosine_positive");
    let mut good = 0;
    let mut replay = None;
    for _ in 0..1000 {
        let j = random_dim(&mut rng);
        let w = random_model(&mut rng, j);
        let r = faker_fltrust(&w, &per_param(w.dim()), &mut rng).expect("valid instance");
        let c = cosine_similarity(&r.poisoned, &w).unwrap_or(0.0);
        if c > 0.0 {
            good += 1;
        } else if replay.is_none() {
            replay = Some(json!({"w": w.values(), "cosine": c}));
        }
    }
    Verdict::count(good, 1000, 1000, "C(poison, w) > 0", replay)
}

fn shieldfl_cosine_one(_: Mutation) -> Verdict {
    let mut rng = rng_for("shieldfl_cosine_one");
    let mut good = 0;
    let mut replay = None;
    for _ in 0..1000 {
        let j = random_dim(&mut rng);
        let w = random_model(&mut rng, j);
        let n = rng.random_range(2..=200);
        let r = faker_shieldfl(&w, n).expect("non-zero model");
        let c = cosine_similarity(&r.poisoned, &w).unwrap_or(0.0);
        if (c - 1.0).abs() <= 1e-12 {
            good += 1;
        } else if replay.is_none() {
            replay = Some(json!({"w": w.values(), "n": n, "cosine": c}));
        }
    }
    Verdict::count(good, 1000, 1000, "C(poison, w) = 1 within 1e-12", replay)
}

fn feasibility_all_constructions(_: Mutation) -> Verdict {
    let mut rng = rng_for("feasibility_all_constructions");
    let params = DefenseParams::default();
    let setting = KrumSetting {
        mode: AttackMode::Single,
        n: 10,
        m: 1,
        margin: DEFAULT_MARGIN,
    };
    let mut good = 0;
    let mut replay = None;
    for _ in 0..1000 {
        let j = random_dim(&mut rng);
        let w = random_model(&mut rng, j);
        let w_g = near(&mut rng, &w, 0.1);
        let p = partition_groups(&w, PartitionStrategy::UniformBlocks(w.dim())).expect("valid blocks");
        let results = [
            ("fltrust", faker_fltrust(&w, &p, &mut rng)),
            ("normclip", faker_normclip(&w, &p, l2_norm(&w), &mut rng)),
            ("krum", faker_krum(&w, &w_g, &p, &setting, &mut rng)),
            ("flame", faker_flame(&w, &p, 10, &params, &mut rng)),
            ("diversefl", faker_diversefl(&w, &p, params.diversefl_kappa, &mut rng)),
            ("shieldfl", faker_shieldfl(&w, 10)),
        ];
        let bad = results.iter().find(|(_, r)| !r.as_ref().is_ok_and(|r| !r.failed));
        match bad {
            None => good += 1,
            Some((name, r)) if replay.is_none() => {
                replay = Some(json!({"construction": name, "w": w.values(), "w_g": w_g.values(),
                    "report": r.as_ref().map(|r| serde_json::to_value(&r.constraint_report).unwrap_or(Value::Null)).unwrap_or(Value::Null)}));
            }
            Some(_) => {}
        }
    }
    Verdict::count(good, 1000, 1000, "models with every construction all-green", replay)
}

const E2E_ROUNDS: usize = 100;
const E2E_DIM: usize = 100;
const E2E_N: usize = 10;

/// `E2E_N − 1` benign updates near `w`, with the attacker at index 0.
fn benign_around(rng: &mut ChaCha8Rng, w: &ModelVector, sigma: f64) -> Vec<ModelVector> {
    (1..E2E_N).map(|_| near(rng, w, sigma)).collect()
}

fn mean_of(models: &[ModelVector]) -> ModelVector {
    let k = models.len() as f64;
    let v = (0..models[0].dim())
        .map(|j| models.iter().map(|m| m.values()[j]).sum::<f64>() / k)
        .collect();
    models[0].with_values(v).expect("same shape")
}

fn krum_selects_poison(_: Mutation) -> Verdict {
    let mut rng = rng_for("krum_selects_poison");
    let setting = KrumSetting {
        mode: AttackMode::Single,
        n: E2E_N,
        m: 1,
        margin: DEFAULT_MARGIN,
    };
    let mut hits = 0;
    let mut replay = None;
    for _ in 0..E2E_ROUNDS {
        let w = random_model(&mut rng, E2E_DIM);
        let benign = benign_around(&mut rng, &w, 0.05);
        // the previous global is the mean of the benign round
        let w_g = mean_of(&benign);
        let r = faker_krum(&w, &w_g, &per_param(E2E_DIM), &setting, &mut rng).expect("valid instance");
        let mut all = vec![r.poisoned];
        all.extend(benign);
        let ctx = DefenseContext {
            m_assumed: Some(1),
            ..Default::default()
        };
        let o = Defense::new(DefenseKind::Krum).aggregate(&updates(all), &ctx).expect("enough clients");
        if o.selected == Some(0) {
            hits += 1;
        } else if replay.is_none() {
            replay = Some(json!({"w": w.values(), "w_g": w_g.values(), "selected": o.selected}));
        }
    }
    Verdict::count(hits, E2E_ROUNDS, 99, "rounds where Krum selects the poison", replay)
}

fn shieldfl_poison_weight(_: Mutation) -> Verdict {
    let mut rng = rng_for("shieldfl_poison_weight");
    let mut hits = 0;
    let mut replay = None;
    for _ in 0..E2E_ROUNDS {
        let w = random_model(&mut rng, E2E_DIM);
        let benign = benign_around(&mut rng, &w, 0.05);
        let mut all = vec![faker_shieldfl(&w, E2E_N).expect("non-zero").poisoned];
        all.extend(benign);
        let o = Defense::new(DefenseKind::ShieldFl)
            .aggregate(&updates(all), &DefenseContext::default())
            .expect("valid round");
        let mean = (1..E2E_N as u32).map(|i| o.weight(i)).sum::<f64>() / (E2E_N - 1) as f64;
        if o.weight(0) >= mean {
            hits += 1;
        } else if replay.is_none() {
            replay = Some(json!({"w": w.values(), "poison_weight": o.weight(0), "mean_benign": mean}));
        }
    }
    Verdict::count(hits, E2E_ROUNDS, 99, "rounds with poison weight >= mean benign weight", replay)
}

fn diversefl_accepts_poison(_: Mutation) -> Verdict {
    let mut rng = rng_for("diversefl_accepts_poison");
    let kappa = DefenseParams::default().diversefl_kappa;
    let mut hits = 0;
    let mut replay = None;
    for _ in 0..E2E_ROUNDS {
        let w = random_model(&mut rng, E2E_DIM);
        let server = near(&mut rng, &w, 0.05);
        let mut all = vec![faker_diversefl(&w, &per_param(E2E_DIM), kappa, &mut rng)
            .expect("valid instance")
            .poisoned];
        all.extend(benign_around(&mut rng, &w, 0.05));
        let ctx = DefenseContext {
            server_model: Some(server),
            ..Default::default()
        };
        let o = Defense::new(DefenseKind::DiverseFl).aggregate(&updates(all), &ctx).expect("valid round");
        if o.is_accepted(0) {
            hits += 1;
        } else if replay.is_none() {
            replay = Some(json!({"w": w.values()}));
        }
    }
    Verdict::count(hits, E2E_ROUNDS, E2E_ROUNDS, "rounds where DiverseFL accepts the poison", replay)
}

fn flame_admits_poison(_: Mutation) -> Verdict {
    let mut rng = rng_for("flame_admits_poison");
    let params = DefenseParams::default();
    let mut hits = 0;
    let mut replay = None;
    for _ in 0..E2E_ROUNDS {
        let w = random_model(&mut rng, E2E_DIM);
        let r = faker_flame(&w, &per_param(E2E_DIM), E2E_N, &params, &mut rng).expect("valid instance");
        let mut all = vec![r.poisoned];
        all.extend((1..E2E_N).map(|_| w.clone()));
        let ctx = DefenseContext {
            rng_seed: rng.random(),
            ..Default::default()
        };
        let o = Defense::new(DefenseKind::Flame).aggregate(&updates(all), &ctx).expect("valid round");
        if o.is_accepted(0) {
            hits += 1;
        } else if replay.is_none() {
            replay = Some(json!({"w": w.values()}));
        }
    }
    Verdict::count(hits, E2E_ROUNDS, E2E_ROUNDS, "rounds where FLAME admits the poison", replay)
}

fn foolsgold_keeps_sybils(_: Mutation) -> Verdict {
    let mut rng = rng_for("foolsgold_keeps_sybils");
    let sybils = 3;
    let mut hits = 0;
    let mut replay = None;
    for _ in 0..E2E_ROUNDS {
        let w_g = random_model(&mut rng, E2E_DIM);
        let models: Vec<ModelVector> = (0..E2E_N).map(|_| near(&mut rng, &w_g, 0.05)).collect();
        let p = per_param(E2E_DIM);
        let x = FakerInputs {
            w: &models[0],
            w_g: Some(&w_g),
            partition: &p,
            n: E2E_N,
            m: sybils,
            mode: AttackMode::Single,
            margin: DEFAULT_MARGIN,
            norm_upper: None,
            params: DefenseParams::default(),
        };
        let poisons = faker_sybil(&x, sybils, DefenseKind::FoolsGold, &mut rng).expect("valid instance");
        let mut all: Vec<ModelVector> = poisons.into_iter().map(|r| r.poisoned).collect();
        all.extend(models[sybils..].iter().cloned());
        let ups = updates(all);
        let mut ctx = DefenseContext::default();
        for u in &ups {
            let h = u.model.values().iter().zip(w_g.values()).map(|(a, b)| a - b).collect();
            ctx.history.insert(u.client_id, h);
        }
        let o = Defense::new(DefenseKind::FoolsGold).aggregate(&ups, &ctx).expect("valid round");
        if (0..sybils as u32).all(|i| o.weight(i) > 0.0) {
            hits += 1;
        } else if replay.is_none() {
            replay = Some(json!({"w_g": w_g.values(), "weights": o.weights}));
        }
    }
    Verdict::count(hits, E2E_ROUNDS, 95, "rounds where every Sybil keeps a positive rate", replay)
}

fn la_normclip_sometimes_rejected(_: Mutation) -> Verdict {
    let mut rng = rng_for("la_normclip_sometimes_rejected");
    let mut accepted = 0;
    for _ in 0..E2E_ROUNDS {
        let w = random_model(&mut rng, E2E_DIM);
        let benign = benign_around(&mut rng, &w, 0.05);
        let upper = benign.iter().map(l2_norm).fold(l2_norm(&w), f64::max);
        let band = |m: &ModelVector| {
            let l = l2_norm(m);
            l >= 0.8 * upper && l <= upper
        };
        if !la_attack(&w, band, &mut rng).expect("valid instance").failed {
            accepted += 1;
        }
    }
    Verdict {
        passed: accepted < E2E_ROUNDS,
        detail: format!("LA accepted in {accepted}/{E2E_ROUNDS} rounds (need fewer than all)"),
        replay: None,
    }
}

fn spp_subset_deviation(_: Mutation) -> Verdict {
    let mut rng = rng_for("spp_subset_deviation");
    let w = desk_model(&mut rng);
    let p = partition_groups(&w, PartitionStrategy::OutputLayerSplit).expect("two layers");
    let r = faker_fltrust(&w, &p, &mut rng).expect("valid instance");
    let full = subset_similarity(&r.poisoned, &w, &IndexSubset::full(w.dim()), Metric::CosineTimesNormRatio)
        .expect("non-zero");
    let size = w.dim().div_ceil(2);
    let mut hits = 0;
    let mut largest = 0.0f64;
    for _ in 0..1000 {
        let s = IndexSubset::random(w.dim(), size, &mut rng).expect("valid size");
        let d = (subset_similarity(&r.poisoned, &w, &s, Metric::CosineTimesNormRatio).expect("non-zero") - full).abs();
        largest = largest.max(d);
        if d > 0.05 {
            hits += 1;
        }
    }
    let mut v = Verdict::count(
        hits,
        1000,
        950,
        "half subsets moving the poison's trust ratio by more than 0.05",
        Some(json!({"scalars": r.scalars.as_ref().map(|s| (s.values()[0], s.values()[w.dim() - 1])), "full": full})),
    );
    v.detail.push_str(&format!("; largest deviation {largest:.4}"));
    v
}

fn spp_rejects_fltrust_poison(_: Mutation) -> Verdict {
    let mut rng = rng_for("spp_rejects_fltrust_poison");
    let defense = spp_wrap(Defense::new(DefenseKind::FlTrust), 0.5).expect("valid fraction");
    let base = desk_model(&mut rng);
    let p = partition_groups(&base, PartitionStrategy::OutputLayerSplit).expect("two layers");
    let rounds = 1000;
    let mut rejected = 0;
    let mut replay = None;
    for round in 0..rounds {
        let server = near(&mut rng, &base, 0.02);
        let honest: Vec<ModelVector> = (0..E2E_N).map(|_| near(&mut rng, &server, 0.02)).collect();
        let poison = faker_fltrust(&honest[0], &p, &mut rng).expect("valid instance").poisoned;
        let mut all = vec![poison];
        all.extend(honest[1..].iter().cloned());
        let ctx = DefenseContext {
            server_model: Some(server),
            rng_seed: round as u64,
            ..Default::default()
        };
        let o = defense.aggregate(&updates(all), &ctx).expect("valid round");
        if !o.is_accepted(0) {
            rejected += 1;
        } else if replay.is_none() {
            replay = Some(json!({"round": round, "trust": o.scores.get(&0)}));
        }
    }
    Verdict::count(rejected, rounds, 950, "rounds where SPP(1/2) rejects the FLTrust poison", replay)
}
