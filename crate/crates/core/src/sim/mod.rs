//! Deterministic federated training: partitioned clients train a small MLP,
//! attackers replace their submissions, and a defense aggregates each round.

mod attack;
mod dataset;
mod mlp;
mod partition;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{AttackKind, AttackPlan};
use crate::defenses::{
    AggregationOutcome, CleanEvaluator, ClientUpdate, Defense, DefenseContext, DefenseKind,
};
use crate::error::{Error, Result};
use crate::model::ModelVector;
use crate::similarity::{model_difference, norm_of};

pub use dataset::{blobs, digits, load_csv, DatasetSource, SimDataset};
pub use mlp::{error_rate, local_train, mean_loss, predict, MlpShape, Optimizer, TrainConfig, TrainOutcome};
pub use partition::{partition_by_label_count, partition_dirichlet, ClientShard, PartitionSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// The single-round attack fires once the first attacker's local loss drops
/// below this multiple of its previous-round loss.
pub const SINGLE_ROUND_LOSS_RATIO: f64 = 1.1;

/// Trigger-stamped training for backdoor plans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackdoorConfig {
    pub target_label: usize,
    /// The last `trigger_features` inputs are set to 1.
    pub trigger_features: usize,
    /// Share of parameters, by largest backdoor-induced change, kept frozen.
    pub critical_fraction: f64,
}

impl Default for BackdoorConfig {
    fn default() -> Self {
        Self {
            target_label: 0,
            trigger_features: 4,
            critical_fraction: 0.1,
        }
    }
}

impl BackdoorConfig {
    pub fn stamp(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        let k = self.trigger_features.min(v.len());
        let len = v.len();
        v[len - k..].fill(1.0);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    #[serde(default)]
    pub m: usize,
    #[serde(default = "default_partition")]
    pub partition: PartitionSpec,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    pub defense: Defense,
    #[serde(default)]
    pub attack: Option<AttackPlan>,
    #[serde(default)]
    pub single_round_attack: bool,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub training: TrainConfig,
    /// Clean examples held by the server (FLTrust root set, ERR validation).
    #[serde(default = "default_server_samples")]
    pub server_samples: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Norm-clipping band; defaults to `[0.8·u, u]` with `u` the round's
    /// largest honest norm.
    #[serde(default)]
    pub norm_bounds: Option<(f64, f64)>,
    #[serde(default)]
    pub backdoor: BackdoorConfig,
}

fn default_partition() -> PartitionSpec {
    PartitionSpec::LabelCount { c: 10 }
}
fn default_rounds() -> usize {
    50
}
fn default_server_samples() -> usize {
    100
}
fn default_test_fraction() -> f64 {
    0.2
}

impl ExperimentConfig {
    pub fn new(n: usize, defense: Defense) -> Self {
        Self {
            n,
            m: 0,
            partition: default_partition(),
            rounds: default_rounds(),
            defense,
            attack: None,
            single_round_attack: false,
            master_seed: 0,
            dataset: DatasetSource::default(),
            training: TrainConfig::default(),
            server_samples: default_server_samples(),
            test_fraction: default_test_fraction(),
            norm_bounds: None,
            backdoor: BackdoorConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: String| Error::Config {
            path: path.into(),
            message,
        };
        if self.n == 0 {
            return Err(bad("n", "need at least one client".into()));
        }
        if 2 * self.m > self.n {
            return Err(bad("m", format!("{} attackers exceed half of {} clients", self.m, self.n)));
        }
        if self.rounds == 0 {
            return Err(bad("rounds", "need at least one round".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(bad("test_fraction", format!("must lie in (0, 1), got {}", self.test_fraction)));
        }
        if self.training.hidden == 0 || self.training.batch_size == 0 {
            return Err(bad("training", "hidden and batch_size must be positive".into()));
        }
        if let Some((lo, hi)) = self.norm_bounds {
            if !(0.0 <= lo && lo <= hi) {
                return Err(bad("norm_bounds", format!("need 0 <= lower <= upper, got ({lo}, {hi})")));
            }
        }
        match self.partition {
            PartitionSpec::LabelCount { c } if c == 0 => {
                return Err(bad("partition.c", "must be at least 1".into()))
            }
            PartitionSpec::Dirichlet { concentration } if !(concentration > 0.0) => {
                return Err(bad("partition.concentration", "must be positive".into()))
            }
            _ => {}
        }
        if let Some(plan) = &self.attack {
            plan.validate(self.m)?;
            if !(self.backdoor.critical_fraction >= 0.0 && self.backdoor.critical_fraction < 1.0) {
                return Err(bad("backdoor.critical_fraction", "must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn attack_label(&self) -> &'static str {
        match &self.attack {
            Some(p) if self.m > 0 => p.kind.name(),
            _ => "none",
        }
    }
}

/// One client's line in a round record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client_id: u32,
    pub submitted: ModelVector,
    pub poisoned: bool,
    pub accepted: bool,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub global_model: ModelVector,
    pub clients: Vec<ClientRecord>,
    pub attacked: bool,
    pub attack_success: bool,
    /// Generation time of the first attacker only.
    pub attack_time_seconds: f64,
    pub test_error: f64,
    pub bias_delta: f64,
    /// Two seeded coordinates as `(index, attacked global, shadow global)`.
    pub bias_samples: Vec<(usize, f64, f64)>,
    /// Every submission was rejected and the previous global carried over.
    pub carried_over: bool,
    pub outcome: Option<AggregationOutcome>,
}

impl RoundRecord {
    pub fn accepted_counts(&self) -> (usize, usize) {
        let benign = self.clients.iter().filter(|c| !c.poisoned && c.accepted).count();
        let poisoned = self.clients.iter().filter(|c| c.poisoned && c.accepted).count();
        (benign, poisoned)
    }

    pub fn summary(&self) -> RoundSummary {
        let (accepted_benign, accepted_poisoned) = self.accepted_counts();
        RoundSummary {
            round: self.round,
            test_error: self.test_error,
            attacked: self.attacked,
            attack_success: self.attack_success,
            attack_time_seconds: self.attack_time_seconds,
            bias_delta: self.bias_delta,
            bias_samples: self.bias_samples.clone(),
            accepted_benign,
            accepted_poisoned,
            carried_over: self.carried_over,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub test_error: f64,
    pub attacked: bool,
    pub attack_success: bool,
    pub attack_time_seconds: f64,
    pub bias_delta: f64,
    pub bias_samples: Vec<(usize, f64, f64)>,
    pub accepted_benign: usize,
    pub accepted_poisoned: usize,
    pub carried_over: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackdoorMetrics {
    /// Clean test accuracy.
    pub main_accuracy: f64,
    /// Share of stamped non-target test examples classified as the target.
    pub targeted_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "ER")]
    pub er: f64,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "TC_seconds")]
    pub tc_seconds: f64,
    pub attacked_rounds: usize,
    pub series: Vec<RoundSummary>,
    pub backdoor: Option<BackdoorMetrics>,
    pub config: ExperimentConfig,
    pub version: String,
}

impl MetricsReport {
    /// The report with wall-clock fields zeroed.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.tc_seconds = 0.0;
        for s in r.series.iter_mut() {
            s.attack_time_seconds = 0.0;
        }
        r
    }
}

/// Verdict for one round, given who actually submitted poison.
pub fn judge_attack_success(kind: DefenseKind, outcome: &AggregationOutcome, malicious_ids: &[u32]) -> bool {
    if malicious_ids.is_empty() {
        return false;
    }
    let poisoned: BTreeSet<u32> = malicious_ids.iter().copied().collect();
    match kind {
        DefenseKind::Krum => outcome.selected.is_some_and(|s| poisoned.contains(&s)),
        DefenseKind::ShieldFl => {
            let benign: Vec<f64> = outcome
                .weights
                .iter()
                .filter(|(id, _)| !poisoned.contains(id))
                .map(|(_, &w)| w)
                .collect();
            let mean = if benign.is_empty() {
                0.0
            } else {
                benign.iter().sum::<f64>() / benign.len() as f64
            };
            let least = poisoned.iter().map(|&id| outcome.weight(id)).fold(f64::INFINITY, f64::min);
            least > mean
        }
        _ => poisoned.iter().all(|&id| outcome.is_accepted(id)),
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for `(master, parts...)`.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p)))
}

const TAG_DATA: u64 = 1;
const TAG_INIT: u64 = 2;
const TAG_TRAIN: u64 = 3;
const TAG_SERVER: u64 = 4;
const TAG_ATTACK: u64 = 5;
const TAG_DEFENSE: u64 = 6;
const TAG_BIAS: u64 = 7;
const TAG_BACKDOOR: u64 = 8;

/// Mutable state carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub global_model: ModelVector,
    /// Accumulated `submitted − global` per client.
    pub history: BTreeMap<u32, Vec<f64>>,
    pub round: usize,
    /// Per-client stream roots.
    pub client_seeds: Vec<u64>,
    pub previous_attacker_loss: Option<f64>,
    pub single_round_fired: bool,
}

pub struct Simulation {
    cfg: ExperimentConfig,
    shape: MlpShape,
    pool: SimDataset,
    test: Arc<SimDataset>,
    root: Arc<SimDataset>,
    shards: Vec<ClientShard>,
    /// Per-attacker clean-plus-stamped training sets for backdoor plans.
    backdoor_pools: Vec<SimDataset>,
    evaluator: CleanEvaluator,
    state: SimState,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.master_seed;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_DATA]));
        let all = cfg.dataset.load(&mut rng)?;
        let held = ((cfg.test_fraction * all.len() as f64).round() as usize).max(1);
        let (rest, test) = all.split(held, &mut rng)?;
        let (pool, root) = rest.split(cfg.server_samples, &mut rng)?;
        let shards = cfg.partition.apply(&pool, cfg.n, &mut rng)?;
        let shape = MlpShape {
            input: all.dim(),
            hidden: cfg.training.hidden,
            output: all.num_classes(),
        };
        let global = shape.init(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_INIT])))?;
        let root = Arc::new(root);
        let evaluator = {
            let root = Arc::clone(&root);
            CleanEvaluator::new(move |m| error_rate(&shape, m, &root))
        };
        let backdoor_pools = match &cfg.attack {
            Some(p) if p.kind == AttackKind::FakerBackdoor => (0..cfg.m)
                .map(|i| stamped_pool(&pool, &shards[i], &cfg.backdoor))
                .collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        let client_seeds = (0..cfg.n as u64).map(|i| derive_seed(seed, &[TAG_TRAIN, i])).collect();
        Ok(Self {
            shape,
            pool,
            test: Arc::new(test),
            root,
            shards,
            backdoor_pools,
            evaluator,
            state: SimState {
                global_model: global,
                history: BTreeMap::new(),
                round: 0,
                client_seeds,
                previous_attacker_loss: None,
                single_round_fired: false,
            },
            cfg: cfg.clone(),
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn shards(&self) -> &[ClientShard] {
        &self.shards
    }

    pub fn test_set(&self) -> &SimDataset {
        &self.test
    }

    pub fn root_set(&self) -> &SimDataset {
        &self.root
    }

    pub fn clean_evaluator(&self) -> &CleanEvaluator {
        &self.evaluator
    }

    pub fn malicious_ids(&self) -> Vec<u32> {
        (0..self.cfg.m as u32).collect()
    }

    fn train_clients(&self) -> Result<Vec<TrainOutcome>> {
        let r = self.state.round as u64;
        let g = &self.state.global_model;
        (0..self.cfg.n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.state.client_seeds[i], &[r]));
                local_train(g, &self.shape, &self.pool, &self.shards[i].indices, &self.cfg.training, &mut rng)
            })
            .collect()
    }

    fn attack_active(&mut self, honest: &[TrainOutcome]) -> bool {
        if self.cfg.attack.is_none() || self.cfg.m == 0 {
            return false;
        }
        if !self.cfg.single_round_attack {
            return true;
        }
        let loss = honest[0].final_loss();
        let fire = !self.state.single_round_fired
            && matches!((loss, self.state.previous_attacker_loss), (Some(l), Some(p)) if l < SINGLE_ROUND_LOSS_RATIO * p);
        self.state.previous_attacker_loss = loss;
        if fire {
            self.state.single_round_fired = true;
        }
        fire
    }

    fn context(&self, honest: &[TrainOutcome], seeds: (u64, u64)) -> Result<DefenseContext> {
        let r = self.state.round as u64;
        let server_model = if self.cfg.defense.kind.needs_server_model() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seeds.0, &[TAG_SERVER, r]));
            let all: Vec<usize> = (0..self.root.len()).collect();
            Some(local_train(&self.state.global_model, &self.shape, &self.root, &all, &self.cfg.training, &mut rng)?.model)
        } else {
            None
        };
        let norm_bounds = self.cfg.norm_bounds.unwrap_or_else(|| {
            let u = honest.iter().map(|t| norm_of(t.model.values())).fold(0.0, f64::max);
            (0.8 * u, u)
        });
        Ok(DefenseContext {
            server_model,
            norm_bounds: Some(norm_bounds),
            m_assumed: Some(self.cfg.m),
            history: BTreeMap::new(),
            previous_global: Some(self.state.global_model.clone()),
            clean_eval: Some(self.evaluator.clone()),
            rng_seed: seeds.1,
        })
    }

    fn aggregate(&self, updates: &[ClientUpdate], ctx: &DefenseContext) -> Result<(ModelVector, Option<AggregationOutcome>)> {
        match self.cfg.defense.aggregate(updates, ctx) {
            Ok(o) => Ok((o.global_model.clone(), Some(o))),
            Err(Error::NoSurvivors) => Ok((self.state.global_model.clone(), None)),
            Err(e) => Err(e),
        }
    }

    /// Runs one communication round and advances the state.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let round = self.state.round;
        let wrap = |e: Error| Error::Round {
            round,
            source: Box::new(e),
        };
        self.step().map_err(wrap)
    }

    fn step(&mut self) -> Result<RoundRecord> {
        let seed = self.cfg.master_seed;
        let r = self.state.round as u64;
        let n = self.cfg.n;
        let m = self.cfg.m;
        let honest = self.train_clients()?;
        let attacked = self.attack_active(&honest);
        let mut ctx = self.context(&honest, (seed, derive_seed(seed, &[TAG_DEFENSE, r])))?;

        let mut submitted: Vec<ModelVector> = honest.iter().map(|t| t.model.clone()).collect();
        let mut attack_time = 0.0;
        if attacked {
            let plan = self.cfg.attack.as_ref().expect("attack plan present");
            let backdoored = if plan.kind == AttackKind::FakerBackdoor {
                let g = &self.state.global_model;
                let trained: Vec<ModelVector> = (0..m)
                    .into_par_iter()
                    .map(|i| {
                        let pool = &self.backdoor_pools[i];
                        let idx: Vec<usize> = (0..pool.len()).collect();
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_BACKDOOR, r, i as u64]));
                        local_train(g, &self.shape, pool, &idx, &self.cfg.training, &mut rng).map(|t| t.model)
                    })
                    .collect::<Result<_>>()?;
                Some(trained)
            } else {
                None
            };
            let inputs = attack::AttackInputs {
                plan,
                params: self.cfg.defense.params,
                honest: honest[..m].iter().map(|t| &t.model).collect(),
                backdoored: backdoored.as_ref().map(|b| b.iter().collect()),
                critical_fraction: self.cfg.backdoor.critical_fraction,
                previous_global: &self.state.global_model,
                n,
                norm_bounds: ctx.norm_bounds.expect("bounds set"),
                seeds: (0..m as u64)
                    .map(|i| derive_seed(plan.rng_seed ^ seed, &[TAG_ATTACK, r, i]))
                    .collect(),
            };
            let gen = attack::generate(&inputs)?;
            attack_time = gen.first_seconds;
            for (slot, res) in submitted.iter_mut().zip(gen.results) {
                *slot = res.poisoned;
            }
        }

        let updates: Vec<ClientUpdate> = submitted
            .iter()
            .enumerate()
            .map(|(i, model)| ClientUpdate {
                client_id: i as u32,
                model: model.clone(),
                data_size: self.shards[i].indices.len(),
                round: r as u32,
            })
            .collect();
        let g = self.state.global_model.values();
        for u in &updates {
            let h = self.state.history.entry(u.client_id).or_insert_with(|| vec![0.0; g.len()]);
            for ((hj, x), gj) in h.iter_mut().zip(u.model.values()).zip(g) {
                *hj += x - gj;
            }
        }
        ctx.history = self.state.history.clone();

        let (global, outcome) = self.aggregate(&updates, &ctx)?;
        let malicious: Vec<u32> = if attacked { self.malicious_ids() } else { Vec::new() };
        let (bias_delta, bias_samples) = if attacked {
            let benign = &updates[m..];
            ctx.history.retain(|id, _| *id as usize >= m);
            let (shadow, _) = self.aggregate(benign, &ctx)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_BIAS, r]));
            let picks = crate::similarity::IndexSubset::random(global.dim(), 2.min(global.dim()), &mut rng)?;
            let samples = picks
                .indices()
                .iter()
                .map(|&j| (j, global.values()[j], shadow.values()[j]))
                .collect();
            (model_difference(&global, &shadow)?, samples)
        } else {
            (0.0, Vec::new())
        };
        let attack_success = match &outcome {
            Some(o) => judge_attack_success(self.cfg.defense.kind, o, &malicious),
            None => false,
        };
        let clients = updates
            .into_iter()
            .map(|u| {
                let id = u.client_id;
                ClientRecord {
                    client_id: id,
                    submitted: u.model,
                    poisoned: attacked && (id as usize) < m,
                    accepted: outcome.as_ref().is_some_and(|o| o.is_accepted(id)),
                    weight: outcome.as_ref().map_or(0.0, |o| o.weight(id)),
                }
            })
            .collect();
        let test_error = error_rate(&self.shape, &global, &self.test);
        self.state.global_model = global.clone();
        self.state.round += 1;
        Ok(RoundRecord {
            round: r as usize,
            global_model: global,
            clients,
            attacked,
            attack_success,
            attack_time_seconds: attack_time,
            test_error,
            bias_delta,
            bias_samples,
            carried_over: outcome.is_none(),
            outcome,
        })
    }

    pub fn backdoor_metrics(&self) -> BackdoorMetrics {
        let g = &self.state.global_model;
        let b = &self.cfg.backdoor;
        let main_accuracy = 1.0 - error_rate(&self.shape, g, &self.test);
        let others: Vec<usize> = (0..self.test.len()).filter(|&i| self.test.label(i) != b.target_label).collect();
        let hit = others
            .iter()
            .filter(|&&i| predict(&self.shape, g, &b.stamp(self.test.features(i))) == b.target_label)
            .count();
        BackdoorMetrics {
            main_accuracy,
            targeted_accuracy: hit as f64 / others.len().max(1) as f64,
        }
    }
}

/// The attacker's shard plus a stamped, relabelled copy of every example.
fn stamped_pool(pool: &SimDataset, shard: &ClientShard, b: &BackdoorConfig) -> Result<SimDataset> {
    let mut features = Vec::with_capacity(2 * shard.indices.len());
    let mut labels = Vec::with_capacity(2 * shard.indices.len());
    for &i in &shard.indices {
        features.push(pool.features(i).to_vec());
        labels.push(pool.label(i));
        features.push(b.stamp(pool.features(i)));
        labels.push(b.target_label);
    }
    if b.target_label >= pool.num_classes() {
        return Err(Error::Config {
            path: "backdoor.target_label".into(),
            message: format!("no class {}", b.target_label),
        });
    }
    SimDataset::new(features, labels, pool.num_classes())
}

/// Runs every round of `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let mut sim = Simulation::new(cfg)?;
    let mut series = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        series.push(sim.run_round()?.summary());
    }
    let attacked: Vec<&RoundSummary> = series.iter().filter(|s| s.attacked).collect();
    let attacked_rounds = attacked.len();
    let sr = if attacked_rounds == 0 {
        0.0
    } else {
        attacked.iter().filter(|s| s.attack_success).count() as f64 / attacked_rounds as f64
    };
    let tc_seconds = if attacked_rounds == 0 {
        0.0
    } else {
        attacked.iter().map(|s| s.attack_time_seconds).sum::<f64>() / attacked_rounds as f64
    };
    let backdoor = match &cfg.attack {
        Some(p) if p.kind == AttackKind::FakerBackdoor && cfg.m > 0 => Some(sim.backdoor_metrics()),
        _ => None,
    };
    Ok(MetricsReport {
        er: series.last().map_or(0.0, |s| s.test_error),
        sr,
        tc_seconds,
        attacked_rounds,
        series,
        backdoor,
        config: cfg.clone(),
        version: VERSION.to_string(),
    })
}
