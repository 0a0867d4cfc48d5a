//! Poison constructions: the closed-form scalar attacks per defense, the
//! halving-search baselines, and the backdoor and Sybil extensions.

mod backdoor;
mod baseline;
mod faker;
mod oracle;

use serde::{Deserialize, Serialize};

use crate::defenses::DefenseKind;
use crate::error::{Error, Result};
use crate::model::{ModelVector, PartitionStrategy, ScalarVector};

pub use backdoor::{faker_backdoor, BackdoorTarget};
pub use baseline::{la_attack, mb_attack, HALVING_START, HALVING_THRESHOLD};
pub use faker::{
    faker_diversefl, faker_diversefl_with, faker_flame, faker_fltrust, faker_fltrust_with, faker_for, faker_krum,
    faker_krum_with, faker_normclip, faker_normclip_with, faker_shieldfl, faker_sybil,
    fltrust_free_scalar, krum_budget, normclip_free_scalar, FakerInputs, KrumSetting,
    FLTRUST_FIXED_RANGE,
};
pub use oracle::{grid_max_1d, oracle_grid_max};

/// Strict-inequality margin applied to upper bounds.
pub const DEFAULT_MARGIN: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Faker,
    La,
    Mb,
    FakerBackdoor,
    FakerSybil,
    /// Sybils replaying one identical poison.
    Duplicate,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Faker => "faker",
            AttackKind::La => "la",
            AttackKind::Mb => "mb",
            AttackKind::FakerBackdoor => "faker_backdoor",
            AttackKind::FakerSybil => "faker_sybil",
            AttackKind::Duplicate => "duplicate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    #[default]
    Single,
    Cooperative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackPlan {
    pub kind: AttackKind,
    pub target_defense: DefenseKind,
    #[serde(default)]
    pub mode: AttackMode,
    #[serde(default)]
    pub partition: PartitionStrategy,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

impl AttackPlan {
    pub fn new(kind: AttackKind, target_defense: DefenseKind) -> Self {
        Self {
            kind,
            target_defense,
            mode: AttackMode::Single,
            partition: PartitionStrategy::default(),
            margin: DEFAULT_MARGIN,
            rng_seed: 0,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return Err(Error::Config {
                path: "attack.margin".into(),
                message: format!("must lie in (0, 1), got {}", self.margin),
            });
        }
        if self.mode == AttackMode::Cooperative && m < 2 {
            return Err(Error::Config {
                path: "attack.mode".into(),
                message: "cooperative mode needs at least two attackers".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub satisfied: bool,
}

impl ConstraintCheck {
    pub fn new(name: &str, value: f64, bound: f64, satisfied: bool) -> Self {
        Self {
            name: name.to_string(),
            value,
            bound,
            satisfied,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonResult {
    pub poisoned: ModelVector,
    /// Per-parameter scalars; absent for the sign-flipping baselines, whose
    /// multipliers can be negative.
    pub scalars: Option<ScalarVector>,
    pub objective_value: f64,
    pub constraint_report: Vec<ConstraintCheck>,
    pub iterations: usize,
    pub failed: bool,
}

impl PoisonResult {
    pub(crate) fn from_checks(
        poisoned: ModelVector,
        scalars: Option<ScalarVector>,
        objective_value: f64,
        constraint_report: Vec<ConstraintCheck>,
        iterations: usize,
    ) -> Self {
        let failed = constraint_report.iter().any(|c| !c.satisfied);
        Self {
            poisoned,
            scalars,
            objective_value,
            constraint_report,
            iterations,
            failed,
        }
    }

    pub fn check(&self, name: &str) -> Option<&ConstraintCheck> {
        self.constraint_report.iter().find(|c| c.name == name)
    }
}
