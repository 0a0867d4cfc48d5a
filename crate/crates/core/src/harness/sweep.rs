use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::attacks::{AttackKind, AttackPlan};
use crate::defenses::DefenseKind;
use crate::error::{Error, Result};
use crate::model::PartitionStrategy;
use crate::sim::{run_experiment, ExperimentConfig, MetricsReport, PartitionSpec, Simulation};

/// One experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    run_experiment(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    N,
    M,
    /// Classes per client under label-count partitioning.
    C,
    /// Dirichlet concentration.
    Dirichlet,
    Rounds,
    Seed,
    /// Attack group count: an integer, `J`, or `J/2`; `2` is the output-layer split.
    T,
    Defense,
    Attack,
    Margin,
}

impl Axis {
    pub const ALL: [Axis; 10] = [
        Axis::N,
        Axis::M,
        Axis::C,
        Axis::Dirichlet,
        Axis::Rounds,
        Axis::Seed,
        Axis::T,
        Axis::Defense,
        Axis::Attack,
        Axis::Margin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::N => "n",
            Axis::M => "m",
            Axis::C => "c",
            Axis::Dirichlet => "dirichlet",
            Axis::Rounds => "rounds",
            Axis::Seed => "seed",
            Axis::T => "t",
            Axis::Defense => "defense",
            Axis::Attack => "attack",
            Axis::Margin => "margin",
        }
    }
}

/// `name=v1,v2,...`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxisSpec {
    pub axis: Axis,
    pub values: Vec<String>,
}

impl FromStr for AxisSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |message: String| Error::Config {
            path: "axis".into(),
            message,
        };
        let (name, list) = s.split_once('=').ok_or_else(|| bad(format!("expected name=v1,v2,... in {s:?}")))?;
        let name = name.trim().to_ascii_lowercase();
        let axis = Axis::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| bad(format!("unknown axis {name:?}")))?;
        let values: Vec<String> = list
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(bad(format!("axis {name:?} has no values")));
        }
        Ok(Self { axis, values })
    }
}

impl fmt::Display for AxisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.axis.name(), self.values.join(","))
    }
}

fn parse<T: FromStr>(axis: Axis, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        path: axis.name().into(),
        message: format!("cannot parse {v:?}"),
    })
}

fn group_strategy(template: &ExperimentConfig, v: &str) -> Result<PartitionStrategy> {
    let dim = || -> Result<usize> { Ok(Simulation::new(template)?.shape().dim()) };
    let t = match v.to_ascii_uppercase().as_str() {
        "J" => dim()?,
        "J/2" => dim()?.div_ceil(2),
        _ => parse(Axis::T, v)?,
    };
    Ok(match t {
        2 => PartitionStrategy::OutputLayerSplit,
        t => PartitionStrategy::UniformBlocks(t),
    })
}

/// `template` with `axis` set to `value`.
pub fn apply_axis(template: &ExperimentConfig, axis: Axis, value: &str) -> Result<ExperimentConfig> {
    let mut cfg = template.clone();
    let bad = |message: String| Error::Config {
        path: axis.name().into(),
        message,
    };
    match axis {
        Axis::N => cfg.n = parse(axis, value)?,
        Axis::M => cfg.m = parse(axis, value)?,
        Axis::C => cfg.partition = PartitionSpec::LabelCount { c: parse(axis, value)? },
        Axis::Dirichlet => {
            cfg.partition = PartitionSpec::Dirichlet {
                concentration: parse(axis, value)?,
            }
        }
        Axis::Rounds => cfg.rounds = parse(axis, value)?,
        Axis::Seed => cfg.master_seed = parse(axis, value)?,
        Axis::T => {
            let strategy = group_strategy(template, value)?;
            cfg.attack
                .as_mut()
                .ok_or_else(|| bad("the template has no attack".into()))?
                .partition = strategy;
        }
        Axis::Defense => {
            let kind = DefenseKind::parse(value).ok_or_else(|| bad(format!("unknown defense {value:?}")))?;
            cfg.defense.kind = kind;
            if let Some(p) = cfg.attack.as_mut() {
                p.target_defense = kind;
            }
        }
        Axis::Attack => {
            cfg.attack = if value == "none" {
                None
            } else {
                let kind = [
                    AttackKind::Faker,
                    AttackKind::La,
                    AttackKind::Mb,
                    AttackKind::FakerBackdoor,
                    AttackKind::FakerSybil,
                    AttackKind::Duplicate,
                ]
                .into_iter()
                .find(|k| k.name() == value)
                .ok_or_else(|| bad(format!("unknown attack {value:?}")))?;
                let mut plan = template
                    .attack
                    .clone()
                    .unwrap_or_else(|| AttackPlan::new(kind, cfg.defense.kind));
                plan.kind = kind;
                Some(plan)
            }
        }
        Axis::Margin => {
            cfg.attack
                .as_mut()
                .ok_or_else(|| bad("the template has no attack".into()))?
                .margin = parse(axis, value)?
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub cell: usize,
    pub axis: String,
    pub value: String,
    pub error: String,
}

/// Runs one cell per axis value, in parallel. Results keep the axis order.
pub fn sweep(template: &ExperimentConfig, spec: &AxisSpec) -> Vec<std::result::Result<MetricsReport, CellFailure>> {
    spec.values
        .par_iter()
        .enumerate()
        .map(|(cell, value)| {
            apply_axis(template, spec.axis, value)
                .and_then(|cfg| run(&cfg))
                .map_err(|e| CellFailure {
                    cell,
                    axis: spec.axis.name().into(),
                    value: value.clone(),
                    error: e.to_string(),
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defenses::Defense;
    use crate::sim::{DatasetSource, TrainConfig};

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(4, Defense::new(DefenseKind::FedAvg));
        cfg.rounds = 2;
        cfg.dataset = DatasetSource::Blobs {
            per_class: 30,
            classes: 3,
            features: 5,
            spread: 0.5,
        };
        cfg.server_samples = 10;
        cfg.partition = PartitionSpec::LabelCount { c: 2 };
        cfg.training = TrainConfig {
            epochs: 1,
            hidden: 4,
            ..TrainConfig::default()
        };
        cfg
    }

    #[test]
    fn parses_axis() {
        let s: AxisSpec = "m=1, 2,5".parse().unwrap();
        assert_eq!(s.axis, Axis::M);
        assert_eq!(s.values, ["1", "2", "5"]);
        assert_eq!(s.to_string(), "m=1,2,5");
        assert!("m".parse::<AxisSpec>().is_err());
        assert!("q=1".parse::<AxisSpec>().is_err());
        assert!("m=".parse::<AxisSpec>().is_err());
    }

    #[test]
    fn single_cell_sweep_equals_run() {
        let cfg = small();
        let spec: AxisSpec = format!("seed={}", cfg.master_seed).parse().unwrap();
        let out = sweep(&cfg, &spec);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].as_ref().unwrap().without_timing(), run(&cfg).unwrap().without_timing());
    }

    #[test]
    fn bad_cell_is_identified() {
        let spec: AxisSpec = "m=1,3".parse().unwrap();
        let mut cfg = small();
        cfg.attack = Some(AttackPlan::new(AttackKind::Faker, DefenseKind::FedAvg));
        let out = sweep(&cfg, &spec);
        assert!(out[0].is_ok());
        let f = out[1].as_ref().unwrap_err();
        assert_eq!((f.cell, f.axis.as_str(), f.value.as_str()), (1, "m", "3"));
    }

    #[test]
    fn t_axis_resolves_dimension() {
        let mut cfg = small();
        cfg.attack = Some(AttackPlan::new(AttackKind::Faker, DefenseKind::FedAvg));
        // 5·4 + 4 + 4·3 + 3
        let j = apply_axis(&cfg, Axis::T, "J").unwrap();
        assert_eq!(j.attack.unwrap().partition, PartitionStrategy::UniformBlocks(39));
        let h = apply_axis(&cfg, Axis::T, "j/2").unwrap();
        assert_eq!(h.attack.unwrap().partition, PartitionStrategy::UniformBlocks(20));
        let two = apply_axis(&cfg, Axis::T, "2").unwrap();
        assert_eq!(two.attack.unwrap().partition, PartitionStrategy::OutputLayerSplit);
        assert!(apply_axis(&small(), Axis::T, "2").is_err());
    }

    #[test]
    fn defense_axis_retargets_attack() {
        let mut cfg = small();
        cfg.attack = Some(AttackPlan::new(AttackKind::Faker, DefenseKind::FedAvg));
        let c = apply_axis(&cfg, Axis::Defense, "krum").unwrap();
        assert_eq!(c.defense.kind, DefenseKind::Krum);
        assert_eq!(c.attack.unwrap().target_defense, DefenseKind::Krum);
        assert!(apply_axis(&cfg, Axis::Attack, "none").unwrap().attack.is_none());
    }
}
