use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sim::ExperimentConfig;

use super::write_atomic;

/// Overrides the master seed of every loaded config.
pub const SEED_ENV: &str = "FAKER_SEED";
/// Overrides the report output directory.
pub const OUT_DIR_ENV: &str = "FAKER_OUT_DIR";

/// Parses and validates a JSON config. Unknown keys are rejected and the
/// offending field path is reported.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn config_json(cfg: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("configs serialize")
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let mut text = config_json(cfg);
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    /// Values from [`SEED_ENV`] and [`OUT_DIR_ENV`].
    pub fn from_env() -> Result<Self> {
        let seed = match std::env::var(SEED_ENV) {
            Ok(s) => Some(s.trim().parse().map_err(|_| Error::Config {
                path: SEED_ENV.into(),
                message: format!("not an unsigned integer: {s:?}"),
            })?),
            Err(_) => None,
        };
        let out_dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
        Ok(Self { seed, out_dir })
    }

    /// `self` where set, `fallback` otherwise.
    pub fn or(self, fallback: Overrides) -> Self {
        Self {
            seed: self.seed.or(fallback.seed),
            out_dir: self.out_dir.or(fallback.out_dir),
        }
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{AttackKind, AttackPlan};
    use crate::defenses::{Defense, DefenseKind};
    use crate::sim::PartitionSpec;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(r#"{"n": 4, "defense": {"kind": "fed_avg"}}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig::new(4, Defense::new(DefenseKind::FedAvg)));
        assert_eq!(cfg.attack_label(), "none");
    }

    #[test]
    fn too_many_attackers_rejected() {
        let e = parse_config(r#"{"n": 4, "m": 3, "defense": {"kind": "krum"}}"#).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "m"), "{e}");
    }

    #[test]
    fn unknown_key_names_its_path() {
        let e = parse_config(r#"{"n": 4, "defense": {"kind": "krum", "params": {"kappa": 2}}}"#).unwrap_err();
        match e {
            Error::Config { path, message } => {
                assert_eq!(path, "defense.params.kappa");
                assert!(message.contains("kappa"), "{message}");
            }
            other => panic!("{other}"),
        }
        let e = parse_config(r#"{"n": 4, "defense": {"kind": "krum"}, "seed": 1}"#).unwrap_err();
        assert!(e.to_string().contains("seed"));
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut cfg = ExperimentConfig::new(10, Defense::new(DefenseKind::FlTrust));
        cfg.m = 2;
        cfg.partition = PartitionSpec::Dirichlet { concentration: 0.3 };
        cfg.norm_bounds = Some((0.1, 0.7));
        cfg.attack = Some(AttackPlan::new(AttackKind::Faker, DefenseKind::FlTrust));
        save_config(&cfg, &path).unwrap();
        let back = load_config(&path).unwrap();
        assert_eq!(back, cfg);
        save_config(&back, &path).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg);
    }

    #[test]
    fn overrides_prefer_self() {
        let a = Overrides {
            seed: Some(1),
            out_dir: None,
        };
        let b = Overrides {
            seed: Some(2),
            out_dir: Some("x".into()),
        };
        let c = a.or(b);
        assert_eq!(c.seed, Some(1));
        assert_eq!(c.out_dir, Some(PathBuf::from("x")));
        let mut cfg = ExperimentConfig::new(2, Defense::new(DefenseKind::FedAvg));
        c.apply(&mut cfg);
        assert_eq!(cfg.master_seed, 1);
    }
}
