use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{MetricsReport, PartitionSpec};

use super::write_atomic;

pub const CSV_COLUMNS: [&str; 10] = [
    "defense",
    "attack",
    "n",
    "m",
    "partition",
    "rounds",
    "ER",
    "SR",
    "TC_seconds",
    "seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::Config {
                path: "format".into(),
                message: format!("expected csv or json, got {s:?}"),
            }),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub defense: String,
    pub attack: String,
    pub n: usize,
    pub m: usize,
    pub partition: String,
    pub rounds: usize,
    #[serde(rename = "ER")]
    pub er: f64,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "TC_seconds")]
    pub tc_seconds: f64,
    pub seed: u64,
}

pub fn partition_label(p: &PartitionSpec) -> String {
    match p {
        PartitionSpec::LabelCount { c } => format!("label_count({c})"),
        PartitionSpec::Dirichlet { concentration } => format!("dirichlet({concentration})"),
    }
}

impl CsvRow {
    pub fn of(r: &MetricsReport) -> Self {
        let c = &r.config;
        let mut defense = c.defense.kind.name().to_string();
        if c.defense.spp.is_some() {
            defense.push_str("+spp");
        }
        Self {
            defense,
            attack: c.attack_label().to_string(),
            n: c.n,
            m: c.m,
            partition: partition_label(&c.partition),
            rounds: c.rounds,
            er: r.er,
            sr: r.sr,
            tc_seconds: r.tc_seconds,
            seed: c.master_seed,
        }
    }
}

/// Report bytes in `format`.
pub fn render_report(reports: &[MetricsReport], format: ReportFormat) -> Result<Vec<u8>> {
    if reports.is_empty() {
        return Err(Error::Config {
            path: "reports".into(),
            message: "nothing to emit".into(),
        });
    }
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in reports {
                w.serialize(CsvRow::of(r)).map_err(|e| Error::Io(e.to_string()))?;
            }
            w.into_inner().map_err(|e| Error::Io(e.to_string()))
        }
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(reports).map_err(|e| Error::Io(e.to_string()))?;
            v.push(b'\n');
            Ok(v)
        }
    }
}

/// Writes `reports` to `path`, replacing it atomically.
pub fn emit_report(reports: &[MetricsReport], format: ReportFormat, path: &Path) -> Result<()> {
    write_atomic(path, &render_report(reports, format)?)
}

/// Reports from a JSON file holding one report or an array of them.
pub fn read_reports(path: &Path) -> Result<Vec<MetricsReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<MetricsReport>),
        One(Box<MetricsReport>),
    }
    let parsed: OneOrMany = serde_json::from_str(&text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(match parsed {
        OneOrMany::Many(v) => v,
        OneOrMany::One(r) => vec![*r],
    })
}

pub fn parse_csv(bytes: &[u8]) -> Result<Vec<CsvRow>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defenses::{Defense, DefenseKind};
    use crate::sim::ExperimentConfig;

    fn report(er: f64, seed: u64) -> MetricsReport {
        let mut cfg = ExperimentConfig::new(10, Defense::new(DefenseKind::Krum));
        cfg.master_seed = seed;
        cfg.partition = PartitionSpec::LabelCount { c: 5 };
        MetricsReport {
            er,
            sr: 1.0 / 3.0,
            tc_seconds: 1.234_567_891e-5,
            attacked_rounds: 0,
            series: Vec::new(),
            backdoor: None,
            config: cfg,
            version: "t".into(),
        }
    }

    #[test]
    fn one_report_is_header_plus_row() {
        let b = render_report(&[report(0.125, 7)], ReportFormat::Csv).unwrap();
        let text = String::from_utf8(b).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert!(lines[1].starts_with("krum,none,10,0,label_count(5),50,0.125,"));
        assert!(lines[1].ends_with(",7"));
    }

    #[test]
    fn csv_round_trips() {
        let reports = [report(0.1, 1), report(2.0 / 7.0, 2)];
        let rows = parse_csv(&render_report(&reports, ReportFormat::Csv).unwrap()).unwrap();
        for (row, r) in rows.iter().zip(&reports) {
            assert!((row.er - r.er).abs() < 1e-6);
            assert!((row.sr - r.sr).abs() < 1e-6);
            assert!((row.tc_seconds - r.tc_seconds).abs() < 1e-6);
            assert_eq!(row, &CsvRow::of(r));
        }
    }

    #[test]
    fn output_is_deterministic_and_json_mirrors() {
        let reports = [report(0.3, 4)];
        for f in [ReportFormat::Csv, ReportFormat::Json] {
            assert_eq!(render_report(&reports, f).unwrap(), render_report(&reports, f).unwrap());
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        emit_report(&reports, ReportFormat::Json, &p).unwrap();
        assert_eq!(read_reports(&p).unwrap(), reports);
        std::fs::write(&p, serde_json::to_string(&reports[0]).unwrap()).unwrap();
        assert_eq!(read_reports(&p).unwrap(), reports);
    }

    #[test]
    fn empty_and_unwritable_are_errors() {
        assert!(render_report(&[], ReportFormat::Csv).is_err());
        let p = Path::new("/nonexistent-dir/x/y.csv");
        assert!(matches!(emit_report(&[report(0.1, 1)], ReportFormat::Csv, p), Err(Error::Io(_))));
    }

    #[test]
    fn spp_is_marked() {
        let mut r = report(0.1, 1);
        r.config.defense = crate::defenses::spp_wrap(Defense::new(DefenseKind::FlTrust), 0.5).unwrap();
        assert_eq!(CsvRow::of(&r).defense, "fltrust+spp");
    }
}
