//! Configuration files, batch runs and sweeps, oracle self-checks, and
//! report emission.

mod config;
mod oracles;
mod report;
mod sweep;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use config::{config_json, load_config, parse_config, save_config, Overrides, OUT_DIR_ENV, SEED_ENV};
pub use oracles::{
    oracle_check, oracle_check_with, oracle_names, run_oracle, Mutation, OracleEntry, OracleReport, GRID_POINTS,
    ORACLE_SEED,
};
pub use report::{
    emit_report, parse_csv, partition_label, read_reports, render_report, CsvRow, ReportFormat, CSV_COLUMNS,
};
pub use sweep::{apply_axis, run, sweep, Axis, AxisSpec, CellFailure};

/// Writes through a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
