//! Battery summaries and the on-disk session layout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::session::log::write_log;
use crate::trials::{GrtScore, MaxForceResult, ModulationBattery, TrialRecord};

pub const SUMMARY_COLUMNS: [&str; 7] = [
    "mode",
    "average_max_force_n",
    "highest_max_force_n",
    "target_percent",
    "target_force_n",
    "average_modulation_time_s",
    "successes",
];

/// One line of the summary table: a (mode, target) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mode: String,
    pub average_max_force: f64,
    pub highest_max_force: f64,
    pub target_percent: u32,
    pub target_force_display: f64,
    pub average_modulation_time: Option<f64>,
    pub successes: usize,
    pub trials: usize,
}

pub fn summary_rows(max: &MaxForceResult, battery: &ModulationBattery) -> Vec<SummaryRow> {
    battery
        .per_target
        .iter()
        .map(|t| SummaryRow {
            mode: battery.mode.name().to_string(),
            average_max_force: max.average_max,
            highest_max_force: max.highest_max,
            target_percent: t.target.percent,
            target_force_display: t.target.display,
            average_modulation_time: t.average_time(),
            successes: t.successes(),
            trials: t.outcomes.len(),
        })
        .collect()
}

pub fn write_summary_to<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.mode.clone(),
            format!("{:.2}", r.average_max_force),
            format!("{:.2}", r.highest_max_force),
            r.target_percent.to_string(),
            format!("{:.1}", r.target_force_display),
            r.average_modulation_time.map_or_else(|| "-".to_string(), |t| format!("{t:.2}")),
            format!("{}/{}", r.successes, r.trials),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub const GRT_COLUMNS: [&str; 4] = ["mode", "object", "required_force_n", "successes"];

pub fn write_grt_summary_to<W: Write>(out: W, scores: &[(&str, &GrtScore, &[f64])]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GRT_COLUMNS)?;
    for (mode, score, required) in scores {
        for (s, req) in score.per_object.iter().zip(required.iter()) {
            w.write_record([mode.to_string(), s.name.clone(), format!("{req}"), s.successes.to_string()])?;
        }
        w.write_record([mode.to_string(), "total".into(), String::new(), score.total.to_string()])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// A session output directory: `trials/` holds one CSV per trial, summaries
/// sit at the top level.
#[derive(Debug, Clone)]
pub struct SessionDir {
    root: PathBuf,
}

impl SessionDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let trials = root.join("trials");
        fs::create_dir_all(&trials).map_err(|e| Error::io(&trials, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn trial_path(&self, record: &TrialRecord) -> PathBuf {
        self.root.join("trials").join(format!("{}.csv", record.id.file_stem()))
    }

    pub fn write_record(&self, record: &TrialRecord) -> Result<PathBuf> {
        let path = self.trial_path(record);
        write_log(&path, &record.rows)?;
        Ok(path)
    }

    pub fn write_records<'a>(&self, records: impl IntoIterator<Item = &'a TrialRecord>) -> Result<()> {
        for r in records {
            self.write_record(r)?;
        }
        Ok(())
    }

    /// Writes `name` under the root through a buffered writer.
    pub fn write_with(&self, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let path = self.root.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut buf = std::io::BufWriter::new(file);
        f(&mut buf)?;
        buf.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlMode;
    use crate::trials::{compute_targets, ModulationOutcome, TargetResult};

    #[test]
    fn summary_mirrors_table_layout() {
        let max = MaxForceResult::from_peaks(vec![8.0, 8.7, 8.4]).unwrap();
        let targets = compute_targets(max.highest_max).unwrap();
        let ok = |t| ModulationOutcome {
            success: true,
            modulation_time: Some(t),
            end_tick: 0,
        };
        let fail = ModulationOutcome {
            success: false,
            modulation_time: None,
            end_tick: 3000,
        };
        let battery = ModulationBattery {
            mode: ControlMode::Passive,
            per_target: vec![
                TargetResult {
                    target: targets[0],
                    outcomes: vec![ok(3.0), ok(4.0), ok(5.0)],
                },
                TargetResult {
                    target: targets[1],
                    outcomes: vec![fail, fail, fail],
                },
            ],
            records: vec![],
        };
        let rows = summary_rows(&max, &battery);
        let mut buf = Vec::new();
        write_summary_to(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SUMMARY_COLUMNS.join(","));
        assert_eq!(lines[1], "passive,8.37,8.70,20,1.7,4.00,3/3");
        assert_eq!(lines[2], "passive,8.37,8.70,50,4.4,-,0/3");
    }
}
