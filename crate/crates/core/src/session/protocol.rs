//! Whole-session drivers: each runs a battery from a config and writes its
//! logs and summary into a session directory.

use std::io::Write;

use serde::Serialize;

use crate::control::ControlMode;
use crate::error::{Error, Result};
use crate::parallel::Execution;
use crate::plant::PlantParams;
use crate::session::config::SessionConfig;
use crate::session::summary::{summary_rows, write_grt_summary_to, write_summary_to, SessionDir, SummaryRow};
use crate::sim::Rig;
use crate::trials::{
    compute_targets, run_functional_battery, run_max_force, run_modulation_battery, GrtScore, MaxForceRun,
    ModulationBattery,
};

pub const CONFIG_FILE: &str = "session.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MAX_FORCE_FILE: &str = "maxforce.csv";
pub const GRT_FILE: &str = "grt.csv";
pub const CALIBRATION_FILE: &str = "calibration.json";

/// Compare runs the modes in this order.
pub const COMPARE_MODES: [&str; 4] = ["twa", "bwa", "pwa", "passive"];

#[derive(Debug, Clone)]
pub struct Session {
    pub config: SessionConfig,
    pub rig: Rig,
    pub exec: Execution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport {
    pub max_force: MaxForceRun,
    pub battery: ModulationBattery,
}

impl ModeReport {
    pub fn summary(&self) -> Vec<SummaryRow> {
        summary_rows(&self.max_force.result, &self.battery)
    }
}

#[derive(Serialize)]
struct CalibrationRecord<'a> {
    params: &'a PlantParams,
    calibrated: bool,
}

impl Session {
    pub fn new(config: SessionConfig, exec: Execution) -> Result<Self> {
        config.validate()?;
        let rig = config.rig()?;
        Ok(Self { config, rig, exec })
    }

    fn write_config(&self, dir: &SessionDir) -> Result<()> {
        dir.write_with(CONFIG_FILE, |w| {
            serde_json::to_writer_pretty(&mut *w, &self.config).map_err(json_err)?;
            w.write_all(b"\n").map_err(|e| Error::io(CONFIG_FILE, e))
        })?;
        Ok(())
    }

    pub fn calibrate(&self, dir: &SessionDir) -> Result<PlantParams> {
        self.write_config(dir)?;
        let params = *self.rig.plant.ensure_calibrated()?;
        dir.write_with(CALIBRATION_FILE, |w| {
            let rec = CalibrationRecord {
                params: &params,
                calibrated: self.rig.plant.is_calibrated(),
            };
            serde_json::to_writer_pretty(&mut *w, &rec).map_err(json_err)?;
            w.write_all(b"\n").map_err(|e| Error::io(CALIBRATION_FILE, e))
        })?;
        Ok(params)
    }

    pub fn max_force(&self, mode: ControlMode, dir: &SessionDir) -> Result<MaxForceRun> {
        self.write_config(dir)?;
        let run = run_max_force(&self.rig, mode, self.config.trials.max_force_trials, self.exec)?;
        dir.write_records(&run.records)?;
        dir.write_with(MAX_FORCE_FILE, |w| write_max_force_to(w, mode, &run))?;
        Ok(run)
    }

    /// Max-force trials for `mode`, then the modulation battery at targets
    /// derived from that run's highest force.
    fn mode_report(&self, mode: ControlMode, seeds: usize) -> Result<ModeReport> {
        let max_force = run_max_force(&self.rig, mode, self.config.trials.max_force_trials, self.exec)?;
        let targets = compute_targets(max_force.result.highest_max)?;
        let battery = run_modulation_battery(&self.rig, mode, &targets, seeds, self.config.seed, self.exec)?;
        Ok(ModeReport { max_force, battery })
    }

    pub fn modulate(&self, mode: ControlMode, dir: &SessionDir) -> Result<ModeReport> {
        self.write_config(dir)?;
        let report = self.mode_report(mode, self.config.trials.modulation_repeats)?;
        write_report(dir, std::slice::from_ref(&report))?;
        Ok(report)
    }

    pub fn compare(&self, seeds: usize, dir: &SessionDir) -> Result<Vec<ModeReport>> {
        if seeds == 0 {
            return Err(Error::config("seeds", "must be at least 1"));
        }
        if self.config.seed.checked_add(seeds as u64).is_none() {
            return Err(Error::config("seeds", "seed + seeds overflows"));
        }
        self.write_config(dir)?;
        let reports = COMPARE_MODES
            .iter()
            .map(|name| self.mode_report(self.config.mode_named(name)?, seeds))
            .collect::<Result<Vec<_>>>()?;
        write_report(dir, &reports)?;
        Ok(reports)
    }

    pub fn grt(&self, modes: &[ControlMode], dir: &SessionDir) -> Result<Vec<GrtScore>> {
        self.write_config(dir)?;
        let objects = &self.config.trials.objects;
        let scores = modes
            .iter()
            .map(|m| run_functional_battery(&self.rig, *m, objects, self.config.seed, self.exec))
            .collect::<Result<Vec<_>>>()?;
        for s in &scores {
            dir.write_records(&s.records)?;
        }
        let required: Vec<f64> = objects.iter().map(|o| o.required_force).collect();
        let table: Vec<(&str, &GrtScore, &[f64])> = modes
            .iter()
            .zip(&scores)
            .map(|(m, s)| (m.name(), s, required.as_slice()))
            .collect();
        dir.write_with(GRT_FILE, |w| write_grt_summary_to(w, &table))?;
        Ok(scores)
    }
}

fn write_report(dir: &SessionDir, reports: &[ModeReport]) -> Result<()> {
    for r in reports {
        dir.write_records(&r.max_force.records)?;
        dir.write_records(&r.battery.records)?;
    }
    let rows: Vec<SummaryRow> = reports.iter().flat_map(ModeReport::summary).collect();
    dir.write_with(SUMMARY_FILE, |w| write_summary_to(w, &rows))?;
    Ok(())
}

fn write_max_force_to(w: &mut dyn Write, mode: ControlMode, run: &MaxForceRun) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["mode", "trial", "peak_force_n"])?;
    for (i, p) in run.result.peaks.iter().enumerate() {
        csv.write_record([mode.name().to_string(), (i + 1).to_string(), format!("{p:.2}")])?;
    }
    csv.write_record([mode.name().to_string(), "average".into(), format!("{:.2}", run.result.average_max)])?;
    csv.write_record([mode.name().to_string(), "highest".into(), format!("{:.2}", run.result.highest_max)])?;
    csv.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

fn json_err(e: serde_json::Error) -> Error {
    Error::invalid(format!("json encoding failed: {e}"))
}
