//! Per-trial CSV logs and replay of their wrist column.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a log
//! back yields the exact `f64` values that were written.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::control::{ControlMode, Region};
use crate::error::{Error, Result};
use crate::participant::Intent;
use crate::sim::{Rig, Simulator, TickLogRow};
use crate::trials::TargetSpec;

pub const LOG_COLUMNS: [&str; 8] = [
    "t",
    "wrist_angle",
    "region",
    "motor_position",
    "true_force",
    "measured_force",
    "in_band",
    "intent",
];

pub fn write_log_to<W: Write>(out: W, rows: &[TickLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.wrist_angle.to_string(),
            r.region.as_str().to_string(),
            r.motor_position.to_string(),
            r.true_force.to_string(),
            r.measured_force.to_string(),
            (if r.in_band { "1" } else { "0" }).to_string(),
            r.intent.map_or(String::new(), |i| i.as_str().to_string()),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_log(path: impl AsRef<Path>, rows: &[TickLogRow]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_log_to(std::io::BufWriter::new(file), rows)
}

pub fn read_log_from<R: Read>(input: R) -> Result<Vec<TickLogRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(LOG_COLUMNS.iter().copied()) {
        return Err(Error::LogRow {
            row: 0,
            message: format!("expected header {}", LOG_COLUMNS.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::LogRow {
            row,
            message: e.to_string(),
        })?;
        rows.push(parse_row(&rec).map_err(|message| Error::LogRow { row, message })?);
    }
    Ok(rows)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<TickLogRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_log_from(std::io::BufReader::new(file))
}

fn parse_row(rec: &csv::StringRecord) -> std::result::Result<TickLogRow, String> {
    if rec.len() != LOG_COLUMNS.len() {
        return Err(format!("expected {} fields, found {}", LOG_COLUMNS.len(), rec.len()));
    }
    let num = |i: usize| -> std::result::Result<f64, String> {
        rec[i]
            .parse::<f64>()
            .map_err(|_| format!("column `{}`: `{}` is not a number", LOG_COLUMNS[i], &rec[i]))
    };
    let region: Region = rec[2]
        .parse()
        .map_err(|_| format!("column `region`: unknown region `{}`", &rec[2]))?;
    let in_band = match &rec[6] {
        "1" => true,
        "0" => false,
        other => return Err(format!("column `in_band`: expected 0 or 1, found `{other}`")),
    };
    let intent = match &rec[7] {
        "" => None,
        s => Some(
            s.parse::<Intent>()
                .map_err(|_| format!("column `intent`: unknown intent `{s}`"))?,
        ),
    };
    Ok(TickLogRow {
        t: num(0)?,
        wrist_angle: num(1)?,
        region,
        motor_position: num(3)?,
        true_force: num(4)?,
        measured_force: num(5)?,
        in_band,
        intent,
    })
}

/// Re-runs the closed loop from the logged wrist angles. `in_band` is
/// recomputed against `target` when one is given; `intent` is carried over
/// because it is participant state, not a simulation output.
pub fn replay(rig: &Rig, mode: ControlMode, log: &[TickLogRow], target: Option<&TargetSpec>) -> Result<Vec<TickLogRow>> {
    let mut sim = Simulator::new(rig, mode)?;
    log.iter()
        .map(|row| {
            let out = sim.step(row.wrist_angle)?;
            let in_band = target.is_some_and(|t| t.in_band(out.plant.measured_force));
            Ok(TickLogRow::from_step(&out, in_band, row.intent))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64) -> TickLogRow {
        TickLogRow {
            t,
            wrist_angle: 0.1 + t / 3.0,
            region: Region::Close,
            motor_position: 1.0 / 3.0,
            true_force: 7.654321987654321,
            measured_force: 7.56,
            in_band: true,
            intent: Some(Intent::Settle),
        }
    }

    #[test]
    fn empty_log_is_header_only() {
        let mut buf = Vec::new();
        write_log_to(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", LOG_COLUMNS.join(",")));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let rows: Vec<_> = (0..3000).map(|k| row(k as f64 * 0.01)).collect();
        let mut buf = Vec::new();
        write_log_to(&mut buf, &rows).unwrap();
        let back = read_log_from(buf.as_slice()).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            assert_eq!(a.true_force.to_bits(), b.true_force.to_bits());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn missing_intent_round_trips() {
        let mut r = row(0.0);
        r.intent = None;
        let mut buf = Vec::new();
        write_log_to(&mut buf, &[r]).unwrap();
        assert_eq!(read_log_from(buf.as_slice()).unwrap(), vec![r]);
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let text = format!(
            "{}\n0,0,neutral,0,0,0,0,\n0.01,abc,neutral,0,0,0,0,\n",
            LOG_COLUMNS.join(",")
        );
        match read_log_from(text.as_bytes()).unwrap_err() {
            Error::LogRow { row, message } => {
                assert_eq!(row, 2);
                assert!(message.contains("wrist_angle"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn short_row_is_rejected() {
        let text = format!("{}\n0,0,neutral\n", LOG_COLUMNS.join(","));
        assert!(matches!(
            read_log_from(text.as_bytes()).unwrap_err(),
            Error::LogRow { row: 1, .. }
        ));
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(matches!(
            read_log_from("a,b\n1,2\n".as_bytes()).unwrap_err(),
            Error::LogRow { row: 0, .. }
        ));
    }
}
