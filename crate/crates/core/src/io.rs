//! CSV and JSON artifacts. Paths ending in `.gz` are gzip-compressed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::control::Control;
use crate::hawkes::EventRecord;
use crate::model::Population;
use crate::sde::Path;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("row {row}: {msg}")]
    Format { row: usize, msg: String },
}

fn format_err(row: usize, msg: impl Into<String>) -> IoError {
    IoError::Format { row, msg: msg.into() }
}

pub fn create(path: &FsPath) -> Result<Box<dyn Write>, IoError> {
    let f = BufWriter::new(File::create(path)?);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzEncoder::new(f, Compression::default())))
    } else {
        Ok(Box::new(f))
    }
}

pub fn open(path: &FsPath) -> Result<Box<dyn Read>, IoError> {
    let f = BufReader::new(File::open(path)?);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(f)))
    } else {
        Ok(Box::new(f))
    }
}

pub fn write_events<W: Write>(w: W, events: &EventRecord) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["population", "time"])?;
    for (pop, t) in events.merged() {
        out.write_record([pop.to_string(), format!("{t:e}")])?;
    }
    out.flush()?;
    Ok(())
}

/// Parses `population,time` rows back into the two sorted event trains.
pub fn read_events<R: Read>(r: R) -> Result<(Vec<f64>, Vec<f64>), IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(rdr.headers()?, &["population", "time"])?;
    let (mut t1, mut t2) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != 2 {
            return Err(format_err(row, "expected 2 fields"));
        }
        let pop = rec[0]
            .trim()
            .parse::<usize>()
            .ok()
            .and_then(Population::from_index)
            .ok_or_else(|| format_err(row, "population must be 1 or 2"))?;
        let t = parse_f64(&rec[1], row)?;
        if t < 0.0 {
            return Err(format_err(row, "negative time"));
        }
        let train = match pop {
            Population::One => &mut t1,
            Population::Two => &mut t2,
        };
        if train.last().is_some_and(|&s| s >= t) {
            return Err(format_err(row, "times must be strictly increasing per population"));
        }
        train.push(t);
    }
    Ok((t1, t2))
}

pub fn write_path<W: Write>(w: W, path: &Path) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    let n = path.states.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    out.write_record(&header)?;
    for (t, x) in path.grid.iter().zip(&path.states) {
        let mut row = vec![format!("{t:e}")];
        row.extend(x.iter().map(|v| format!("{v:e}")));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_path<R: Read>(r: R) -> Result<Path, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.is_empty() || &header[0] != "t" {
        return Err(format_err(1, "first column must be `t`"));
    }
    for (i, h) in header.iter().enumerate().skip(1) {
        if h != format!("x{i}") {
            return Err(format_err(1, format!("column {} must be `x{i}`", i + 1)));
        }
    }
    let n = header.len() - 1;
    let mut path = Path { grid: Vec::new(), states: Vec::new() };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != n + 1 {
            return Err(format_err(row, "wrong number of fields"));
        }
        let t = parse_f64(&rec[0], row)?;
        if path.grid.last().is_some_and(|&s| s >= t) {
            return Err(format_err(row, "time grid must be strictly increasing"));
        }
        let x = rec.iter().skip(1).map(|s| parse_f64(s, row)).collect::<Result<Vec<_>, _>>()?;
        path.grid.push(t);
        path.states.push(x);
    }
    Ok(path)
}

/// Writes `t,h1dot,h2dot` with one row per interval, `t` its left end.
pub fn write_control<W: Write>(w: W, control: &Control) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "h1dot", "h2dot"])?;
    for (k, u) in control.values.iter().enumerate() {
        out.write_record([format!("{:e}", k as f64 * control.step()), format!("{:e}", u[0]), format!("{:e}", u[1])])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a control written by [`write_control`]; the horizon is needed
/// because the rows only carry left interval ends.
pub fn read_control<R: Read>(r: R, horizon: f64) -> Result<Control, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(rdr.headers()?, &["t", "h1dot", "h2dot"])?;
    let mut values = Vec::new();
    let mut times = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != 3 {
            return Err(format_err(row, "expected 3 fields"));
        }
        times.push(parse_f64(&rec[0], row)?);
        values.push([parse_f64(&rec[1], row)?, parse_f64(&rec[2], row)?]);
    }
    if values.is_empty() {
        return Err(format_err(1, "empty control"));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(format_err(1, "horizon must be positive"));
    }
    let dt = horizon / values.len() as f64;
    for (k, &t) in times.iter().enumerate() {
        if (t - k as f64 * dt).abs() > 1e-9 * horizon.max(1.0) {
            return Err(format_err(k + 2, "control grid is not uniform on [0, horizon)"));
        }
    }
    Ok(Control::new(horizon, values))
}

pub fn write_json<W: Write, T: serde::Serialize>(w: W, value: &T) -> Result<(), IoError> {
    let mut w = w;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn check_header(h: &csv::StringRecord, want: &[&str]) -> Result<(), IoError> {
    if h.len() != want.len() || h.iter().zip(want).any(|(a, b)| a.trim() != *b) {
        return Err(format_err(1, format!("expected header `{}`", want.join(","))));
    }
    Ok(())
}

fn parse_f64(s: &str, row: usize) -> Result<f64, IoError> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format_err(row, format!("`{s}` is not a finite number"))),
    }
}
