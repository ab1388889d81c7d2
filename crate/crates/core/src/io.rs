//! CSV ingestion and serialization of event times, counts and result tables.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back reproduces every value bit for bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::simulate::{CountSeries, EventTimes};

/// Offset added to the `j`-th repeat of a timestamp.
pub const DUPLICATE_OFFSET: f64 = 1e-9;

/// Relative tolerance on the spacing of a count grid.
pub const GRID_TOL: f64 = 1e-9;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn csv_reader<R: Read>(src: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(src)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, want: &[&str]) -> Result<()> {
    let h = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?;
    let got: Vec<&str> = h.iter().collect();
    if got != want {
        return Err(parse_err(1, format!("expected header `{}`, found `{}`", want.join(","), got.join(","))));
    }
    Ok(())
}

fn field(rec: &csv::StringRecord, idx: usize, line: usize, name: &str) -> Result<f64> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| parse_err(line, format!("missing column `{name}`")))?;
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(line, format!("`{raw}` is not a finite number")))
}

/// What kind of observation file a header announces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Events,
    Counts,
}

pub fn detect_input_kind(path: &Path) -> Result<InputKind> {
    let mut rdr = csv_reader(File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?);
    let h = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?;
    match h.iter().collect::<Vec<_>>().as_slice() {
        ["t"] => Ok(InputKind::Events),
        ["t", "count"] => Ok(InputKind::Counts),
        other => Err(parse_err(1, format!("unrecognised header `{}`", other.join(",")))),
    }
}

/// Reads a `t` column of event times. A timestamp equal to the previous raw
/// value is kept as a separate event, shifted by `j · 1e-9` for the `j`-th
/// repeat.
pub fn read_events<R: Read>(src: R) -> Result<EventTimes> {
    let mut rdr = csv_reader(src);
    check_header(&mut rdr, &["t"])?;
    let mut times: Vec<f64> = Vec::new();
    let mut prev_raw = f64::NAN;
    let mut repeat = 0u32;
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let raw = field(&rec, 0, line, "t")?;
        if raw < 0.0 {
            return Err(parse_err(line, format!("event time {raw} is negative")));
        }
        let t = if raw == prev_raw {
            repeat += 1;
            raw + repeat as f64 * DUPLICATE_OFFSET
        } else {
            repeat = 0;
            raw
        };
        if let Some(&last) = times.last() {
            if t <= last {
                return Err(parse_err(line, format!("event time {raw} does not follow {last}")));
            }
        }
        prev_raw = raw;
        times.push(t);
    }
    EventTimes::new(times)
}

/// Reads `t,count` rows where `t` is the right edge of each bin, dividing
/// every count by `rescale`.
pub fn read_counts<R: Read>(src: R, rescale: f64) -> Result<CountSeries> {
    if !(rescale > 0.0 && rescale.is_finite()) {
        return Err(Error::InvalidInput(format!("rescale must be positive, got {rescale}")));
    }
    let mut rdr = csv_reader(src);
    check_header(&mut rdr, &["t", "count"])?;
    let mut ts = Vec::new();
    let mut counts = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let t = field(&rec, 0, line, "t")?;
        let c = field(&rec, 1, line, "count")?;
        if c < 0.0 {
            return Err(parse_err(line, format!("count {c} is negative")));
        }
        ts.push(t);
        counts.push(c / rescale);
    }
    if ts.is_empty() {
        return Err(Error::InvalidInput("count file has no rows".into()));
    }
    let dt = if ts.len() > 1 { ts[1] - ts[0] } else { ts[0] };
    if !(dt > 0.0) {
        return Err(parse_err(2, "bin times must increase"));
    }
    let t0 = ts[0] - dt;
    for (i, &t) in ts.iter().enumerate() {
        let want = t0 + (i + 1) as f64 * dt;
        if (t - want).abs() > GRID_TOL * want.abs().max(dt) {
            return Err(parse_err(
                i + 2,
                format!("bin time {t} is off the uniform grid (expected {want}); missing bins are not imputed"),
            ));
        }
    }
    CountSeries::new(t0, dt, counts)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_events_csv(path: &Path) -> Result<EventTimes> {
    read_events(open(path)?)
}

pub fn read_counts_csv(path: &Path, rescale: f64) -> Result<CountSeries> {
    read_counts(open(path)?, rescale)
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Rectangular table of reals with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ResultTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::InvalidInput(format!(
                "row has {} values for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write<W: Write>(&self, dst: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(dst);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| fmt_f64(*v))).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

pub fn events_table(events: &EventTimes) -> ResultTable {
    ResultTable {
        columns: vec!["t".into()],
        rows: events.as_slice().iter().map(|&t| vec![t]).collect(),
    }
}

pub fn counts_table(counts: &CountSeries) -> ResultTable {
    ResultTable {
        columns: vec!["t".into(), "count".into()],
        rows: (0..counts.len())
            .map(|i| vec![counts.bin_end(i), counts.counts[i]])
            .collect(),
    }
}

pub fn write_table(table: &ResultTable, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    table.write(std::io::BufWriter::new(f))
}
