//! Tabular output as CSV or JSON.
//!
//! CSV is UTF-8 with a mandatory header row and LF line endings. Floats are
//! written with 17 significant digits so that parsing recovers the exact
//! double. JSON output is an array of objects with the same keys in the same
//! order.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{Map, Value as Json};

use crate::analytics::StationaryBound;
use crate::bd_sim::TrialSummary;
use crate::controller::ControlledRun;
use crate::error::{Error, Result};
use crate::harness::sweep::{GatingPair, SweepRow};
use crate::harness::validate::PoissonCheckRow;

/// A single cell of an output table.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(u64),
    Float(f64),
    Bool(bool),
    Text(&'static str),
    Bound(StationaryBound),
}

impl Value {
    fn to_csv(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Float(v) => format_float(*v),
            Value::Bool(v) => v.to_string(),
            Value::Text(t) => (*t).to_owned(),
            Value::Bound(StationaryBound::Finite(v)) => format_float(*v),
            Value::Bound(StationaryBound::Divergent) => "divergent".to_owned(),
        }
    }

    fn to_json(&self) -> Json {
        match self {
            Value::Int(v) => Json::from(*v),
            Value::Float(v) => Json::from(*v),
            Value::Bool(v) => Json::from(*v),
            Value::Text(t) => Json::from(*t),
            Value::Bound(StationaryBound::Finite(v)) => Json::from(*v),
            Value::Bound(StationaryBound::Divergent) => Json::from("divergent"),
        }
    }
}

/// 17 significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// A row type with a fixed, ordered set of columns.
pub trait Record {
    fn columns() -> &'static [&'static str];
    fn values(&self) -> Vec<Value>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::domain(format!("unknown output format `{other}` (expected csv or json)"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Destination {
    Stdout,
    File(PathBuf),
}

impl Destination {
    fn label(&self) -> PathBuf {
        match self {
            Destination::Stdout => PathBuf::from("<stdout>"),
            Destination::File(p) => p.clone(),
        }
    }
}

impl From<Option<PathBuf>> for Destination {
    fn from(p: Option<PathBuf>) -> Self {
        match p {
            Some(p) if p.as_os_str() != "-" => Destination::File(p),
            _ => Destination::Stdout,
        }
    }
}

pub fn write_csv<R: Record, W: Write>(rows: &[R], out: W) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(R::columns())?;
    for row in rows {
        w.write_record(row.values().iter().map(Value::to_csv))?;
    }
    w.flush()
}

pub fn write_json<R: Record, W: Write>(rows: &[R], mut out: W) -> io::Result<()> {
    let array: Vec<Json> = rows
        .iter()
        .map(|row| {
            let map: Map<String, Json> = R::columns()
                .iter()
                .zip(row.values())
                .map(|(k, v)| ((*k).to_owned(), v.to_json()))
                .collect();
            Json::Object(map)
        })
        .collect();
    serde_json::to_writer_pretty(&mut out, &array)?;
    out.write_all(b"\n")?;
    out.flush()
}

/// Write `rows` to `dest`; I/O failures carry the destination path.
pub fn emit<R: Record>(rows: &[R], format: Format, dest: &Destination) -> Result<()> {
    with_writer(dest, |w| match format {
        Format::Csv => write_csv(rows, w),
        Format::Json => write_json(rows, w),
    })
}

/// Two whitespace-separated columns, `x` and mean depth, for gnuplot.
pub fn write_gnuplot<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    writeln!(out, "# x mean_depth")?;
    for r in rows {
        writeln!(out, "{} {}", format_float(r.x), format_float(r.mean_depth))?;
    }
    out.flush()
}

pub fn emit_gnuplot(rows: &[SweepRow], dest: &Destination) -> Result<()> {
    with_writer(dest, |w| write_gnuplot(rows, w))
}

fn with_writer(dest: &Destination, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    let io_err = |source| Error::Io { path: dest.label(), source };
    match dest {
        Destination::Stdout => {
            let stdout = io::stdout();
            let mut lock = BufWriter::new(stdout.lock());
            f(&mut lock).map_err(io_err)
        }
        Destination::File(path) => {
            let file = File::create(path).map_err(io_err)?;
            let mut w = BufWriter::new(file);
            f(&mut w).map_err(io_err)
        }
    }
}

/// Read a CSV file produced by [`write_csv`] into header and raw records.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let io_err = |e: csv::Error| Error::Io { path: path.to_owned(), source: io::Error::other(e) };
    let mut r = csv::Reader::from_path(path).map_err(io_err)?;
    let header = r.headers().map_err(io_err)?.iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_owned).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(io_err)?;
    Ok((header, rows))
}

const SWEEP_COLUMNS: [&str; 11] = [
    "n",
    "delta",
    "lambda",
    "x",
    "mean_depth",
    "std_err",
    "theory_bound",
    "stable",
    "trials_merged",
    "final_depth_mean",
    "diverged",
];

fn sweep_values(r: &SweepRow) -> Vec<Value> {
    vec![
        Value::Int(r.n),
        Value::Float(r.delta),
        Value::Float(r.lambda),
        Value::Float(r.x),
        Value::Float(r.mean_depth),
        Value::Float(r.std_err),
        Value::Bound(r.theory_bound),
        Value::Bool(r.stable),
        Value::Int(r.trials_merged as u64),
        Value::Float(r.final_depth_mean),
        Value::Bool(r.diverged),
    ]
}

impl Record for SweepRow {
    fn columns() -> &'static [&'static str] {
        &SWEEP_COLUMNS
    }

    fn values(&self) -> Vec<Value> {
        sweep_values(self)
    }
}

/// A sweep row tagged with the gating rule that produced it.
#[derive(Debug, Clone, Copy)]
pub struct GatingRow<'a> {
    pub gating: &'static str,
    pub row: &'a SweepRow,
}

impl GatingPair {
    pub fn rows(&self) -> [GatingRow<'_>; 2] {
        [
            GatingRow { gating: "constant", row: &self.constant },
            GatingRow { gating: "inverse", row: &self.inverse },
        ]
    }
}

impl Record for GatingRow<'_> {
    fn columns() -> &'static [&'static str] {
        const COLUMNS: [&str; 12] = [
            "gating",
            "n",
            "delta",
            "lambda",
            "x",
            "mean_depth",
            "std_err",
            "theory_bound",
            "stable",
            "trials_merged",
            "final_depth_mean",
            "diverged",
        ];
        &COLUMNS
    }

    fn values(&self) -> Vec<Value> {
        let mut v = vec![Value::Text(self.gating)];
        v.extend(sweep_values(self.row));
        v
    }
}

impl Record for PoissonCheckRow {
    fn columns() -> &'static [&'static str] {
        &["x", "windows", "empirical", "analytic", "std_err", "z", "chi_squared", "chi_dof", "chi_p_value"]
    }

    fn values(&self) -> Vec<Value> {
        vec![
            Value::Float(self.x),
            Value::Int(self.windows),
            Value::Float(self.empirical),
            Value::Float(self.analytic),
            Value::Float(self.std_err),
            Value::Float(self.z),
            Value::Float(self.chi_squared),
            Value::Int(self.chi_dof as u64),
            Value::Float(self.chi_p_value),
        ]
    }
}

impl Record for TrialSummary {
    fn columns() -> &'static [&'static str] {
        &["trials", "epochs", "mean_depth", "std_err", "ci95_low", "ci95_high", "final_depth_mean", "diverged"]
    }

    fn values(&self) -> Vec<Value> {
        vec![
            Value::Int(self.trials as u64),
            Value::Int(self.epochs as u64),
            Value::Float(self.mean_depth),
            Value::Float(self.std_err),
            Value::Float(self.ci95_low),
            Value::Float(self.ci95_high),
            Value::Float(self.final_depth_mean),
            Value::Bool(self.diverged),
        ]
    }
}

/// One adjustment window of a controlled run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlWindow {
    pub window: usize,
    pub n: u64,
    pub gate: f64,
    pub intensity: f64,
    pub observed_events: f64,
    pub mean_depth: f64,
}

impl ControlledRun {
    pub fn window_rows(&self) -> Vec<ControlWindow> {
        (0..self.windows())
            .map(|w| ControlWindow {
                window: w,
                n: self.n_schedule[w],
                gate: self.gate_series[w],
                intensity: self.intensity_series[w],
                observed_events: self.observed_events[w],
                mean_depth: self.window_mean_depth[w],
            })
            .collect()
    }
}

impl Record for ControlWindow {
    fn columns() -> &'static [&'static str] {
        &["window", "n", "gate", "intensity", "observed_events", "mean_depth"]
    }

    fn values(&self) -> Vec<Value> {
        vec![
            Value::Int(self.window as u64),
            Value::Int(self.n),
            Value::Float(self.gate),
            Value::Float(self.intensity),
            Value::Float(self.observed_events),
            Value::Float(self.mean_depth),
        ]
    }
}
