//! Run traces and their CSV persistence.
//!
//! Traces serialize to a small CSV with one metadata comment line and a
//! fixed documented header. Floats are written with 17 significant
//! digits so reading a trace back reproduces it exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "iteration,elapsed_seconds,elbo,avg_variance,metric,mean_tau";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    pub elapsed_seconds: f64,
    pub elbo: f64,
    pub avg_variance: f64,
    pub metric: f64,
    pub mean_tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub model: String,
    pub method: String,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Trace(format!("bad {what}: '{s}'")))
}

impl RunTrace {
    pub fn new(model: &str, method: &str, seed: u64) -> Self {
        RunTrace {
            model: model.to_string(),
            method: method.to_string(),
            seed,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: TraceRow) {
        if let Some(last) = self.rows.last() {
            debug_assert!(row.iteration > last.iteration);
            debug_assert!(row.elapsed_seconds > last.elapsed_seconds || row.iteration == 0);
        }
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# odisvi-trace model={} method={} seed={}",
            self.model, self.method, self.seed
        )?;
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iteration,
                fmt_f64(r.elapsed_seconds),
                fmt_f64(r.elbo),
                fmt_f64(r.avg_variance),
                fmt_f64(r.metric),
                fmt_f64(r.mean_tau),
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("trace text is utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let meta = lines
            .next()
            .ok_or_else(|| Error::Trace("empty file".into()))??;
        let meta = meta
            .strip_prefix("# odisvi-trace ")
            .ok_or_else(|| Error::Trace("missing trace metadata line".into()))?;
        let mut model = None;
        let mut method = None;
        let mut seed = None;
        for part in meta.split_whitespace() {
            match part.split_once('=') {
                Some(("model", v)) => model = Some(v.to_string()),
                Some(("method", v)) => method = Some(v.to_string()),
                Some(("seed", v)) => {
                    seed = Some(v.parse::<u64>().map_err(|_| {
                        Error::Trace(format!("bad seed '{v}' in metadata"))
                    })?)
                }
                _ => return Err(Error::Trace(format!("unknown metadata '{part}'"))),
            }
        }
        let header = lines
            .next()
            .ok_or_else(|| Error::Trace("missing header line".into()))??;
        if header != CSV_HEADER {
            return Err(Error::Trace(format!("unexpected header '{header}'")));
        }
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Trace(format!("expected 6 fields, got {}", fields.len())));
            }
            rows.push(TraceRow {
                iteration: fields[0]
                    .parse::<u64>()
                    .map_err(|_| Error::Trace(format!("bad iteration '{}'", fields[0])))?,
                elapsed_seconds: parse_f64(fields[1], "elapsed_seconds")?,
                elbo: parse_f64(fields[2], "elbo")?,
                avg_variance: parse_f64(fields[3], "avg_variance")?,
                metric: parse_f64(fields[4], "metric")?,
                mean_tau: parse_f64(fields[5], "mean_tau")?,
            });
        }
        Ok(RunTrace {
            model: model.ok_or_else(|| Error::Trace("metadata missing model".into()))?,
            method: method.ok_or_else(|| Error::Trace("metadata missing method".into()))?,
            seed: seed.ok_or_else(|| Error::Trace("metadata missing seed".into()))?,
            rows,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Bitwise equality of rows, treating NaN as equal to NaN.
pub fn rows_bit_equal(a: &TraceRow, b: &TraceRow) -> bool {
    fn eq(x: f64, y: f64) -> bool {
        x.to_bits() == y.to_bits()
    }
    a.iteration == b.iteration
        && eq(a.elapsed_seconds, b.elapsed_seconds)
        && eq(a.elbo, b.elbo)
        && eq(a.avg_variance, b.avg_variance)
        && eq(a.metric, b.metric)
        && eq(a.mean_tau, b.mean_tau)
}
