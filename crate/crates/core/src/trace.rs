//! Uniformly sampled, named multi-signal time series.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use indexmap::IndexMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("signal `{name}` has {got} samples, trace has {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("sampling period must be positive and finite, got {0}")]
    BadPeriod(f64),
    #[error("missing signal `{0}`")]
    MissingSignal(String),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A set of equally long signals sampled every `dt` seconds starting at `t = 0`.
///
/// Signal order is insertion order and is preserved on export.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    dt: f64,
    len: usize,
    signals: IndexMap<String, Vec<f64>>,
}

impl Trace {
    pub fn new(dt: f64, len: usize) -> Result<Self, TraceError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(TraceError::BadPeriod(dt));
        }
        Ok(Self {
            dt,
            len,
            signals: IndexMap::new(),
        })
    }

    /// Number of samples needed to cover `[0, duration]` at period `dt`, both ends included.
    pub fn samples_for(duration: f64, dt: f64) -> usize {
        (duration / dt).round() as usize + 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn duration(&self) -> f64 {
        self.len.saturating_sub(1) as f64 * self.dt
    }

    /// Time stamp of sample `index`.
    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.dt
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<(), TraceError> {
        let name = name.into();
        if values.len() != self.len {
            return Err(TraceError::LengthMismatch {
                name,
                expected: self.len,
                got: values.len(),
            });
        }
        self.signals.insert(name, values);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.signals.get(name).map(Vec::as_slice)
    }

    pub fn require(&self, name: &str) -> Result<&[f64], TraceError> {
        self.get(name)
            .ok_or_else(|| TraceError::MissingSignal(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.signals.keys().map(String::as_str)
    }

    pub fn signals(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.signals.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Copy of this trace restricted to `names`, in that order.
    pub fn select(&self, names: &[&str]) -> Result<Trace, TraceError> {
        let mut out = Trace::new(self.dt, self.len)?;
        for name in names {
            out.insert(*name, self.require(name)?.to_vec())?;
        }
        Ok(out)
    }

    /// CSV with a `t,<signal>,...` header and one row per sample. Negative
    /// zero is written as `0`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len * (self.signals.len() + 1) * 12);
        out.push('t');
        for name in self.signals.keys() {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        let columns: Vec<&Vec<f64>> = self.signals.values().collect();
        for i in 0..self.len {
            let _ = write!(out, "{}", self.time(i));
            for column in &columns {
                let _ = write!(out, ",{}", column[i] + 0.0);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses the format written by [`Trace::to_csv`]. The period is taken from the
    /// first two time stamps.
    pub fn from_csv(text: &str) -> Result<Trace, TraceError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| TraceError::Csv("empty input".into()))?;
        let mut columns = header.split(',').map(str::trim);
        if columns.next() != Some("t") {
            return Err(TraceError::Csv("first column must be `t`".into()));
        }
        let names: Vec<String> = columns.map(str::to_string).collect();
        let mut times = Vec::new();
        let mut data: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != names.len() + 1 {
                return Err(TraceError::Csv(format!(
                    "row {} has {} fields, expected {}",
                    row + 1,
                    fields.len(),
                    names.len() + 1
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| TraceError::Csv(format!("row {}: {e}", row + 1)))
            };
            times.push(parse(fields[0])?);
            for (column, field) in data.iter_mut().zip(&fields[1..]) {
                column.push(parse(field)?);
            }
        }
        let dt = match times.as_slice() {
            [t0, t1, ..] => t1 - t0,
            _ => return Err(TraceError::Csv("need at least two rows".into())),
        };
        let mut trace = Trace::new(dt, times.len())?;
        for (name, column) in names.into_iter().zip(data) {
            trace.insert(name, column)?;
        }
        Ok(trace)
    }
}
