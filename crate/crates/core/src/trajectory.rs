use std::io::{BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-stamped multivariate state sequence.
///
/// States are stored row-major: row `k` holds the state at `times[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    times: Vec<f64>,
    dim: usize,
    states: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, dim: usize, states: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("trajectory dimension must be positive".into()));
        }
        if states.len() != times.len() * dim {
            return Err(Error::Format(format!(
                "trajectory has {} times but {} state values for dimension {}",
                times.len(),
                states.len(),
                dim
            )));
        }
        check_grid(&times)?;
        Ok(Self { times, dim, states, labels: None })
    }

    pub fn from_rows(times: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Format("ragged trajectory rows".into()));
        }
        Self::new(times, dim, rows.concat())
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim {
            return Err(Error::Format(format!(
                "{} labels for a {}-dimensional trajectory",
                labels.len(),
                self.dim
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    /// Column `j` as an owned series.
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn slice(&self, range: Range<usize>) -> Trajectory {
        Trajectory {
            times: self.times[range.clone()].to_vec(),
            dim: self.dim,
            states: self.states[range.start * self.dim..range.end * self.dim].to_vec(),
            labels: self.labels.clone(),
        }
    }

    pub fn last(&self) -> Option<&[f64]> {
        (!self.is_empty()).then(|| self.row(self.len() - 1))
    }

    /// Write as CSV: header `t,y1,..,yn`, 17 significant digits, LF endings.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("t");
        for j in 1..=self.dim {
            header.push_str(&format!(",y{j}"));
        }
        writeln!(w, "{header}")?;
        let mut line = String::new();
        for (k, row) in self.rows().enumerate() {
            line.clear();
            line.push_str(&fmt_f64(self.times[k]));
            for v in row {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty trajectory csv".into()))??;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(Error::Format(format!("bad trajectory header `{header}`")));
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim_end().split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::Format(format!("row {} has {} fields", n + 2, fields.len())));
            }
            let mut vals = fields.iter().map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: {e}", n + 2)))
            });
            times.push(vals.next().unwrap()?);
            for v in vals {
                states.push(v?);
            }
        }
        Trajectory::new(times, dim, states)
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn check_grid(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Format("non-finite time stamp".into()));
    }
    if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Format(format!(
            "time axis not strictly increasing at {} -> {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Uniform grid `t0 + k*dt` for `k in 0..n`.
pub fn uniform_grid(t0: f64, dt: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| t0 + k as f64 * dt).collect()
}
