//! LIBSVM ingestion, client splits and row normalization.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sparse binary-labelled dataset. Feature indices are 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    rows: Vec<Vec<(usize, f64)>>,
    labels: Vec<f64>,
    dim: usize,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<(usize, f64)>>, labels: Vec<f64>, dim: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidProblem("dataset has no rows".into()));
        }
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: rows.len(), got: labels.len() });
        }
        if labels.iter().any(|&l| l != 1.0 && l != -1.0) {
            return Err(Error::InvalidProblem("labels must be +1 or -1".into()));
        }
        for (r, row) in rows.iter().enumerate() {
            let mut last = 0;
            for &(idx, _) in row {
                if idx <= last || idx > dim {
                    return Err(Error::Parse {
                        line: r + 1,
                        msg: format!("feature index {idx} out of order or beyond dimension {dim}"),
                    });
                }
                last = idx;
            }
        }
        Ok(Self { rows, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// First `count` rows.
    pub fn head(&self, count: usize) -> Self {
        let count = count.min(self.len());
        Self {
            rows: self.rows[..count].to_vec(),
            labels: self.labels[..count].to_vec(),
            dim: self.dim,
        }
    }

    /// Dense `|indices| × dim` matrix of the selected rows.
    pub fn dense_rows(&self, indices: &[usize]) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(indices.len(), self.dim);
        for (r, &i) in indices.iter().enumerate() {
            for &(j, v) in &self.rows[i] {
                a[(r, j - 1)] = v;
            }
        }
        a
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn to_libsvm(&self) -> String {
        let mut s = String::new();
        for (row, &label) in self.rows.iter().zip(&self.labels) {
            s.push_str(if label > 0.0 { "+1" } else { "-1" });
            for &(j, v) in row {
                let _ = write!(s, " {j}:{v}");
            }
            s.push('\n');
        }
        s
    }
}

impl FromStr for Dataset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_libsvm(s.as_bytes())
    }
}

/// Reads `<label> <idx>:<val> ...` lines. Positive labels map to +1, all
/// others to −1. Blank lines and `#` comments are skipped.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("bad label `{label_tok}`")))?;
        if !label.is_finite() {
            return Err(err(format!("bad label `{label_tok}`")));
        }
        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected index:value, got `{tok}`")))?;
            let idx: usize = i.parse().map_err(|_| err(format!("bad feature index `{i}`")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            if idx <= last {
                return Err(err(format!("feature index {idx} does not increase (previous {last})")));
            }
            let val: f64 = v.parse().map_err(|_| err(format!("bad feature value `{v}`")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite feature value `{v}`")));
            }
            row.push((idx, val));
            last = idx;
        }
        dim = dim.max(last);
        rows.push(row);
        labels.push(if label > 0.0 { 1.0 } else { -1.0 });
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 0, msg: "no data rows".into() });
    }
    Dataset::new(rows, labels, dim.max(1))
}

/// Rescales every nonzero row to Euclidean norm 2.
pub fn normalize(data: &Dataset) -> Dataset {
    let rows = data
        .rows
        .iter()
        .map(|row| {
            let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                row.clone()
            } else {
                row.iter().map(|&(j, v)| (j, 2.0 * v / norm)).collect()
            }
        })
        .collect();
    Dataset { rows, labels: data.labels.clone(), dim: data.dim }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// rows assigned uniformly at random
    Homogeneous,
    /// rows sorted by label (−1 first) then dealt in order
    Heterogeneous,
}

impl FromStr for SplitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homogeneous" => Ok(Self::Homogeneous),
            "heterogeneous" => Ok(Self::Heterogeneous),
            _ => Err(Error::Config(format!("unknown split mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientSplit {
    pub assignment: Vec<Vec<usize>>,
    pub m: usize,
    /// rows left over after giving every client `m`
    pub dropped: usize,
}

impl ClientSplit {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// CSV with header `client_id,row_index`.
    pub fn write_manifest<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["client_id", "row_index"])?;
        for (c, rows) in self.assignment.iter().enumerate() {
            for r in rows {
                wr.write_record([c.to_string(), r.to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Gives each of `n` clients `⌊rows/n⌋` rows; the remainder is dropped.
pub fn split(data: &Dataset, n: usize, mode: SplitMode, seed: u64) -> Result<ClientSplit> {
    if n == 0 {
        return Err(Error::InvalidProblem("need at least one client".into()));
    }
    if n > data.len() {
        return Err(Error::InvalidProblem(format!("{n} clients but only {} rows", data.len())));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    match mode {
        SplitMode::Homogeneous => order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
        SplitMode::Heterogeneous => order.sort_by(|&a, &b| data.labels[a].total_cmp(&data.labels[b])),
    }
    let m = data.len() / n;
    let assignment = order.chunks_exact(m).take(n).map(|c| c.to_vec()).collect();
    Ok(ClientSplit { assignment, m, dropped: data.len() - n * m })
}
