//! File formats: JSON problem files, return-panel CSVs, plain vector files
//! and per-iteration trace CSVs.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::driver::IterationRecord;
use crate::error::{Error, Result};
use crate::model::ConstrainedL1Problem;
use crate::portfolio::ReturnPanel;

pub const PROBLEM_FORMAT: &str = "bregaccel-problem";
pub const PROBLEM_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Dense matrix stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixData {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        if self.rows * self.cols != self.data.len() {
            return Err(Error::Format(format!(
                "matrix {name} declares {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Portfolio data needed to recompute the benchmark and the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioMeta {
    pub n_assets: usize,
    pub periods: usize,
    /// Expected return vector of each rebalancing date.
    pub returns: Vec<Vec<f64>>,
    pub xi_ini: f64,
    pub xi_fin: f64,
}

impl PortfolioMeta {
    pub fn return_vectors(&self) -> Vec<DVector<f64>> {
        self.returns.iter().map(|r| DVector::from_row_slice(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub format: String,
    pub version: u32,
    pub c: MatrixData,
    pub d: MatrixData,
    pub a: MatrixData,
    pub b: Vec<f64>,
    pub tau1: f64,
    pub tau2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub portfolio: Option<PortfolioMeta>,
}

impl ProblemFile {
    pub fn new(problem: &ConstrainedL1Problem, portfolio: Option<PortfolioMeta>) -> Self {
        Self {
            format: PROBLEM_FORMAT.to_string(),
            version: PROBLEM_VERSION,
            c: MatrixData::from_matrix(problem.c()),
            d: MatrixData::from_matrix(problem.d()),
            a: MatrixData::from_matrix(problem.a()),
            b: problem.b().as_slice().to_vec(),
            tau1: problem.tau1(),
            tau2: problem.tau2(),
            portfolio,
        }
    }

    pub fn to_problem(&self) -> Result<ConstrainedL1Problem> {
        if self.format != PROBLEM_FORMAT {
            return Err(Error::Format(format!("unknown format tag {:?}", self.format)));
        }
        if self.version != PROBLEM_VERSION {
            return Err(Error::Format(format!("unsupported version {}", self.version)));
        }
        if let Some(meta) = &self.portfolio {
            if meta.returns.len() != meta.periods || meta.returns.iter().any(|r| r.len() != meta.n_assets) {
                return Err(Error::Format("portfolio returns do not match n_assets x periods".into()));
            }
        }
        ConstrainedL1Problem::new(
            self.c.to_matrix("c")?,
            self.tau1,
            self.tau2,
            self.d.to_matrix("d")?,
            self.a.to_matrix("a")?,
            DVector::from_row_slice(&self.b),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn write_problem_file(path: &Path, file: &ProblemFile) -> Result<()> {
    let mut text = file.to_json();
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_problem_file(path: &Path) -> Result<ProblemFile> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    ProblemFile::from_json(&text).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses a return panel: header `date,NAME1,NAME2,...`, then one row per
/// period. Errors carry the 1-based line number.
pub fn parse_returns_csv(text: &str, source: &str, percent: bool) -> Result<ReturnPanel> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(parse_err(1, "header needs a date column followed by at least one asset".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut periods = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != headers.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        periods.push(record[0].to_string());
        for (j, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("column {:?}: cannot parse {field:?} as a number", names[j])))?;
            let v = if percent { v / 100.0 } else { v };
            if !v.is_finite() || v <= -1.0 {
                return Err(parse_err(line, format!("column {:?}: return {v} must be finite and > -1", names[j])));
            }
            values.push(v);
        }
    }
    if periods.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    let returns = DMatrix::from_row_slice(periods.len(), names.len(), &values);
    ReturnPanel::new(names, periods, returns)
}

pub fn read_returns_csv(path: &Path, percent: bool) -> Result<ReturnPanel> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_returns_csv(&text, &path.display().to_string(), percent)
}

/// One value per line, full round-trip precision.
pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(v.len() * 24);
    for x in v {
        out.push_str(&format!("{x:?}\n"));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        values.push(t.parse::<f64>().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("cannot parse {t:?} as a number"),
        })?);
    }
    Ok(DVector::from_vec(values))
}

/// `k,residual,violation_a,violation_d,subproblem_value,gamma,step`.
pub fn write_trace_csv(out: &mut impl Write, trace: &[IterationRecord]) -> std::io::Result<()> {
    writeln!(out, "k,residual,violation_a,violation_d,subproblem_value,gamma,step")?;
    for r in trace {
        let step = serde_json::to_value(r.step).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{},{}",
            r.k, r.residual, r.violation_a, r.violation_d, r.subproblem_value, r.gamma, step
        )?;
    }
    Ok(())
}
