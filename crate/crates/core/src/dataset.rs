//! Multiscale survival data: times, event indicators, clinical covariates,
//! per-cluster covariates and cell-type proportions.
//!
//! On disk a dataset is a CSV file plus a JSON sidecar holding the block widths.
//! Column order is `id,time,status,x0_1..x0_q0,p_1..p_L,x1_1..x1_q1,x2_1..,...`
//! and every real is written with 17 significant digits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GptcmError, Result};
use crate::model::Dims;
use crate::special_math::Simplex;

/// Largest `|Σ p - 1|` accepted (and renormalized) when reading proportions.
pub const PROPORTION_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub time: f64,
    /// `true` for an observed event, `false` for right censoring.
    pub event: bool,
    pub x0: Vec<f64>,
    pub x_clusters: Vec<Vec<f64>>,
    pub proportions: Simplex,
}

impl Subject {
    fn validate(&self, dims: &Dims) -> std::result::Result<(), String> {
        if !(self.time >= 0.0 && self.time.is_finite()) {
            return Err(format!("time {} must be finite and nonnegative", self.time));
        }
        if self.x0.len() != dims.q0 {
            return Err(format!("{} clinical covariates, expected {}", self.x0.len(), dims.q0));
        }
        if self.proportions.len() != dims.clusters || self.x_clusters.len() != dims.clusters {
            return Err(format!("expected {} clusters", dims.clusters));
        }
        for (l, (x, &q)) in self.x_clusters.iter().zip(&dims.q).enumerate() {
            if x.len() != q {
                return Err(format!("cluster {} has {} covariates, expected {q}", l + 1, x.len()));
            }
        }
        let finite = self
            .x0
            .iter()
            .chain(self.x_clusters.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err("covariates must be finite".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    subjects: Vec<Subject>,
    dims: Dims,
    pub meta: String,
}

/// JSON sidecar describing the covariate block widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(rename = "L")]
    pub clusters: usize,
    pub q0: usize,
    pub q: Vec<usize>,
    pub meta: String,
}

impl Dataset {
    pub fn new(subjects: Vec<Subject>, dims: Dims, meta: impl Into<String>) -> Result<Self> {
        dims.validate()?;
        if subjects.is_empty() {
            return Err(GptcmError::Malformed("dataset has no subjects".into()));
        }
        for (i, s) in subjects.iter().enumerate() {
            s.validate(&dims)
                .map_err(|msg| GptcmError::InvalidRow { row: i + 1, msg })?;
        }
        Ok(Dataset {
            subjects,
            dims,
            meta: meta.into(),
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.event).count()
    }

    /// Subjects of `self` followed by those of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dims != other.dims {
            return Err(GptcmError::Malformed("cannot concatenate datasets with different layouts".into()));
        }
        let mut subjects = self.subjects.clone();
        subjects.extend_from_slice(&other.subjects);
        Dataset::new(subjects, self.dims.clone(), self.meta.clone())
    }

    /// Copy with every observed time multiplied by `factor`.
    pub fn scale_times(&self, factor: f64) -> Result<Dataset> {
        let subjects = self
            .subjects
            .iter()
            .map(|s| Subject {
                time: s.time * factor,
                ..s.clone()
            })
            .collect();
        Dataset::new(subjects, self.dims.clone(), self.meta.clone())
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            clusters: self.dims.clusters,
            q0: self.dims.q0,
            q: self.dims.q.clone(),
            meta: self.meta.clone(),
        }
    }
}

/// Fraction of censored subjects.
pub fn censoring_rate(ds: &Dataset) -> f64 {
    (ds.len() - ds.n_events()) as f64 / ds.len() as f64
}

/// Sidecar location for a dataset CSV: same path with a `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// CSV header for the given layout.
pub fn header(dims: &Dims) -> Vec<String> {
    let mut cols = vec!["id".to_string(), "time".into(), "status".into()];
    cols.extend((1..=dims.q0).map(|j| format!("x0_{j}")));
    cols.extend((1..=dims.clusters).map(|l| format!("p_{l}")));
    for (l, &q) in dims.q.iter().enumerate() {
        cols.extend((1..=q).map(|j| format!("x{}_{}", l + 1, j)));
    }
    cols
}

/// 17 significant digits, enough to round-trip any 64-bit float.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| GptcmError::io(parent, e))?;
    }
    let mut out = String::new();
    out.push_str(&header(&ds.dims).join(","));
    out.push('\n');
    for (i, s) in ds.subjects.iter().enumerate() {
        let mut row = vec![i.to_string(), fmt_real(s.time), u8::from(s.event).to_string()];
        row.extend(s.x0.iter().map(|&v| fmt_real(v)));
        row.extend(s.proportions.weights().iter().map(|&v| fmt_real(v)));
        row.extend(s.x_clusters.iter().flatten().map(|&v| fmt_real(v)));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| GptcmError::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| GptcmError::io(path, e))?;

    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&ds.sidecar())?;
    fs::write(&side, json + "\n").map_err(|e| GptcmError::io(&side, e))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| GptcmError::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    let dims = Dims {
        clusters: sidecar.clusters,
        q0: sidecar.q0,
        q: sidecar.q,
    };
    dims.validate()?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => GptcmError::io(path, io),
            other => GptcmError::Malformed(format!("{other:?}")),
        })?;
    let expected = header(&dims);
    let found: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if let Some(missing) = expected.iter().find(|c| !found.contains(c)) {
        return Err(GptcmError::Malformed(format!("missing column {missing}")));
    }
    let index: Vec<usize> = expected
        .iter()
        .map(|c| found.iter().position(|f| f == c).expect("checked above"))
        .collect();

    let mut subjects = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record?;
        let bad = |msg: String| GptcmError::InvalidRow { row, msg };
        let field = |k: usize| -> Result<f64> {
            let raw = record
                .get(index[k])
                .ok_or_else(|| bad(format!("missing field {}", expected[k])))?;
            raw.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("cannot parse {} = {raw:?}", expected[k])))
        };
        let time = field(1)?;
        if !(time >= 0.0) {
            return Err(bad(format!("negative time {time}")));
        }
        let event = match field(2)? {
            0.0 => false,
            1.0 => true,
            s => return Err(bad(format!("status {s} not in {{0, 1}}"))),
        };
        let mut k = 3;
        let mut take = |width: usize| -> Result<Vec<f64>> {
            let v = (k..k + width).map(&field).collect::<Result<Vec<_>>>()?;
            k += width;
            Ok(v)
        };
        let x0 = take(dims.q0)?;
        let p = take(dims.clusters)?;
        let x_clusters = dims.q.iter().map(|&q| take(q)).collect::<Result<Vec<_>>>()?;

        let total: f64 = p.iter().sum();
        if p.iter().any(|&v| v < 0.0) || !((total - 1.0).abs() <= PROPORTION_TOL) {
            return Err(bad(format!("proportions sum to {total}, not 1")));
        }
        let proportions = Simplex::new(p).map_err(|e| bad(e.to_string()))?;
        subjects.push(Subject {
            time,
            event,
            x0,
            x_clusters,
            proportions,
        });
    }
    Dataset::new(subjects, dims, sidecar.meta)
}
