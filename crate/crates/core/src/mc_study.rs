//! Replicated simulate-and-fit studies.
//!
//! For every sample size `n` and replication `r`, a dataset is simulated from
//! stream `r` of the study seed (substream `n`), fitted, and the estimates are
//! summarized per parameter by their mean, spread and mean squared error.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{censoring_rate, fmt_real};
use crate::error::{GptcmError, Result};
use crate::estimate::{fit, FitOptions};
use crate::model::ModelParams;
use crate::simulate::{resolve_censoring, simulate_from_stream, SimConfig};
use crate::special_math::RngStream;

/// Replication count used by `--full-scale`.
pub const FULL_SCALE_REPLICATIONS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    /// Template design; its `n` and `seed` are ignored.
    pub sim: SimConfig,
    pub fit: FitOptions,
    pub seed: u64,
    /// Abort when more than this fraction of fits fails at any sample size.
    pub max_failure_fraction: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            sample_sizes: vec![200, 500, 1000],
            replications: 100,
            sim: SimConfig::default(),
            fit: FitOptions::default(),
            seed: 2025,
            max_failure_fraction: 0.2,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(GptcmError::domain("replications must be at least 2"));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(GptcmError::domain("sample sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return Err(GptcmError::domain("max_failure_fraction must lie in [0, 1]"));
        }
        self.sim.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub label: String,
    pub truth: f64,
    pub mean: f64,
    /// Standard deviation of the estimates across replications (divisor R).
    pub spread: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub mean_censoring: f64,
    pub params: Vec<ParamSummary>,
    /// Estimates of the successful replications, flat-vector order.
    pub estimates: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub censoring_rate: f64,
    pub sizes: Vec<SizeReport>,
}

impl StudyReport {
    pub fn size(&self, n: usize) -> Option<&SizeReport> {
        self.sizes.iter().find(|s| s.n == n)
    }
}

/// Summaries of a set of estimate vectors against the truth.
pub fn summarize(labels: &[String], truth: &[f64], estimates: &[Vec<f64>]) -> Vec<ParamSummary> {
    let r = estimates.len() as f64;
    labels
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(k, (label, &t))| {
            let values: Vec<f64> = estimates.iter().map(|e| e[k]).collect();
            let mean = values.iter().sum::<f64>() / r;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r;
            let mse = values.iter().map(|v| (v - t).powi(2)).sum::<f64>() / r;
            ParamSummary {
                label: label.clone(),
                truth: t,
                mean,
                spread: var.sqrt(),
                mse,
            }
        })
        .collect()
}

/// Stream of replication `r` at sample size `n`.
pub fn replication_stream(seed: u64, n: usize, r: usize) -> RngStream {
    RngStream::new(seed, r as u64).substream(n as u64)
}

pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let calibration = resolve_censoring(&cfg.sim)?;
    let truth = cfg.sim.truth.to_vec();
    let dims = cfg.sim.dims();
    let labels = ModelParams::labels(&dims);

    let mut sizes = Vec::with_capacity(cfg.sample_sizes.len());
    for &n in &cfg.sample_sizes {
        let sim = SimConfig { n, ..cfg.sim.clone() };
        let outcomes: Vec<Result<(Vec<f64>, f64)>> = (0..cfg.replications)
            .into_par_iter()
            .map(|r| {
                let ds = simulate_from_stream(&sim, calibration.rate, &replication_stream(cfg.seed, n, r))?;
                let rep = fit(&ds, None, &cfg.fit)?;
                if !rep.converged {
                    return Err(GptcmError::domain(format!("replication {r} did not converge")));
                }
                Ok((rep.params_hat.to_vec(), censoring_rate(&ds)))
            })
            .collect();
        let mut estimates = Vec::with_capacity(cfg.replications);
        let mut censoring = Vec::with_capacity(cfg.replications);
        for (est, c) in outcomes.into_iter().flatten() {
            estimates.push(est);
            censoring.push(c);
        }
        let failures = cfg.replications - estimates.len();
        if failures as f64 > cfg.max_failure_fraction * cfg.replications as f64 || estimates.is_empty() {
            return Err(GptcmError::StudyFailed {
                n,
                failures,
                replications: cfg.replications,
            });
        }
        sizes.push(SizeReport {
            n,
            replications: cfg.replications,
            failures,
            mean_censoring: censoring.iter().sum::<f64>() / censoring.len() as f64,
            params: summarize(&labels, &truth, &estimates),
            estimates,
        });
    }
    Ok(StudyReport {
        censoring_rate: calibration.rate,
        sizes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Markdown,
    Csv,
    Json,
}

/// Renders the report with one row per parameter and, per sample size, the mean
/// estimate with its spread and the MSE.
pub fn report_table(rep: &StudyReport, format: TableFormat) -> Result<String> {
    let Some(first) = rep.sizes.first() else {
        return Err(GptcmError::domain("report has no sample sizes"));
    };
    let mut out = String::new();
    match format {
        TableFormat::Json => {
            out = serde_json::to_string_pretty(rep)?;
            out.push('\n');
        }
        TableFormat::Markdown => {
            out.push_str("| Parameter | Truth |");
            for s in &rep.sizes {
                let _ = write!(out, " Estimate (n={}) | MSE (n={}) |", s.n, s.n);
            }
            out.push('\n');
            out.push_str("|---|---:|");
            for _ in &rep.sizes {
                out.push_str("---:|---:|");
            }
            out.push('\n');
            for (k, p) in first.params.iter().enumerate() {
                let _ = write!(out, "| {} | {:.2} |", p.label, p.truth);
                for s in &rep.sizes {
                    let q = &s.params[k];
                    let _ = write!(out, " {:.2} ({:.3}) | {:.3} |", q.mean, q.spread, q.mse);
                }
                out.push('\n');
            }
        }
        TableFormat::Csv => {
            out.push_str("parameter,truth");
            for s in &rep.sizes {
                let _ = write!(out, ",mean_n{0},spread_n{0},mse_n{0}", s.n);
            }
            out.push('\n');
            for (k, p) in first.params.iter().enumerate() {
                let _ = write!(out, "{},{}", p.label, fmt_real(p.truth));
                for s in &rep.sizes {
                    let q = &s.params[k];
                    let _ = write!(out, ",{},{},{}", fmt_real(q.mean), fmt_real(q.spread), fmt_real(q.mse));
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_variance_identity() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let truth = [0.5, -1.0];
        let est = vec![vec![0.4, -0.7], vec![0.9, -1.2], vec![0.55, -1.05], vec![0.1, -0.8]];
        for p in summarize(&labels, &truth, &est) {
            let bias = p.mean - p.truth;
            assert!((p.mse - (bias * bias + p.spread * p.spread)).abs() <= 1e-10);
        }
    }

    #[test]
    fn config_validation() {
        let cfg = StudyConfig { replications: 1, ..StudyConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = StudyConfig { sample_sizes: vec![0], ..StudyConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn failure_threshold_aborts() {
        let cfg = StudyConfig {
            sample_sizes: vec![30],
            replications: 4,
            fit: FitOptions { max_iter: 1, ..FitOptions::default() },
            ..StudyConfig::default()
        };
        assert!(matches!(run_study(&cfg), Err(GptcmError::StudyFailed { n: 30, .. })));
    }
}
