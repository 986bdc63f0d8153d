#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gptcm::model::GptcmPoint;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gptcm"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("GPTCM_THREADS").output().expect("binary runs")
}

pub fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

pub fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

pub fn two_cluster(kappa: f64) -> GptcmPoint {
    GptcmPoint::from_log_means(2.0, kappa, &[-0.1, 1.0], vec![0.3, 0.7]).unwrap()
}

/// Kaplan-Meier estimate evaluated at each point of `grid`.
pub fn kaplan_meier(times: &[f64], events: &[bool], grid: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut steps: Vec<(f64, f64)> = Vec::new();
    let mut at_risk = times.len() as f64;
    let mut s = 1.0;
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut deaths = 0.0;
        let mut leaving = 0.0;
        while i < order.len() && times[order[i]] == t {
            if events[order[i]] {
                deaths += 1.0;
            }
            leaving += 1.0;
            i += 1;
        }
        if deaths > 0.0 {
            s *= 1.0 - deaths / at_risk;
            steps.push((t, s));
        }
        at_risk -= leaving;
    }
    grid.iter()
        .map(|&t| {
            let k = steps.partition_point(|&(u, _)| u <= t);
            if k == 0 { 1.0 } else { steps[k - 1].1 }
        })
        .collect()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Fraction of `times` strictly above each grid point.
pub fn empirical_survival(times: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    grid.iter()
        .map(|&t| (sorted.len() - sorted.partition_point(|&x| x <= t)) as f64 / n)
        .collect()
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn read_csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}
