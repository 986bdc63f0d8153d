//! Survival of systems built from a Poisson number of units.
//!
//! Each cluster `l` contributes `N_l ~ Poisson(θ p_l)` independent units with
//! lifetimes drawn from its Weibull law. A cluster forms one subsystem. The four
//! topologies are
//!
//! * `series`: the first unit failure ends the system,
//! * `parallel`: the system lives until its last unit fails,
//! * `parallel_series`: parallel arrangement of series subsystems,
//! * `series_parallel`: series arrangement of parallel subsystems.
//!
//! A system with no units never fails. A subsystem with no units is absent from
//! the arrangement, so the mixed topologies always sit between `series` and
//! `parallel` draw by draw.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GptcmError, Result};
use crate::model::{
    birnbaum_importance, pop_survival_first, pop_survival_last, GptcmPoint, Scheme, WeibullCluster,
};
use crate::simulate::sample_event_latent;
use crate::special_math::RngStream;

/// Draws per Monte Carlo substream.
pub const CHUNK: usize = 8192;
pub const MIN_DRAWS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemScheme {
    Series,
    Parallel,
    ParallelSeries,
    SeriesParallel,
}

impl SystemScheme {
    pub const ALL: [SystemScheme; 4] = [
        SystemScheme::Series,
        SystemScheme::ParallelSeries,
        SystemScheme::SeriesParallel,
        SystemScheme::Parallel,
    ];
}

impl std::fmt::Display for SystemScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SystemScheme::Series => "series",
            SystemScheme::Parallel => "parallel",
            SystemScheme::ParallelSeries => "parallel_series",
            SystemScheme::SeriesParallel => "series_parallel",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    scheme: SystemScheme,
    theta: f64,
    kappa: f64,
    log_mu: Vec<f64>,
    proportions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecFile", into = "SpecFile")]
pub struct SystemSpec {
    pub scheme: SystemScheme,
    pub point: GptcmPoint,
}

impl TryFrom<SpecFile> for SystemSpec {
    type Error = GptcmError;

    fn try_from(f: SpecFile) -> Result<Self> {
        let point = GptcmPoint::from_log_means(f.theta, f.kappa, &f.log_mu, f.proportions)?;
        Ok(SystemSpec { scheme: f.scheme, point })
    }
}

impl From<SystemSpec> for SpecFile {
    fn from(s: SystemSpec) -> Self {
        let clusters = s.point.clusters();
        SpecFile {
            scheme: s.scheme,
            theta: s.point.theta(),
            kappa: clusters[0].kappa(),
            log_mu: clusters.iter().map(|c| c.mu().ln()).collect(),
            proportions: s.point.proportions().weights().to_vec(),
        }
    }
}

impl SystemSpec {
    pub fn new(scheme: SystemScheme, point: GptcmPoint) -> Self {
        SystemSpec { scheme, point }
    }

    pub fn with_scheme(&self, scheme: SystemScheme) -> Self {
        SystemSpec { scheme, point: self.point.clone() }
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && !t.is_nan() {
        Ok(())
    } else {
        Err(GptcmError::domain(format!("time {t} must be nonnegative")))
    }
}

fn terms(point: &GptcmPoint) -> impl Iterator<Item = (f64, &WeibullCluster)> {
    point
        .proportions()
        .weights()
        .iter()
        .zip(point.clusters())
        .map(|(p, c)| (point.theta() * p, c))
}

pub fn system_survival(spec: &SystemSpec, t: f64) -> Result<f64> {
    check_time(t)?;
    let gp = &spec.point;
    match spec.scheme {
        SystemScheme::Series => pop_survival_first(gp, t),
        SystemScheme::Parallel => pop_survival_last(gp, t),
        SystemScheme::ParallelSeries => {
            // P(every present subsystem has failed) minus P(no subsystem present)
            let prod: f64 = terms(gp)
                .map(|(m, c)| 1.0 + (-m).exp() - (-m * c.cdf(t)).exp())
                .product();
            Ok((1.0 + (-gp.theta()).exp() - prod).clamp(0.0, 1.0))
        }
        SystemScheme::SeriesParallel => {
            let prod: f64 = terms(gp)
                .map(|(m, c)| 1.0 - (-m * c.survival(t)).exp() + (-m).exp())
                .product();
            Ok(prod.clamp(0.0, 1.0))
        }
    }
}

/// Failure times of one latent draw under each topology, in the order of
/// [`SystemScheme::ALL`].
pub fn coupled_times(rng: &mut RngStream, point: &GptcmPoint) -> [f64; 4] {
    let draw = sample_event_latent(rng, point, Scheme::First);
    let mut series = f64::INFINITY;
    let mut parallel = f64::NEG_INFINITY;
    let mut par_ser = f64::NEG_INFINITY;
    let mut ser_par = f64::INFINITY;
    for times in draw.promotion_times.iter().filter(|v| !v.is_empty()) {
        let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        series = series.min(lo);
        parallel = parallel.max(hi);
        par_ser = par_ser.max(lo);
        ser_par = ser_par.min(hi);
    }
    if draw.n_total == 0 {
        return [f64::INFINITY; 4];
    }
    [series, par_ser, ser_par, parallel]
}

fn scheme_index(s: SystemScheme) -> usize {
    SystemScheme::ALL.iter().position(|&x| x == s).expect("listed")
}

/// Coupled failure times for `draws` latent systems. Draw `i` comes from
/// substream `i / CHUNK` of `rng`, so the result does not depend on the pool size.
pub fn coupled_sample(point: &GptcmPoint, draws: usize, rng: &RngStream) -> Vec<[f64; 4]> {
    let chunks = draws.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|k| {
            let mut sub = rng.substream(k as u64);
            let len = CHUNK.min(draws - k * CHUNK);
            (0..len).map(move |_| coupled_times(&mut sub, point)).collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McCurve {
    pub t: Vec<f64>,
    pub survival: Vec<f64>,
    pub se: Vec<f64>,
    pub draws: usize,
}

pub fn monte_carlo_survival(spec: &SystemSpec, t_grid: &[f64], draws: usize, rng: &RngStream) -> Result<McCurve> {
    if draws < MIN_DRAWS {
        return Err(GptcmError::domain(format!("at least {MIN_DRAWS} draws required, got {draws}")));
    }
    for &t in t_grid {
        check_time(t)?;
    }
    let idx = scheme_index(spec.scheme);
    let mut times: Vec<f64> = coupled_sample(&spec.point, draws, rng).iter().map(|d| d[idx]).collect();
    times.sort_by(f64::total_cmp);
    let n = draws as f64;
    let survival: Vec<f64> = t_grid
        .iter()
        .map(|&t| (draws - times.partition_point(|&x| x <= t)) as f64 / n)
        .collect();
    let se = survival.iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect();
    Ok(McCurve {
        t: t_grid.to_vec(),
        survival,
        se,
        draws,
    })
}

/// Cluster indices (0-based) ordered by Birnbaum importance, largest first.
pub fn importance_ranking(spec: &SystemSpec, t: f64) -> Result<Vec<usize>> {
    check_time(t)?;
    if spec.scheme != SystemScheme::Series {
        return Err(GptcmError::UnsupportedScheme(format!(
            "importance needs a series system, got {}",
            spec.scheme
        )));
    }
    let imp = birnbaum_importance(&spec.point, t)?;
    let mut order: Vec<usize> = (0..imp.len()).collect();
    order.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]).then(a.cmp(&b)));
    Ok(order)
}
