//! Synthetic data generation.
//!
//! The default path draws the latent clonogenic cells explicitly: `N ~ Poisson(θ)`,
//! each cell joins cluster `l` with probability `p_l`, and each cell gets a Weibull
//! promotion time. The inverse-cdf sampler solves `S*(t) = U` instead and serves as an
//! independent cross-check.
//!
//! Subject `i` of a dataset draws everything (covariates, proportions, event and
//! censoring time) from substream `i` of the configuration seed, so output does not
//! depend on the number of worker threads.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Subject};
use crate::error::{GptcmError, Result};
use crate::model::{far_time, noncured_survival_unchecked, Dims, GptcmPoint, ModelParams, Scheme};
use crate::special_math::{find_root, sample_dirichlet, sample_poisson, RngStream, ROOT_TOL};

const SUBJECT_STREAM: u64 = 0;
const PILOT_STREAM: u64 = 1;

/// Simulation design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub truth: ModelParams,
    pub dirichlet_alpha: Vec<f64>,
    /// Success probability of the first (binary) clinical covariate.
    pub bernoulli_p: f64,
    pub target_censoring: f64,
    /// Fixed exponential censoring rate; calibrated from a pilot sample when absent.
    pub censoring_rate: Option<f64>,
    pub pilot_n: usize,
    pub scheme: Scheme,
    /// When set, the first covariate of every cluster block is the constant 1.
    pub cluster_intercept: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 1000,
            truth: reference_truth(),
            dirichlet_alpha: vec![1.0; 3],
            bernoulli_p: 0.5,
            target_censoring: 0.5,
            censoring_rate: None,
            pilot_n: 10_000,
            scheme: Scheme::First,
            cluster_intercept: false,
            seed: 20_240_101,
        }
    }
}

/// True parameter values of the reference design: two clinical covariates, three
/// clusters with two covariates each, no cluster intercept.
pub fn reference_truth() -> ModelParams {
    ModelParams {
        log_kappa: 1.10,
        xi: vec![-0.80, 0.90, 0.60],
        betas: vec![vec![0.40, -0.30], vec![0.25, -0.45], vec![-0.20, 0.30]],
    }
}

impl SimConfig {
    pub fn dims(&self) -> Dims {
        self.truth.dims()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        if self.truth.xi.is_empty() || dims.clusters == 0 {
            return Err(GptcmError::domain("truth needs a rate intercept and at least one cluster"));
        }
        if self.n == 0 {
            return Err(GptcmError::domain("n must be positive"));
        }
        if self.dirichlet_alpha.len() != dims.clusters {
            return Err(GptcmError::DimensionMismatch {
                what: "dirichlet concentration".into(),
                expected: dims.clusters,
                got: self.dirichlet_alpha.len(),
            });
        }
        if self.dirichlet_alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(GptcmError::domain("dirichlet concentrations must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bernoulli_p) {
            return Err(GptcmError::domain("bernoulli_p must lie in [0, 1]"));
        }
        if !(self.target_censoring > 0.0 && self.target_censoring < 1.0) {
            return Err(GptcmError::domain("target_censoring must lie in (0, 1)"));
        }
        if let Some(r) = self.censoring_rate {
            if !(r > 0.0 && r.is_finite()) {
                return Err(GptcmError::domain("censoring_rate must be positive"));
            }
        }
        if self.cluster_intercept && dims.q.contains(&0) {
            return Err(GptcmError::domain("cluster intercept needs at least one coefficient per cluster"));
        }
        if self.truth.log_kappa.is_nan() || self.truth.to_vec().iter().any(|v| !v.is_finite()) {
            return Err(GptcmError::domain("truth parameters must be finite"));
        }
        Ok(())
    }
}

/// Covariate rows of one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariates {
    pub x0: Vec<f64>,
    pub x_clusters: Vec<Vec<f64>>,
}

/// Latent state behind one event time.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDraw {
    pub n_total: u64,
    pub n_per_cluster: Vec<u64>,
    pub promotion_times: Vec<Vec<f64>>,
    /// `+∞` when no cell was drawn.
    pub event_time: f64,
}

/// Clinical covariates: the first is Bernoulli(`bernoulli_p`), the rest standard
/// normal; cluster covariates are standard normal (or 1 in the intercept column).
pub fn gen_covariates(rng: &mut RngStream, config: &SimConfig) -> Covariates {
    let dims = config.dims();
    let x0 = (0..dims.q0)
        .map(|j| {
            if j == 0 {
                f64::from(u8::from(rng.random::<f64>() < config.bernoulli_p))
            } else {
                StandardNormal.sample(rng)
            }
        })
        .collect();
    let x_clusters = dims
        .q
        .iter()
        .map(|&q| {
            (0..q)
                .map(|j| {
                    if j == 0 && config.cluster_intercept {
                        1.0
                    } else {
                        StandardNormal.sample(rng)
                    }
                })
                .collect()
        })
        .collect();
    Covariates { x0, x_clusters }
}

/// Draws the latent cells of one subject and the resulting event time.
pub fn sample_event_latent(rng: &mut RngStream, gp: &GptcmPoint, scheme: Scheme) -> LatentDraw {
    let n_total = sample_poisson(rng, gp.theta()).expect("point rate is positive");
    let weights = gp.proportions().weights();
    let n_clusters = gp.n_clusters();
    let mut n_per_cluster = vec![0u64; n_clusters];
    let mut promotion_times = vec![Vec::new(); n_clusters];
    for _ in 0..n_total {
        let mut u: f64 = rng.random();
        let mut l = n_clusters - 1;
        for (k, &p) in weights.iter().enumerate() {
            if u < p {
                l = k;
                break;
            }
            u -= p;
        }
        n_per_cluster[l] += 1;
        let time = gp.clusters()[l].quantile_of_survival(rng.uniform_open());
        promotion_times[l].push(time);
    }
    let all = promotion_times.iter().flatten().copied();
    let event_time = if n_total == 0 {
        f64::INFINITY
    } else {
        match scheme {
            Scheme::First => all.fold(f64::INFINITY, f64::min),
            Scheme::Last => all.fold(0.0, f64::max),
        }
    };
    LatentDraw {
        n_total,
        n_per_cluster,
        promotion_times,
        event_time,
    }
}

/// First-activation event time by inverting the non-cured survival; `+∞` when cured.
pub fn sample_event_invcdf(rng: &mut RngStream, gp: &GptcmPoint) -> Result<f64> {
    let cured = rng.uniform_open() < (-gp.theta()).exp();
    if cured {
        return Ok(f64::INFINITY);
    }
    let u = rng.uniform_open();
    invert_noncured(gp, u)
}

/// `t` with `S*(t) = u`, for `u` in (0, 1].
pub fn invert_noncured(gp: &GptcmPoint, u: f64) -> Result<f64> {
    if u >= 1.0 {
        return Ok(0.0);
    }
    find_root(
        |t| noncured_survival_unchecked(gp, t) - u,
        0.0,
        far_time(gp),
        ROOT_TOL,
    )
}

/// Outcome of censoring-rate calibration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub rate: f64,
    /// Censoring fraction of the pilot sample at `rate`.
    pub achieved: f64,
    /// `false` when the target lies outside the attainable range; `rate` is then
    /// the closest attainable end of the search interval.
    pub reachable: bool,
}

struct Pilot {
    event_times: Vec<f64>,
    unit_exp: Vec<f64>,
}

impl Pilot {
    fn censored_fraction(&self, rate: f64) -> f64 {
        let censored = self
            .event_times
            .iter()
            .zip(&self.unit_exp)
            .filter(|(&t, &e)| e < rate * t)
            .count();
        censored as f64 / self.event_times.len() as f64
    }
}

/// Exponential censoring rate giving `config.target_censoring`, found by bisection
/// on `log r` over `[-20, 20]` against a pilot sample of `pilot_n` subjects.
pub fn calibrate_censoring(rng: &RngStream, config: &SimConfig, pilot_n: usize) -> Result<Calibration> {
    config.validate()?;
    if pilot_n < 1000 {
        return Err(GptcmError::domain(format!("pilot_n {pilot_n} is below 1000")));
    }
    let draws = (0..pilot_n as u64)
        .into_par_iter()
        .map(|j| {
            let mut r = rng.substream(j);
            let (_, _, gp) = draw_subject_point(&mut r, config)?;
            let t = sample_event_latent(&mut r, &gp, config.scheme).event_time;
            let e: f64 = Exp1.sample(&mut r);
            Ok((t, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let (event_times, unit_exp) = draws.into_iter().unzip();
    let pilot = Pilot { event_times, unit_exp };

    let target = config.target_censoring;
    let (mut lo, mut hi) = (-20.0f64, 20.0f64);
    let at_lo = pilot.censored_fraction(lo.exp());
    let at_hi = pilot.censored_fraction(hi.exp());
    if target <= at_lo {
        return Ok(Calibration { rate: lo.exp(), achieved: at_lo, reachable: target == at_lo });
    }
    if target >= at_hi {
        return Ok(Calibration { rate: hi.exp(), achieved: at_hi, reachable: target == at_hi });
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if pilot.censored_fraction(mid.exp()) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (c_lo, c_hi) = (pilot.censored_fraction(lo.exp()), pilot.censored_fraction(hi.exp()));
    let (log_rate, achieved) = if (c_lo - target).abs() <= (c_hi - target).abs() {
        (lo, c_lo)
    } else {
        (hi, c_hi)
    };
    Ok(Calibration {
        rate: log_rate.exp(),
        achieved,
        reachable: (achieved - target).abs() <= 0.01,
    })
}

fn draw_subject_point(
    rng: &mut RngStream,
    config: &SimConfig,
) -> Result<(Covariates, crate::special_math::Simplex, GptcmPoint)> {
    let cov = gen_covariates(rng, config);
    let proportions = sample_dirichlet(rng, &config.dirichlet_alpha)?;
    let gp = config.truth.point(&cov.x0, &cov.x_clusters, &proportions)?;
    Ok((cov, proportions, gp))
}

/// One simulated subject drawn from `rng`, censored at rate `censoring_rate`.
pub fn simulate_subject(rng: &mut RngStream, config: &SimConfig, censoring_rate: f64) -> Result<Subject> {
    let (cov, proportions, gp) = draw_subject_point(rng, config)?;
    let event_time = sample_event_latent(rng, &gp, config.scheme).event_time;
    let e: f64 = Exp1.sample(rng);
    let censor_time = e / censoring_rate;
    let event = event_time <= censor_time;
    Ok(Subject {
        time: if event { event_time } else { censor_time },
        event,
        x0: cov.x0,
        x_clusters: cov.x_clusters,
        proportions,
    })
}

/// Censoring rate for `config`: the fixed value if given, else a calibrated one.
pub fn resolve_censoring(config: &SimConfig) -> Result<Calibration> {
    match config.censoring_rate {
        Some(rate) => Ok(Calibration { rate, achieved: f64::NAN, reachable: true }),
        None => calibrate_censoring(
            &RngStream::new(config.seed, PILOT_STREAM),
            config,
            config.pilot_n,
        ),
    }
}

/// Simulates `config.n` subjects with an already chosen censoring rate.
pub fn simulate_with_rate(config: &SimConfig, censoring_rate: f64) -> Result<Dataset> {
    simulate_from_stream(config, censoring_rate, &RngStream::new(config.seed, SUBJECT_STREAM))
}

/// As [`simulate_with_rate`], with subject `i` drawn from `base.substream(i)`.
pub fn simulate_from_stream(config: &SimConfig, censoring_rate: f64, base: &RngStream) -> Result<Dataset> {
    config.validate()?;
    if !(censoring_rate > 0.0 && censoring_rate.is_finite()) {
        return Err(GptcmError::domain("censoring rate must be positive"));
    }
    let subjects = (0..config.n as u64)
        .into_par_iter()
        .map(|i| simulate_subject(&mut base.substream(i), config, censoring_rate))
        .collect::<Result<Vec<_>>>()?;
    let meta = format!(
        "simulated: n={} seed={} stream={} scheme={} censoring_rate={}",
        config.n,
        base.seed(),
        base.stream_id(),
        config.scheme,
        censoring_rate
    );
    Dataset::new(subjects, config.dims(), meta)
}

/// Simulates a dataset, calibrating the censoring rate first when needed.
pub fn simulate_dataset(config: &SimConfig) -> Result<Dataset> {
    config.validate()?;
    let calibration = resolve_censoring(config)?;
    simulate_with_rate(config, calibration.rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::censoring_rate;
    use crate::model::pop_survival_first;

    #[test]
    fn covariate_moments() {
        let config = SimConfig::default();
        let mut rng = RngStream::new(11, 0);
        let n = 100_000;
        let (mut s1, mut s2, mut ss2) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let c = gen_covariates(&mut rng, &config);
            assert!(c.x0[0] == 0.0 || c.x0[0] == 1.0);
            s1 += c.x0[0];
            s2 += c.x0[1];
            ss2 += c.x0[1] * c.x0[1];
        }
        let n = n as f64;
        assert!((s1 / n - 0.5).abs() < 0.005);
        let mean2 = s2 / n;
        assert!(mean2.abs() < 0.01);
        assert!((ss2 / n - mean2 * mean2 - 1.0).abs() < 0.02);

        let always = SimConfig { bernoulli_p: 1.0, ..SimConfig::default() };
        assert!((0..1000).all(|_| gen_covariates(&mut rng, &always).x0[0] == 1.0));
    }

    #[test]
    fn intercept_column_is_constant() {
        let config = SimConfig { cluster_intercept: true, ..SimConfig::default() };
        let mut rng = RngStream::new(2, 0);
        let c = gen_covariates(&mut rng, &config);
        assert!(c.x_clusters.iter().all(|x| x[0] == 1.0));
    }

    #[test]
    fn latent_draw_structure() {
        let gp = GptcmPoint::from_log_means(5.0, 2.0, &[0.0, 0.5, -0.5], vec![0.2, 0.3, 0.5]).unwrap();
        let mut rng = RngStream::new(4, 0);
        for _ in 0..2000 {
            let d = sample_event_latent(&mut rng, &gp, Scheme::First);
            assert_eq!(d.n_per_cluster.iter().sum::<u64>(), d.n_total);
            for (times, &count) in d.promotion_times.iter().zip(&d.n_per_cluster) {
                assert_eq!(times.len() as u64, count);
            }
            let min = d.promotion_times.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(d.event_time, min);
        }
    }

    #[test]
    fn tiny_rate_is_cured() {
        let gp = GptcmPoint::from_log_means(1e-12, 1.0, &[0.0], vec![1.0]).unwrap();
        let mut rng = RngStream::new(1, 0);
        assert_eq!(sample_event_latent(&mut rng, &gp, Scheme::First).event_time, f64::INFINITY);
        assert_eq!(sample_event_invcdf(&mut rng, &gp).unwrap(), f64::INFINITY);
    }

    #[test]
    fn inverse_of_unit_is_origin() {
        let gp = GptcmPoint::reference_two_cluster(1.0).unwrap();
        assert_eq!(invert_noncured(&gp, 1.0).unwrap(), 0.0);
        assert!(invert_noncured(&gp, 1.0 - 1e-12).unwrap() < 1e-9);
    }

    #[test]
    fn invcdf_cured_fraction() {
        let gp = GptcmPoint::reference_two_cluster(3.0).unwrap();
        let mut rng = RngStream::new(8, 0);
        let n = 100_000;
        let cured = (0..n)
            .filter(|_| sample_event_invcdf(&mut rng, &gp).unwrap().is_infinite())
            .count() as f64
            / n as f64;
        let p = (-2.0f64).exp();
        assert!((cured - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    #[test]
    fn calibration_limits() {
        let config = SimConfig::default();
        let rng = RngStream::new(3, PILOT_STREAM);
        let cal = calibrate_censoring(&rng, &config, 5000).unwrap();
        assert!(cal.reachable);
        assert!((cal.achieved - 0.5).abs() <= 0.01);

        // a target below the cure fraction cannot be reached; the smallest rate
        // leaves only cured subjects censored
        let low = SimConfig { target_censoring: 0.01, ..SimConfig::default() };
        let cal = calibrate_censoring(&rng, &low, 5000).unwrap();
        assert!(!cal.reachable);
        assert_eq!(cal.rate, (-20.0f64).exp());

        let high = SimConfig { target_censoring: 0.999_99, ..SimConfig::default() };
        let cal = calibrate_censoring(&rng, &high, 5000).unwrap();
        assert!(cal.achieved > 0.99);
        assert!(calibrate_censoring(&rng, &config, 10).is_err());
    }

    #[test]
    fn cured_fraction_matches_mean_cure_probability() {
        let config = SimConfig { n: 20_000, censoring_rate: Some(1e-9), ..SimConfig::default() };
        let base = RngStream::new(config.seed, SUBJECT_STREAM);
        let (mut cured, mut expected) = (0usize, 0.0);
        for i in 0..config.n as u64 {
            let mut r = base.substream(i);
            let (_, _, gp) = draw_subject_point(&mut r, &config).unwrap();
            expected += (-gp.theta()).exp();
            if sample_event_latent(&mut r, &gp, Scheme::First).event_time.is_infinite() {
                cured += 1;
            }
        }
        let n = config.n as f64;
        let p = expected / n;
        assert!((cured as f64 / n - p).abs() < 3.0 * (p * (1.0 - p) / n).sqrt());
    }

    #[test]
    fn default_dataset_censoring_near_half() {
        let ds = simulate_dataset(&SimConfig::default()).unwrap();
        assert_eq!(ds.len(), 1000);
        assert!((censoring_rate(&ds) - 0.5).abs() <= 0.05);
        // subjects never marked as events beyond their own survival support
        assert!(ds.subjects().iter().all(|s| s.time.is_finite()));
    }

    #[test]
    fn latent_mean_survival_is_consistent() {
        let config = SimConfig::default();
        let base = RngStream::new(77, SUBJECT_STREAM);
        let t = 1.0;
        let n = 50_000;
        let (mut alive, mut expected) = (0usize, 0.0);
        for i in 0..n {
            let mut r = base.substream(i);
            let (_, _, gp) = draw_subject_point(&mut r, &config).unwrap();
            expected += pop_survival_first(&gp, t).unwrap();
            if sample_event_latent(&mut r, &gp, Scheme::First).event_time > t {
                alive += 1;
            }
        }
        assert!((alive as f64 / n as f64 - expected / n as f64).abs() < 0.01);
    }

    #[test]
    fn config_validation() {
        let bad = SimConfig { dirichlet_alpha: vec![1.0], ..SimConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SimConfig { target_censoring: 1.0, ..SimConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SimConfig { censoring_rate: Some(0.0), ..SimConfig::default() };
        assert!(simulate_dataset(&bad).is_err());
    }
}
