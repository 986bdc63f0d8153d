//! Closed-form quantities of the generalized promotion time cure model.
//!
//! A subject carries a Poisson rate `θ` for its number of clonogenic cells,
//! `L` Weibull clusters with common shape `κ` and cluster means `μ_l`, and the
//! observed cluster proportions `p`. Under first activation the population
//! survival is `exp(-θ(1 - Σ p_l S_l(t)))`; under last activation it is
//! `1 + e^{-θ} - exp(-θ Σ p_l S_l(t))`. Both are improper with cure fraction `e^{-θ}`.
//!
//! Evaluations "at infinity" use [`far_time`], `10^4` times the largest scale. At
//! that point every cluster survival is below `exp(-10^(4κ))`.

use serde::{Deserialize, Serialize};

use crate::error::{GptcmError, Result};
use crate::special_math::{gamma_fn, Simplex};

/// Activation scheme for the latent promotion times.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Event at the earliest promotion time.
    First,
    /// Event at the latest promotion time.
    Last,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::First => f.write_str("first"),
            Scheme::Last => f.write_str("last"),
        }
    }
}

/// Weibull promotion-time distribution parameterized by its mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeibullCluster {
    kappa: f64,
    mu: f64,
    lambda: f64,
}

impl WeibullCluster {
    /// Builds the cluster from shape `kappa` and mean `mu`; the scale is
    /// `mu / Γ(1 + 1/kappa)`.
    pub fn new(kappa: f64, mu: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(GptcmError::domain(format!("shape {kappa} must be positive")));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(GptcmError::domain(format!("mean {mu} must be positive")));
        }
        let lambda = mu / gamma_fn(1.0 + 1.0 / kappa)?;
        Ok(WeibullCluster { kappa, mu, lambda })
    }

    pub fn from_log_mean(kappa: f64, log_mu: f64) -> Result<Self> {
        WeibullCluster::new(kappa, log_mu.exp())
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Same shape, mean multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        WeibullCluster::new(self.kappa, self.mu * factor)
    }

    #[inline]
    fn z(&self, t: f64) -> f64 {
        (t / self.lambda).powf(self.kappa)
    }

    #[inline]
    pub(crate) fn survival(&self, t: f64) -> f64 {
        (-self.z(t)).exp()
    }

    #[inline]
    pub(crate) fn cdf(&self, t: f64) -> f64 {
        -(-self.z(t)).exp_m1()
    }

    #[inline]
    pub(crate) fn density(&self, t: f64) -> f64 {
        let z = self.z(t);
        self.kappa / t * z * (-z).exp()
    }

    /// Right limit of the density at zero (infinite when `κ < 1`).
    pub(crate) fn density_at_zero(&self) -> f64 {
        if self.kappa < 1.0 {
            f64::INFINITY
        } else if self.kappa == 1.0 {
            1.0 / self.lambda
        } else {
            0.0
        }
    }

    /// Draws a promotion time by inversion of a uniform on (0, 1).
    pub(crate) fn quantile_of_survival(&self, u: f64) -> f64 {
        self.lambda * (-u.ln()).powf(1.0 / self.kappa)
    }
}

/// One subject's model: rate `θ`, clusters and proportions.
#[derive(Clone, Debug, PartialEq)]
pub struct GptcmPoint {
    theta: f64,
    clusters: Vec<WeibullCluster>,
    proportions: Simplex,
}

impl GptcmPoint {
    pub fn new(theta: f64, clusters: Vec<WeibullCluster>, proportions: Simplex) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(GptcmError::domain(format!("rate {theta} must be positive")));
        }
        if clusters.is_empty() {
            return Err(GptcmError::domain("at least one cluster is required"));
        }
        if clusters.len() != proportions.len() {
            return Err(GptcmError::DimensionMismatch {
                what: "proportions vs clusters".into(),
                expected: clusters.len(),
                got: proportions.len(),
            });
        }
        Ok(GptcmPoint {
            theta,
            clusters,
            proportions,
        })
    }

    /// Common-shape point from log cluster means.
    pub fn from_log_means(
        theta: f64,
        kappa: f64,
        log_mu: &[f64],
        proportions: Vec<f64>,
    ) -> Result<Self> {
        let clusters = log_mu
            .iter()
            .map(|&m| WeibullCluster::from_log_mean(kappa, m))
            .collect::<Result<Vec<_>>>()?;
        GptcmPoint::new(theta, clusters, Simplex::new(proportions)?)
    }

    /// The two-cluster configuration used for the reference curves:
    /// `log μ = (-0.1, 1)`, `p = (0.3, 0.7)`, `θ = 2`.
    pub fn reference_two_cluster(kappa: f64) -> Result<Self> {
        GptcmPoint::from_log_means(2.0, kappa, &[-0.1, 1.0], vec![0.3, 0.7])
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn clusters(&self) -> &[WeibullCluster] {
        &self.clusters
    }

    pub fn proportions(&self) -> &Simplex {
        &self.proportions
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        GptcmPoint::new(theta, self.clusters.clone(), self.proportions.clone())
    }

    pub fn max_lambda(&self) -> f64 {
        self.clusters
            .iter()
            .map(WeibullCluster::lambda)
            .fold(0.0, f64::max)
    }

    pub(crate) fn weighted(&self, g: impl Fn(&WeibullCluster) -> f64) -> f64 {
        self.clusters
            .iter()
            .zip(self.proportions.weights())
            .map(|(c, p)| p * g(c))
            .sum()
    }

    /// Mixture cdf `F(t) = Σ p_l F_l(t)`.
    pub(crate) fn mix_cdf(&self, t: f64) -> f64 {
        self.weighted(|c| c.cdf(t))
    }

    /// `Σ p_l S_l(t)`.
    pub(crate) fn mix_survival(&self, t: f64) -> f64 {
        self.weighted(|c| c.survival(t))
    }

    /// Mixture density `f(t) = Σ p_l f_l(t)`; right limit at `t = 0`.
    pub(crate) fn mix_density(&self, t: f64) -> f64 {
        if t == 0.0 {
            self.weighted(WeibullCluster::density_at_zero)
        } else {
            self.weighted(|c| c.density(t))
        }
    }
}

/// Time treated as infinity: `10^4 · max λ_l`.
pub fn far_time(gp: &GptcmPoint) -> f64 {
    1e4 * gp.max_lambda()
}

fn check_nonneg(t: f64) -> Result<()> {
    if t >= 0.0 {
        Ok(())
    } else {
        Err(GptcmError::domain(format!("time {t} must be nonnegative")))
    }
}

fn check_pos(t: f64) -> Result<()> {
    if t > 0.0 {
        Ok(())
    } else {
        Err(GptcmError::domain(format!("time {t} must be positive")))
    }
}

/// `S_l(t) = exp(-(t/λ_l)^κ)`.
pub fn cluster_survival(c: &WeibullCluster, t: f64) -> Result<f64> {
    check_nonneg(t)?;
    Ok(c.survival(t))
}

/// Population survival under first activation.
pub fn pop_survival_first(gp: &GptcmPoint, t: f64) -> Result<f64> {
    check_nonneg(t)?;
    Ok((-gp.theta * gp.mix_cdf(t)).exp())
}

/// Classical promotion time survival `exp(-θ F)`.
pub fn ptcm_survival(theta: f64, cdf: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&cdf) {
        return Err(GptcmError::domain(format!("cdf value {cdf} outside [0, 1]")));
    }
    if !(theta > 0.0) {
        return Err(GptcmError::domain(format!("rate {theta} must be positive")));
    }
    Ok((-theta * cdf).exp())
}

/// Improper population density `θ f(t) e^{-θF(t)}`.
pub fn pop_density_first(gp: &GptcmPoint, t: f64) -> Result<f64> {
    check_pos(t)?;
    Ok(gp.theta * gp.mix_density(t) * (-gp.theta * gp.mix_cdf(t)).exp())
}

/// Population hazard `θ f(t)`.
pub fn pop_hazard_first(gp: &GptcmPoint, t: f64) -> Result<f64> {
    check_pos(t)?;
    Ok(gp.theta * gp.mix_density(t))
}

/// Proper survival of the non-cured subpopulation (`N > 0`).
pub fn noncured_survival(gp: &GptcmPoint, t: f64) -> Result<f64> {
    check_nonneg(t)?;
    Ok(noncured_survival_unchecked(gp, t))
}

pub(crate) fn noncured_survival_unchecked(gp: &GptcmPoint, t: f64) -> f64 {
    // (e^{-θF} - e^{-θ}) / (1 - e^{-θ}) with 1 - F = Σ p S
    let theta = gp.theta;
    (-theta).exp() * (theta * gp.mix_survival(t)).exp_m1() / -(-theta).exp_m1()
}

/// Hazard of the non-cured subpopulation, `θ f(t) / (1 - e^{-θ Σ p_l S_l(t)})`.
pub fn noncured_hazard(gp: &GptcmPoint, t: f64) -> Result<f64> {
    check_pos(t)?;
    let theta = gp.theta;
    // write it as [θs / (1 - e^{-θs})] · (f / s) with s = Σ p S; the ratio f / s is
    // the survival-weighted cluster hazard, evaluated in log space so it survives
    // the underflow of every S_l
    let mut log_w = Vec::with_capacity(gp.n_clusters());
    let mut hazards = Vec::with_capacity(gp.n_clusters());
    for (c, &p) in gp.clusters.iter().zip(gp.proportions.weights()) {
        if p > 0.0 {
            let z = c.z(t);
            log_w.push(p.ln() - z);
            hazards.push(c.kappa / t * z);
        }
    }
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (lw, h) in log_w.iter().zip(&hazards) {
        let w = (lw - top).exp();
        num += w * h;
        den += w;
    }
    let s = gp.mix_survival(t);
    let factor = if s > 0.0 { theta * s / -(-theta * s).exp_m1() } else { 1.0 };
    Ok(factor * num / den)
}

/// Population cumulative hazard `θ F(t)`.
pub fn pop_cumhazard_first(gp: &GptcmPoint, t: f64) -> Result<f64> {
    check_nonneg(t)?;
    Ok(gp.theta * gp.mix_cdf(t))
}

/// Population survival under last activation.
pub fn pop_survival_last(gp: &GptcmPoint, t: f64) -> Result<f64> {
    check_nonneg(t)?;
    let theta = gp.theta;
    Ok(1.0 + (-theta).exp() - (-theta * gp.mix_survival(t)).exp())
}

/// Population density under last activation, `θ f(t) e^{-θ Σ p_l S_l(t)}`.
pub fn pop_density_last(gp: &GptcmPoint, t: f64) -> Result<f64> {
    check_pos(t)?;
    let theta = gp.theta;
    Ok(theta * gp.mix_density(t) * (-theta * gp.mix_survival(t)).exp())
}

/// Classical mixture cure survival `π0 + Σ p_l S_l(t)`, evaluated literally.
///
/// The cluster weights are not rescaled by `1 - π0`, so the value exceeds one
/// near `t = 0` whenever `π0 > 0`. Comparison use only.
pub fn mixture_survival(
    pi0: f64,
    clusters: &[WeibullCluster],
    proportions: &Simplex,
    t: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&pi0) {
        return Err(GptcmError::domain(format!("cure probability {pi0} outside [0, 1]")));
    }
    check_nonneg(t)?;
    if clusters.len() != proportions.len() {
        return Err(GptcmError::DimensionMismatch {
            what: "proportions vs clusters".into(),
            expected: clusters.len(),
            got: proportions.len(),
        });
    }
    let mix: f64 = clusters
        .iter()
        .zip(proportions.weights())
        .map(|(c, p)| p * c.survival(t))
        .sum();
    Ok(pi0 + mix)
}

/// Birnbaum importance `∂S_pop/∂S_l = S_pop(t) θ p_l` for every cluster.
pub fn birnbaum_importance(gp: &GptcmPoint, t: f64) -> Result<Vec<f64>> {
    let s = pop_survival_first(gp, t)?;
    Ok(gp
        .proportions
        .weights()
        .iter()
        .map(|p| s * gp.theta * p)
        .collect())
}

/// `θ = exp(ξ0 + x0·ξ)`; `xi` holds the intercept first.
pub fn link_theta(xi: &[f64], x0: &[f64]) -> Result<f64> {
    if xi.len() != x0.len() + 1 {
        return Err(GptcmError::DimensionMismatch {
            what: "rate coefficients (intercept + covariates)".into(),
            expected: x0.len() + 1,
            got: xi.len(),
        });
    }
    Ok((xi[0] + dot(&xi[1..], x0)).exp())
}

/// `μ_l = exp(x_l·β_l)`.
pub fn link_mu(beta: &[f64], x: &[f64]) -> Result<f64> {
    if beta.len() != x.len() {
        return Err(GptcmError::DimensionMismatch {
            what: "cluster coefficients".into(),
            expected: x.len(),
            got: beta.len(),
        });
    }
    Ok(dot(beta, x).exp())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Covariate layout: `L` clusters, `q0` clinical covariates, `q_l` per cluster.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    #[serde(rename = "L")]
    pub clusters: usize,
    pub q0: usize,
    pub q: Vec<usize>,
}

impl Dims {
    pub fn new(q0: usize, q: Vec<usize>) -> Result<Self> {
        if q.is_empty() {
            return Err(GptcmError::domain("at least one cluster is required"));
        }
        Ok(Dims {
            clusters: q.len(),
            q0,
            q,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.q.len() != self.clusters {
            return Err(GptcmError::DimensionMismatch {
                what: "cluster block widths".into(),
                expected: self.clusters,
                got: self.q.len(),
            });
        }
        Ok(())
    }

    /// Total number of free parameters: `1 + (q0 + 1) + Σ q_l`.
    pub fn n_params(&self) -> usize {
        2 + self.q0 + self.q.iter().sum::<usize>()
    }
}

/// All free parameters: `log κ`, rate coefficients `ξ` (intercept first) and the
/// per-cluster mean coefficients `β_l`.
///
/// The flat vector layout is `[log κ, ξ0, ξ1.., β_1.., β_2.., ...]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub log_kappa: f64,
    pub xi: Vec<f64>,
    pub betas: Vec<Vec<f64>>,
}

impl ModelParams {
    pub fn zeros(dims: &Dims) -> Self {
        ModelParams {
            log_kappa: 0.0,
            xi: vec![0.0; dims.q0 + 1],
            betas: dims.q.iter().map(|&q| vec![0.0; q]).collect(),
        }
    }

    pub fn kappa(&self) -> f64 {
        self.log_kappa.exp()
    }

    pub fn dims(&self) -> Dims {
        Dims {
            clusters: self.betas.len(),
            q0: self.xi.len().saturating_sub(1),
            q: self.betas.iter().map(Vec::len).collect(),
        }
    }

    pub fn check_dims(&self, dims: &Dims) -> Result<()> {
        if self.xi.is_empty() || self.dims() != *dims {
            return Err(GptcmError::DimensionMismatch {
                what: format!("parameter layout {:?} vs data layout {:?}", self.dims(), dims),
                expected: dims.n_params(),
                got: self.n_params(),
            });
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        1 + self.xi.len() + self.betas.iter().map(Vec::len).sum::<usize>()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.push(self.log_kappa);
        v.extend_from_slice(&self.xi);
        for b in &self.betas {
            v.extend_from_slice(b);
        }
        v
    }

    pub fn from_vec(dims: &Dims, v: &[f64]) -> Result<Self> {
        if v.len() != dims.n_params() {
            return Err(GptcmError::DimensionMismatch {
                what: "flat parameter vector".into(),
                expected: dims.n_params(),
                got: v.len(),
            });
        }
        let xi = v[1..dims.q0 + 2].to_vec();
        let mut offset = dims.q0 + 2;
        let betas = dims
            .q
            .iter()
            .map(|&q| {
                let b = v[offset..offset + q].to_vec();
                offset += q;
                b
            })
            .collect();
        Ok(ModelParams {
            log_kappa: v[0],
            xi,
            betas,
        })
    }

    /// Row labels in flat-vector order: `log(kappa)`, `xi_1..`, `beta_11..`.
    ///
    /// Rate coefficients are numbered from one, so `xi_1` is the intercept.
    pub fn labels(dims: &Dims) -> Vec<String> {
        let mut labels = vec!["log(kappa)".to_string()];
        labels.extend((1..=dims.q0 + 1).map(|j| format!("xi_{j}")));
        for (l, &q) in dims.q.iter().enumerate() {
            labels.extend((1..=q).map(|j| format!("beta_{}{}", l + 1, j)));
        }
        labels
    }

    /// Model for one subject with the given covariate rows and proportions.
    pub fn point(&self, x0: &[f64], x_clusters: &[Vec<f64>], proportions: &Simplex) -> Result<GptcmPoint> {
        if x_clusters.len() != self.betas.len() {
            return Err(GptcmError::DimensionMismatch {
                what: "cluster covariate blocks".into(),
                expected: self.betas.len(),
                got: x_clusters.len(),
            });
        }
        let theta = link_theta(&self.xi, x0)?;
        let kappa = self.kappa();
        let clusters = self
            .betas
            .iter()
            .zip(x_clusters)
            .map(|(b, x)| WeibullCluster::new(kappa, link_mu(b, x)?))
            .collect::<Result<Vec<_>>>()?;
        GptcmPoint::new(theta, clusters, proportions.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn single(theta: f64, kappa: f64, lambda: f64) -> GptcmPoint {
        let mu = lambda * gamma_fn(1.0 + 1.0 / kappa).unwrap();
        GptcmPoint::new(
            theta,
            vec![WeibullCluster::new(kappa, mu).unwrap()],
            Simplex::new(vec![1.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn scale_from_mean() {
        let c = WeibullCluster::new(3.0, 2.0).unwrap();
        assert_relative_eq!(
            c.lambda(),
            2.0 / gamma_fn(1.0 + 1.0 / 3.0).unwrap(),
            max_relative = 1e-12
        );
        assert!(WeibullCluster::new(0.0, 1.0).is_err());
        assert!(WeibullCluster::new(1.0, -1.0).is_err());
    }

    #[test]
    fn cluster_survival_examples() {
        let c = WeibullCluster::new(1.0, 1.0).unwrap();
        assert_eq!(cluster_survival(&c, 0.0).unwrap(), 1.0);
        assert_relative_eq!(cluster_survival(&c, 1.0).unwrap(), (-1.0f64).exp(), max_relative = 1e-14);
        assert!(cluster_survival(&c, -1.0).is_err());

        // at t = μ the value is exp(-Γ(4/3)^3) whatever μ is; 50-digit reference
        let c = WeibullCluster::from_log_mean(3.0, -0.1).unwrap();
        assert_relative_eq!(
            cluster_survival(&c, c.mu()).unwrap(),
            0.490_626_102_806_887_420_65,
            max_relative = 1e-12
        );
    }

    #[test]
    fn first_activation_examples() {
        let gp = GptcmPoint::reference_two_cluster(3.0).unwrap();
        assert_eq!(pop_survival_first(&gp, 0.0).unwrap(), 1.0);
        assert_relative_eq!(
            pop_survival_first(&gp, far_time(&gp)).unwrap(),
            (-2.0f64).exp(),
            max_relative = 1e-10
        );
        let gp = single(2.0, 1.0, 1.0);
        let want = (-2.0 * (1.0 - (-1.0f64).exp())).exp();
        assert_relative_eq!(pop_survival_first(&gp, 1.0).unwrap(), want, max_relative = 1e-14);
        assert_relative_eq!(want, 0.282_453_563_850_540_3, max_relative = 1e-12);
        assert_relative_eq!(
            pop_density_first(&gp, 1.0).unwrap(),
            2.0 * (-1.0f64).exp() * want,
            max_relative = 1e-14
        );
        assert!(pop_density_first(&gp, far_time(&gp)).unwrap() < 1e-300);
        assert!(pop_density_first(&gp, 0.0).is_err());
        assert!(pop_survival_first(&gp, -1.0).is_err());
    }

    #[test]
    fn ptcm_examples() {
        assert_eq!(ptcm_survival(2.0, 0.0).unwrap(), 1.0);
        assert_relative_eq!(ptcm_survival(2.0, 1.0).unwrap(), (-2.0f64).exp());
        assert!(ptcm_survival(2.0, 1.5).is_err());
        assert!(ptcm_survival(2.0, -0.1).is_err());
    }

    #[test]
    fn exponential_clusters_have_flat_hazard_at_origin() {
        let gp = GptcmPoint::from_log_means(2.0, 1.0, &[0.0, 1.0], vec![0.4, 0.6]).unwrap();
        let mix_rate = 0.4 / 1.0 + 0.6 / 1.0f64.exp();
        assert_relative_eq!(pop_hazard_first(&gp, 1e-12).unwrap(), 2.0 * mix_rate, max_relative = 1e-9);
    }

    #[test]
    fn noncured_examples() {
        let gp = GptcmPoint::reference_two_cluster(1.0).unwrap();
        assert!((noncured_survival(&gp, 0.0).unwrap() - 1.0).abs() <= 1e-12);
        assert!(noncured_survival(&gp, far_time(&gp)).unwrap() < 1e-12);
        let t = 1.0;
        let h = 1e-6;
        let fd = -((noncured_survival(&gp, t + h).unwrap().ln() - noncured_survival(&gp, t - h).unwrap().ln())
            / (2.0 * h));
        assert_relative_eq!(noncured_hazard(&gp, t).unwrap(), fd, max_relative = 1e-6);

        // h_pop / h* = 1 - e^{-θ Σ p S}: tends to 1 - e^{-θ} at the origin and to 0
        // in the tail, where the population is dominated by cured subjects
        let near = pop_hazard_first(&gp, 1e-9).unwrap() / noncured_hazard(&gp, 1e-9).unwrap();
        assert!((near - (1.0 - (-2.0f64).exp())).abs() < 1e-6);
        let far = 100.0 * gp.max_lambda();
        let ratio = pop_hazard_first(&gp, far).unwrap() / noncured_hazard(&gp, far).unwrap();
        assert!(ratio < 1e-6);
        assert!(noncured_hazard(&gp, 1e4 * far).unwrap().is_finite());
    }

    #[test]
    fn cumulative_hazard_limits() {
        let gp = GptcmPoint::reference_two_cluster(0.5).unwrap();
        assert_eq!(pop_cumhazard_first(&gp, 0.0).unwrap(), 0.0);
        assert_relative_eq!(pop_cumhazard_first(&gp, far_time(&gp)).unwrap(), 2.0, max_relative = 1e-10);
    }

    #[test]
    fn last_activation_examples() {
        let gp = GptcmPoint::reference_two_cluster(3.0).unwrap();
        assert_eq!(pop_survival_last(&gp, 0.0).unwrap(), 1.0);
        assert_relative_eq!(
            pop_survival_last(&gp, far_time(&gp)).unwrap(),
            0.135_335_3,
            max_relative = 1e-6
        );
        assert!(pop_density_last(&gp, far_time(&gp)).unwrap() < 1e-300);
    }

    #[test]
    fn mixture_comparison() {
        let gp = GptcmPoint::reference_two_cluster(3.0).unwrap();
        let pi0 = (-2.0f64).exp();
        let at0 = mixture_survival(pi0, gp.clusters(), gp.proportions(), 0.0).unwrap();
        assert_relative_eq!(at0, 1.0 + pi0);
        assert!(at0 > 1.0);
        let far = mixture_survival(pi0, gp.clusters(), gp.proportions(), far_time(&gp)).unwrap();
        assert_relative_eq!(far, pi0, max_relative = 1e-12);
        let max_gap = (1..=200)
            .map(|i| i as f64 * 0.05)
            .map(|t| {
                (mixture_survival(pi0, gp.clusters(), gp.proportions(), t).unwrap()
                    - pop_survival_first(&gp, t).unwrap())
                .abs()
            })
            .fold(0.0, f64::max);
        assert!(max_gap > 0.01);
        assert!(mixture_survival(1.5, gp.clusters(), gp.proportions(), 1.0).is_err());
    }

    #[test]
    fn birnbaum_examples() {
        let gp = GptcmPoint::reference_two_cluster(3.0).unwrap();
        let b = birnbaum_importance(&gp, 0.0).unwrap();
        assert_relative_eq!(b[0], 0.6, max_relative = 1e-12);
        assert_relative_eq!(b[1], 1.4, max_relative = 1e-12);
        let far = birnbaum_importance(&gp, far_time(&gp)).unwrap();
        for (v, p) in far.iter().zip([0.3, 0.7]) {
            assert_relative_eq!(*v, 2.0 * p * (-2.0f64).exp(), max_relative = 1e-10);
        }
    }

    #[test]
    fn link_examples() {
        assert_eq!(link_theta(&[0.0, 0.0, 0.0], &[0.3, -2.0]).unwrap(), 1.0);
        assert_relative_eq!(link_theta(&[-0.8, 0.9, 0.6], &[0.0, 0.0]).unwrap(), 0.449_3, max_relative = 1e-4);
        assert_relative_eq!(link_theta(&[-0.8, 0.9, 0.6], &[1.0, 1.0]).unwrap(), 0.7f64.exp(), max_relative = 1e-14);
        assert!(link_theta(&[0.0, 0.0], &[1.0, 1.0]).is_err());

        assert_eq!(link_mu(&[0.0, 0.0], &[1.5, 2.0]).unwrap(), 1.0);
        assert_relative_eq!(link_mu(&[0.4, -0.3], &[1.0, 1.0]).unwrap(), 0.1f64.exp(), max_relative = 1e-14);
        assert_eq!(link_mu(&[0.25, -0.45], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(link_mu(&[0.25], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn flat_vector_layout() {
        let dims = Dims::new(2, vec![2, 2, 2]).unwrap();
        assert_eq!(dims.n_params(), 10);
        let v: Vec<f64> = (0..10).map(f64::from).collect();
        let p = ModelParams::from_vec(&dims, &v).unwrap();
        assert_eq!(p.xi, vec![1.0, 2.0, 3.0]);
        assert_eq!(p.betas[2], vec![8.0, 9.0]);
        assert_eq!(p.to_vec(), v);
        assert_eq!(ModelParams::labels(&dims)[4], "beta_11");
        assert!(ModelParams::from_vec(&dims, &v[..9]).is_err());
    }

    proptest! {
        #[test]
        fn identical_clusters_reduce_to_ptcm(theta in 0.01f64..10.0, kappa in 0.2f64..5.0, log_mu in -2.0f64..2.0, t in 0.0f64..10.0) {
            let gp = GptcmPoint::from_log_means(theta, kappa, &[log_mu, log_mu, log_mu], vec![0.2, 0.5, 0.3]).unwrap();
            let f = gp.clusters()[0].cdf(t);
            let lhs = pop_survival_first(&gp, t).unwrap();
            let rhs = ptcm_survival(theta, f).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300).max(lhs));
        }

        #[test]
        fn hazard_relations(theta in 0.05f64..8.0, kappa in 0.3f64..4.0, m1 in -1.5f64..1.5, m2 in -1.5f64..1.5, p in 0.05f64..0.95, t in 0.01f64..8.0) {
            let gp = GptcmPoint::from_log_means(theta, kappa, &[m1, m2], vec![p, 1.0 - p]).unwrap();
            let h = pop_hazard_first(&gp, t).unwrap();
            let ratio = pop_density_first(&gp, t).unwrap() / pop_survival_first(&gp, t).unwrap();
            prop_assert!((h - ratio).abs() <= 1e-10 * h.max(1e-300));
            prop_assert!((h - theta * gp.mix_density(t)).abs() <= 1e-12 * h.max(1e-300));
            prop_assert!(noncured_hazard(&gp, t).unwrap() >= h);
            // difference is (1 - e^{-θs})(1 - e^{-θ(1-s)}) >= 0, up to rounding
            prop_assert!(pop_survival_last(&gp, t).unwrap() >= pop_survival_first(&gp, t).unwrap() - 1e-15);
        }
    }
}
