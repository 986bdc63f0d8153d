//! Right-censored log-likelihood of the cure model and its analytic gradient.
//!
//! Subject `i` contributes
//! `δ_i [log θ_i + log Σ_l p_il f_l(t_i)] - θ_i Σ_l p_il F_l(t_i)`.
//! Cluster densities are combined in log space, and all per-subject terms are
//! reduced by a pairwise sum over a canonical (value-sorted) order, so the result
//! does not depend on thread count or on the order of subjects.

use rayon::prelude::*;

use crate::dataset::{Dataset, Subject};
use crate::error::Result;
use crate::model::{dot, ModelParams};
use crate::special_math::{digamma, ln_gamma};

/// Log-likelihood with its per-subject decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct LikValue {
    pub loglik: f64,
    pub per_subject: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl LikValue {
    /// Index of the first subject whose term is not finite.
    pub fn first_nonfinite(&self) -> Option<usize> {
        self.per_subject.iter().position(|v| !v.is_finite())
    }
}

/// Shape-dependent constants shared by all subjects.
struct ShapeTerms {
    log_kappa: f64,
    kappa: f64,
    ln_gamma: f64,
    digamma: f64,
}

impl ShapeTerms {
    fn new(log_kappa: f64) -> Self {
        let kappa = log_kappa.exp();
        let arg = 1.0 + 1.0 / kappa;
        ShapeTerms {
            log_kappa,
            kappa,
            ln_gamma: ln_gamma(arg),
            digamma: digamma(arg),
        }
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Term of one subject and, when `grad` is given, its gradient written into it.
fn subject_term(params: &ModelParams, shape: &ShapeTerms, s: &Subject, grad: Option<&mut [f64]>) -> f64 {
    let log_theta = params.xi[0] + dot(&params.xi[1..], &s.x0);
    let theta = log_theta.exp();
    let weights = s.proportions.weights();
    let n_clusters = weights.len();

    if s.time == 0.0 {
        // F_l(0) = 0; an event at zero has zero density unless κ <= 1, treat as impossible
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        return if s.event { f64::NEG_INFINITY } else { 0.0 };
    }
    let log_t = s.time.ln();

    let mut log_z = vec![0.0; n_clusters];
    let mut z = vec![0.0; n_clusters];
    let mut log_pf = vec![f64::NEG_INFINITY; n_clusters];
    let mut mix_cdf = 0.0;
    for l in 0..n_clusters {
        let log_lambda = dot(&params.betas[l], &s.x_clusters[l]) - shape.ln_gamma;
        log_z[l] = shape.kappa * (log_t - log_lambda);
        z[l] = log_z[l].exp();
        mix_cdf += weights[l] * -(-z[l]).exp_m1();
        if weights[l] > 0.0 {
            log_pf[l] = weights[l].ln() + shape.log_kappa - log_t + log_z[l] - z[l];
        }
    }

    let log_mix_density = if s.event { log_sum_exp(&log_pf) } else { 0.0 };
    let term = if s.event {
        log_theta + log_mix_density - theta * mix_cdf
    } else {
        -theta * mix_cdf
    };

    let Some(g) = grad else {
        return term;
    };
    let delta = if s.event { 1.0 } else { 0.0 };

    // ∂/∂ log κ
    let mut d_shape = 0.0;
    // ξ block shares the factor (δ - θ F)
    let d_xi = delta - theta * mix_cdf;
    g[1] = d_xi;
    for (j, x) in s.x0.iter().enumerate() {
        g[2 + j] = d_xi * x;
    }
    let mut offset = 1 + params.xi.len();
    for l in 0..n_clusters {
        let dlogz_dshape = log_z[l] - shape.digamma;
        // z e^{-z}, taken as zero once z overflows
        let ze = if z[l].is_finite() { z[l] * (-z[l]).exp() } else { 0.0 };
        let w = if s.event && log_pf[l] > f64::NEG_INFINITY {
            (log_pf[l] - log_mix_density).exp()
        } else {
            0.0
        };
        let dcdf = theta * weights[l] * ze;
        if w > 0.0 {
            d_shape += delta * w * (1.0 + dlogz_dshape * (1.0 - z[l]));
        }
        if dcdf > 0.0 {
            d_shape -= dcdf * dlogz_dshape;
        }
        let common = shape.kappa * (dcdf - if w > 0.0 { delta * w * (1.0 - z[l]) } else { 0.0 });
        for (j, x) in s.x_clusters[l].iter().enumerate() {
            g[offset + j] = common * x;
        }
        offset += params.betas[l].len();
    }
    g[0] = d_shape;
    term
}

/// Pairwise sum in the given order.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Order-independent sum: sort, then pairwise reduction.
pub(crate) fn canonical_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    pairwise_sum(&sorted)
}

/// Log-likelihood of `params` on `ds`.
pub fn loglik(params: &ModelParams, ds: &Dataset) -> Result<LikValue> {
    params.check_dims(ds.dims())?;
    let shape = ShapeTerms::new(params.log_kappa);
    let per_subject: Vec<f64> = ds
        .subjects()
        .par_iter()
        .map(|s| subject_term(params, &shape, s, None))
        .collect();
    Ok(LikValue {
        loglik: canonical_sum(&per_subject),
        per_subject,
        grad: None,
    })
}

/// Log-likelihood together with its gradient in flat-vector order.
pub fn loglik_with_grad(params: &ModelParams, ds: &Dataset) -> Result<LikValue> {
    params.check_dims(ds.dims())?;
    let shape = ShapeTerms::new(params.log_kappa);
    let n_params = params.n_params();
    let rows: Vec<(f64, Vec<f64>)> = ds
        .subjects()
        .par_iter()
        .map(|s| {
            let mut g = vec![0.0; n_params];
            let term = subject_term(params, &shape, s, Some(&mut g));
            (term, g)
        })
        .collect();
    let per_subject: Vec<f64> = rows.iter().map(|(t, _)| *t).collect();
    let grad = (0..n_params)
        .map(|k| {
            let column: Vec<f64> = rows.iter().map(|(_, g)| g[k]).collect();
            canonical_sum(&column)
        })
        .collect();
    Ok(LikValue {
        loglik: canonical_sum(&per_subject),
        per_subject,
        grad: Some(grad),
    })
}

/// Analytic gradient of the log-likelihood.
pub fn grad_loglik(params: &ModelParams, ds: &Dataset) -> Result<Vec<f64>> {
    Ok(loglik_with_grad(params, ds)?
        .grad
        .expect("gradient requested"))
}
