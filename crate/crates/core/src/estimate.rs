//! Maximum-likelihood fitting.
//!
//! Limited-memory BFGS on the negative log-likelihood with a backtracking Armijo
//! line search. Positivity of the shape is handled by fitting `log κ`; there are no
//! bounds.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{GptcmError, Result};
use crate::likelihood::{loglik, loglik_with_grad};
use crate::model::ModelParams;
use crate::special_math::RngStream;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Number of correction pairs kept by L-BFGS.
    pub memory: usize,
    /// Converged once `‖∇ℓ‖ <= grad_tol · max(1, |ℓ|)`.
    pub grad_tol: f64,
    /// Stop once the relative change of `ℓ` stays below this for several steps.
    pub rel_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Standard deviation of the jitter added to extra multi-start initializations.
    pub jitter_sd: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 500,
            memory: 10,
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            armijo: 1e-4,
            max_backtracks: 60,
            jitter_sd: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params_hat: ModelParams,
    pub loglik_at_opt: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Memory resets after failed line searches, plus one if the start had to be
    /// pulled toward the default initialization to get a finite likelihood.
    pub restarts_used: usize,
    pub evaluations: usize,
}

/// Neutral start: `log κ = 0`, zero coefficients and `ξ0 = log(2 · events / n)`.
pub fn default_init(ds: &Dataset) -> ModelParams {
    let mut p = ModelParams::zeros(ds.dims());
    let events = ds.n_events().max(1) as f64;
    p.xi[0] = (2.0 * events / ds.len() as f64).ln();
    p
}

struct Objective<'a> {
    ds: &'a Dataset,
    dims: crate::model::Dims,
    evaluations: usize,
}

impl Objective<'_> {
    /// Negative log-likelihood and its gradient.
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let params = ModelParams::from_vec(&self.dims, x)?;
        let v = loglik_with_grad(&params, self.ds)?;
        let g = v.grad.expect("gradient requested");
        if !v.loglik.is_finite() || g.iter().any(|c| !c.is_finite()) {
            return Ok((f64::INFINITY, g));
        }
        Ok((-v.loglik, g.into_iter().map(|c| -c).collect()))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion: returns `-H g`.
fn lbfgs_direction(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

const MAX_RECOVERIES: usize = 30;

/// First point `anchor + w (x - anchor)`, `w = 1/2, 1/4, ...`, that lowers `f`.
fn pull_toward(obj: &mut Objective<'_>, anchor: &[f64], x: &[f64], f: f64) -> Result<Option<(Vec<f64>, f64, Vec<f64>)>> {
    let mut weight = 1.0;
    for _ in 0..40 {
        weight *= 0.5;
        let trial: Vec<f64> = anchor.iter().zip(x).map(|(a, xi)| a + weight * (xi - a)).collect();
        let (ft, gt) = obj.eval(&trial)?;
        if ft < f {
            return Ok(Some((trial, ft, gt)));
        }
    }
    Ok(None)
}

/// Maximizes the log-likelihood starting from `init` (or [`default_init`]).
///
/// A start with a non-finite likelihood is pulled toward the default start by
/// repeated halving; it is an error only if no finite point is found on that path.
pub fn fit(ds: &Dataset, init: Option<&ModelParams>, opts: &FitOptions) -> Result<FitReport> {
    let default = default_init(ds);
    let start = init.unwrap_or(&default);
    start.check_dims(ds.dims())?;

    let mut obj = Objective {
        ds,
        dims: ds.dims().clone(),
        evaluations: 0,
    };
    let mut restarts = 0;
    let target = start.to_vec();
    let anchor = default.to_vec();
    let mut x = target.clone();
    let (mut f, mut g) = obj.eval(&x)?;
    if !f.is_finite() {
        restarts += 1;
        let mut weight = 1.0;
        while !f.is_finite() && weight > 1e-18 {
            weight *= 0.5;
            x = anchor
                .iter()
                .zip(&target)
                .map(|(a, t)| a + weight * (t - a))
                .collect();
            (f, g) = obj.eval(&x)?;
        }
        if !f.is_finite() {
            (f, g) = obj.eval(&anchor)?;
            x = anchor.clone();
        }
        if !f.is_finite() {
            let v = loglik(&default, ds)?;
            let subject = v.first_nonfinite().unwrap_or(0);
            return Err(GptcmError::NonFiniteLikelihood { subject });
        }
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut quiet_steps = 0;
    let mut recoveries = 0;
    let tolerance = |f: f64| opts.grad_tol * f.abs().max(1.0);

    while iterations < opts.max_iter {
        if norm(&g) <= tolerance(f) {
            break;
        }
        iterations += 1;

        let mut d = lbfgs_direction(&g, &history);
        let mut slope = dot(&d, &g);
        if history.is_empty() || !(slope < 0.0) {
            history.clear();
            let scale = 1.0 / norm(&g).max(1.0);
            d = g.iter().map(|gi| -gi * scale).collect();
            slope = dot(&d, &g);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = obj.eval(&trial)?;
            if ft.is_finite() && ft <= f + opts.armijo * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            restarts += 1;
            if !history.is_empty() {
                history.clear();
                continue;
            }
            // steepest descent stalled, typically because f is so large that its
            // rounding error swamps every small step; move toward the default start
            match pull_toward(&mut obj, &anchor, &x, f)? {
                Some((xp, fp, gp)) if recoveries < MAX_RECOVERIES => {
                    recoveries += 1;
                    x = xp;
                    f = fp;
                    g = gp;
                    continue;
                }
                _ => break,
            }
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let change = (f - f_new).abs() / f.abs().max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        if change <= opts.rel_tol {
            quiet_steps += 1;
            if quiet_steps >= 3 {
                if norm(&g) <= tolerance(f) || recoveries >= MAX_RECOVERIES {
                    break;
                }
                // slow progress near the optimum usually means stale curvature pairs
                if !history.is_empty() {
                    recoveries += 1;
                    restarts += 1;
                    history.clear();
                    quiet_steps = 0;
                    continue;
                }
                match pull_toward(&mut obj, &anchor, &x, f)? {
                    Some((xp, fp, gp)) => {
                        recoveries += 1;
                        restarts += 1;
                        history.clear();
                        quiet_steps = 0;
                        x = xp;
                        f = fp;
                        g = gp;
                    }
                    None => break,
                }
            }
        } else {
            quiet_steps = 0;
        }
    }

    let grad_norm = norm(&g);
    let params_hat = ModelParams::from_vec(ds.dims(), &x)?;
    Ok(FitReport {
        loglik_at_opt: -f,
        converged: grad_norm <= tolerance(f),
        iterations,
        grad_norm,
        restarts_used: restarts,
        evaluations: obj.evaluations,
        params_hat,
    })
}

/// Best of `k_starts` fits: the default start plus `k_starts - 1` starts jittered by
/// Gaussian noise drawn from substreams of `rng`.
pub fn multi_start_fit(ds: &Dataset, k_starts: usize, rng: &RngStream, opts: &FitOptions) -> Result<FitReport> {
    multi_start_from(ds, &default_init(ds), k_starts, rng, opts)
}

/// As [`multi_start_fit`] with an explicit base initialization.
pub fn multi_start_from(
    ds: &Dataset,
    base: &ModelParams,
    k_starts: usize,
    rng: &RngStream,
    opts: &FitOptions,
) -> Result<FitReport> {
    if k_starts == 0 {
        return Err(GptcmError::domain("k_starts must be at least 1"));
    }
    base.check_dims(ds.dims())?;
    let dims = ds.dims().clone();
    let base_vec = base.to_vec();
    let results: Vec<Result<FitReport>> = (0..k_starts as u64)
        .into_par_iter()
        .map(|j| {
            let init = if j == 0 {
                base.clone()
            } else {
                let mut r = rng.substream(j);
                let v: Vec<f64> = base_vec
                    .iter()
                    .map(|b| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        b + opts.jitter_sd * z
                    })
                    .collect();
                ModelParams::from_vec(&dims, &v)?
            };
            fit(ds, Some(&init), opts)
        })
        .collect();

    let mut best: Option<FitReport> = None;
    let mut first_error = None;
    for r in results {
        match r {
            Ok(rep) => {
                if best.as_ref().is_none_or(|b| rep.loglik_at_opt > b.loglik_at_opt) {
                    best = Some(rep);
                }
            }
            Err(e) => {
                first_error.get_or_insert(e.to_string());
            }
        }
    }
    best.ok_or_else(|| GptcmError::AllStartsFailed {
        starts: k_starts,
        first: first_error.unwrap_or_default(),
    })
}
