//! Summary statistic maps and the GARCH(1,1)-t auxiliary model whose score
//! serves as a summary for the stochastic volatility experiments.

use nalgebra::{Matrix4, Vector4};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{domain, usage, AbcError, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::rng::{sample_student_t_std, RngStream};

/// A labelled vector of summary statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryVector {
    values: Vec<f64>,
    labels: Arc<[String]>,
}

impl SummaryVector {
    pub fn new(values: Vec<f64>, labels: impl Into<Arc<[String]>>) -> Result<Self> {
        let labels = labels.into();
        if values.is_empty() {
            return Err(usage("summary vector must have at least one entry"));
        }
        if values.len() != labels.len() {
            return Err(usage(format!(
                "{} values but {} labels",
                values.len(),
                labels.len()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(usage(format!("duplicate summary label '{l}'")));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AbcError::Numerical(format!(
                "summary '{}' is not finite",
                labels[i]
            )));
        }
        Ok(Self { values, labels })
    }

    /// Builds a vector with generated labels `s1, s2, ...`.
    pub fn unlabelled(values: Vec<f64>) -> Result<Self> {
        let labels: Vec<String> = (1..=values.len()).map(|i| format!("s{i}")).collect();
        Self::new(values, labels)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Same labels, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.labels.clone())
    }
}

/// A map from a data series to a fixed-length summary vector.
pub trait SummaryMap: Send + Sync {
    fn labels(&self) -> Arc<[String]>;

    /// Raw summary values; must have `labels().len()` entries.
    fn compute(&self, y: &[f64]) -> Result<Vec<f64>>;

    fn dim(&self) -> usize {
        self.labels().len()
    }

    fn summarize(&self, y: &[f64]) -> Result<SummaryVector> {
        SummaryVector::new(self.compute(y)?, self.labels())
    }
}

/// Sample mean and variance (divisor n - 1).
pub fn mean_var(y: &[f64]) -> Result<SummaryVector> {
    MeanVar::new().summarize(y)
}

fn mean_var_values(y: &[f64]) -> Result<[f64; 2]> {
    if y.len() < 2 {
        return Err(domain(format!(
            "mean/variance needs n >= 2, got {}",
            y.len()
        )));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok([mean, var])
}

/// Uncentered autocovariances at lags `0..=maxlag`, each divided by `T`.
pub fn autocov(z: &[f64], maxlag: usize) -> Result<SummaryVector> {
    Autocov::new(maxlag).summarize(z)
}

fn autocov_values(z: &[f64], maxlag: usize) -> Result<Vec<f64>> {
    if z.len() <= maxlag {
        return Err(domain(format!(
            "autocovariance up to lag {maxlag} needs more than {maxlag} observations"
        )));
    }
    let t = z.len() as f64;
    Ok((0..=maxlag)
        .map(|j| z[j..].iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / t)
        .collect())
}

#[derive(Clone, Debug)]
pub struct MeanVar {
    labels: Arc<[String]>,
}

impl MeanVar {
    pub fn new() -> Self {
        Self {
            labels: vec!["mean".to_string(), "var".to_string()].into(),
        }
    }
}

impl Default for MeanVar {
    fn default() -> Self {
        Self::new()
    }
}

impl SummaryMap for MeanVar {
    fn labels(&self) -> Arc<[String]> {
        self.labels.clone()
    }

    fn compute(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(mean_var_values(y)?.to_vec())
    }
}

#[derive(Clone, Debug)]
pub struct Autocov {
    maxlag: usize,
    labels: Arc<[String]>,
}

impl Autocov {
    pub fn new(maxlag: usize) -> Self {
        Self {
            maxlag,
            labels: (0..=maxlag).map(|j| format!("acov{j}")).collect(),
        }
    }
}

impl SummaryMap for Autocov {
    fn labels(&self) -> Arc<[String]> {
        self.labels.clone()
    }

    fn compute(&self, y: &[f64]) -> Result<Vec<f64>> {
        autocov_values(y, self.maxlag)
    }
}

/// Per-observation score of the auxiliary GARCH model at a fixed estimate.
#[derive(Clone, Debug)]
pub struct AuxScore {
    beta: [f64; 4],
    labels: Arc<[String]>,
}

impl AuxScore {
    pub fn new(beta: [f64; 4]) -> Result<Self> {
        check_admissible(&beta)?;
        Ok(Self {
            beta,
            labels: (1..=4).map(|j| format!("score_b{j}")).collect(),
        })
    }

    pub fn beta(&self) -> [f64; 4] {
        self.beta
    }
}

impl SummaryMap for AuxScore {
    fn labels(&self) -> Arc<[String]> {
        self.labels.clone()
    }

    fn compute(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(aux_score_values(y, &self.beta)?.to_vec())
    }
}

// ---------------------------------------------------------------------------
// GARCH(1,1) with standardized Student-t errors:
//   y_t = x_t e_t,   x_t = b1 + b2 |y_{t-1}| + b3 x_{t-1},   x_1 = sd(y)

const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct AuxGarchFit {
    pub beta: [f64; 4],
    pub loglik: f64,
    pub converged: bool,
    /// Euclidean norm of the per-observation score at `beta`.
    pub score_norm: f64,
    pub evaluations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct AuxFitOptions {
    pub max_restarts: usize,
    pub max_evals: usize,
    /// Convergence tolerance on the per-observation score norm.
    pub score_tol: f64,
    pub newton_iters: usize,
}

impl Default for AuxFitOptions {
    fn default() -> Self {
        Self {
            max_restarts: 10,
            max_evals: 8_000,
            score_tol: 1e-3,
            newton_iters: 50,
        }
    }
}

pub const DEFAULT_AUX_INIT: [f64; 4] = [0.05, 0.1, 0.85, 8.0];

/// Admissible region: b1 > 0, b2 >= 0, b3 >= 0, b4 > 2, all finite.
pub fn check_admissible(beta: &[f64; 4]) -> Result<()> {
    let ok = beta.iter().all(|b| b.is_finite())
        && beta[0] > 0.0
        && beta[1] >= 0.0
        && beta[2] >= 0.0
        && beta[3] > 2.0;
    if ok {
        Ok(())
    } else {
        Err(domain(format!(
            "auxiliary parameters {beta:?} outside the admissible region"
        )))
    }
}

fn sample_sd(y: &[f64]) -> Result<f64> {
    let [_, var] = mean_var_values(y)?;
    let sd = var.sqrt();
    if sd > 0.0 && sd.is_finite() {
        Ok(sd)
    } else {
        Err(domain("series has zero or non-finite variance"))
    }
}

/// Log-likelihood for a given starting scale; `None` if the recursion leaves
/// the positive half-line or the density is undefined.
fn loglik_from(y: &[f64], x1: f64, beta: &[f64; 4]) -> Option<f64> {
    let [b1, b2, b3, nu] = *beta;
    if !(nu > 2.0) {
        return None;
    }
    let konst = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (PI * (nu - 2.0)).ln();
    let half = 0.5 * (nu + 1.0);
    let inv = 1.0 / (nu - 2.0);
    let mut x = x1;
    let mut ll = 0.0;
    for (t, &yt) in y.iter().enumerate() {
        if t > 0 {
            x = b1 + b2 * y[t - 1].abs() + b3 * x;
        }
        if !(x > 0.0) {
            return None;
        }
        let e = yt / x;
        ll += konst - x.ln() - half * (e * e * inv).ln_1p();
    }
    ll.is_finite().then_some(ll)
}

/// Auxiliary log-likelihood of `y` at `beta`.
pub fn aux_loglik(y: &[f64], beta: &[f64; 4]) -> Result<f64> {
    check_admissible(beta)?;
    let x1 = sample_sd(y)?;
    loglik_from(y, x1, beta)
        .ok_or_else(|| domain("volatility recursion left the positive half-line"))
}

fn fd_step(b: f64, rel: f64) -> f64 {
    if b != 0.0 {
        rel * b.abs()
    } else {
        rel
    }
}

/// Central-difference gradient of the total log-likelihood.
fn loglik_gradient(y: &[f64], x1: f64, beta: &[f64; 4], rel: f64) -> Option<[f64; 4]> {
    let mut g = [0.0; 4];
    for i in 0..4 {
        let h = fd_step(beta[i], rel);
        let mut up = *beta;
        let mut dn = *beta;
        up[i] += h;
        dn[i] -= h;
        g[i] = (loglik_from(y, x1, &up)? - loglik_from(y, x1, &dn)?) / (2.0 * h);
    }
    Some(g)
}

fn score_with_step(z: &[f64], beta: &[f64; 4], rel: f64) -> Result<[f64; 4]> {
    check_admissible(beta)?;
    let x1 = sample_sd(z)?;
    let g = loglik_gradient(z, x1, beta, rel)
        .ok_or_else(|| domain("volatility recursion left the positive half-line"))?;
    let n = z.len() as f64;
    Ok(g.map(|v| v / n))
}

fn aux_score_values(z: &[f64], beta: &[f64; 4]) -> Result<[f64; 4]> {
    score_with_step(z, beta, FD_STEP)
}

/// Per-observation auxiliary score of `z` at `beta_hat` (central differences,
/// relative step 1e-5).
pub fn aux_score(z: &[f64], beta_hat: &[f64; 4]) -> Result<SummaryVector> {
    AuxScore::new(*beta_hat)?.summarize(z)
}

fn to_free(beta: &[f64; 4]) -> [f64; 4] {
    [
        beta[0].ln(),
        beta[1].max(1e-12).ln(),
        beta[2].max(1e-12).ln(),
        (beta[3] - 2.0).ln(),
    ]
}

fn from_free(u: &[f64]) -> [f64; 4] {
    [u[0].exp(), u[1].exp(), u[2].exp(), 2.0 + u[3].exp()]
}

/// Maximum likelihood fit of the auxiliary model.
///
/// A Nelder-Mead search with restarts runs on log-transformed parameters,
/// then a few safeguarded Newton steps (finite-difference Hessian) polish
/// the optimum so the first-order condition can be checked. A fit whose
/// score norm stays above `opts.score_tol` is returned with
/// `converged = false`.
pub fn fit_aux_garch(y: &[f64], init: &[f64; 4], opts: &AuxFitOptions) -> Result<AuxGarchFit> {
    if y.len() < 50 {
        return Err(domain(format!(
            "auxiliary fit needs n >= 50, got {}",
            y.len()
        )));
    }
    check_admissible(init)?;
    let x1 = sample_sd(y)?;
    let n = y.len() as f64;
    let ll0 = loglik_from(y, x1, init)
        .ok_or_else(|| domain("log-likelihood undefined at the initial value"))?;

    let objective = |u: &[f64]| match loglik_from(y, x1, &from_free(u)) {
        Some(ll) => -ll / n,
        None => f64::INFINITY,
    };
    let nm_opts = NelderMeadOptions {
        initial_step: 0.5,
        ftol: 1e-12,
        xtol: 1e-8,
        max_evals: opts.max_evals,
        max_restarts: opts.max_restarts,
    };
    let m = nelder_mead(objective, &to_free(init), &nm_opts);
    let mut evaluations = m.evaluations;

    let mut beta = from_free(&m.x);
    let mut ll = -m.value * n;
    if !(ll >= ll0) {
        beta = *init;
        ll = ll0;
    }

    for _ in 0..opts.newton_iters {
        let Some(g) = loglik_gradient(y, x1, &beta, FD_STEP) else {
            break;
        };
        evaluations += 8;
        if Vector4::from(g).norm() / n <= opts.score_tol * 1e-3 {
            break;
        }
        let Some(step) = newton_direction(y, x1, &beta, &g) else {
            break;
        };
        evaluations += 64;
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand: [f64; 4] = std::array::from_fn(|i| beta[i] + t * step[i]);
            if check_admissible(&cand).is_ok() {
                evaluations += 1;
                if let Some(lc) = loglik_from(y, x1, &cand) {
                    if lc > ll {
                        beta = cand;
                        ll = lc;
                        improved = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let score = loglik_gradient(y, x1, &beta, FD_STEP)
        .ok_or_else(|| AbcError::Numerical("score undefined at the fitted value".into()))?;
    let score_norm = Vector4::from(score).norm() / n;
    Ok(AuxGarchFit {
        beta,
        loglik: ll,
        converged: score_norm <= opts.score_tol,
        score_norm,
        evaluations,
    })
}

/// Newton ascent direction from a finite-difference Hessian; falls back to a
/// scaled gradient step when the Hessian is not negative definite.
fn newton_direction(y: &[f64], x1: f64, beta: &[f64; 4], g: &[f64; 4]) -> Option<[f64; 4]> {
    let mut h = Matrix4::<f64>::zeros();
    for j in 0..4 {
        let step = fd_step(beta[j], 1e-4);
        let mut up = *beta;
        let mut dn = *beta;
        up[j] += step;
        dn[j] -= step;
        let gu = loglik_gradient(y, x1, &up, FD_STEP)?;
        let gd = loglik_gradient(y, x1, &dn, FD_STEP)?;
        for i in 0..4 {
            h[(i, j)] = (gu[i] - gd[i]) / (2.0 * step);
        }
    }
    let neg = -(h + h.transpose()) * 0.5;
    let gv = Vector4::from(*g);
    let dir = match neg.cholesky() {
        Some(c) => c.solve(&gv),
        None => {
            let scale = neg.diagonal().abs().max().max(1.0);
            gv / scale
        }
    };
    dir.iter()
        .all(|v| v.is_finite())
        .then(|| [dir[0], dir[1], dir[2], dir[3]])
}

/// Simulates the auxiliary model, started near its stationary mean scale
/// and run through a burn-in of 100 observations.
pub fn simulate_aux_garch(beta: &[f64; 4], n: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
    check_admissible(beta)?;
    if n == 0 {
        return Err(domain("series length must be at least 1"));
    }
    let [b1, b2, b3, nu] = *beta;
    let abs_mean =
        2.0 * (nu - 2.0).sqrt() * (ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu)).exp()
            / (PI.sqrt() * (nu - 1.0));
    let persistence = b2 * abs_mean + b3;
    let mut x = if persistence < 1.0 {
        b1 / (1.0 - persistence)
    } else {
        b1
    };
    let burn = 100;
    let mut out = Vec::with_capacity(n);
    let mut prev = 0.0_f64;
    for t in 0..n + burn {
        if t > 0 {
            x = b1 + b2 * prev.abs() + b3 * x;
        }
        prev = x * sample_student_t_std(stream, nu)?;
        if t >= burn {
            out.push(prev);
        }
    }
    Ok(out)
}
