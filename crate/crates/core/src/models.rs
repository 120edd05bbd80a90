//! Generative models used as assumed and true data generating processes.
//!
//! Every simulator is a pure function of `(params, n, stream)`. Latent
//! processes (MA presample errors, SV log-volatility) start from their
//! stationary law so short series carry no initialization transient.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, usage, Result};
use crate::rng::{AlphaStable, RngStream};

/// Coefficients of an MA(q) model `z_t = e_t + sum_i theta_i e_{t-i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaParams {
    pub theta: Vec<f64>,
}

impl MaParams {
    pub fn new(theta: Vec<f64>) -> Self {
        Self { theta }
    }

    /// Invertibility: all roots of `1 + theta_1 x + ... + theta_q x^q` lie
    /// outside the unit circle. For q = 2 this is the open triangle
    /// `theta_2 < 1, theta_1 + theta_2 > -1, theta_1 - theta_2 < 1`.
    pub fn is_invertible(&self) -> bool {
        match self.theta.as_slice() {
            [] => true,
            [t1] => t1.abs() < 1.0,
            [t1, t2] => ma2_invertible(*t1, *t2),
            coeffs => companion_spectral_radius(coeffs) < 1.0,
        }
    }
}

pub fn ma2_invertible(t1: f64, t2: f64) -> bool {
    -2.0 < t1 && t1 < 2.0 && t1 + t2 > -1.0 && t1 - t2 < 1.0 && t2 < 1.0
}

/// Largest modulus among the roots of `x^q + c_1 x^{q-1} + ... + c_q`.
pub fn companion_spectral_radius(coeffs: &[f64]) -> f64 {
    let q = coeffs.len();
    if q == 0 {
        return 0.0;
    }
    let mut m = DMatrix::<f64>::zeros(q, q);
    for (j, c) in coeffs.iter().enumerate() {
        m[(0, j)] = -c;
    }
    for i in 1..q {
        m[(i, i - 1)] = 1.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Gaussian stochastic volatility: `y_t = exp(h_t/2) u_t`,
/// `h_t = omega + rho h_{t-1} + sigma_v v_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvParams {
    pub omega: f64,
    pub rho: f64,
    pub sigma_v: f64,
}

impl SvParams {
    pub fn validate(&self) -> Result<()> {
        if !self.omega.is_finite() {
            return Err(domain("sv omega must be finite"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(domain(format!(
                "sv rho must lie in (0, 1), got {}",
                self.rho
            )));
        }
        if !(self.sigma_v > 0.0 && self.sigma_v < 1.0) {
            return Err(domain(format!(
                "sv sigma_v must lie in (0, 1), got {}",
                self.sigma_v
            )));
        }
        Ok(())
    }

    /// Probability limit of the lag-0 uncentered autocovariance.
    pub fn limit_second_moment(&self) -> f64 {
        (self.omega / (1.0 - self.rho)
            + 0.5 * self.sigma_v * self.sigma_v / (1.0 - self.rho * self.rho))
            .exp()
    }
}

/// Stochastic volatility with alpha-stable innovations:
/// `r_t = sigma_t w_t`, `ln sigma_t^2 = theta1 + theta2 ln sigma_{t-1}^2 + theta3 v_t`,
/// `w_t ~ S(theta4, theta5, 0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSvParams {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub theta4: f64,
    pub theta5: f64,
}

impl AlphaSvParams {
    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        match *theta {
            [theta1, theta2, theta3, theta4, theta5] => Ok(Self {
                theta1,
                theta2,
                theta3,
                theta4,
                theta5,
            }),
            _ => Err(usage(format!(
                "alpha-stable SV takes 5 parameters, got {}",
                theta.len()
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.theta1.is_finite() {
            return Err(domain("theta1 must be finite"));
        }
        if !(self.theta2.abs() < 1.0) {
            return Err(domain(format!(
                "log-volatility persistence must lie in (-1, 1), got {}",
                self.theta2
            )));
        }
        if !(self.theta3 >= 0.0) || !self.theta3.is_finite() {
            return Err(domain(format!(
                "vol-of-vol must be >= 0, got {}",
                self.theta3
            )));
        }
        if !(self.theta4 > 1.0 && self.theta4 <= 2.0) {
            return Err(domain(format!(
                "tail index must lie in (1, 2], got {}",
                self.theta4
            )));
        }
        if !(-1.0..=1.0).contains(&self.theta5) {
            return Err(domain(format!(
                "skewness must lie in [-1, 1], got {}",
                self.theta5
            )));
        }
        Ok(())
    }
}

/// Two-component normal mixture `(2/3) N(theta, 1) + (1/3) N(theta, sigma^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub theta: f64,
    pub sigma: f64,
}

fn check_len(n: usize) -> Result<()> {
    if n == 0 {
        Err(domain("series length must be at least 1"))
    } else {
        Ok(())
    }
}

/// iid N(theta, 1) series.
pub fn simulate_normal(theta: f64, n: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
    simulate_normal_with(theta, n, || stream.standard_normal())
}

pub(crate) fn simulate_normal_with(
    theta: f64,
    n: usize,
    mut noise: impl FnMut() -> f64,
) -> Result<Vec<f64>> {
    check_len(n)?;
    if !theta.is_finite() {
        return Err(domain("normal location must be finite"));
    }
    Ok((0..n).map(|_| theta + noise()).collect())
}

/// iid N(theta, sigma^2) series.
pub fn simulate_gaussian(
    theta: f64,
    sigma: f64,
    n: usize,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(domain(format!("gaussian scale must be > 0, got {sigma}")));
    }
    simulate_normal_with(theta, n, || sigma * stream.standard_normal())
}

/// Mixture draws with a per-observation component indicator. Each
/// observation consumes one uniform and one normal, in that order, so
/// series at different `sigma` share their random numbers.
pub fn simulate_mixture(p: &MixtureParams, n: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
    check_len(n)?;
    if !(p.sigma > 0.0) {
        return Err(domain(format!(
            "mixture sigma must be > 0, got {}",
            p.sigma
        )));
    }
    Ok((0..n)
        .map(|_| {
            let first = stream.open01() < 2.0 / 3.0;
            let z = stream.standard_normal();
            p.theta + if first { z } else { p.sigma * z }
        })
        .collect())
}

/// MA(q) series with N(0, 1) innovations. The q presample errors are drawn
/// first, so the output is exactly stationary from `t = 1`.
pub fn simulate_ma(p: &MaParams, n: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
    check_len(n)?;
    let q = p.theta.len();
    let e: Vec<f64> = (0..n + q).map(|_| stream.standard_normal()).collect();
    Ok((0..n)
        .map(|t| {
            let now = t + q;
            e[now]
                + p.theta
                    .iter()
                    .enumerate()
                    .map(|(i, th)| th * e[now - i - 1])
                    .sum::<f64>()
        })
        .collect())
}

pub fn simulate_sv(p: &SvParams, n: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
    check_len(n)?;
    p.validate()?;
    let stat_mean = p.omega / (1.0 - p.rho);
    let stat_sd = p.sigma_v / (1.0 - p.rho * p.rho).sqrt();
    let mut h = stat_mean + stat_sd * stream.standard_normal();
    Ok((0..n)
        .map(|_| {
            h = p.omega + p.rho * h + p.sigma_v * stream.standard_normal();
            (0.5 * h).exp() * stream.standard_normal()
        })
        .collect())
}

/// Alpha-stable SV returns; the log-variance starts at its stationary mean
/// `theta1 / (1 - theta2)`.
pub fn simulate_alpha_sv(p: &AlphaSvParams, n: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
    check_len(n)?;
    p.validate()?;
    let innov = AlphaStable::new(p.theta4, p.theta5, 0.0, 1.0)?;
    let mut log_var = p.theta1 / (1.0 - p.theta2);
    Ok((0..n)
        .map(|_| {
            log_var = p.theta1 + p.theta2 * log_var + p.theta3 * stream.standard_normal();
            (0.5 * log_var).exp() * innov.sample(stream)
        })
        .collect())
}

/// A parametric simulator driven by a flat parameter vector.
pub trait Simulator: Send + Sync {
    fn param_dim(&self) -> usize;
    fn param_names(&self) -> Vec<String>;
    fn simulate(&self, theta: &[f64], n: usize, stream: &mut RngStream) -> Result<Vec<f64>>;
}

/// Assumed models available to the ABC engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssumedModel {
    /// iid N(theta, 1); one parameter.
    Normal,
    /// MA(q) with N(0, 1) innovations; q parameters.
    Ma { q: usize },
    /// Alpha-stable SV; parameters (theta1, ..., theta5).
    AlphaSv,
}

impl Simulator for AssumedModel {
    fn param_dim(&self) -> usize {
        match self {
            Self::Normal => 1,
            Self::Ma { q } => *q,
            Self::AlphaSv => 5,
        }
    }

    fn param_names(&self) -> Vec<String> {
        match self {
            Self::Normal => vec!["theta".into()],
            Self::Ma { q } => (1..=*q).map(|i| format!("theta{i}")).collect(),
            Self::AlphaSv => (1..=5).map(|i| format!("theta{i}")).collect(),
        }
    }

    fn simulate(&self, theta: &[f64], n: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
        if theta.len() != self.param_dim() {
            return Err(usage(format!(
                "expected {} parameters, got {}",
                self.param_dim(),
                theta.len()
            )));
        }
        match self {
            Self::Normal => simulate_normal(theta[0], n, stream),
            Self::Ma { .. } => simulate_ma(&MaParams::new(theta.to_vec()), n, stream),
            Self::AlphaSv => simulate_alpha_sv(&AlphaSvParams::from_slice(theta)?, n, stream),
        }
    }
}

/// Data generating processes for the observed series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrueModel {
    /// iid N(theta, sigma^2).
    Gaussian {
        theta: f64,
        sigma: f64,
    },
    /// `(2/3) N(theta, 1) + (1/3) N(theta, sigma^2)`.
    Mixture {
        theta: f64,
        sigma: f64,
    },
    Sv {
        omega: f64,
        rho: f64,
        sigma_v: f64,
    },
    AlphaSv {
        theta1: f64,
        theta2: f64,
        theta3: f64,
        theta4: f64,
        theta5: f64,
    },
}

impl TrueModel {
    pub fn simulate(&self, n: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
        match *self {
            Self::Gaussian { theta, sigma } => simulate_gaussian(theta, sigma, n, stream),
            Self::Mixture { theta, sigma } => {
                simulate_mixture(&MixtureParams { theta, sigma }, n, stream)
            }
            Self::Sv {
                omega,
                rho,
                sigma_v,
            } => simulate_sv(
                &SvParams {
                    omega,
                    rho,
                    sigma_v,
                },
                n,
                stream,
            ),
            Self::AlphaSv {
                theta1,
                theta2,
                theta3,
                theta4,
                theta5,
            } => simulate_alpha_sv(
                &AlphaSvParams {
                    theta1,
                    theta2,
                    theta3,
                    theta4,
                    theta5,
                },
                n,
                stream,
            ),
        }
    }

    /// Copy with the scale-type parameter replaced, used by sweeps.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        match *self {
            Self::Gaussian { theta, .. } => Ok(Self::Gaussian { theta, sigma }),
            Self::Mixture { theta, .. } => Ok(Self::Mixture { theta, sigma }),
            _ => Err(usage(
                "only gaussian and mixture data models can be swept over sigma",
            )),
        }
    }
}
