//! Adjustment parameters for the robust variants: priors on Γ, the additive
//! summary adjustment and the weighted discrepancy.

use serde::{Deserialize, Serialize};

use crate::error::{domain, usage, Result};
use crate::rng::{exponential_cdf, laplace_cdf, sample_exponential, sample_laplace, RngStream};
use crate::summaries::SummaryVector;

/// Which rejection scheme produced a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Abc,
    RabcS,
    RabcW,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Self::Abc => "ABC",
            Self::RabcS => "R-ABC-S",
            Self::RabcW => "R-ABC-W",
        }
    }

    pub fn is_robust(self) -> bool {
        self != Self::Abc
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ABC" | "abc" => Some(Self::Abc),
            "R-ABC-S" | "rabc_s" => Some(Self::RabcS),
            "R-ABC-W" | "rabc_w" => Some(Self::RabcW),
            _ => None,
        }
    }
}

/// Independent prior applied to every component of Γ.
///
/// Both families take a rate: the Laplace has scale `1/rate`, the
/// exponential has mean `1/rate`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaPrior {
    #[default]
    None,
    Laplace {
        rate: f64,
    },
    Exponential {
        rate: f64,
    },
    /// Point mass, used to switch the adjustment off without changing streams.
    Fixed {
        value: f64,
    },
}

impl GammaPrior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Laplace { rate } | Self::Exponential { rate }
                if !(rate > 0.0 && rate.is_finite()) =>
            {
                Err(domain(format!(
                    "gamma prior rate must be positive, got {rate}"
                )))
            }
            Self::Fixed { value } if !value.is_finite() => {
                Err(domain("fixed gamma must be finite"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_present(&self) -> bool {
        !matches!(self, Self::None)
    }

    /// True if every draw is nonnegative (required by the weighted variant).
    pub fn is_nonnegative(&self) -> bool {
        match *self {
            Self::Exponential { .. } => true,
            Self::Fixed { value } => value >= 0.0,
            _ => false,
        }
    }

    pub fn sample(&self, stream: &mut RngStream) -> Result<f64> {
        match *self {
            Self::None => Err(usage("no gamma prior to sample from")),
            Self::Laplace { rate } => sample_laplace(stream, rate),
            Self::Exponential { rate } => sample_exponential(stream, rate),
            Self::Fixed { value } => Ok(value),
        }
    }

    /// Prior CDF; `None` for the absent prior.
    pub fn cdf(&self, x: f64) -> Option<f64> {
        match *self {
            Self::None => None,
            Self::Laplace { rate } => Some(laplace_cdf(x, rate)),
            Self::Exponential { rate } => Some(exponential_cdf(x, rate)),
            Self::Fixed { value } => Some(if x >= value { 1.0 } else { 0.0 }),
        }
    }
}

/// Default Γ prior for each robust method.
///
/// The summary adjustment uses a Laplace prior of scale 0.25 (rate 4),
/// concentrating nearly all mass within ±2; the weighted adjustment uses an
/// exponential prior with rate 0.5.
pub fn default_gamma_prior(method: Method) -> GammaPrior {
    match method {
        Method::Abc => GammaPrior::None,
        Method::RabcS => GammaPrior::Laplace { rate: 4.0 },
        Method::RabcW => GammaPrior::Exponential { rate: 0.5 },
    }
}

/// One draw of Γ together with the prior it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaDraw {
    pub gamma: Vec<f64>,
    pub prior: GammaPrior,
}

impl GammaDraw {
    pub fn sample(prior: GammaPrior, dim: usize, stream: &mut RngStream) -> Result<Self> {
        prior.validate()?;
        let gamma = (0..dim)
            .map(|_| prior.sample(stream))
            .collect::<Result<_>>()?;
        Ok(Self { gamma, prior })
    }
}

fn check_dim(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(usage(format!(
            "dimension mismatch: {a} summaries vs {b} adjustments"
        )))
    }
}

/// `eta_z + gamma`, labels preserved.
pub fn adjust_summary_s(eta_z: &SummaryVector, gamma: &[f64]) -> Result<SummaryVector> {
    check_dim(eta_z.dim(), gamma.len())?;
    eta_z.with_values(
        eta_z
            .values()
            .iter()
            .zip(gamma)
            .map(|(e, g)| e + g)
            .collect(),
    )
}

/// `gamma ⊙ (eta_y - eta_z)`.
pub fn varphi(
    eta_y: &SummaryVector,
    eta_z: &SummaryVector,
    gamma: &[f64],
) -> Result<SummaryVector> {
    check_dim(eta_y.dim(), eta_z.dim())?;
    check_dim(eta_y.dim(), gamma.len())?;
    if gamma.iter().any(|g| !(*g >= 0.0)) {
        return Err(domain("weighted adjustment requires nonnegative gamma"));
    }
    eta_z.with_values(varphi_values(eta_y.values(), eta_z.values(), gamma))
}

pub(crate) fn varphi_values(eta_y: &[f64], eta_z: &[f64], gamma: &[f64]) -> Vec<f64> {
    eta_y
        .iter()
        .zip(eta_z)
        .zip(gamma)
        .map(|((y, z), g)| g * (y - z))
        .collect()
}
