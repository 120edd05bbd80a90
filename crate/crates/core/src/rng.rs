//! Counter-based random streams and the sampling primitives used by the
//! simulators and priors.
//!
//! A stream is addressed by `(root_seed, stream_id)`. Both words key a
//! ChaCha8 block cipher: the root seed becomes the key and the stream id is
//! the cipher's 64-bit stream selector, so every draw index owns an
//! independent keystream that can be regenerated in isolation. Lanes
//! (theta, data, gamma, ...) are separated by hashing a lane tag into the
//! root seed, which keeps e.g. the gamma draws from perturbing the theta and
//! data draws of the same index.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{domain, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent root seed for a named lane of an experiment.
pub fn derive_seed(root_seed: u64, lane: u64) -> u64 {
    splitmix64(root_seed ^ splitmix64(lane.wrapping_mul(GOLDEN_GAMMA)))
}

/// A deterministic random stream keyed by `(root_seed, stream_id)`.
///
/// Two streams built from the same pair produce bit-identical output no
/// matter which thread builds them or in which order.
#[derive(Clone, Debug)]
pub struct RngStream {
    root_seed: u64,
    stream_id: u64,
    core: ChaCha8Rng,
}

impl RngStream {
    pub fn new(root_seed: u64, stream_id: u64) -> Self {
        let mut core = ChaCha8Rng::seed_from_u64(root_seed);
        core.set_stream(stream_id);
        Self {
            root_seed,
            stream_id,
            core,
        }
    }

    /// Stream `stream_id` of the lane `lane` derived from `root_seed`.
    pub fn lane(root_seed: u64, lane: u64, stream_id: u64) -> Self {
        Self::new(derive_seed(root_seed, lane), stream_id)
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform variate on the open interval (0, 1).
    #[inline]
    pub fn open01(&mut self) -> f64 {
        ((self.core.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.core)
    }

    /// Exp(1) variate.
    #[inline]
    pub fn standard_exponential(&mut self) -> f64 {
        -self.open01().ln()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.core.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.core.fill_bytes(dst)
    }
}

pub fn sample_uniform(stream: &mut RngStream, lo: f64, hi: f64) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(domain(format!("uniform bounds [{lo}, {hi}] are invalid")));
    }
    Ok(lo + (hi - lo) * stream.open01())
}

pub fn sample_normal(stream: &mut RngStream, mean: f64, sd: f64) -> Result<f64> {
    if !(sd >= 0.0) || !mean.is_finite() {
        return Err(domain(format!("normal requires sd >= 0, got sd = {sd}")));
    }
    Ok(mean + sd * stream.standard_normal())
}

/// Laplace variate with location 0 and density proportional to
/// `exp(-rate * |x|)`; the scale is `1 / rate`.
pub fn sample_laplace(stream: &mut RngStream, rate: f64) -> Result<f64> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(domain(format!("laplace rate must be > 0, got {rate}")));
    }
    let u = stream.open01() - 0.5;
    Ok(-u.signum() * (1.0 - 2.0 * u.abs()).ln() / rate)
}

pub fn sample_exponential(stream: &mut RngStream, rate: f64) -> Result<f64> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(domain(format!("exponential rate must be > 0, got {rate}")));
    }
    Ok(stream.standard_exponential() / rate)
}

/// Student-t variate rescaled to unit variance, `t_dof * sqrt((dof - 2) / dof)`.
pub fn sample_student_t_std(stream: &mut RngStream, dof: f64) -> Result<f64> {
    if !(dof > 2.0) {
        return Err(domain(format!(
            "standardized student-t needs dof > 2, got {dof}"
        )));
    }
    let t = StudentT::new(dof).map_err(|e| domain(e.to_string()))?;
    Ok(t.sample(stream) * ((dof - 2.0) / dof).sqrt())
}

/// Chambers-Mallows-Stuck sampler for the stable law S(alpha, beta, loc, scale)
/// in the parametrization where alpha = 2 gives Normal(loc, 2 scale^2).
#[derive(Clone, Copy, Debug)]
pub struct AlphaStable {
    alpha: f64,
    beta: f64,
    loc: f64,
    scale: f64,
    // alpha != 1 constants
    shift: f64,
    factor: f64,
}

impl AlphaStable {
    pub fn new(alpha: f64, beta: f64, loc: f64, scale: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(domain(format!(
                "stable alpha must lie in (0, 2], got {alpha}"
            )));
        }
        if !(-1.0..=1.0).contains(&beta) {
            return Err(domain(format!(
                "stable beta must lie in [-1, 1], got {beta}"
            )));
        }
        if !(scale > 0.0) || !loc.is_finite() || !scale.is_finite() {
            return Err(domain(format!("stable scale must be > 0, got {scale}")));
        }
        let (shift, factor) = if alpha == 1.0 {
            (0.0, 1.0)
        } else {
            let zeta = beta * (PI * alpha / 2.0).tan();
            (zeta.atan() / alpha, (1.0 + zeta * zeta).powf(0.5 / alpha))
        };
        Ok(Self {
            alpha,
            beta,
            loc,
            scale,
            shift,
            factor,
        })
    }

    /// Draw from the standardized law S(alpha, beta, 0, 1).
    #[inline]
    pub fn sample_standard(&self, stream: &mut RngStream) -> f64 {
        let v = PI * (stream.open01() - 0.5);
        let w = stream.standard_exponential();
        if self.alpha == 1.0 {
            let b = FRAC_PI_2 + self.beta * v;
            (b * v.tan() - self.beta * ((FRAC_PI_2 * w * v.cos()) / b).ln()) / FRAC_PI_2
        } else {
            let a = self.alpha;
            let arg = a * (v + self.shift);
            self.factor * arg.sin() / v.cos().powf(1.0 / a)
                * ((v - arg).cos() / w).powf((1.0 - a) / a)
        }
    }

    #[inline]
    pub fn sample(&self, stream: &mut RngStream) -> f64 {
        let x = self.sample_standard(stream);
        if self.alpha == 1.0 {
            self.loc + self.scale * x + self.beta * self.scale * self.scale.ln() / FRAC_PI_2
        } else {
            self.loc + self.scale * x
        }
    }
}

pub fn sample_alpha_stable(
    stream: &mut RngStream,
    alpha: f64,
    beta: f64,
    loc: f64,
    scale: f64,
) -> Result<f64> {
    Ok(AlphaStable::new(alpha, beta, loc, scale)?.sample(stream))
}

/// Laplace prior kernel `rate * exp(-rate * |x|)`. This is twice the
/// normalized density, matching the product form of the Γ prior.
pub fn laplace_pdf(x: f64, rate: f64) -> f64 {
    rate * (-rate * x.abs()).exp()
}

pub fn laplace_cdf(x: f64, rate: f64) -> f64 {
    if x < 0.0 {
        0.5 * (rate * x).exp()
    } else {
        1.0 - 0.5 * (-rate * x).exp()
    }
}

pub fn exponential_cdf(x: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-rate * x).exp()
    }
}
