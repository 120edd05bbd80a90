//! Incompatibility diagnostics: Γ posterior-versus-prior comparison and the
//! tolerance/acceptance curve.

use serde::{Deserialize, Serialize};

use crate::engine::{quantile_sorted, AcceptedSample};
use crate::error::{domain, usage, Result};
use crate::robust::{GammaPrior, Method};

/// KS distance above which a Γ component is flagged.
pub const DEFAULT_KS_THRESHOLD: f64 = 0.35;

pub const MIN_COMPAT_DRAWS: usize = 100;
pub const MIN_CURVE_DISTANCES: usize = 1_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatEntry {
    pub gamma_label: String,
    /// Prior mean of the component.
    pub prior_mass_stat: f64,
    /// Posterior mean of the component.
    pub posterior_stat: f64,
    /// Kolmogorov-Smirnov distance between posterior draws and prior CDF.
    pub divergence: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatReport {
    pub method: Method,
    pub threshold: f64,
    pub entries: Vec<CompatEntry>,
}

impl CompatReport {
    pub fn flags(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.flagged).collect()
    }
}

/// One-sample KS distance of `sample` against `cdf`.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

fn prior_mean(prior: &GammaPrior) -> f64 {
    match *prior {
        GammaPrior::None | GammaPrior::Laplace { .. } => 0.0,
        GammaPrior::Exponential { rate } => 1.0 / rate,
        GammaPrior::Fixed { value } => value,
    }
}

pub fn gamma_compat(s: &AcceptedSample) -> Result<CompatReport> {
    gamma_compat_with(s, DEFAULT_KS_THRESHOLD)
}

/// Compares each Γ marginal of a robust sample with its prior.
pub fn gamma_compat_with(s: &AcceptedSample, threshold: f64) -> Result<CompatReport> {
    if !s.method.is_robust() || !s.gamma_prior.is_present() {
        return Err(usage("compatibility report needs a robust sample"));
    }
    if s.draws.len() < MIN_COMPAT_DRAWS {
        return Err(usage(format!(
            "compatibility report needs at least {MIN_COMPAT_DRAWS} accepted draws, got {}",
            s.draws.len()
        )));
    }
    let labels = s.summary_labels().expect("non-empty").to_vec();
    let prior = s.gamma_prior;
    let entries = labels
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let g: Vec<f64> = s
                .draws
                .iter()
                .map(|d| {
                    d.gamma
                        .as_ref()
                        .map(|g| g[j])
                        .ok_or_else(|| usage("missing gamma draw"))
                })
                .collect::<Result<_>>()?;
            let divergence = ks_distance(&g, |x| prior.cdf(x).expect("prior present"));
            Ok(CompatEntry {
                gamma_label: format!("gamma_{label}"),
                prior_mass_stat: prior_mean(&prior),
                posterior_stat: g.iter().sum::<f64>() / g.len() as f64,
                divergence,
                flagged: divergence > threshold,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CompatReport {
        method: s.method,
        threshold,
        entries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceCurve {
    /// `(tolerance, acceptance)` pairs, both range-normalized to `[0, 1]`.
    pub points: Vec<(f64, f64)>,
    /// Largest vertical distance from the diagonal.
    pub max_deviation: f64,
}

/// Acceptance rate against tolerance on a quantile grid of `grid + 1`
/// levels. Non-finite distances (failed draws) are ignored.
pub fn acceptance_curve(all_distances: &[f64], grid: usize) -> Result<AcceptanceCurve> {
    let mut d: Vec<f64> = all_distances
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    if d.len() < MIN_CURVE_DISTANCES {
        return Err(usage(format!(
            "acceptance curve needs at least {MIN_CURVE_DISTANCES} finite distances, got {}",
            d.len()
        )));
    }
    if grid < 1 {
        return Err(usage("acceptance curve grid must have at least one step"));
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() as f64;
    let raw: Vec<(f64, f64)> = (0..=grid)
        .map(|k| {
            let tol = quantile_sorted(&d, k as f64 / grid as f64);
            let accepted = d.partition_point(|v| *v <= tol);
            (tol, accepted as f64 / m)
        })
        .collect();
    let (t0, tn) = (raw[0].0, raw[grid].0);
    let (a0, an) = (raw[0].1, raw[grid].1);
    if !(tn > t0) || !(an > a0) {
        return Err(domain("distances have zero range"));
    }
    let points: Vec<(f64, f64)> = raw
        .iter()
        .map(|(t, a)| {
            (
                ((t - t0) / (tn - t0)).clamp(0.0, 1.0),
                ((a - a0) / (an - a0)).clamp(0.0, 1.0),
            )
        })
        .collect();
    let max_deviation = points
        .iter()
        .map(|(t, a)| (a - t).abs())
        .fold(0.0, f64::max);
    Ok(AcceptanceCurve {
        points,
        max_deviation,
    })
}
