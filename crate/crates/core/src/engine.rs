//! Prior-predictive simulation, distances and quantile-tolerance rejection.
//!
//! Draw `i` of a run uses stream `i` of two lanes derived from the root
//! seed: one for the model parameters and simulated data, one for the
//! adjustment parameters Γ. Keeping Γ on its own lane means plain and
//! robust runs with the same seed see exactly the same θ and data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::sync::Arc;

use crate::error::{domain, usage, AbcError, Result};
use crate::models::{ma2_invertible, MaParams, Simulator};
use crate::rng::{sample_normal, sample_uniform, RngStream};
use crate::robust::{GammaPrior, Method};
use crate::summaries::{SummaryMap, SummaryVector};

pub const LANE_PARAM: u64 = 1;
pub const LANE_GAMMA: u64 = 2;

const MAX_SUPPORT_TRIES: usize = 10_000;

/// Independent prior for one model parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    Fixed { value: f64 },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Self::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            Self::Fixed { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(domain(format!("invalid prior marginal {self:?}")))
        }
    }

    pub fn sample(&self, stream: &mut RngStream) -> Result<f64> {
        match *self {
            Self::Uniform { lo, hi } => sample_uniform(stream, lo, hi),
            Self::Normal { mean, sd } => sample_normal(stream, mean, sd),
            Self::Fixed { value } => Ok(value),
        }
    }
}

/// Joint constraint applied to the product of marginals by rejection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    #[default]
    Unconstrained,
    /// Invertibility region of an MA(q) model.
    MaInvertible,
}

impl Support {
    pub fn contains(&self, theta: &[f64]) -> bool {
        match self {
            Self::Unconstrained => true,
            Self::MaInvertible if theta.len() == 2 => ma2_invertible(theta[0], theta[1]),
            Self::MaInvertible => MaParams::new(theta.to_vec()).is_invertible(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub theta: Vec<Marginal>,
    #[serde(default)]
    pub support: Support,
    #[serde(default)]
    pub gamma: GammaPrior,
}

impl PriorSpec {
    pub fn new(theta: Vec<Marginal>) -> Self {
        Self {
            theta,
            support: Support::Unconstrained,
            gamma: GammaPrior::None,
        }
    }

    pub fn with_support(mut self, support: Support) -> Self {
        self.support = support;
        self
    }

    pub fn with_gamma(mut self, gamma: GammaPrior) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.is_empty() {
            return Err(usage("prior has no parameters"));
        }
        self.theta.iter().try_for_each(Marginal::validate)?;
        self.gamma.validate()
    }

    /// Draws θ from the marginals, rejecting points outside the support.
    pub fn sample_theta(&self, stream: &mut RngStream) -> Result<Vec<f64>> {
        for _ in 0..MAX_SUPPORT_TRIES {
            let theta = self
                .theta
                .iter()
                .map(|m| m.sample(stream))
                .collect::<Result<Vec<_>>>()?;
            if self.support.contains(&theta) {
                return Ok(theta);
            }
        }
        Err(domain(
            "prior support has negligible mass under the marginals",
        ))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceSpec {
    #[default]
    Euclidean,
    /// `sqrt(sum (w_i d_i)^2)`.
    FixedWeighted { weights: Vec<f64> },
    /// `sqrt(d' D^{1/2} [I + diag(γ²)] D^{1/2} d)` with `D = diag(base)`.
    GammaWeighted { base: Vec<f64> },
}

impl DistanceSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let w = match self {
            Self::Euclidean => return Ok(()),
            Self::FixedWeighted { weights } => weights,
            Self::GammaWeighted { base } => base,
        };
        if w.len() != dim {
            return Err(usage(format!(
                "distance weights have length {}, expected {dim}",
                w.len()
            )));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(domain("distance weights must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn needs_gamma(&self) -> bool {
        matches!(self, Self::GammaWeighted { .. })
    }
}

/// Distance between observed and simulated summaries.
pub fn distance(
    eta_y: &SummaryVector,
    eta_z: &SummaryVector,
    gamma: Option<&[f64]>,
    spec: &DistanceSpec,
) -> Result<f64> {
    let d = eta_y.dim();
    if eta_z.dim() != d {
        return Err(usage(format!(
            "summary dimensions differ: {d} vs {}",
            eta_z.dim()
        )));
    }
    spec.validate(d)?;
    match (spec.needs_gamma(), gamma) {
        (true, None) => return Err(usage("gamma-weighted distance needs gamma")),
        (false, Some(_)) => return Err(usage("gamma given to a distance that does not use it")),
        (true, Some(g)) if g.len() != d => {
            return Err(usage(format!("gamma has length {}, expected {d}", g.len())))
        }
        _ => {}
    }
    Ok(distance_values(eta_y.values(), eta_z.values(), gamma, spec))
}

#[inline]
pub(crate) fn distance_values(
    y: &[f64],
    z: &[f64],
    gamma: Option<&[f64]>,
    spec: &DistanceSpec,
) -> f64 {
    let sq: f64 = match spec {
        DistanceSpec::Euclidean => y.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum(),
        DistanceSpec::FixedWeighted { weights } => y
            .iter()
            .zip(z)
            .zip(weights)
            .map(|((a, b), w)| (w * (a - b)).powi(2))
            .sum(),
        DistanceSpec::GammaWeighted { base } => {
            let g = gamma.expect("validated");
            y.iter()
                .zip(z)
                .zip(base)
                .zip(g)
                .map(|(((a, b), d), g)| d * (1.0 + g * g) * (a - b).powi(2))
                .sum()
        }
    };
    sq.sqrt()
}

/// Which scheme a prior/distance pair describes.
pub fn infer_method(gamma: &GammaPrior, dist: &DistanceSpec) -> Result<Method> {
    match (gamma.is_present(), dist.needs_gamma()) {
        (false, false) => Ok(Method::Abc),
        (false, true) => Err(usage("gamma-weighted distance requires a gamma prior")),
        (true, false) => Ok(Method::RabcS),
        (true, true) if gamma.is_nonnegative() => Ok(Method::RabcW),
        (true, true) => Err(domain(
            "weighted adjustment requires a nonnegative gamma prior",
        )),
    }
}

/// θ draws and simulated summaries for `n_draws` prior-predictive draws,
/// stored row-major. Failed draws keep NaN rows.
#[derive(Clone, Debug)]
pub struct SimulationBank {
    n_draws: usize,
    theta_dim: usize,
    summary_dim: usize,
    thetas: Vec<f64>,
    summaries: Vec<f64>,
    failed: Vec<bool>,
    theta_names: Vec<String>,
    labels: Arc<[String]>,
}

impl SimulationBank {
    pub fn simulate(
        model: &dyn Simulator,
        summary: &dyn SummaryMap,
        prior: &PriorSpec,
        n_obs: usize,
        n_draws: usize,
        root_seed: u64,
    ) -> Result<Self> {
        prior.validate()?;
        if prior.theta.len() != model.param_dim() {
            return Err(usage(format!(
                "prior has {} parameters, model expects {}",
                prior.theta.len(),
                model.param_dim()
            )));
        }
        if n_draws == 0 {
            return Err(usage("n_draws must be positive"));
        }
        let (pd, sd) = (model.param_dim(), summary.dim());
        let rows: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..n_draws as u64)
            .into_par_iter()
            .map(|i| {
                let mut s = RngStream::lane(root_seed, LANE_PARAM, i);
                let theta = prior.sample_theta(&mut s).ok()?;
                let z = model.simulate(&theta, n_obs, &mut s).ok()?;
                let eta = summary.compute(&z).ok()?;
                (eta.len() == sd && eta.iter().all(|v| v.is_finite())).then_some((theta, eta))
            })
            .collect();

        let mut thetas = Vec::with_capacity(n_draws * pd);
        let mut summaries = Vec::with_capacity(n_draws * sd);
        let mut failed = Vec::with_capacity(n_draws);
        for row in rows {
            match row {
                Some((t, e)) => {
                    thetas.extend(t);
                    summaries.extend(e);
                    failed.push(false);
                }
                None => {
                    thetas.extend(std::iter::repeat_n(f64::NAN, pd));
                    summaries.extend(std::iter::repeat_n(f64::NAN, sd));
                    failed.push(true);
                }
            }
        }
        Ok(Self {
            n_draws,
            theta_dim: pd,
            summary_dim: sd,
            thetas,
            summaries,
            failed,
            theta_names: model.param_names(),
            labels: summary.labels(),
        })
    }

    pub fn len(&self) -> usize {
        self.n_draws
    }

    pub fn is_empty(&self) -> bool {
        self.n_draws == 0
    }

    pub fn theta(&self, i: usize) -> &[f64] {
        &self.thetas[i * self.theta_dim..(i + 1) * self.theta_dim]
    }

    pub fn summary(&self, i: usize) -> &[f64] {
        &self.summaries[i * self.summary_dim..(i + 1) * self.summary_dim]
    }

    pub fn is_failed(&self, i: usize) -> bool {
        self.failed[i]
    }

    pub fn n_failed(&self) -> usize {
        self.failed.iter().filter(|f| **f).count()
    }

    pub fn theta_names(&self) -> &[String] {
        &self.theta_names
    }

    pub fn labels(&self) -> &Arc<[String]> {
        &self.labels
    }

    pub fn summary_dim(&self) -> usize {
        self.summary_dim
    }
}

/// Γ draws for every index of a bank, row-major.
#[derive(Clone, Debug)]
pub struct GammaBank {
    pub prior: GammaPrior,
    dim: usize,
    values: Vec<f64>,
}

impl GammaBank {
    pub fn sample(prior: GammaPrior, dim: usize, n_draws: usize, root_seed: u64) -> Result<Self> {
        prior.validate()?;
        if !prior.is_present() {
            return Err(usage("no gamma prior to sample from"));
        }
        let rows: Vec<Vec<f64>> = (0..n_draws as u64)
            .into_par_iter()
            .map(|i| {
                let mut s = RngStream::lane(root_seed, LANE_GAMMA, i);
                (0..dim)
                    .map(|_| prior.sample(&mut s))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            prior,
            dim,
            values: rows.concat(),
        })
    }

    pub fn gamma(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// An accepted draw ζ = (θ, Γ) with its raw simulated summaries η(z).
#[derive(Clone, Debug, PartialEq)]
pub struct JointDraw {
    pub theta: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub sim_summary: SummaryVector,
    pub distance: f64,
    pub stream_id: u64,
}

#[derive(Clone, Debug)]
pub struct AcceptedSample {
    pub method: Method,
    /// Sorted by (distance, stream_id).
    pub draws: Vec<JointDraw>,
    pub epsilon: f64,
    pub n_total: usize,
    pub n_failed: usize,
    pub accept_quantile: f64,
    pub gamma_prior: GammaPrior,
    pub theta_names: Vec<String>,
    /// Distance of every draw in index order; failed draws are +inf.
    pub distances: Vec<f64>,
}

impl AcceptedSample {
    pub fn thetas(&self) -> Vec<Vec<f64>> {
        self.draws.iter().map(|d| d.theta.clone()).collect()
    }

    pub fn summary_labels(&self) -> Option<&[String]> {
        self.draws.first().map(|d| d.sim_summary.labels())
    }
}

/// Number of accepted draws, `ceil(q N)`, robust to `q N` being an integer
/// up to rounding.
pub fn accept_count(n: usize, q: f64) -> Result<usize> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(usage(format!(
            "accept quantile must lie in (0, 1], got {q}"
        )));
    }
    let x = q * n as f64;
    if x < 1.0 - 1e-9 {
        return Err(usage(format!("{n} draws are too few for quantile {q}")));
    }
    let k = if (x - x.round()).abs() <= 1e-9 * x.max(1.0) {
        x.round()
    } else {
        x.ceil()
    };
    Ok((k as usize).clamp(1, n))
}

fn by_distance(d: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |a, b| d[*a].total_cmp(&d[*b]).then(a.cmp(b))
}

/// Indices of the `k` smallest distances, ordered by (distance, index).
pub fn smallest_k(distances: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..distances.len()).collect();
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    let cmp = by_distance(distances);
    idx.select_nth_unstable_by(k - 1, &cmp);
    idx.truncate(k);
    idx.sort_unstable_by(&cmp);
    idx
}

/// Rejection step on an existing bank. `gammas` must be given for the
/// robust methods and is ignored for plain ABC.
pub fn accept_from_bank(
    bank: &SimulationBank,
    gammas: Option<&GammaBank>,
    method: Method,
    dist: &DistanceSpec,
    eta_y: &SummaryVector,
    accept_quantile: f64,
) -> Result<AcceptedSample> {
    let dim = bank.summary_dim();
    if eta_y.dim() != dim {
        return Err(usage(format!(
            "observed summaries have {} entries, expected {dim}",
            eta_y.dim()
        )));
    }
    dist.validate(dim)?;
    let k = accept_count(bank.len(), accept_quantile)?;
    let gammas = match method {
        Method::Abc => {
            if dist.needs_gamma() {
                return Err(usage("plain ABC cannot use a gamma-weighted distance"));
            }
            None
        }
        Method::RabcS => {
            if dist.needs_gamma() {
                return Err(usage(
                    "summary adjustment uses an unweighted or fixed-weight distance",
                ));
            }
            Some(gammas.ok_or_else(|| usage("R-ABC-S requires gamma draws"))?)
        }
        Method::RabcW => {
            if !dist.needs_gamma() {
                return Err(usage("R-ABC-W requires a gamma-weighted distance"));
            }
            let g = gammas.ok_or_else(|| usage("R-ABC-W requires gamma draws"))?;
            if !g.prior.is_nonnegative() {
                return Err(domain(
                    "weighted adjustment requires a nonnegative gamma prior",
                ));
            }
            Some(g)
        }
    };
    if let Some(g) = gammas {
        if g.dim != dim || g.values.len() != bank.len() * dim {
            return Err(usage("gamma bank does not match the simulation bank"));
        }
    }

    let y = eta_y.values();
    let distances: Vec<f64> = (0..bank.len())
        .into_par_iter()
        .map(|i| {
            if bank.is_failed(i) {
                return f64::INFINITY;
            }
            let z = bank.summary(i);
            let d = match method {
                Method::Abc => distance_values(y, z, None, dist),
                Method::RabcS => {
                    let g = gammas.expect("checked").gamma(i);
                    let phi: Vec<f64> = z.iter().zip(g).map(|(a, b)| a + b).collect();
                    distance_values(y, &phi, None, dist)
                }
                Method::RabcW => {
                    distance_values(y, z, Some(gammas.expect("checked").gamma(i)), dist)
                }
            };
            if d.is_finite() {
                d
            } else {
                f64::INFINITY
            }
        })
        .collect();

    let n_failed = bank.n_failed();
    let n_finite = distances.iter().filter(|d| d.is_finite()).count();
    if n_finite < k {
        return Err(AbcError::Numerical(format!(
            "only {n_finite} of {} draws succeeded, {k} needed",
            bank.len()
        )));
    }

    let chosen = smallest_k(&distances, k);
    let epsilon = distances[*chosen.last().expect("k >= 1")];
    let draws = chosen
        .iter()
        .map(|&i| {
            Ok(JointDraw {
                theta: bank.theta(i).to_vec(),
                gamma: gammas.map(|g| g.gamma(i).to_vec()),
                sim_summary: SummaryVector::new(bank.summary(i).to_vec(), bank.labels().clone())?,
                distance: distances[i],
                stream_id: i as u64,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AcceptedSample {
        method,
        draws,
        epsilon,
        n_total: bank.len(),
        n_failed,
        accept_quantile,
        gamma_prior: gammas.map_or(GammaPrior::None, |g| g.prior),
        theta_names: bank.theta_names().to_vec(),
        distances,
    })
}

/// Rejection ABC with quantile tolerance. The method follows from the
/// prior and distance: no Γ prior gives plain ABC, a Γ prior with a
/// gamma-weighted distance gives R-ABC-W, any other Γ prior R-ABC-S.
#[allow(clippy::too_many_arguments)]
pub fn run_rejection(
    model: &dyn Simulator,
    summary: &dyn SummaryMap,
    prior: &PriorSpec,
    dist: &DistanceSpec,
    eta_y: &SummaryVector,
    n_obs: usize,
    n_draws: usize,
    accept_quantile: f64,
    root_seed: u64,
) -> Result<AcceptedSample> {
    let method = infer_method(&prior.gamma, dist)?;
    accept_count(n_draws, accept_quantile)?;
    let bank = SimulationBank::simulate(model, summary, prior, n_obs, n_draws, root_seed)?;
    let gammas = match method {
        Method::Abc => None,
        _ => Some(GammaBank::sample(
            prior.gamma,
            summary.dim(),
            n_draws,
            root_seed,
        )?),
    };
    accept_from_bank(&bank, gammas.as_ref(), method, dist, eta_y, accept_quantile)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ParamStats {
    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Linear-interpolation quantile (type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantile at plotting position `p (n + 1)` (type 6), clamped to the
/// sample range. Each tail beyond it has expected probability `p`, which
/// keeps interval coverage honest when only a few dozen draws are accepted.
pub fn interval_quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n + 1) as f64 * p;
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n as f64 {
        return sorted[n - 1];
    }
    let lo = h.floor() as usize;
    sorted[lo - 1] + (h - lo as f64) * (sorted[lo] - sorted[lo - 1])
}

pub const MIN_STATS_DRAWS: usize = 20;

/// Mean, sd and equal-tailed 95% interval for each column of `draws`.
pub fn draw_stats(draws: &[Vec<f64>]) -> Result<Vec<ParamStats>> {
    if draws.len() < MIN_STATS_DRAWS {
        return Err(usage(format!(
            "posterior summaries need at least {MIN_STATS_DRAWS} draws, got {}",
            draws.len()
        )));
    }
    let p = draws[0].len();
    let n = draws.len() as f64;
    (0..p)
        .map(|j| {
            let mut col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            if col.iter().any(|v| !v.is_finite()) {
                return Err(AbcError::Numerical("non-finite posterior draw".into()));
            }
            col.sort_by(f64::total_cmp);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Ok(ParamStats {
                mean,
                sd: var.sqrt(),
                lower: interval_quantile_sorted(&col, 0.025),
                upper: interval_quantile_sorted(&col, 0.975),
            })
        })
        .collect()
}

pub fn posterior_stats(s: &AcceptedSample) -> Result<Vec<ParamStats>> {
    draw_stats(&s.thetas())
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(usage("thread count must be positive")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| usage(format!("cannot start thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::AssumedModel;
    use crate::summaries::MeanVar;

    fn sv(v: &[f64]) -> SummaryVector {
        SummaryVector::unlabelled(v.to_vec()).unwrap()
    }

    fn normal_prior() -> PriorSpec {
        PriorSpec::new(vec![Marginal::Uniform {
            lo: -10.0,
            hi: 10.0,
        }])
    }

    fn eta_obs() -> SummaryVector {
        let y = crate::models::simulate_mixture(
            &crate::models::MixtureParams {
                theta: 0.0,
                sigma: 2.0,
            },
            100,
            &mut RngStream::new(99, 0),
        )
        .unwrap();
        MeanVar::new().summarize(&y).unwrap()
    }

    fn run(prior: &PriorSpec, dist: &DistanceSpec, n: usize, q: f64, seed: u64) -> AcceptedSample {
        run_rejection(
            &AssumedModel::Normal,
            &MeanVar::new(),
            prior,
            dist,
            &eta_obs(),
            100,
            n,
            q,
            seed,
        )
        .unwrap()
    }

    fn ids(s: &AcceptedSample) -> Vec<u64> {
        s.draws.iter().map(|d| d.stream_id).collect()
    }

    #[test]
    fn distance_cases() {
        let a = sv(&[1.0, 2.0]);
        assert_eq!(
            distance(&a, &a, None, &DistanceSpec::Euclidean).unwrap(),
            0.0
        );
        let b = sv(&[4.0, -2.0]);
        let e = distance(&a, &b, None, &DistanceSpec::Euclidean).unwrap();
        assert_eq!(e, 5.0);
        let g0 = distance(
            &a,
            &b,
            Some(&[0.0, 0.0]),
            &DistanceSpec::GammaWeighted {
                base: vec![1.0, 1.0],
            },
        );
        assert_eq!(g0.unwrap(), e);
        let w = distance(
            &sv(&[1.0, 1.0]),
            &sv(&[0.0, 0.0]),
            Some(&[1.0, 1.0]),
            &DistanceSpec::GammaWeighted {
                base: vec![1.0, 1.0],
            },
        )
        .unwrap();
        assert!((w - 2.0).abs() < 1e-15);
        let f = distance(
            &a,
            &b,
            None,
            &DistanceSpec::FixedWeighted {
                weights: vec![2.0, 0.5],
            },
        )
        .unwrap();
        assert!((f - (36.0f64 + 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn distance_usage_errors() {
        let a = sv(&[1.0, 2.0]);
        let spec = DistanceSpec::GammaWeighted {
            base: vec![1.0, 1.0],
        };
        assert!(matches!(
            distance(&a, &a, None, &spec),
            Err(AbcError::Usage(_))
        ));
        assert!(matches!(
            distance(&a, &a, Some(&[1.0, 1.0]), &DistanceSpec::Euclidean),
            Err(AbcError::Usage(_))
        ));
        assert!(matches!(
            distance(&a, &sv(&[1.0]), None, &DistanceSpec::Euclidean),
            Err(AbcError::Usage(_))
        ));
        let bad = DistanceSpec::FixedWeighted {
            weights: vec![1.0, -1.0],
        };
        assert!(distance(&a, &a, None, &bad).is_err());
    }

    #[test]
    fn accept_count_rounding() {
        assert_eq!(accept_count(1_000_000, 0.0005).unwrap(), 500);
        assert_eq!(accept_count(100_000, 0.0005).unwrap(), 50);
        assert_eq!(accept_count(50_000, 0.01).unwrap(), 500);
        assert_eq!(accept_count(10, 0.25).unwrap(), 3);
        assert_eq!(accept_count(7, 1.0).unwrap(), 7);
        assert!(accept_count(100, 0.001).is_err());
        assert!(accept_count(100, 0.0).is_err());
    }

    #[test]
    fn million_draws_accept_exactly_500() {
        let s = run_rejection(
            &AssumedModel::Normal,
            &MeanVar::new(),
            &normal_prior(),
            &DistanceSpec::Euclidean,
            &eta_obs(),
            10,
            1_000_000,
            0.0005,
            1,
        )
        .unwrap();
        assert_eq!(s.draws.len(), 500);
        assert!(s.draws.iter().all(|d| d.distance <= s.epsilon));
        let mut sorted = s.distances.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(s.epsilon, sorted[499]);
    }

    #[test]
    fn quantile_one_accepts_all() {
        let s = run(&normal_prior(), &DistanceSpec::Euclidean, 200, 1.0, 3);
        assert_eq!(s.draws.len(), 200);
        let max = s.distances.iter().cloned().fold(0.0, f64::max);
        assert_eq!(s.epsilon, max);
    }

    #[test]
    fn zero_gamma_reproduces_plain_abc() {
        let plain = run(&normal_prior(), &DistanceSpec::Euclidean, 20_000, 0.01, 11);
        let robust = run(
            &normal_prior().with_gamma(GammaPrior::Fixed { value: 0.0 }),
            &DistanceSpec::Euclidean,
            20_000,
            0.01,
            11,
        );
        assert_eq!(robust.method, Method::RabcS);
        assert_eq!(ids(&plain), ids(&robust));
        assert_eq!(plain.thetas(), robust.thetas());
    }

    #[test]
    fn constant_gamma_weighted_keeps_ordering() {
        let plain = run(&normal_prior(), &DistanceSpec::Euclidean, 20_000, 0.01, 12);
        let w = run(
            &normal_prior().with_gamma(GammaPrior::Fixed { value: 1.7 }),
            &DistanceSpec::GammaWeighted {
                base: vec![1.0, 1.0],
            },
            20_000,
            0.01,
            12,
        );
        assert_eq!(w.method, Method::RabcW);
        assert_eq!(ids(&plain), ids(&w));
    }

    #[test]
    fn nested_accept_sets() {
        let big = run(&normal_prior(), &DistanceSpec::Euclidean, 10_000, 0.05, 5);
        let small = run(&normal_prior(), &DistanceSpec::Euclidean, 10_000, 0.01, 5);
        let bigset: std::collections::HashSet<u64> = ids(&big).into_iter().collect();
        assert!(ids(&small).iter().all(|i| bigset.contains(i)));
    }

    #[test]
    fn thread_count_does_not_matter() {
        let prior = normal_prior().with_gamma(GammaPrior::Laplace { rate: 4.0 });
        let go = |t| {
            with_threads(Some(t), || {
                run(&prior, &DistanceSpec::Euclidean, 5_000, 0.02, 21)
            })
            .unwrap()
        };
        let a = go(1);
        for t in [2, 8] {
            let b = go(t);
            assert_eq!(a.draws, b.draws);
            assert_eq!(a.epsilon.to_bits(), b.epsilon.to_bits());
        }
    }

    struct Flaky;

    impl Simulator for Flaky {
        fn param_dim(&self) -> usize {
            1
        }
        fn param_names(&self) -> Vec<String> {
            vec!["theta".into()]
        }
        fn simulate(&self, theta: &[f64], n: usize, s: &mut RngStream) -> Result<Vec<f64>> {
            if theta[0] > 0.0 {
                Err(AbcError::Numerical("overflow".into()))
            } else {
                crate::models::simulate_normal(theta[0], n, s)
            }
        }
    }

    #[test]
    fn failed_draws_are_counted_not_accepted() {
        let prior = PriorSpec::new(vec![Marginal::Uniform { lo: -1.0, hi: 1.0 }]);
        let s = run_rejection(
            &Flaky,
            &MeanVar::new(),
            &prior,
            &DistanceSpec::Euclidean,
            &sv(&[-0.5, 1.0]),
            50,
            4_000,
            0.1,
            2,
        )
        .unwrap();
        assert!(s.n_failed > 1_500 && s.n_failed < 2_500);
        assert!(s
            .draws
            .iter()
            .all(|d| d.theta[0] <= 0.0 && d.distance.is_finite()));
        assert_eq!(
            s.distances.iter().filter(|d| d.is_infinite()).count(),
            s.n_failed
        );
    }

    #[test]
    fn ma_support_is_respected() {
        let prior = PriorSpec::new(vec![
            Marginal::Uniform { lo: -2.0, hi: 2.0 },
            Marginal::Uniform { lo: -1.0, hi: 1.0 },
        ])
        .with_support(Support::MaInvertible);
        for i in 0..2_000 {
            let t = prior.sample_theta(&mut RngStream::new(1, i)).unwrap();
            assert!(ma2_invertible(t[0], t[1]));
        }
    }

    #[test]
    fn method_inference() {
        let w = DistanceSpec::GammaWeighted { base: vec![1.0] };
        assert_eq!(
            infer_method(&GammaPrior::None, &DistanceSpec::Euclidean).unwrap(),
            Method::Abc
        );
        assert!(infer_method(&GammaPrior::None, &w).is_err());
        assert!(infer_method(&GammaPrior::Laplace { rate: 1.0 }, &w).is_err());
        assert_eq!(
            infer_method(&GammaPrior::Exponential { rate: 1.0 }, &w).unwrap(),
            Method::RabcW
        );
    }

    #[test]
    fn stats_degenerate_and_errors() {
        let draws = vec![vec![3.5]; 25];
        let st = draw_stats(&draws).unwrap();
        assert_eq!(
            st[0],
            ParamStats {
                mean: 3.5,
                sd: 0.0,
                lower: 3.5,
                upper: 3.5
            }
        );
        assert!(matches!(draw_stats(&draws[..19]), Err(AbcError::Usage(_))));
    }

    #[test]
    fn stats_normal_quantiles() {
        use rand::seq::SliceRandom;
        use statrs::distribution::{ContinuousCDF, Normal};
        // evenly spaced normal quantiles stand in for iid draws
        let z = Normal::standard();
        let n = 10_000;
        let mut draws: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![z.inverse_cdf((i as f64 + 0.5) / n as f64)])
            .collect();
        draws.shuffle(&mut RngStream::new(17, 0));
        let st = draw_stats(&draws).unwrap()[0];
        assert!(
            (st.lower + 1.96).abs() < 0.05 && (st.upper - 1.96).abs() < 0.05,
            "{st:?}"
        );
        draws.reverse();
        let back = draw_stats(&draws).unwrap()[0];
        assert!((back.mean - st.mean).abs() < 1e-12);
        assert_eq!((back.lower, back.upper), (st.lower, st.upper));
    }

    #[test]
    fn type7_quantiles() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&x, 0.0), 1.0);
        assert_eq!(quantile_sorted(&x, 1.0), 4.0);
        assert_eq!(quantile_sorted(&x, 0.5), 2.5);
        assert!((quantile_sorted(&x, 0.025) - 1.075).abs() < 1e-12);
    }

    #[test]
    fn interval_quantiles() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(interval_quantile_sorted(&x, 0.5), 2.5);
        assert_eq!(interval_quantile_sorted(&x, 0.025), 1.0);
        assert_eq!(interval_quantile_sorted(&x, 0.975), 4.0);
        assert!((interval_quantile_sorted(&x, 0.3) - 1.5).abs() < 1e-12);
        // E[U_(k)] = k / (m + 1) for uniform order statistics
        let (m, reps) = (50, 40_000);
        let mut s = RngStream::new(21, 0);
        let mut tail = 0.0;
        for _ in 0..reps {
            let mut u: Vec<f64> = (0..m).map(|_| s.open01()).collect();
            u.sort_by(f64::total_cmp);
            tail += interval_quantile_sorted(&u, 0.025);
        }
        assert!(
            (tail / reps as f64 - 0.025).abs() < 5e-4,
            "{}",
            tail / reps as f64
        );
    }

    proptest::proptest! {
        #[test]
        fn selection_scale_invariant(
            d in proptest::collection::vec(0.0f64..10.0, 5..60),
            c in 0.01f64..100.0,
            kf in 0.05f64..1.0,
        ) {
            let k = ((d.len() as f64 * kf).ceil() as usize).max(1);
            let scaled: Vec<f64> = d.iter().map(|v| v * c).collect();
            let mut a = smallest_k(&d, k);
            let mut b = smallest_k(&scaled, k);
            a.sort();
            b.sort();
            proptest::prop_assert_eq!(a, b);
        }
    }
}
