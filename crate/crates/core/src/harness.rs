//! Experiment drivers: common-random-number sweeps over the data scale,
//! repeated-sampling coverage studies and the α-stable SV study.

use log::{info, warn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::diagnostics::{
    acceptance_curve, gamma_compat_with, AcceptanceCurve, CompatReport, DEFAULT_KS_THRESHOLD,
    MIN_COMPAT_DRAWS,
};
use crate::engine::{
    accept_from_bank, draw_stats, quantile_sorted, AcceptedSample, DistanceSpec, GammaBank,
    Marginal, ParamStats, PriorSpec, SimulationBank, Support,
};
use crate::error::{usage, AbcError, Result};
use crate::models::{AssumedModel, Simulator, TrueModel};
use crate::postprocess::{adjust, Kernel};
use crate::rng::{derive_seed, RngStream};
use crate::robust::{default_gamma_prior, GammaPrior, Method};
use crate::summaries::{
    fit_aux_garch, Autocov, AuxFitOptions, AuxGarchFit, AuxScore, MeanVar, SummaryMap,
    SummaryVector, DEFAULT_AUX_INIT,
};

pub const LANE_OBSERVED: u64 = 3;
pub const LANE_BANK: u64 = 4;

/// Share of failed replications above which a method is unreliable.
pub const UNRELIABLE_FRACTION: f64 = 0.10;

/// The six inference procedures: three rejection schemes, each with and
/// without regression adjustment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "ABC")]
    Abc,
    #[serde(rename = "ABC-Reg")]
    AbcReg,
    #[serde(rename = "R-ABC-S")]
    RabcS,
    #[serde(rename = "R-ABC-S-Reg")]
    RabcSReg,
    #[serde(rename = "R-ABC-W")]
    RabcW,
    #[serde(rename = "R-ABC-W-Reg")]
    RabcWReg,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Abc,
        Variant::AbcReg,
        Variant::RabcS,
        Variant::RabcSReg,
        Variant::RabcW,
        Variant::RabcWReg,
    ];

    pub fn base(self) -> Method {
        match self {
            Self::Abc | Self::AbcReg => Method::Abc,
            Self::RabcS | Self::RabcSReg => Method::RabcS,
            Self::RabcW | Self::RabcWReg => Method::RabcW,
        }
    }

    pub fn is_reg(self) -> bool {
        matches!(self, Self::AbcReg | Self::RabcSReg | Self::RabcWReg)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Abc => "ABC",
            Self::AbcReg => "ABC-Reg",
            Self::RabcS => "R-ABC-S",
            Self::RabcSReg => "R-ABC-S-Reg",
            Self::RabcW => "R-ABC-W",
            Self::RabcWReg => "R-ABC-W-Reg",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SummaryKind {
    MeanVar,
    Autocov {
        maxlag: usize,
    },
    /// Auxiliary GARCH score; only available in the α-stable SV study.
    AuxScore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Sweep,
    Mc,
    AlphaSv,
}

fn default_gamma_s() -> GammaPrior {
    default_gamma_prior(Method::RabcS)
}

fn default_gamma_w() -> GammaPrior {
    default_gamma_prior(Method::RabcW)
}

fn default_true() -> bool {
    true
}

fn default_ks() -> f64 {
    DEFAULT_KS_THRESHOLD
}

fn default_density_points() -> usize {
    101
}

fn default_curve_grid() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub experiment: ExperimentKind,
    pub true_model: TrueModel,
    pub assumed_model: AssumedModel,
    pub summary: SummaryKind,
    pub methods: Vec<Variant>,
    pub n_obs: usize,
    pub n_draws: usize,
    pub accept_quantile: f64,
    pub theta_prior: Vec<Marginal>,
    #[serde(default)]
    pub support: Support,
    #[serde(default = "default_gamma_s")]
    pub gamma_s: GammaPrior,
    #[serde(default = "default_gamma_w")]
    pub gamma_w: GammaPrior,
    /// Distance for plain ABC and the summary adjustment.
    #[serde(default)]
    pub distance: DistanceSpec,
    /// Base weights `D` of the Γ-weighted distance; ones when absent.
    #[serde(default)]
    pub w_base: Option<Vec<f64>>,
    #[serde(default)]
    pub kernel: Kernel,
    pub root_seed: u64,
    /// Values of the true model's scale parameter.
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub pseudo_true: Option<Vec<f64>>,
    /// Draw a new simulation bank for every replication.
    #[serde(default = "default_true")]
    pub fresh_bank: bool,
    #[serde(default = "default_ks")]
    pub ks_threshold: f64,
    #[serde(default = "default_density_points")]
    pub density_points: usize,
    #[serde(default = "default_curve_grid")]
    pub curve_grid: usize,
    #[serde(default)]
    pub aux_init: Option<[f64; 4]>,
    /// Keep accepted samples so they can be archived.
    #[serde(default)]
    pub archive: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.accept_quantile > 0.0 && self.accept_quantile <= 1.0) {
            return Err(usage(format!(
                "accept_quantile must lie in (0, 1], got {}",
                self.accept_quantile
            )));
        }
        if self.methods.is_empty() {
            return Err(usage("no methods requested"));
        }
        if self.n_obs == 0 || self.n_draws == 0 {
            return Err(usage("n_obs and n_draws must be positive"));
        }
        if self.theta_prior.len() != self.assumed_model.param_dim() {
            return Err(usage(format!(
                "theta_prior has {} entries, assumed model has {} parameters",
                self.theta_prior.len(),
                self.assumed_model.param_dim()
            )));
        }
        self.prior().validate()?;
        self.gamma_s.validate()?;
        self.gamma_w.validate()?;
        if self.methods.iter().any(|v| v.base() == Method::RabcW) && !self.gamma_w.is_nonnegative()
        {
            return Err(usage("gamma_w must be a nonnegative prior"));
        }
        if self.replications == Some(0) {
            return Err(usage("replications must be at least 1"));
        }
        if let Some(grid) = &self.sweep {
            if grid.is_empty() {
                return Err(usage("sweep grid is empty"));
            }
        }
        match self.experiment {
            ExperimentKind::Sweep if self.sweep.is_none() => {
                Err(usage("sweep experiment needs a sweep grid"))
            }
            ExperimentKind::Mc if self.pseudo_true.is_none() => {
                Err(usage("mc experiment needs pseudo_true"))
            }
            ExperimentKind::Mc
                if self.pseudo_true.as_ref().map(Vec::len) != Some(self.theta_prior.len()) =>
            {
                Err(usage(
                    "pseudo_true length differs from the number of parameters",
                ))
            }
            ExperimentKind::AlphaSv if self.summary != SummaryKind::AuxScore => {
                Err(usage("alpha_sv experiment uses the aux_score summary"))
            }
            ExperimentKind::Sweep | ExperimentKind::Mc if self.summary == SummaryKind::AuxScore => {
                Err(usage(
                    "aux_score summaries are only available to the alpha_sv experiment",
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn prior(&self) -> PriorSpec {
        PriorSpec::new(self.theta_prior.clone()).with_support(self.support)
    }

    fn bases(&self) -> BTreeSet<MethodKey> {
        self.methods.iter().map(|v| MethodKey(v.base())).collect()
    }

    fn w_distance(&self, dim: usize) -> DistanceSpec {
        DistanceSpec::GammaWeighted {
            base: self.w_base.clone().unwrap_or_else(|| vec![1.0; dim]),
        }
    }

    fn plain_summary(&self) -> Result<Box<dyn SummaryMap>> {
        match self.summary {
            SummaryKind::MeanVar => Ok(Box::new(MeanVar::new())),
            SummaryKind::Autocov { maxlag } => Ok(Box::new(Autocov::new(maxlag))),
            SummaryKind::AuxScore => Err(usage("aux_score summary needs a fitted auxiliary model")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct MethodKey(Method);

impl MethodKey {
    fn rank(self) -> u8 {
        match self.0 {
            Method::Abc => 0,
            Method::RabcS => 1,
            Method::RabcW => 2,
        }
    }
}

impl PartialOrd for MethodKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MethodKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rank().cmp(&other.rank())
    }
}

/// Simulation bank plus Γ banks for the robust methods in a config.
struct Banks {
    bank: SimulationBank,
    gamma_s: Option<GammaBank>,
    gamma_w: Option<GammaBank>,
}

fn build_banks(cfg: &ExperimentConfig, summary: &dyn SummaryMap, seed: u64) -> Result<Banks> {
    let bank = SimulationBank::simulate(
        &cfg.assumed_model,
        summary,
        &cfg.prior(),
        cfg.n_obs,
        cfg.n_draws,
        seed,
    )?;
    let bases = cfg.bases();
    let dim = summary.dim();
    let gamma_s = if bases.contains(&MethodKey(Method::RabcS)) {
        Some(GammaBank::sample(cfg.gamma_s, dim, cfg.n_draws, seed)?)
    } else {
        None
    };
    let gamma_w = if bases.contains(&MethodKey(Method::RabcW)) {
        Some(GammaBank::sample(cfg.gamma_w, dim, cfg.n_draws, seed)?)
    } else {
        None
    };
    if bank.n_failed() > 0 {
        warn!(
            "{} of {} simulated draws failed",
            bank.n_failed(),
            bank.len()
        );
    }
    Ok(Banks {
        bank,
        gamma_s,
        gamma_w,
    })
}

/// Output of one variant on one observed dataset.
#[derive(Clone, Debug)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub draws: Vec<Vec<f64>>,
    pub stats: Vec<ParamStats>,
    pub degenerate: bool,
}

/// Accepted samples and variant outcomes for one observed dataset.
struct Evaluation {
    samples: Vec<(Method, Result<AcceptedSample>)>,
    outcomes: Vec<(Variant, Result<VariantOutcome>)>,
}

fn evaluate(cfg: &ExperimentConfig, banks: &Banks, eta_y: &SummaryVector) -> Evaluation {
    let dim = eta_y.dim();
    let samples: Vec<(Method, Result<AcceptedSample>)> = cfg
        .bases()
        .into_iter()
        .map(|MethodKey(m)| {
            let s = match m {
                Method::Abc => accept_from_bank(
                    &banks.bank,
                    None,
                    m,
                    &cfg.distance,
                    eta_y,
                    cfg.accept_quantile,
                ),
                Method::RabcS => accept_from_bank(
                    &banks.bank,
                    banks.gamma_s.as_ref(),
                    m,
                    &cfg.distance,
                    eta_y,
                    cfg.accept_quantile,
                ),
                Method::RabcW => accept_from_bank(
                    &banks.bank,
                    banks.gamma_w.as_ref(),
                    m,
                    &cfg.w_distance(dim),
                    eta_y,
                    cfg.accept_quantile,
                ),
            };
            (m, s)
        })
        .collect();

    let outcomes = cfg
        .methods
        .iter()
        .map(|&v| {
            let sample = samples
                .iter()
                .find(|(m, _)| *m == v.base())
                .map(|(_, s)| s)
                .expect("every base evaluated");
            let out = match sample {
                Err(e) => Err(e.clone()),
                Ok(s) => outcome(v, s, eta_y, cfg.kernel),
            };
            (v, out)
        })
        .collect();
    Evaluation { samples, outcomes }
}

fn outcome(
    variant: Variant,
    s: &AcceptedSample,
    eta_y: &SummaryVector,
    kernel: Kernel,
) -> Result<VariantOutcome> {
    let (draws, degenerate) = if variant.is_reg() {
        let (fit, draws) = adjust(s, eta_y, kernel)?;
        (draws, fit.degenerate)
    } else {
        (s.thetas(), false)
    };
    let stats = draw_stats(&draws)?;
    Ok(VariantOutcome {
        variant,
        draws,
        stats,
        degenerate,
    })
}

/// Gaussian kernel density on an evenly spaced grid (Silverman bandwidth).
pub fn density_grid(x: &[f64], points: usize) -> Vec<(f64, f64)> {
    let n = x.len();
    if n < 2 || points < 2 {
        return Vec::new();
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let mean = s.iter().sum::<f64>() / n as f64;
    let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if !(h > 0.0) {
        return Vec::new();
    }
    let (lo, hi) = (s[0] - 3.0 * h, s[n - 1] + 3.0 * h);
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    (0..points)
        .map(|k| {
            let g = lo + (hi - lo) * k as f64 / (points - 1) as f64;
            let d = s
                .iter()
                .map(|v| (-0.5 * ((g - v) / h).powi(2)).exp())
                .sum::<f64>()
                * norm;
            (g, d)
        })
        .collect()
}

fn observed(cfg: &ExperimentConfig, model: &TrueModel, replication: u64) -> Result<Vec<f64>> {
    model.simulate(
        cfg.n_obs,
        &mut RngStream::lane(cfg.root_seed, LANE_OBSERVED, replication),
    )
}

// ---------------------------------------------------------------------------
// sweeps

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub sigma: f64,
    pub variant: Variant,
    pub param: String,
    pub stats: ParamStats,
    pub n_accepted: usize,
    pub epsilon: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityRow {
    pub sigma: f64,
    pub variant: Variant,
    /// Parameter name, or `gamma_<summary>` for adjustment components.
    pub component: String,
    pub x: f64,
    pub density: f64,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub theta_names: Vec<String>,
    pub observed_summaries: Vec<(f64, SummaryVector)>,
    pub cells: Vec<SweepCell>,
    pub densities: Vec<DensityRow>,
    pub compat: Vec<(f64, CompatReport)>,
    pub curves: Vec<(f64, AcceptanceCurve)>,
    /// Accepted samples per grid value, kept when `archive` is set.
    pub samples: Vec<(f64, AcceptedSample)>,
    pub n_failed_draws: usize,
}

impl SweepResult {
    pub fn cell(&self, sigma: f64, variant: Variant, param: usize) -> Option<&SweepCell> {
        self.cells
            .iter()
            .filter(|c| c.sigma == sigma && c.variant == variant)
            .nth(param)
    }

    pub fn compat_for(&self, sigma: f64, method: Method) -> Option<&CompatReport> {
        self.compat
            .iter()
            .find(|(s, r)| *s == sigma && r.method == method)
            .map(|(_, r)| r)
    }
}

/// Runs every method at every grid value against one shared simulation
/// bank; the observed data reuse the same random numbers at each value.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let grid = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| usage("sweep experiment needs a sweep grid"))?;
    let summary = cfg.plain_summary()?;
    let banks = build_banks(cfg, summary.as_ref(), cfg.root_seed)?;
    let theta_names = banks.bank.theta_names().to_vec();

    let mut out = SweepResult {
        theta_names: theta_names.clone(),
        observed_summaries: Vec::new(),
        cells: Vec::new(),
        densities: Vec::new(),
        compat: Vec::new(),
        curves: Vec::new(),
        samples: Vec::new(),
        n_failed_draws: banks.bank.n_failed(),
    };

    for &sigma in grid {
        let y = observed(cfg, &cfg.true_model.with_sigma(sigma)?, 0)?;
        let eta_y = summary.summarize(&y)?;
        let ev = evaluate(cfg, &banks, &eta_y);
        info!(
            "sweep value {sigma}: {} methods evaluated",
            ev.outcomes.len()
        );

        for (variant, res) in &ev.outcomes {
            let o = res.as_ref().map_err(Clone::clone)?;
            let sample = ev
                .samples
                .iter()
                .find(|(m, _)| *m == variant.base())
                .and_then(|(_, s)| s.as_ref().ok())
                .expect("outcome implies sample");
            for (k, st) in o.stats.iter().enumerate() {
                out.cells.push(SweepCell {
                    sigma,
                    variant: *variant,
                    param: theta_names[k].clone(),
                    stats: *st,
                    n_accepted: o.draws.len(),
                    epsilon: sample.epsilon,
                    degenerate: o.degenerate,
                });
                let col: Vec<f64> = o.draws.iter().map(|d| d[k]).collect();
                out.densities
                    .extend(density_grid(&col, cfg.density_points).into_iter().map(
                        |(x, density)| DensityRow {
                            sigma,
                            variant: *variant,
                            component: theta_names[k].clone(),
                            x,
                            density,
                        },
                    ));
            }
        }

        for (m, s) in &ev.samples {
            let s = s.as_ref().map_err(Clone::clone)?;
            if m.is_robust() {
                let labels = s.summary_labels().unwrap_or_default().to_vec();
                let plain_variant = if *m == Method::RabcS {
                    Variant::RabcS
                } else {
                    Variant::RabcW
                };
                for (j, label) in labels.iter().enumerate() {
                    let col: Vec<f64> = s
                        .draws
                        .iter()
                        .filter_map(|d| d.gamma.as_ref().map(|g| g[j]))
                        .collect();
                    out.densities
                        .extend(density_grid(&col, cfg.density_points).into_iter().map(
                            |(x, density)| DensityRow {
                                sigma,
                                variant: plain_variant,
                                component: format!("gamma_{label}"),
                                x,
                                density,
                            },
                        ));
                }
                if s.draws.len() >= MIN_COMPAT_DRAWS {
                    out.compat
                        .push((sigma, gamma_compat_with(s, cfg.ks_threshold)?));
                } else {
                    warn!(
                        "{} accepted draws are too few for the compatibility report",
                        s.draws.len()
                    );
                }
            }
        }
        if let Some((_, Ok(s))) = ev.samples.first() {
            out.curves
                .push((sigma, acceptance_curve(&s.distances, cfg.curve_grid)?));
        }
        out.observed_summaries.push((sigma, eta_y));
        if cfg.archive {
            for (_, s) in ev.samples {
                out.samples.push((sigma, s?));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// repeated sampling

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McRecord {
    pub replication: usize,
    pub sigma: Option<f64>,
    pub variant: Variant,
    pub param: String,
    /// `None` when the method failed on this replication.
    pub stats: Option<ParamStats>,
    pub covered: Option<bool>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McSummary {
    pub sigma: Option<f64>,
    pub variant: Variant,
    pub param: String,
    pub coverage: f64,
    /// Mean of posterior mean minus pseudo-true value.
    pub bias: f64,
    /// Mean posterior standard deviation.
    pub std: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompatRecord {
    pub replication: usize,
    pub sigma: Option<f64>,
    pub method: Method,
    pub gamma_label: String,
    pub divergence: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug)]
pub struct McReport {
    pub theta_names: Vec<String>,
    pub pseudo_true: Vec<f64>,
    pub replications: usize,
    pub records: Vec<McRecord>,
    pub summaries: Vec<McSummary>,
    pub compat: Vec<CompatRecord>,
    /// Variants failing on more than 10% of replications.
    pub unreliable: Vec<(Option<f64>, Variant)>,
}

impl McReport {
    pub fn summary(
        &self,
        sigma: Option<f64>,
        variant: Variant,
        param: usize,
    ) -> Option<&McSummary> {
        self.summaries
            .iter()
            .filter(|s| s.sigma == sigma && s.variant == variant)
            .nth(param)
    }

    pub fn is_reliable(&self) -> bool {
        self.unreliable.is_empty()
    }
}

/// Aggregates per-replication records into coverage, bias and std.
pub fn aggregate(
    records: &[McRecord],
    pseudo_true: &[f64],
    theta_names: &[String],
) -> Vec<McSummary> {
    let mut keys: Vec<(Option<f64>, Variant)> = Vec::new();
    for r in records {
        if !keys.iter().any(|k| k.0 == r.sigma && k.1 == r.variant) {
            keys.push((r.sigma, r.variant));
        }
    }
    let mut out = Vec::new();
    for (sigma, variant) in keys {
        for (k, name) in theta_names.iter().enumerate() {
            let rows: Vec<&McRecord> = records
                .iter()
                .filter(|r| r.sigma == sigma && r.variant == variant && &r.param == name)
                .collect();
            let ok: Vec<&ParamStats> = rows.iter().filter_map(|r| r.stats.as_ref()).collect();
            let n_ok = ok.len();
            let nf = n_ok as f64;
            let (coverage, bias, std) = if n_ok == 0 {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                (
                    ok.iter().filter(|s| s.covers(pseudo_true[k])).count() as f64 / nf,
                    ok.iter().map(|s| s.mean - pseudo_true[k]).sum::<f64>() / nf,
                    ok.iter().map(|s| s.sd).sum::<f64>() / nf,
                )
            };
            out.push(McSummary {
                sigma,
                variant,
                param: name.clone(),
                coverage,
                bias,
                std,
                n_ok,
                n_failed: rows.len() - n_ok,
            });
        }
    }
    out
}

/// Repeated-sampling study: fresh observed data for every replication,
/// shared across grid values when a sweep grid is present.
pub fn run_mc(cfg: &ExperimentConfig) -> Result<McReport> {
    cfg.validate()?;
    let pseudo_true = cfg
        .pseudo_true
        .clone()
        .ok_or_else(|| usage("mc experiment needs pseudo_true"))?;
    let reps = cfg.replications.unwrap_or(1);
    let summary = cfg.plain_summary()?;
    let grid: Vec<Option<f64>> = match &cfg.sweep {
        Some(g) => g.iter().map(|s| Some(*s)).collect(),
        None => vec![None],
    };
    let theta_names = cfg.assumed_model.param_names();
    let shared = if cfg.fresh_bank {
        None
    } else {
        Some(build_banks(cfg, summary.as_ref(), cfg.root_seed)?)
    };

    let mut records = Vec::new();
    let mut compat = Vec::new();
    for r in 0..reps {
        let fresh;
        let banks = match &shared {
            Some(b) => b,
            None => {
                let seed = derive_seed(derive_seed(cfg.root_seed, LANE_BANK), r as u64);
                fresh = build_banks(cfg, summary.as_ref(), seed)?;
                &fresh
            }
        };
        for &sigma in &grid {
            let model = match sigma {
                Some(s) => cfg.true_model.with_sigma(s)?,
                None => cfg.true_model.clone(),
            };
            let eta_y = observed(cfg, &model, r as u64).and_then(|y| summary.summarize(&y));
            let ev = match &eta_y {
                Ok(e) => Some(evaluate(cfg, banks, e)),
                Err(_) => None,
            };
            for &variant in &cfg.methods {
                let res: Result<VariantOutcome> = match (&eta_y, &ev) {
                    (Err(e), _) => Err(e.clone()),
                    (Ok(_), Some(ev)) => ev
                        .outcomes
                        .iter()
                        .find(|(v, _)| *v == variant)
                        .map(|(_, o)| o.clone())
                        .expect("variant evaluated"),
                    _ => unreachable!(),
                };
                for (k, name) in theta_names.iter().enumerate() {
                    let (stats, error) = match &res {
                        Ok(o) => (Some(o.stats[k]), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    records.push(McRecord {
                        replication: r,
                        sigma,
                        variant,
                        param: name.clone(),
                        covered: stats.map(|s| s.covers(pseudo_true[k])),
                        stats,
                        error,
                    });
                }
            }
            if let Some(ev) = ev {
                for (m, s) in &ev.samples {
                    let Ok(s) = s else { continue };
                    if m.is_robust() && s.draws.len() >= MIN_COMPAT_DRAWS {
                        let rep = gamma_compat_with(s, cfg.ks_threshold)?;
                        compat.extend(rep.entries.into_iter().map(|e| CompatRecord {
                            replication: r,
                            sigma,
                            method: *m,
                            gamma_label: e.gamma_label,
                            divergence: e.divergence,
                            flagged: e.flagged,
                        }));
                    }
                }
            }
        }
        info!("replication {} of {reps} done", r + 1);
    }

    let summaries = aggregate(&records, &pseudo_true, &theta_names);
    let mut unreliable = Vec::new();
    for s in summaries.iter().filter(|s| s.param == theta_names[0]) {
        if s.n_failed as f64 > UNRELIABLE_FRACTION * reps as f64 {
            unreliable.push((s.sigma, s.variant));
        }
    }
    Ok(McReport {
        theta_names,
        pseudo_true,
        replications: reps,
        records,
        summaries,
        compat,
        unreliable,
    })
}

// ---------------------------------------------------------------------------
// α-stable SV study

/// `(y - mean) / sd` with the n - 1 variance.
pub fn standardize(y: &[f64]) -> Result<Vec<f64>> {
    if y.len() < 2 {
        return Err(usage("standardization needs at least two observations"));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(AbcError::Domain("zero variance".into()));
    }
    Ok(y.iter().map(|v| (v - mean) / sd).collect())
}

/// Applies a summary map to the standardized series.
pub struct Standardized<S>(pub S);

impl<S: SummaryMap> SummaryMap for Standardized<S> {
    fn labels(&self) -> std::sync::Arc<[String]> {
        self.0.labels()
    }

    fn compute(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.0.compute(&standardize(y)?)
    }
}

#[derive(Clone, Debug)]
pub struct AlphaSvReport {
    pub aux: AuxGarchFit,
    pub eta_y: SummaryVector,
    pub theta_names: Vec<String>,
    pub outcomes: Vec<VariantOutcome>,
    pub compat: Vec<CompatReport>,
    pub curve: AcceptanceCurve,
    pub samples: Vec<AcceptedSample>,
    pub n_failed_draws: usize,
}

/// Simulated stand-in for an observed returns series.
pub fn simulate_returns(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    observed(cfg, &cfg.true_model, 0)
}

/// Fits the auxiliary model to the standardized returns and runs the
/// requested methods with its score as summary statistic.
pub fn run_alpha_sv(cfg: &ExperimentConfig, returns: &[f64]) -> Result<AlphaSvReport> {
    cfg.validate()?;
    let y = standardize(returns)?;
    let aux = fit_aux_garch(
        &y,
        &cfg.aux_init.unwrap_or(DEFAULT_AUX_INIT),
        &AuxFitOptions::default(),
    )?;
    if !aux.converged {
        return Err(AbcError::NotConverged(format!(
            "score norm {:.3e} at beta {:?}",
            aux.score_norm, aux.beta
        )));
    }
    info!(
        "auxiliary fit: beta {:?}, loglik {:.3}",
        aux.beta, aux.loglik
    );
    let summary = Standardized(AuxScore::new(aux.beta)?);
    let eta_y = summary.summarize(&y)?;
    let banks = build_banks(cfg, &summary, cfg.root_seed)?;
    let ev = evaluate(cfg, &banks, &eta_y);

    let outcomes = ev
        .outcomes
        .into_iter()
        .map(|(_, o)| o)
        .collect::<Result<Vec<_>>>()?;
    let samples = ev
        .samples
        .into_iter()
        .map(|(_, s)| s)
        .collect::<Result<Vec<_>>>()?;
    let compat = samples
        .iter()
        .filter(|s| s.method.is_robust())
        .map(|s| gamma_compat_with(s, cfg.ks_threshold))
        .collect::<Result<Vec<_>>>()?;
    let curve = acceptance_curve(&samples[0].distances, cfg.curve_grid)?;
    Ok(AlphaSvReport {
        aux,
        eta_y,
        theta_names: banks.bank.theta_names().to_vec(),
        outcomes,
        compat,
        curve,
        samples,
        n_failed_draws: banks.bank.n_failed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn normal_config(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            name: "test".into(),
            experiment: kind,
            true_model: TrueModel::Mixture {
                theta: 0.0,
                sigma: 1.0,
            },
            assumed_model: AssumedModel::Normal,
            summary: SummaryKind::MeanVar,
            methods: Variant::ALL.to_vec(),
            n_obs: 100,
            n_draws: 20_000,
            accept_quantile: 0.01,
            theta_prior: vec![Marginal::Normal { mean: 0.0, sd: 5.0 }],
            support: Support::Unconstrained,
            gamma_s: default_gamma_s(),
            gamma_w: default_gamma_w(),
            distance: DistanceSpec::Euclidean,
            w_base: None,
            kernel: Kernel::Epanechnikov,
            root_seed: 7,
            sweep: Some(vec![1.0, 3.0]),
            replications: Some(4),
            pseudo_true: Some(vec![0.0]),
            fresh_bank: true,
            ks_threshold: DEFAULT_KS_THRESHOLD,
            density_points: 21,
            curve_grid: 20,
            aux_init: None,
            archive: false,
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let cfg = normal_config(ExperimentKind::Sweep);
        let a = run_sweep(&cfg).unwrap();
        let b = run_sweep(&cfg).unwrap();
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.densities, b.densities);
        assert_eq!(a.cells.len(), 2 * 6);
        assert_eq!(a.compat.len(), 2 * 2);
    }

    #[test]
    fn sweep_compatible_case_agrees() {
        let mut cfg = normal_config(ExperimentKind::Sweep);
        cfg.sweep = Some(vec![1.0]);
        let r = run_sweep(&cfg).unwrap();
        let abc = r.cell(1.0, Variant::Abc, 0).unwrap().stats.mean;
        let s = r.cell(1.0, Variant::RabcS, 0).unwrap().stats.mean;
        assert!((abc - s).abs() < 0.05, "{abc} vs {s}");
    }

    #[test]
    fn sweep_rejects_empty_grid() {
        let mut cfg = normal_config(ExperimentKind::Sweep);
        cfg.sweep = Some(vec![]);
        assert!(matches!(run_sweep(&cfg), Err(AbcError::Usage(_))));
    }

    #[test]
    fn mc_aggregates_match_records() {
        let mut cfg = normal_config(ExperimentKind::Mc);
        cfg.n_draws = 5_000;
        let rep = run_mc(&cfg).unwrap();
        assert_eq!(rep.records.len(), 4 * 2 * 6);
        for s in &rep.summaries {
            let rows: Vec<&McRecord> = rep
                .records
                .iter()
                .filter(|r| r.sigma == s.sigma && r.variant == s.variant)
                .collect();
            assert_eq!(rows.len(), 4);
            let cov = rows.iter().filter(|r| r.covered == Some(true)).count() as f64 / 4.0;
            let bias = rows.iter().map(|r| r.stats.unwrap().mean).sum::<f64>() / 4.0;
            let std = rows.iter().map(|r| r.stats.unwrap().sd).sum::<f64>() / 4.0;
            assert_eq!(s.coverage, cov);
            assert!((s.bias - bias).abs() < 1e-12 && (s.std - std).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&s.coverage));
        }
        assert!(rep.is_reliable());
    }

    #[test]
    fn mc_marks_failing_method_unreliable() {
        let records: Vec<McRecord> = (0..10)
            .map(|r| McRecord {
                replication: r,
                sigma: None,
                variant: Variant::Abc,
                param: "theta".into(),
                stats: (r > 1).then_some(ParamStats {
                    mean: 0.0,
                    sd: 1.0,
                    lower: -1.0,
                    upper: 1.0,
                }),
                covered: (r > 1).then_some(true),
                error: (r <= 1).then(|| "boom".into()),
            })
            .collect();
        let s = aggregate(&records, &[0.0], &["theta".into()]);
        assert_eq!(s[0].n_failed, 2);
        assert_eq!(s[0].n_ok, 8);
        assert_eq!(s[0].coverage, 1.0);
    }

    #[test]
    fn standardize_idempotent() {
        let mut s = RngStream::new(1, 0);
        let y: Vec<f64> = (0..500).map(|_| 3.0 + 2.0 * s.standard_normal()).collect();
        let a = standardize(&y).unwrap();
        let b = standardize(&a).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!(matches!(standardize(&[0.0; 3]), Err(AbcError::Domain(m)) if m == "zero variance"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = normal_config(ExperimentKind::Mc);
        cfg.pseudo_true = None;
        assert!(cfg.validate().is_err());
        let mut cfg = normal_config(ExperimentKind::Sweep);
        cfg.accept_quantile = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = normal_config(ExperimentKind::Sweep);
        cfg.summary = SummaryKind::AuxScore;
        assert!(cfg.validate().is_err());
        let mut cfg = normal_config(ExperimentKind::Sweep);
        cfg.gamma_w = GammaPrior::Laplace { rate: 1.0 };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let mut s = RngStream::new(2, 0);
        let x: Vec<f64> = (0..500).map(|_| s.standard_normal()).collect();
        let g = density_grid(&x, 201);
        let step = g[1].0 - g[0].0;
        let area: f64 = g.iter().map(|p| p.1).sum::<f64>() * step;
        assert!((area - 1.0).abs() < 0.01, "{area}");
    }

    #[test]
    fn curve_deviation_grows_with_misspecification() {
        let mut cfg = normal_config(ExperimentKind::Sweep);
        cfg.methods = vec![Variant::Abc];
        cfg.sweep = Some(vec![1.0, 5.0]);
        let r = run_sweep(&cfg).unwrap();
        let (d1, d5) = (r.curves[0].1.max_deviation, r.curves[1].1.max_deviation);
        assert!(d5 > d1, "{d1} vs {d5}");
    }

    fn alpha_sv_config(true_model: TrueModel) -> ExperimentConfig {
        ExperimentConfig {
            experiment: ExperimentKind::AlphaSv,
            true_model,
            assumed_model: AssumedModel::AlphaSv,
            summary: SummaryKind::AuxScore,
            methods: vec![Variant::RabcS, Variant::RabcSReg],
            n_obs: 500,
            n_draws: 3_000,
            accept_quantile: 0.05,
            theta_prior: vec![
                Marginal::Fixed { value: 0.0 },
                Marginal::Uniform { lo: 0.7, hi: 1.0 },
                Marginal::Uniform { lo: 0.001, hi: 0.5 },
                Marginal::Uniform { lo: 1.2, hi: 2.0 },
                Marginal::Fixed { value: 0.0 },
            ],
            gamma_s: GammaPrior::Laplace { rate: 2.0 },
            sweep: None,
            replications: None,
            pseudo_true: None,
            ..normal_config(ExperimentKind::AlphaSv)
        }
    }

    #[test]
    fn alpha_sv_report_on_gaussian_sv_data() {
        let cfg = alpha_sv_config(TrueModel::Sv {
            omega: -0.736,
            rho: 0.9,
            sigma_v: 0.363,
        });
        let y = simulate_returns(&cfg).unwrap();
        let rep = run_alpha_sv(&cfg, &y).unwrap();
        assert!(rep.aux.converged);
        assert_eq!(rep.compat.len(), 1);
        assert_eq!(rep.compat[0].entries.len(), 4);
        assert_eq!(rep.outcomes.len(), 2);
        assert_eq!(
            rep.outcomes[0].stats[0],
            ParamStats {
                mean: 0.0,
                sd: 0.0,
                lower: 0.0,
                upper: 0.0
            }
        );
        let t2 = rep.outcomes[0].stats[1];
        assert!(t2.lower >= 0.7 && t2.upper <= 1.0);
        assert!(rep.curve.max_deviation.is_finite());
    }

    #[test]
    fn alpha_sv_rejects_flat_returns() {
        let cfg = alpha_sv_config(TrueModel::AlphaSv {
            theta1: 0.0,
            theta2: 0.95,
            theta3: 0.2,
            theta4: 1.8,
            theta5: 0.0,
        });
        assert!(matches!(
            run_alpha_sv(&cfg, &[0.0; 50]),
            Err(AbcError::Domain(_))
        ));
    }
}
