use std::path::{Path, PathBuf};

use log::info;
use serde_json::json;

use rabc::diagnostics::{
    acceptance_curve, gamma_compat_with, AcceptanceCurve, CompatReport, DEFAULT_KS_THRESHOLD,
};
use rabc::engine::{with_threads, AcceptedSample};
use rabc::harness::{
    density_grid, run_alpha_sv, run_mc, run_sweep, simulate_returns, AlphaSvReport,
    ExperimentConfig, ExperimentKind, McReport, SweepResult,
};
use rabc::summaries::{fit_aux_garch, AuxFitOptions, DEFAULT_AUX_INIT};
use rabc::AbcError;

use crate::archive::{read_archive, write_archive};
use crate::config::{load_config, Overrides};
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest_returns, read_returns};
use crate::manifest::{now, sha256_hex, RunManifest};
use crate::output::{num, write_atomic, Table};

pub const EXIT_UNRELIABLE: i32 = 3;

pub struct RunOptions {
    pub config: PathBuf,
    pub overrides: Overrides,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
    pub data: Option<PathBuf>,
}

/// Runs the experiment described by a config file and writes its reports.
/// Returns the process exit code.
pub fn cmd_run(opts: &RunOptions) -> CliResult<i32> {
    let started_at = now();
    let (cfg, raw) = load_config(&opts.config, &opts.overrides)?;
    if opts.data.is_some() && cfg.experiment != ExperimentKind::AlphaSv {
        return Err(AbcError::Usage("--data is only used by alpha_sv experiments".into()).into());
    }
    std::fs::create_dir_all(&opts.out_dir)?;
    let dir = opts.out_dir.as_path();
    let mut written = Vec::new();
    info!("running {} ({:?})", cfg.name, cfg.experiment);

    let code = match cfg.experiment {
        ExperimentKind::Sweep => {
            let r = with_threads(opts.threads, || run_sweep(&cfg))??;
            write_sweep(&cfg, &r, dir, &mut written)?;
            0
        }
        ExperimentKind::Mc => {
            let r = with_threads(opts.threads, || run_mc(&cfg))??;
            write_mc(&cfg, &r, dir, &mut written)?;
            if r.is_reliable() {
                0
            } else {
                for (s, v) in &r.unreliable {
                    eprintln!("warning: {v} failed on more than 10% of replications (sigma {s:?})");
                }
                EXIT_UNRELIABLE
            }
        }
        ExperimentKind::AlphaSv => {
            let returns = match &opts.data {
                Some(p) => read_returns(p)?,
                None => simulate_returns(&cfg)?,
            };
            let r = with_threads(opts.threads, || run_alpha_sv(&cfg, &returns))??;
            write_alpha_sv(&cfg, &r, dir, &mut written)?;
            0
        }
    };

    let manifest = RunManifest {
        config_sha256: sha256_hex(&serde_json::to_vec(&cfg)?),
        config_file_sha256: sha256_hex(&raw),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        root_seed: cfg.root_seed,
        started_at,
        finished_at: now(),
        outputs: written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let path = manifest.save(dir)?;
    println!(
        "wrote {} files to {}; manifest {}",
        written.len(),
        dir.display(),
        path.display()
    );
    Ok(code)
}

fn bool_s(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

fn compat_rows(t: &mut Table, lead: &[String], rep: &CompatReport) -> CliResult<()> {
    for e in &rep.entries {
        let mut row = lead.to_vec();
        row.extend([
            rep.method.label().to_string(),
            e.gamma_label.clone(),
            num(e.prior_mass_stat),
            num(e.posterior_stat),
            num(e.divergence),
            num(rep.threshold),
            bool_s(e.flagged).to_string(),
        ]);
        t.row(&row)?;
    }
    Ok(())
}

const COMPAT_COLS: [&str; 7] = [
    "method",
    "gamma_label",
    "prior_mass_stat",
    "posterior_stat",
    "divergence",
    "threshold",
    "flagged",
];

fn curve_rows(t: &mut Table, lead: &[String], c: &AcceptanceCurve) -> CliResult<()> {
    for (tol, acc) in &c.points {
        let mut row = lead.to_vec();
        row.extend([num(*tol), num(*acc)]);
        t.row(&row)?;
    }
    Ok(())
}

fn save_json(
    dir: &Path,
    name: &str,
    value: &serde_json::Value,
    written: &mut Vec<PathBuf>,
) -> CliResult<()> {
    let path = dir.join(name);
    write_atomic(&path, &serde_json::to_vec_pretty(value)?)?;
    written.push(path);
    Ok(())
}

fn archive(
    dir: &Path,
    name: String,
    s: &AcceptedSample,
    written: &mut Vec<PathBuf>,
) -> CliResult<()> {
    let path = dir.join(name);
    write_archive(&path, s)?;
    written.push(path);
    Ok(())
}

fn write_sweep(
    cfg: &ExperimentConfig,
    r: &SweepResult,
    dir: &Path,
    written: &mut Vec<PathBuf>,
) -> CliResult<()> {
    let mut t = Table::new(&[
        "sigma",
        "method",
        "param",
        "mean",
        "sd",
        "lower",
        "upper",
        "n_accepted",
        "epsilon",
        "degenerate",
    ])?;
    for c in &r.cells {
        t.row([
            num(c.sigma),
            c.variant.label().to_string(),
            c.param.clone(),
            num(c.stats.mean),
            num(c.stats.sd),
            num(c.stats.lower),
            num(c.stats.upper),
            c.n_accepted.to_string(),
            num(c.epsilon),
            bool_s(c.degenerate).to_string(),
        ])?;
    }
    t.save(dir, "sweep.csv", written)?;

    let mut t = Table::new(&["sigma", "method", "component", "x", "density"])?;
    for d in &r.densities {
        t.row([
            num(d.sigma),
            d.variant.label().to_string(),
            d.component.clone(),
            num(d.x),
            num(d.density),
        ])?;
    }
    t.save(dir, "densities.csv", written)?;

    let mut header = vec!["sigma"];
    header.extend(COMPAT_COLS);
    let mut t = Table::new(&header)?;
    for (s, rep) in &r.compat {
        compat_rows(&mut t, &[num(*s)], rep)?;
    }
    t.save(dir, "compat.csv", written)?;

    let mut t = Table::new(&["sigma", "tolerance", "acceptance"])?;
    for (s, c) in &r.curves {
        curve_rows(&mut t, &[num(*s)], c)?;
    }
    t.save(dir, "curve.csv", written)?;

    let mut t = Table::new(&["sigma", "summary", "value"])?;
    for (s, eta) in &r.observed_summaries {
        for (l, v) in eta.labels().iter().zip(eta.values()) {
            t.row([num(*s), l.clone(), num(*v)])?;
        }
    }
    t.save(dir, "observed.csv", written)?;

    for (s, sample) in &r.samples {
        archive(
            dir,
            format!("archive_{}_sigma{}.csv", sample.method.label(), num(*s)),
            sample,
            written,
        )?;
    }

    let summary = json!({
        "name": cfg.name,
        "experiment": cfg.experiment,
        "theta_names": r.theta_names,
        "n_failed_draws": r.n_failed_draws,
        "cells": r.cells,
        "compat": r.compat.iter().map(|(s, c)| json!({"sigma": s, "report": c})).collect::<Vec<_>>(),
        "curves": r.curves.iter().map(|(s, c)| json!({"sigma": s, "max_deviation": c.max_deviation})).collect::<Vec<_>>(),
    });
    save_json(dir, "summary.json", &summary, written)
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn write_mc(
    cfg: &ExperimentConfig,
    r: &McReport,
    dir: &Path,
    written: &mut Vec<PathBuf>,
) -> CliResult<()> {
    let mut t = Table::new(&[
        "replication",
        "sigma",
        "method",
        "param",
        "mean",
        "sd",
        "lower",
        "upper",
        "covered",
        "error",
    ])?;
    for rec in &r.records {
        let st = rec.stats;
        t.row([
            rec.replication.to_string(),
            opt_num(rec.sigma),
            rec.variant.label().to_string(),
            rec.param.clone(),
            opt_num(st.map(|s| s.mean)),
            opt_num(st.map(|s| s.sd)),
            opt_num(st.map(|s| s.lower)),
            opt_num(st.map(|s| s.upper)),
            rec.covered
                .map(|c| bool_s(c).to_string())
                .unwrap_or_default(),
            rec.error.clone().unwrap_or_default(),
        ])?;
    }
    t.save(dir, "records.csv", written)?;

    let mut t = Table::new(&[
        "sigma", "method", "param", "coverage", "bias", "std", "n_ok", "n_failed",
    ])?;
    for s in &r.summaries {
        t.row([
            opt_num(s.sigma),
            s.variant.label().to_string(),
            s.param.clone(),
            num(s.coverage),
            num(s.bias),
            num(s.std),
            s.n_ok.to_string(),
            s.n_failed.to_string(),
        ])?;
    }
    t.save(dir, "mc_summary.csv", written)?;

    let mut t = Table::new(&[
        "replication",
        "sigma",
        "method",
        "gamma_label",
        "divergence",
        "flagged",
    ])?;
    for c in &r.compat {
        t.row([
            c.replication.to_string(),
            opt_num(c.sigma),
            c.method.label().to_string(),
            c.gamma_label.clone(),
            num(c.divergence),
            bool_s(c.flagged).to_string(),
        ])?;
    }
    t.save(dir, "compat.csv", written)?;

    let summary = json!({
        "name": cfg.name,
        "experiment": cfg.experiment,
        "replications": r.replications,
        "pseudo_true": r.pseudo_true,
        "summaries": r.summaries,
        "unreliable": r.unreliable.iter().map(|(s, v)| json!({"sigma": s, "method": v})).collect::<Vec<_>>(),
    });
    save_json(dir, "summary.json", &summary, written)
}

fn write_alpha_sv(
    cfg: &ExperimentConfig,
    r: &AlphaSvReport,
    dir: &Path,
    written: &mut Vec<PathBuf>,
) -> CliResult<()> {
    let mut t = Table::new(&[
        "method",
        "param",
        "mean",
        "sd",
        "lower",
        "upper",
        "degenerate",
    ])?;
    for o in &r.outcomes {
        for (name, st) in r.theta_names.iter().zip(&o.stats) {
            t.row([
                o.variant.label().to_string(),
                name.clone(),
                num(st.mean),
                num(st.sd),
                num(st.lower),
                num(st.upper),
                bool_s(o.degenerate).to_string(),
            ])?;
        }
    }
    t.save(dir, "posterior.csv", written)?;

    let mut t = Table::new(&["method", "component", "x", "density"])?;
    for o in &r.outcomes {
        for (k, name) in r.theta_names.iter().enumerate() {
            let col: Vec<f64> = o.draws.iter().map(|d| d[k]).collect();
            for (x, d) in density_grid(&col, cfg.density_points) {
                t.row([o.variant.label().to_string(), name.clone(), num(x), num(d)])?;
            }
        }
    }
    t.save(dir, "densities.csv", written)?;

    let mut t = Table::new(&COMPAT_COLS)?;
    for c in &r.compat {
        compat_rows(&mut t, &[], c)?;
    }
    t.save(dir, "compat.csv", written)?;

    let mut t = Table::new(&["tolerance", "acceptance"])?;
    curve_rows(&mut t, &[], &r.curve)?;
    t.save(dir, "curve.csv", written)?;

    let mut t = Table::new(&["param", "value"])?;
    for (k, b) in r.aux.beta.iter().enumerate() {
        t.row([format!("beta{}", k + 1), num(*b)])?;
    }
    t.save(dir, "aux_fit.csv", written)?;

    if cfg.archive {
        for s in &r.samples {
            archive(dir, format!("archive_{}.csv", s.method.label()), s, written)?;
        }
    }

    let summary = json!({
        "name": cfg.name,
        "experiment": cfg.experiment,
        "aux_fit": {
            "beta": r.aux.beta,
            "loglik": r.aux.loglik,
            "score_norm": r.aux.score_norm,
            "converged": r.aux.converged,
        },
        "observed_score": r.eta_y.values(),
        "theta_names": r.theta_names,
        "posterior": r.outcomes.iter().map(|o| json!({"method": o.variant, "stats": o.stats})).collect::<Vec<_>>(),
        "compat": r.compat,
        "curve_max_deviation": r.curve.max_deviation,
        "n_failed_draws": r.n_failed_draws,
    });
    save_json(dir, "summary.json", &summary, written)
}

/// Recomputes the compatibility report and acceptance curve from an archive.
pub fn cmd_diagnose(
    archive_path: &Path,
    out_dir: &Path,
    threshold: Option<f64>,
    grid: usize,
) -> CliResult<i32> {
    let s = read_archive(archive_path)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    if s.method.is_robust() {
        let rep = gamma_compat_with(&s, threshold.unwrap_or(DEFAULT_KS_THRESHOLD))?;
        let mut t = Table::new(&COMPAT_COLS)?;
        compat_rows(&mut t, &[], &rep)?;
        t.save(out_dir, "compat.csv", &mut written)?;
        for e in rep.entries.iter().filter(|e| e.flagged) {
            println!("{} flagged: KS {:.3}", e.gamma_label, e.divergence);
        }
    } else {
        println!(
            "{} sample: no adjustment parameters, compatibility report skipped",
            s.method.label()
        );
    }
    let curve = acceptance_curve(&s.distances, grid)?;
    let mut t = Table::new(&["tolerance", "acceptance"])?;
    curve_rows(&mut t, &[], &curve)?;
    t.save(out_dir, "curve.csv", &mut written)?;
    println!("acceptance curve max deviation {:.4}", curve.max_deviation);
    Ok(0)
}

/// Fits the auxiliary GARCH(1,1)-t model to a returns file.
pub fn cmd_fit_aux(data: &Path, out_dir: Option<&Path>) -> CliResult<i32> {
    let y = ingest_returns(data)?;
    let fit = fit_aux_garch(&y, &DEFAULT_AUX_INIT, &AuxFitOptions::default())?;
    let value = json!({
        "n": y.len(),
        "beta": fit.beta,
        "loglik": fit.loglik,
        "score_norm": fit.score_norm,
        "converged": fit.converged,
        "evaluations": fit.evaluations,
    });
    println!("{}", serde_json::to_string_pretty(&value)?);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_atomic(
            &dir.join("aux_fit.json"),
            &serde_json::to_vec_pretty(&value)?,
        )?;
    }
    if fit.converged {
        Ok(0)
    } else {
        Err(CliError::Abc(AbcError::NotConverged(format!(
            "score norm {:.3e}",
            fit.score_norm
        ))))
    }
}
