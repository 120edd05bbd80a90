//! Versioned CSV archive of an accepted sample.
//!
//! Every record starts with a tag. The header block (`rabc-archive`,
//! `method`, `gamma_prior`, `epsilon`, `n_total`, `n_failed`,
//! `accept_quantile`, `theta_names`, `summary_labels`) is followed by one
//! `draw` record per accepted draw
//! (`draw,stream_id,distance,theta..,eta..[,gamma..]`) and one `distance`
//! record per simulated draw, in index order.

use std::path::Path;

use rabc::engine::{AcceptedSample, JointDraw};
use rabc::robust::{GammaPrior, Method};
use rabc::SummaryVector;

use crate::error::{CliError, CliResult};
use crate::output::{num, write_atomic};

pub const ARCHIVE_VERSION: u32 = 1;
const MAGIC: &str = "rabc-archive";

pub fn write_archive(path: &Path, s: &AcceptedSample) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(Vec::new());
    w.write_record([MAGIC, &ARCHIVE_VERSION.to_string()])?;
    w.write_record(["method", s.method.label()])?;
    w.write_record(["gamma_prior", &serde_json::to_string(&s.gamma_prior)?])?;
    w.write_record(["epsilon", &num(s.epsilon)])?;
    w.write_record(["n_total", &s.n_total.to_string()])?;
    w.write_record(["n_failed", &s.n_failed.to_string()])?;
    w.write_record(["accept_quantile", &num(s.accept_quantile)])?;
    w.write_record(std::iter::once("theta_names").chain(s.theta_names.iter().map(String::as_str)))?;
    let labels = s.summary_labels().unwrap_or_default();
    w.write_record(std::iter::once("summary_labels").chain(labels.iter().map(String::as_str)))?;
    for d in &s.draws {
        let mut rec = vec!["draw".to_string(), d.stream_id.to_string(), num(d.distance)];
        rec.extend(d.theta.iter().map(|v| num(*v)));
        rec.extend(d.sim_summary.values().iter().map(|v| num(*v)));
        if let Some(g) = &d.gamma {
            rec.extend(g.iter().map(|v| num(*v)));
        }
        w.write_record(&rec)?;
    }
    for d in &s.distances {
        w.write_record(["distance", &num(*d)])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    write_atomic(path, &bytes)
}

pub fn read_archive(path: &Path) -> CliResult<AcceptedSample> {
    let bad = |msg: String| CliError::Archive {
        path: path.to_path_buf(),
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let mut records = rdr.records();
    let mut next = |what: &str| -> CliResult<csv::StringRecord> {
        let rec = records
            .next()
            .ok_or_else(|| bad(format!("truncated before `{what}`")))?
            .map_err(|e| bad(e.to_string()))?;
        if rec.get(0) != Some(what) {
            return Err(bad(format!(
                "expected `{what}` record, found {:?}",
                rec.get(0).unwrap_or("")
            )));
        }
        Ok(rec)
    };
    let magic = next(MAGIC)?;
    match magic.get(1).map(str::parse::<u32>) {
        Some(Ok(ARCHIVE_VERSION)) => {}
        Some(Ok(v)) => {
            return Err(bad(format!(
                "archive version {v} is not supported (expected {ARCHIVE_VERSION})"
            )))
        }
        _ => return Err(bad("unreadable archive version".into())),
    }
    let field = |rec: &csv::StringRecord| rec.get(1).unwrap_or("").to_string();
    let parse_f = |s: &str, what: &str| {
        s.parse::<f64>()
            .map_err(|_| bad(format!("bad {what} value {s:?}")))
    };
    let parse_u = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| bad(format!("bad {what} value {s:?}")))
    };

    let method_s = field(&next("method")?);
    let method =
        Method::parse(&method_s).ok_or_else(|| bad(format!("unknown method {method_s:?}")))?;
    let gamma_prior: GammaPrior = serde_json::from_str(&field(&next("gamma_prior")?))
        .map_err(|e| bad(format!("bad gamma prior: {e}")))?;
    let epsilon = parse_f(&field(&next("epsilon")?), "epsilon")?;
    let n_total = parse_u(&field(&next("n_total")?), "n_total")?;
    let n_failed = parse_u(&field(&next("n_failed")?), "n_failed")?;
    let accept_quantile = parse_f(&field(&next("accept_quantile")?), "accept_quantile")?;
    let theta_names: Vec<String> = next("theta_names")?
        .iter()
        .skip(1)
        .map(String::from)
        .collect();
    let labels: Vec<String> = next("summary_labels")?
        .iter()
        .skip(1)
        .map(String::from)
        .collect();
    let (p, d) = (theta_names.len(), labels.len());
    let robust = method.is_robust();
    let width = 3 + p + d + if robust { d } else { 0 };

    let mut draws = Vec::new();
    let mut distances = Vec::with_capacity(n_total);
    for rec in records {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        match rec.get(0) {
            Some("draw") => {
                if !distances.is_empty() {
                    return Err(bad("draw record after distance records".into()));
                }
                if rec.len() != width {
                    return Err(bad(format!(
                        "draw record has {} fields, expected {width}",
                        rec.len()
                    )));
                }
                let vals = rec
                    .iter()
                    .skip(2)
                    .map(|v| parse_f(v, "draw"))
                    .collect::<CliResult<Vec<f64>>>()?;
                let stream_id = parse_u(&rec[1], "stream_id")? as u64;
                let eta = SummaryVector::new(vals[1 + p..1 + p + d].to_vec(), labels.clone())?;
                draws.push(JointDraw {
                    theta: vals[1..1 + p].to_vec(),
                    gamma: robust.then(|| vals[1 + p + d..].to_vec()),
                    sim_summary: eta,
                    distance: vals[0],
                    stream_id,
                });
            }
            Some("distance") => distances.push(parse_f(rec.get(1).unwrap_or(""), "distance")?),
            other => return Err(bad(format!("unexpected record {:?}", other.unwrap_or("")))),
        }
    }
    if distances.len() != n_total {
        return Err(bad(format!(
            "{} distance records, expected {n_total}",
            distances.len()
        )));
    }
    if draws.is_empty() {
        return Err(bad("no accepted draws".into()));
    }
    Ok(AcceptedSample {
        method,
        draws,
        epsilon,
        n_total,
        n_failed,
        accept_quantile,
        gamma_prior,
        theta_names,
        distances,
    })
}
