//! Local-linear regression adjustment of accepted draws.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::AcceptedSample;
use crate::error::{domain, usage, AbcError, Result};
use crate::robust::{varphi_values, Method};
use crate::summaries::SummaryVector;

/// Normalizing constant of the Epanechnikov kernel. Any positive constant
/// cancels in the weighted least-squares fit.
pub const EPANECHNIKOV_C: f64 = 0.75;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Equal weight on every accepted draw (ordinary least squares).
    #[default]
    Uniform,
    Epanechnikov,
}

/// `c/eps * (1 - (t/eps)^2)` on `[0, eps]`, zero beyond.
pub fn epanechnikov(t: f64, eps: f64) -> Result<f64> {
    epanechnikov_with(t, eps, EPANECHNIKOV_C)
}

fn epanechnikov_with(t: f64, eps: f64, c: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(domain(format!(
            "kernel bandwidth must be positive, got {eps}"
        )));
    }
    if !(t >= 0.0) {
        return Err(domain(format!(
            "kernel argument must be nonnegative, got {t}"
        )));
    }
    let r = t / eps;
    Ok(if r <= 1.0 {
        c / eps * (1.0 - r * r)
    } else {
        0.0
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionFit {
    /// Intercepts, one per parameter.
    pub mu: Vec<f64>,
    /// `beta[j][k]`: coefficient of regressor `j` for parameter `k`.
    pub beta: Vec<Vec<f64>>,
    pub kernel: Kernel,
    pub weights: Vec<f64>,
    /// Regressor covariance was singular; `beta` is zero.
    pub degenerate: bool,
}

/// Per-draw regressors and their observed counterpart for a sample.
///
/// Plain ABC regresses on η(z), R-ABC-S on η(z) + Γ and R-ABC-W on
/// Γ ⊙ (η(y) − η(z)), whose observed value is the zero vector.
pub fn regressors(s: &AcceptedSample, eta_y: &SummaryVector) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let d = eta_y.dim();
    let y = eta_y.values();
    let mut rows = Vec::with_capacity(s.draws.len());
    for draw in &s.draws {
        let z = draw.sim_summary.values();
        if z.len() != d {
            return Err(usage("observed and simulated summary dimensions differ"));
        }
        let gamma = || {
            draw.gamma
                .as_deref()
                .filter(|g| g.len() == d)
                .ok_or_else(|| usage("robust sample is missing gamma draws"))
        };
        rows.push(match s.method {
            Method::Abc => z.to_vec(),
            Method::RabcS => z.iter().zip(gamma()?).map(|(a, b)| a + b).collect(),
            Method::RabcW => varphi_values(y, z, gamma()?),
        });
    }
    let observed = match s.method {
        Method::RabcW => vec![0.0; d],
        _ => y.to_vec(),
    };
    Ok((rows, observed))
}

fn kernel_weights(s: &AcceptedSample, kernel: Kernel) -> Result<Vec<f64>> {
    match kernel {
        Kernel::Uniform => Ok(vec![1.0; s.draws.len()]),
        Kernel::Epanechnikov if s.epsilon > 0.0 => s
            .draws
            .iter()
            .map(|d| epanechnikov(d.distance, s.epsilon))
            .collect(),
        Kernel::Epanechnikov => {
            warn!("zero tolerance, falling back to uniform kernel weights");
            Ok(vec![1.0; s.draws.len()])
        }
    }
}

/// Weighted least-squares fit of the accepted θ on the method's regressors.
pub fn fit_adjustment(
    s: &AcceptedSample,
    eta_y: &SummaryVector,
    kernel: Kernel,
) -> Result<RegressionFit> {
    let d = eta_y.dim();
    if s.draws.len() < d + 2 {
        return Err(usage(format!(
            "regression adjustment needs at least {} accepted draws, got {}",
            d + 2,
            s.draws.len()
        )));
    }
    let (x, _) = regressors(s, eta_y)?;
    let theta = s.thetas();
    let weights = kernel_weights(s, kernel)?;
    let (mu, beta, degenerate) = weighted_ls(&x, &theta, &weights)?;
    Ok(RegressionFit {
        mu,
        beta,
        kernel,
        weights,
        degenerate,
    })
}

/// Centered weighted least squares of each column of `theta` on `x` with a
/// shared design. Returns `(mu, beta, degenerate)`.
pub fn weighted_ls(
    x: &[Vec<f64>],
    theta: &[Vec<f64>],
    w: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>, bool)> {
    let n = x.len();
    if n == 0 || theta.len() != n || w.len() != n {
        return Err(usage("regression inputs have inconsistent lengths"));
    }
    let (d, p) = (x[0].len(), theta[0].len());
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(domain("regression weights must be finite and nonnegative"));
    }
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(domain("regression weights sum to zero"));
    }

    let wmean = |col: &dyn Fn(usize) -> f64| (0..n).map(|i| w[i] * col(i)).sum::<f64>() / wsum;
    let xbar: Vec<f64> = (0..d).map(|j| wmean(&|i| x[i][j])).collect();
    let tbar: Vec<f64> = (0..p).map(|k| wmean(&|i| theta[i][k])).collect();

    let xc = DMatrix::from_fn(n, d, |i, j| x[i][j] - xbar[j]);
    let tc = DMatrix::from_fn(n, p, |i, k| theta[i][k] - tbar[k]);
    let wv = DVector::from_column_slice(w);
    let xw = DMatrix::from_fn(n, d, |i, j| xc[(i, j)] * wv[i]);
    let gram = xw.transpose() * &xc;
    let rhs = xw.transpose() * &tc;

    let fallback = || (tbar.clone(), vec![vec![0.0; p]; d], true);

    // Rescale to unit diagonal so singularity is judged independently of the
    // units of each regressor.
    let raw_scale: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| w[i] * x[i][j] * x[i][j]).sum::<f64>())
        .collect();
    for j in 0..d {
        let g = gram[(j, j)];
        if !(g > 1e-20 * raw_scale[j].max(f64::MIN_POSITIVE)) || !g.is_finite() {
            return Ok(fallback());
        }
    }
    let s = DVector::from_fn(d, |j, _| 1.0 / gram[(j, j)].sqrt());
    let corr = DMatrix::from_fn(d, d, |a, b| gram[(a, b)] * s[a] * s[b]);
    let eig = corr.clone().symmetric_eigenvalues();
    if eig.min() < 1e-12 {
        return Ok(fallback());
    }
    let Some(chol) = corr.cholesky() else {
        return Ok(fallback());
    };
    let scaled_rhs = DMatrix::from_fn(d, p, |j, k| rhs[(j, k)] * s[j]);
    let sol = chol.solve(&scaled_rhs);
    let beta: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..p).map(|k| sol[(j, k)] * s[j]).collect())
        .collect();
    if beta.iter().flatten().any(|b| !b.is_finite()) {
        return Err(AbcError::Numerical(
            "non-finite regression coefficients".into(),
        ));
    }
    let mu = (0..p)
        .map(|k| tbar[k] - (0..d).map(|j| beta[j][k] * xbar[j]).sum::<f64>())
        .collect();
    Ok((mu, beta, false))
}

/// `θ + β'(x_obs − x_i)` for every accepted draw. A degenerate fit passes
/// the draws through unchanged.
pub fn apply_adjustment(
    s: &AcceptedSample,
    fit: &RegressionFit,
    eta_y: &SummaryVector,
) -> Result<Vec<Vec<f64>>> {
    if fit.degenerate {
        warn!("degenerate regression fit, returning unadjusted draws");
        return Ok(s.thetas());
    }
    let (x, obs) = regressors(s, eta_y)?;
    if fit.beta.len() != obs.len() {
        return Err(usage("fit and summaries have different dimensions"));
    }
    Ok(s.draws
        .iter()
        .zip(&x)
        .map(|(draw, xi)| shift(&draw.theta, &fit.beta, &obs, xi))
        .collect())
}

fn shift(theta: &[f64], beta: &[Vec<f64>], obs: &[f64], xi: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .enumerate()
        .map(|(k, t)| {
            t + beta
                .iter()
                .zip(obs)
                .zip(xi)
                .map(|((b, o), x)| b[k] * (o - x))
                .sum::<f64>()
        })
        .collect()
}

/// Fit and apply in one step.
pub fn adjust(
    s: &AcceptedSample,
    eta_y: &SummaryVector,
    kernel: Kernel,
) -> Result<(RegressionFit, Vec<Vec<f64>>)> {
    let fit = fit_adjustment(s, eta_y, kernel)?;
    let draws = apply_adjustment(s, &fit, eta_y)?;
    Ok((fit, draws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::JointDraw;
    use crate::rng::RngStream;
    use crate::robust::GammaPrior;

    fn sample(
        method: Method,
        thetas: &[Vec<f64>],
        etas: &[Vec<f64>],
        gammas: Option<&[Vec<f64>]>,
    ) -> AcceptedSample {
        let draws: Vec<JointDraw> = thetas
            .iter()
            .zip(etas)
            .enumerate()
            .map(|(i, (t, e))| JointDraw {
                theta: t.clone(),
                gamma: gammas.map(|g| g[i].clone()),
                sim_summary: SummaryVector::unlabelled(e.clone()).unwrap(),
                distance: i as f64 / thetas.len() as f64,
                stream_id: i as u64,
            })
            .collect();
        AcceptedSample {
            method,
            epsilon: 1.0,
            n_total: draws.len(),
            n_failed: 0,
            accept_quantile: 1.0,
            gamma_prior: GammaPrior::None,
            theta_names: vec!["theta".into()],
            distances: draws.iter().map(|d| d.distance).collect(),
            draws,
        }
    }

    fn sv(v: &[f64]) -> SummaryVector {
        SummaryVector::unlabelled(v.to_vec()).unwrap()
    }

    /// Gauss-Jordan elimination on the uncentered normal equations with an
    /// intercept column.
    fn normal_equations_oracle(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
        let d = x[0].len() + 1;
        let row =
            |i: usize| -> Vec<f64> { std::iter::once(1.0).chain(x[i].iter().copied()).collect() };
        let mut a = vec![vec![0.0; d + 1]; d];
        for i in 0..x.len() {
            let r = row(i);
            for p in 0..d {
                for q in 0..d {
                    a[p][q] += w[i] * r[p] * r[q];
                }
                a[p][d] += w[i] * r[p] * y[i];
            }
        }
        for c in 0..d {
            let piv = (c..d)
                .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
                .unwrap();
            a.swap(c, piv);
            let lead = a[c][c];
            for v in a[c].iter_mut() {
                *v /= lead;
            }
            for r in 0..d {
                if r != c {
                    let f = a[r][c];
                    let src = a[c].clone();
                    for (v, s) in a[r].iter_mut().zip(&src) {
                        *v -= f * s;
                    }
                }
            }
        }
        a.iter().map(|r| r[d]).collect()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(epanechnikov(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(epanechnikov(0.0, 1.0).unwrap(), 0.75);
        assert_eq!(epanechnikov(2.0, 1.0).unwrap(), 0.0);
        assert!(epanechnikov(0.5, 0.0).is_err());
    }

    #[test]
    fn kernel_constant_cancels() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64 * 0.37).sin()]).collect();
        let t: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64 * 1.3).cos()]).collect();
        let dist: Vec<f64> = (0..12).map(|i| i as f64 / 12.0).collect();
        let wa: Vec<f64> = dist
            .iter()
            .map(|&u| epanechnikov_with(u, 1.0, 0.75).unwrap())
            .collect();
        let wb: Vec<f64> = dist
            .iter()
            .map(|&u| epanechnikov_with(u, 1.0, 1.0).unwrap())
            .collect();
        let a = weighted_ls(&x, &t, &wa).unwrap();
        let b = weighted_ls(&x, &t, &wb).unwrap();
        assert!((a.1[0][0] - b.1[0][0]).abs() < 1e-12);
        assert!((a.0[0] - b.0[0]).abs() < 1e-12);
    }

    #[test]
    fn exact_linear_recovered_and_collapses() {
        let etas: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.1 - 1.0]).collect();
        let thetas: Vec<Vec<f64>> = etas.iter().map(|e| vec![2.0 + 3.0 * e[0]]).collect();
        let s = sample(Method::Abc, &thetas, &etas, None);
        let y = sv(&[0.4]);
        let fit = fit_adjustment(&s, &y, Kernel::Uniform).unwrap();
        assert!(!fit.degenerate);
        assert!((fit.mu[0] - 2.0).abs() < 1e-10 && (fit.beta[0][0] - 3.0).abs() < 1e-10);
        let adj = apply_adjustment(&s, &fit, &y).unwrap();
        for a in &adj {
            assert!((a[0] - 3.2).abs() < 1e-10);
        }
    }

    #[test]
    fn six_point_epanechnikov_matches_oracle() {
        let xs = [0.3, -1.2, 0.8, 2.1, -0.4, 1.5];
        let ts = [1.1, -0.7, 2.0, 2.9, 0.1, 1.2];
        let etas: Vec<Vec<f64>> = xs.iter().map(|v| vec![*v]).collect();
        let thetas: Vec<Vec<f64>> = ts.iter().map(|v| vec![*v]).collect();
        let mut s = sample(Method::Abc, &thetas, &etas, None);
        s.epsilon = 1.2;
        for (d, t) in s.draws.iter_mut().zip([0.1, 0.3, 0.5, 0.7, 0.9, 1.1]) {
            d.distance = t;
        }
        let fit = fit_adjustment(&s, &sv(&[0.0]), Kernel::Epanechnikov).unwrap();
        let oracle = normal_equations_oracle(&etas, &ts, &fit.weights);
        assert!((fit.mu[0] - oracle[0]).abs() < 1e-10);
        assert!((fit.beta[0][0] - oracle[1]).abs() < 1e-10);
        assert!(fit.weights.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn constant_regressor_is_degenerate() {
        let etas = vec![vec![1.5, 0.2]; 10];
        let thetas: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let s = sample(Method::Abc, &thetas, &etas, None);
        let fit = fit_adjustment(&s, &sv(&[1.0, 1.0]), Kernel::Uniform).unwrap();
        assert!(fit.degenerate);
        assert_eq!(
            apply_adjustment(&s, &fit, &sv(&[1.0, 1.0])).unwrap(),
            thetas
        );
    }

    #[test]
    fn collinear_regressors_are_degenerate() {
        let etas: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64, 2.0 * i as f64 + 1.0])
            .collect();
        let thetas: Vec<Vec<f64>> = (0..10).map(|i| vec![(i * i) as f64]).collect();
        let s = sample(Method::Abc, &thetas, &etas, None);
        assert!(
            fit_adjustment(&s, &sv(&[0.0, 0.0]), Kernel::Uniform)
                .unwrap()
                .degenerate
        );
    }

    #[test]
    fn no_op_cases() {
        let mut st = RngStream::new(2, 0);
        let etas: Vec<Vec<f64>> = (0..25).map(|_| vec![st.standard_normal()]).collect();
        let thetas: Vec<Vec<f64>> = (0..25).map(|_| vec![st.standard_normal()]).collect();
        let s = sample(Method::Abc, &thetas, &etas, None);
        let fit = fit_adjustment(&s, &sv(&[0.3]), Kernel::Uniform).unwrap();
        let zero = RegressionFit {
            beta: vec![vec![0.0]],
            ..fit.clone()
        };
        assert_eq!(apply_adjustment(&s, &zero, &sv(&[0.3])).unwrap(), thetas);

        let same = vec![vec![0.3]; 25];
        let s2 = sample(Method::Abc, &thetas, &same, None);
        assert_eq!(apply_adjustment(&s2, &fit, &sv(&[0.3])).unwrap(), thetas);
    }

    #[test]
    fn robust_regressors() {
        let thetas = vec![vec![0.0]; 1];
        let etas = vec![vec![1.0, 2.0]];
        let g = vec![vec![0.5, 2.0]];
        let y = sv(&[3.0, 3.0]);
        let s = sample(Method::RabcS, &thetas, &etas, Some(&g));
        assert_eq!(
            regressors(&s, &y).unwrap(),
            (vec![vec![1.5, 4.0]], vec![3.0, 3.0])
        );
        let w = sample(Method::RabcW, &thetas, &etas, Some(&g));
        assert_eq!(
            regressors(&w, &y).unwrap(),
            (vec![vec![1.0, 2.0]], vec![0.0, 0.0])
        );
        let missing = sample(Method::RabcW, &thetas, &etas, None);
        assert!(regressors(&missing, &y).is_err());
    }

    #[test]
    fn too_few_draws() {
        let s = sample(
            Method::Abc,
            &[vec![0.0], vec![1.0], vec![2.0]],
            &[vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]],
            None,
        );
        assert!(matches!(
            fit_adjustment(&s, &sv(&[0.0, 0.0]), Kernel::Uniform),
            Err(AbcError::Usage(_))
        ));
    }

    fn instance(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut s = RngStream::new(seed, 0);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| s.standard_normal() * 3.0).collect())
            .collect();
        let t: Vec<Vec<f64>> = (0..n).map(|_| vec![s.standard_normal()]).collect();
        (x, t)
    }

    proptest::proptest! {
        #[test]
        fn ols_matches_oracle(seed in 0u64..10_000, d in 1usize..=3, extra in 2usize..=47) {
            let (x, t) = instance(seed, d + extra, d);
            let y: Vec<f64> = t.iter().map(|r| r[0]).collect();
            let w = vec![1.0; x.len()];
            let (mu, beta, deg) = weighted_ls(&x, &t, &w).unwrap();
            proptest::prop_assert!(!deg);
            let o = normal_equations_oracle(&x, &y, &w);
            proptest::prop_assert!((mu[0] - o[0]).abs() <= 1e-8);
            for j in 0..d {
                proptest::prop_assert!((beta[j][0] - o[j + 1]).abs() <= 1e-8);
            }
        }

        #[test]
        fn translation_equivariant(seed in 0u64..10_000, shift_by in -50.0f64..50.0) {
            let (x, t) = instance(seed, 20, 2);
            let y = sv(&[0.5, -0.5]);
            let s = sample(Method::Abc, &t, &x, None);
            let (_, a) = adjust(&s, &y, Kernel::Uniform).unwrap();
            let xs: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v + shift_by).collect()).collect();
            let ys = sv(&[0.5 + shift_by, -0.5 + shift_by]);
            let (_, b) = adjust(&sample(Method::Abc, &t, &xs, None), &ys, Kernel::Uniform).unwrap();
            for (p, q) in a.iter().zip(&b) {
                proptest::prop_assert!((p[0] - q[0]).abs() < 1e-9);
            }
        }

        #[test]
        fn adjusted_mean_identity(seed in 0u64..10_000) {
            let (x, t) = instance(seed, 30, 2);
            let y = sv(&[0.2, 1.0]);
            let s = sample(Method::Abc, &t, &x, None);
            let (fit, adj) = adjust(&s, &y, Kernel::Uniform).unwrap();
            let n = 30.0;
            let raw_mean = t.iter().map(|r| r[0]).sum::<f64>() / n;
            let adj_mean = adj.iter().map(|r| r[0]).sum::<f64>() / n;
            let xbar: Vec<f64> = (0..2).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
            let expect = raw_mean + (0..2).map(|j| fit.beta[j][0] * (y.values()[j] - xbar[j])).sum::<f64>();
            proptest::prop_assert!((adj_mean - expect).abs() < 1e-9);
        }
    }
}
