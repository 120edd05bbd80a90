//! Derivative-free Nelder-Mead minimization with restarts.

#[derive(Clone, Copy, Debug)]
pub struct NelderMeadOptions {
    pub initial_step: f64,
    pub ftol: f64,
    pub xtol: f64,
    pub max_evals: usize,
    pub max_restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            ftol: 1e-12,
            xtol: 1e-9,
            max_evals: 5_000,
            max_restarts: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub restarts: usize,
    pub converged: bool,
}

/// Minimizes `f`. Non-finite objective values are treated as `+inf`, so an
/// objective can reject inadmissible points by returning NaN or infinity.
/// After each simplex collapse the search restarts from the incumbent until
/// a restart no longer improves the value by more than `ftol`.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], opts: &NelderMeadOptions) -> Minimum {
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut best = x0.to_vec();
    let mut best_val = eval(&best);
    let mut evaluations = 1;
    let mut converged = false;
    let mut restarts = 0;

    for round in 0..=opts.max_restarts {
        restarts = round;
        let (x, v, used, collapsed) = simplex_run(&eval, &best, best_val, opts);
        evaluations += used;
        let gain = best_val - v;
        if v <= best_val {
            best = x;
            best_val = v;
        }
        if collapsed && gain.abs() <= opts.ftol * (1.0 + best_val.abs()) {
            converged = true;
            break;
        }
    }

    Minimum {
        x: best,
        value: best_val,
        evaluations,
        restarts,
        converged,
    }
}

fn simplex_run(
    f: &impl Fn(&[f64]) -> f64,
    x0: &[f64],
    f0: f64,
    opts: &NelderMeadOptions,
) -> (Vec<f64>, f64, usize, bool) {
    let d = x0.len();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    let mut vals = Vec::with_capacity(d + 1);
    pts.push(x0.to_vec());
    vals.push(f0);
    let mut used = 0;
    for i in 0..d {
        let mut p = x0.to_vec();
        p[i] += if p[i] != 0.0 {
            opts.initial_step * p[i].abs().max(1.0)
        } else {
            opts.initial_step
        };
        vals.push(f(&p));
        used += 1;
        pts.push(p);
    }

    let mut collapsed = false;
    while used < opts.max_evals {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[d] - vals[0];
        let diameter = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread.is_finite()
            && spread <= opts.ftol * (1.0 + vals[0].abs())
            && diameter <= opts.xtol
        {
            collapsed = true;
            break;
        }

        let centroid: Vec<f64> = (0..d)
            .map(|j| pts[..d].iter().map(|p| p[j]).sum::<f64>() / d as f64)
            .collect();
        let toward = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[d])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = toward(-1.0);
        let fr = f(&xr);
        used += 1;
        if fr < vals[0] {
            let xe = toward(-2.0);
            let fe = f(&xe);
            used += 1;
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
        } else {
            let (xc, fc) = if fr < vals[d] {
                let xc = toward(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = toward(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            used += 1;
            if fc < vals[d].min(fr) {
                pts[d] = xc;
                vals[d] = fc;
            } else {
                for i in 1..=d {
                    let shrunk: Vec<f64> = pts[i]
                        .iter()
                        .zip(&pts[0])
                        .map(|(p, b)| b + 0.5 * (p - b))
                        .collect();
                    vals[i] = f(&shrunk);
                    pts[i] = shrunk;
                    used += 1;
                }
            }
        }
    }

    let (imin, _) = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty simplex");
    (pts[imin].clone(), vals[imin], used, collapsed)
}
