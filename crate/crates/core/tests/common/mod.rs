//! Independent reference computations shared by the test targets.
#![allow(dead_code)]

use sdebatch::model::ModelSpec;
use sdebatch::rng::normals_for_step;
use sdebatch::solvers::{euler_maruyama_step, euler_step, implicit_euler_step, implicit_midpoint_step, rk4_step, ImplicitOptions, Solver};

/// Least-squares slope of `ln err` against `ln dt`.
pub fn loglog_slope(dts: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub struct GbmErrors {
    pub dts: Vec<f64>,
    pub strong: Vec<f64>,
    pub weak: Vec<f64>,
}

/// Euler-Maruyama on `dX = mu X dt + sigma X dW`, `X(0) = 1`, against the
/// exact solution driven by the same Brownian path.
///
/// Each path draws `2^levels` fine increments over `[0, T]`; the coarser
/// step sizes sum them. Strong error is `E|X_T - X(T)|`; weak error is
/// `|E[X_T - X(T)]|`, whose estimator has variance of the strong-error
/// order instead of the variance of `X(T)`.
pub fn gbm_errors(mu: f64, sigma: f64, t_end: f64, levels: u32, coarsest: u32, paths: usize, seed: u64) -> GbmErrors {
    let model = ModelSpec::from_expressions("gbm", 1, 2, 1, "p[0]*y[i]", Some("p[1]*y[i]*n[i]")).unwrap();
    let p = [mu, sigma];
    let fine = 1usize << levels;
    let dt_fine = t_end / fine as f64;
    let ls: Vec<u32> = (coarsest..=levels).collect();
    let mut abs_sum = vec![0.0; ls.len()];
    let mut signed_sum = vec![0.0; ls.len()];
    let mut dw = vec![0.0; fine];
    for path in 0..paths {
        for (k, w) in dw.iter_mut().enumerate() {
            *w = normals_for_step(seed, path as u32, k as u64, 1)[0] * dt_fine.sqrt();
        }
        let w_total: f64 = dw.iter().sum();
        let exact = ((mu - 0.5 * sigma * sigma) * t_end + sigma * w_total).exp();
        for (slot, &l) in ls.iter().enumerate() {
            let steps = 1usize << l;
            let stride = fine / steps;
            let dt = t_end / steps as f64;
            let mut y = [1.0];
            for s in 0..steps {
                let inc: f64 = dw[s * stride..(s + 1) * stride].iter().sum();
                let xi = [inc / dt.sqrt()];
                y[0] = euler_maruyama_step(&model, s as f64 * dt, &y, &p, dt, &xi).unwrap().y_next[0];
            }
            abs_sum[slot] += (y[0] - exact).abs();
            signed_sum[slot] += y[0] - exact;
        }
    }
    let m = paths as f64;
    GbmErrors {
        dts: ls.iter().map(|&l| t_end / (1u64 << l) as f64).collect(),
        strong: abs_sum.iter().map(|s| s / m).collect(),
        weak: signed_sum.iter().map(|s| (s / m).abs()).collect(),
    }
}

/// Global error at `t = 1` of `dy/dt = -y`, `y(0) = 1`, for each step size.
pub fn decay_errors(solver: Solver, dts: &[f64]) -> Vec<f64> {
    let model = ModelSpec::from_expressions("decay", 1, 0, 0, "-y[i]", None).unwrap();
    let opts = ImplicitOptions::default();
    dts.iter()
        .map(|&dt| {
            let steps = (1.0 / dt).round() as usize;
            let mut y = vec![1.0];
            for s in 0..steps {
                let t = s as f64 * dt;
                let r = match solver {
                    Solver::Euler => euler_step(&model, t, &y, &[], dt),
                    Solver::Rk4 => rk4_step(&model, t, &y, &[], dt),
                    Solver::Ie => implicit_euler_step(&model, t, &y, &[], dt, opts),
                    Solver::Im => implicit_midpoint_step(&model, t, &y, &[], dt, opts),
                    Solver::Em => euler_maruyama_step(&model, t, &y, &[], dt, &[]),
                };
                y = r.unwrap().y_next;
            }
            (y[0] - (-1.0f64).exp()).abs()
        })
        .collect()
}

/// Two-pass mean and population standard deviation.
pub fn two_pass(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
