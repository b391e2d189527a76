//! Nonlinear least squares and derivative-free minimizers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative decrease of the cost falls below this.
    pub ftol: f64,
    /// Stop when the relative parameter step falls below this.
    pub xtol: f64,
    /// Per-parameter box constraints.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 500, ftol: 1e-15, xtol: 1e-13, bounds: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeastSquaresFit {
    pub params: Vec<f64>,
    /// `s^2 (J^T J)^-1` with `s^2` the residual variance.
    pub covariance: Vec<Vec<f64>>,
    pub stderr: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub dof: usize,
    pub iterations: usize,
}

fn clamp_into(x: &mut [f64], bounds: Option<&Vec<(f64, f64)>>) {
    if let Some(b) = bounds {
        for (v, &(lo, hi)) in x.iter_mut().zip(b) {
            *v = v.clamp(lo, hi);
        }
    }
}

fn jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: &F, x: &[f64], r0: &[f64], bounds: Option<&Vec<(f64, f64)>>) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let h = 1e-7 * x[k].abs().max(1e-3);
        let (lo, hi) = bounds.map_or((f64::NEG_INFINITY, f64::INFINITY), |b| b[k]);
        let up = (x[k] + h).min(hi);
        let dn = (x[k] - h).max(lo);
        xp[k] = up;
        let rp = f(&xp);
        xp[k] = dn;
        let rm = f(&xp);
        xp[k] = x[k];
        let width = up - dn;
        if width <= 0.0 {
            continue;
        }
        for i in 0..r0.len() {
            j[(i, k)] = (rp[i] - rm[i]) / width;
        }
    }
    j
}

/// Minimize `sum r_i(x)^2` by Levenberg-Marquardt with a central-difference
/// Jacobian.
pub fn levenberg_marquardt<F>(residuals: F, x0: &[f64], opts: &LmOptions) -> Result<LeastSquaresFit>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let k = x0.len();
    let bounds = opts.bounds.as_ref();
    if let Some(b) = bounds {
        if b.len() != k {
            return Err(Error::Validation(format!("{} bounds for {k} parameters", b.len())));
        }
    }
    let mut x = x0.to_vec();
    clamp_into(&mut x, bounds);
    let mut r = residuals(&x);
    let n = r.len();
    if n < k {
        return Err(Error::Fit(format!("{n} residuals cannot determine {k} parameters")));
    }
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    if !cost.is_finite() {
        return Err(Error::Fit("non-finite residuals at the starting point".into()));
    }
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut j = jacobian(&residuals, &x, &r, bounds);
    while iterations < opts.max_iterations {
        iterations += 1;
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        let mut improved = false;
        let mut small_step = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for d in 0..k {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-30);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp_into(&mut trial, bounds);
            let rt = residuals(&trial);
            let ct: f64 = rt.iter().map(|v| v * v).sum();
            let rel_step = x
                .iter()
                .zip(&trial)
                .map(|(a, b)| (a - b).abs() / a.abs().max(1e-12))
                .fold(0.0, f64::max);
            if ct.is_finite() && ct <= cost {
                let decrease = cost - ct;
                x = trial;
                r = rt;
                let old = cost;
                cost = ct;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                small_step = rel_step < opts.xtol || decrease <= opts.ftol * old.max(1e-300);
                break;
            }
            lambda *= 4.0;
            if rel_step < opts.xtol {
                small_step = true;
                break;
            }
        }
        if improved {
            j = jacobian(&residuals, &x, &r, bounds);
        }
        if !improved || small_step {
            break;
        }
    }
    let dof = n.saturating_sub(k);
    let s2 = if dof > 0 { cost / dof as f64 } else { 0.0 };
    let jtj = j.transpose() * &j;
    let cov = jtj
        .clone()
        .try_inverse()
        .or_else(|| jtj.pseudo_inverse(1e-300).ok())
        .ok_or_else(|| Error::Fit("singular normal matrix".into()))?
        * s2;
    let stderr = (0..k).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let covariance = (0..k).map(|i| (0..k).map(|c| cov[(i, c)]).collect()).collect();
    Ok(LeastSquaresFit { params: x, covariance, stderr, cost, dof, iterations })
}

/// Fit `y = model(x, params)` to data by least squares.
pub fn curve_fit<M>(model: M, xs: &[f64], ys: &[f64], p0: &[f64], opts: &LmOptions) -> Result<LeastSquaresFit>
where
    M: Fn(f64, &[f64]) -> f64,
{
    if xs.len() != ys.len() {
        return Err(Error::Validation(format!("{} abscissae for {} ordinates", xs.len(), ys.len())));
    }
    levenberg_marquardt(|p| xs.iter().zip(ys).map(|(&x, &y)| model(x, p) - y).collect(), p0, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Nelder-Mead simplex minimization from `x0` with initial edge `step`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: &[f64], tol: f64, max_evals: usize) -> Minimum {
    let n = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step[i];
        let v = eval(&x);
        simplex.push((x, v));
    }
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect() };
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = (simplex[n].1 - simplex[0].1).abs();
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (spread <= tol * (simplex[0].1.abs() + tol) && size <= tol.sqrt()) || size < 1e-15 || evals.get() >= max_evals {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let reflected = lerp(&centroid, &worst.0, -1.0);
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = lerp(&centroid, &worst.0, -2.0);
            let fe = eval(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (target, ft) = if fr < worst.1 { (reflected, fr) } else { (worst.0.clone(), worst.1) };
            let contracted = lerp(&centroid, &target, 0.5);
            let fc = eval(&contracted);
            if fc < ft {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    s.0 = lerp(&best, &s.0, 0.5);
                    s.1 = eval(&s.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum { x, value, evaluations: evals.get() }
}

/// Golden-section search for a minimum of a unimodal function on `[a, b]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Ordinary least-squares polynomial fit; returns coefficients (lowest
/// order first) and the coefficient of determination.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<(Vec<f64>, f64)> {
    if xs.len() != ys.len() || xs.len() <= degree {
        return Err(Error::Validation(format!("{} points cannot fit degree {degree}", xs.len())));
    }
    let a = DMatrix::from_fn(xs.len(), degree + 1, |i, j| xs[i].powi(j as i32));
    let y = DVector::from_column_slice(ys);
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let pred = &a * &coef;
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_res: f64 = (&y - pred).iter().map(|r| r * r).sum();
    let ss_tot: f64 = ys.iter().map(|v| (v - mean).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok((coef.iter().copied().collect(), r2))
}
