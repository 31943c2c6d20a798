//! Least-squares fits for scan data: damped cosines, decays and
//! fixed-frequency cosines.
//!
//! Decay constants are fitted as rates `kappa = 1/tau` so that a flat signal
//! gives `kappa ~ 0` and an infinite lifetime instead of a diverging
//! parameter.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Envelope {
    #[default]
    Exponential,
    Gaussian,
}

impl Envelope {
    /// Envelope value and d/dkappa at time t.
    fn eval(self, kappa: f64, t: f64) -> (f64, f64) {
        match self {
            Envelope::Exponential => {
                let e = (-kappa * t).exp();
                (e, -t * e)
            }
            Envelope::Gaussian => {
                let e = (-(kappa * t).powi(2)).exp();
                (e, -2.0 * kappa * t * t * e)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative step size below which the fit is converged.
    pub xtol: f64,
    /// Gradient max-norm below which the fit is converged.
    pub gtol: f64,
    /// Per-point weights (inverse variances). Uniform when `None`.
    pub weights: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            xtol: 1e-10,
            gtol: 1e-12,
            weights: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    /// Diagonal of sigma^2 (J^T W J)^-1, a linearized variance estimate;
    /// infinite when the normal matrix is singular.
    pub covariance_diag: Vec<f64>,
    /// sqrt(sum w r^2)
    pub residual_norm: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub n_iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.covariance_diag[i].sqrt())
    }

    /// 1/kappa for fits with a `rate` parameter; infinite when no decay was
    /// resolved.
    pub fn tau_us(&self) -> Option<f64> {
        self.get("rate").map(|k| if k > 0.0 { 1.0 / k } else { f64::INFINITY })
    }
}

type Model<'a> = dyn Fn(f64, &[f64], &mut [f64]) -> f64 + 'a;

fn check_data(t: &[f64], y: &[f64], n_params: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if t.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: t.len(),
            found: y.len(),
        });
    }
    if t.len() < n_params {
        return Err(Error::RankDeficient(format!(
            "{} data points for {n_params} parameters",
            t.len()
        )));
    }
    if let Some(&bad) = t.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(Error::NotFinite(bad));
    }
    match weights {
        None => Ok(vec![1.0; t.len()]),
        Some(w) => {
            if w.len() != t.len() {
                return Err(Error::DimensionMismatch {
                    expected: t.len(),
                    found: w.len(),
                });
            }
            if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::InvalidParameter("fit weights must be finite and >= 0".into()));
            }
            Ok(w.to_vec())
        }
    }
}

struct Evaluation {
    residuals: DVector<f64>,
    jacobian: DMatrix<f64>,
    cost: f64,
}

fn evaluate(model: &Model, t: &[f64], y: &[f64], w: &[f64], p: &[f64]) -> Evaluation {
    let n = t.len();
    let m = p.len();
    let mut residuals = DVector::zeros(n);
    let mut jacobian = DMatrix::zeros(n, m);
    let mut row = vec![0.0; m];
    let mut cost = 0.0;
    for i in 0..n {
        let sw = w[i].sqrt();
        let r = (model(t[i], p, &mut row) - y[i]) * sw;
        residuals[i] = r;
        cost += r * r;
        for (j, &d) in row.iter().enumerate() {
            jacobian[(i, j)] = d * sw;
        }
    }
    Evaluation {
        residuals,
        jacobian,
        cost,
    }
}

/// Levenberg-Marquardt with Marquardt diagonal scaling.
fn levenberg_marquardt(
    model: &Model,
    names: &[&str],
    t: &[f64],
    y: &[f64],
    p0: Vec<f64>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let w = check_data(t, y, p0.len(), opts.weights.as_deref())?;
    let m = p0.len();
    let mut p = p0;
    let mut ev = evaluate(model, t, y, &w, &p);
    if !ev.cost.is_finite() {
        return Err(Error::NotFinite(ev.cost));
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let jt = ev.jacobian.transpose();
        let a = &jt * &ev.jacobian;
        let g = &jt * &ev.residuals;
        if g.amax() < opts.gtol || ev.cost == 0.0 {
            converged = true;
            break;
        }
        let max_diag = (0..m).map(|i| a[(i, i)]).fold(0.0, f64::max).max(1e-300);
        let mut accepted = None;
        let mut rejected = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for i in 0..m {
                damped[(i, i)] += lambda * a[(i, i)].max(1e-12 * max_diag);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_ev = evaluate(model, t, y, &w, &trial);
            if trial_ev.cost.is_finite() && trial_ev.cost <= ev.cost {
                lambda = (lambda / 3.0).max(1e-12);
                accepted = Some((trial, trial_ev, step));
                break;
            }
            lambda *= 4.0;
            rejected = true;
        }
        let Some((trial, trial_ev, step)) = accepted else {
            // no downhill step exists at machine precision
            converged = true;
            break;
        };
        // a step shrunk by heavy damping says nothing about convergence
        let small = !rejected
            && step.iter().zip(&trial).all(|(d, x)| d.abs() <= opts.xtol * (x.abs() + opts.xtol));
        p = trial;
        ev = trial_ev;
        if small {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(opts.max_iterations));
    }
    // Near the minimum the cost is flat to rounding while J^T r is still
    // accurate, so finish with undamped steps judged by the gradient.
    let grad = |ev: &Evaluation| (ev.jacobian.transpose() * &ev.residuals).amax();
    for _ in 0..5 {
        let jt = ev.jacobian.transpose();
        let Some(chol) = (&jt * &ev.jacobian).cholesky() else { break };
        let step = chol.solve(&(-(&jt * &ev.residuals)));
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let trial_ev = evaluate(model, t, y, &w, &trial);
        if !(grad(&trial_ev) < grad(&ev)) {
            break;
        }
        p = trial;
        ev = trial_ev;
    }
    Ok(summarize(model, names, t, y, &w, p, iterations))
}

/// Fit statistics at the parameters `p`.
fn summarize(model: &Model, names: &[&str], t: &[f64], y: &[f64], w: &[f64], p: Vec<f64>, iterations: usize) -> FitResult {
    let ev = evaluate(model, t, y, w, &p);
    let (n, m) = (t.len(), p.len());
    let jt = ev.jacobian.transpose();
    let a = &jt * &ev.jacobian;
    let gradient_norm = (&jt * &ev.residuals).amax();
    let dof = n.saturating_sub(m);
    let s2 = if dof > 0 { ev.cost / dof as f64 } else { 0.0 };
    let covariance_diag = match a.try_inverse() {
        Some(inv) => (0..m).map(|i| (s2 * inv[(i, i)]).max(0.0)).collect(),
        None => vec![f64::INFINITY; m],
    };
    FitResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        values: p,
        covariance_diag,
        residual_norm: ev.cost.sqrt(),
        gradient_norm,
        converged: true,
        n_iterations: iterations,
    }
}

fn wrap_phase(phi: f64) -> f64 {
    let mut x = phi.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

fn mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

fn is_uniform(t: &[f64]) -> bool {
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    dt > 0.0
        && t
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-6 * dt.abs())
}

/// Dominant nonzero frequency (MHz for times in us) of a mean-subtracted
/// signal. Uniform grids go through a zero-padded FFT; other grids use a
/// direct periodogram on the same frequency grid. The peak is refined by
/// parabolic interpolation.
pub fn spectral_peak(t: &[f64], y: &[f64]) -> Result<f64> {
    if t.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: t.len(),
            found: y.len(),
        });
    }
    if t.len() < 4 {
        return Err(Error::Degenerate(format!(
            "spectral estimate needs at least 4 points, got {}",
            t.len()
        )));
    }
    let mu = mean(y);
    let centered: Vec<f64> = y.iter().map(|v| v - mu).collect();
    let spread = centered.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if !(spread > 1e-14) {
        return Err(Error::Degenerate("signal is constant".into()));
    }
    let n = t.len();
    let span = t[n - 1] - t[0];
    if !(span > 0.0) {
        return Err(Error::Degenerate("time points span zero width".into()));
    }
    let dt = span / (n - 1) as f64;
    let padded = (16 * n).next_power_of_two();
    let df = 1.0 / (padded as f64 * dt);
    let n_bins = padded / 2;

    let power: Vec<f64> = if is_uniform(t) {
        let mut buf: Vec<Complex<f64>> = centered.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(padded, Complex::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
        buf[..n_bins].iter().map(|z| z.norm_sqr()).collect()
    } else {
        (0..n_bins)
            .map(|k| {
                let f = k as f64 * df;
                let (mut re, mut im) = (0.0, 0.0);
                for (&ti, &yi) in t.iter().zip(&centered) {
                    let (s, c) = (2.0 * PI * f * (ti - t[0])).sin_cos();
                    re += yi * c;
                    im -= yi * s;
                }
                re * re + im * im
            })
            .collect()
    };
    let (k, _) = power
        .iter()
        .enumerate()
        .skip(1)
        .fold((1, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
    let shift = if k + 1 < power.len() {
        let (a, b, c) = (power[k - 1], power[k], power[k + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 }
    } else {
        0.0
    };
    Ok((k as f64 + shift) * df)
}

/// Linear least squares for y = A cos(2 pi f t + phi) + C at fixed f.
/// Reports `amplitude` >= 0, `phase` in (-pi, pi] and `offset`.
pub fn fit_cosine_fixed_frequency(
    t: &[f64],
    y: &[f64],
    frequency_mhz: f64,
    weights: Option<&[f64]>,
) -> Result<FitResult> {
    let w = check_data(t, y, 3, weights)?;
    let n = t.len();
    let mut design = DMatrix::zeros(n, 3);
    let mut rhs = DVector::zeros(n);
    for i in 0..n {
        let sw = w[i].sqrt();
        let (s, c) = (2.0 * PI * frequency_mhz * t[i]).sin_cos();
        design[(i, 0)] = c * sw;
        design[(i, 1)] = s * sw;
        design[(i, 2)] = sw;
        rhs[i] = y[i] * sw;
    }
    let normal = design.transpose() * &design;
    let inv = normal
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("cosine and constant columns are degenerate".into()))?;
    let coef = &inv * (design.transpose() * &rhs);
    let resid = &design * &coef - &rhs;
    let cost = resid.norm_squared();
    let (a, b, c) = (coef[0], coef[1], coef[2]);
    let amplitude = a.hypot(b);
    // A cos(x + phi) = A cos(phi) cos x - A sin(phi) sin x
    let phase = wrap_phase((-b).atan2(a));
    let s2 = if n > 3 { cost / (n - 3) as f64 } else { 0.0 };
    let var_a = s2 * inv[(0, 0)];
    let var_b = s2 * inv[(1, 1)];
    let cov_ab = s2 * inv[(0, 1)];
    let (amp_var, phase_var) = if amplitude > 0.0 {
        let (ua, ub) = (a / amplitude, b / amplitude);
        let va = ua * ua * var_a + ub * ub * var_b + 2.0 * ua * ub * cov_ab;
        let vp = (ub * ub * var_a + ua * ua * var_b - 2.0 * ua * ub * cov_ab) / (amplitude * amplitude);
        (va.max(0.0), vp.max(0.0))
    } else {
        (var_a.max(var_b).max(0.0), f64::INFINITY)
    };
    Ok(FitResult {
        names: vec!["amplitude".into(), "phase".into(), "offset".into()],
        values: vec![amplitude, phase, c],
        covariance_diag: vec![amp_var, phase_var, (s2 * inv[(2, 2)]).max(0.0)],
        residual_norm: cost.sqrt(),
        gradient_norm: 0.0,
        converged: true,
        n_iterations: 1,
    })
}

/// Initial decay rate from the fixed-frequency amplitude in each half of
/// the record.
fn initial_rate(t: &[f64], y: &[f64], freq: f64, envelope: Envelope) -> f64 {
    let n = t.len();
    let span = t[n - 1] - t[0];
    let fallback = 0.3 / span;
    if n < 8 {
        return fallback;
    }
    let h = n / 2;
    let half = |range: std::ops::Range<usize>| {
        let fit = fit_cosine_fixed_frequency(&t[range.clone()], &y[range.clone()], freq, None).ok()?;
        Some((fit.get("amplitude")?, mean(&t[range])))
    };
    let (Some((a1, t1)), Some((a2, t2))) = (half(0..h), half(h..n)) else {
        return fallback;
    };
    if !(a1 > 0.0 && a2 > 0.0) || a2 >= a1 {
        return 0.1 / span;
    }
    let k = match envelope {
        Envelope::Exponential => (a1 / a2).ln() / (t2 - t1),
        Envelope::Gaussian => ((a1 / a2).ln() / (t2 * t2 - t1 * t1).max(1e-300)).sqrt(),
    };
    if k.is_finite() { k } else { fallback }
}

/// y = A env(kappa, t) cos(2 pi f t + phi) + C.
///
/// Parameters `amplitude`, `frequency_mhz`, `phase`, `rate`, `offset`.
pub fn fit_damped_cosine(t: &[f64], y: &[f64], envelope: Envelope, opts: &FitOptions) -> Result<FitResult> {
    check_data(t, y, 6, opts.weights.as_deref())?;
    let f0 = spectral_peak(t, y)?;
    let k0 = initial_rate(t, y, f0, envelope);
    let lin = fit_cosine_fixed_frequency(t, y, f0, opts.weights.as_deref())?;
    let t_mid = mean(t);
    let (env_mid, _) = envelope.eval(k0, t_mid);
    let a0 = lin.values[0] / env_mid.max(1e-3);
    let p0 = vec![a0, f0, lin.values[1], k0, lin.values[2]];

    let model = move |ti: f64, p: &[f64], d: &mut [f64]| {
        let (a, f, phi, k) = (p[0], p[1], p[2], p[3]);
        let (env, denv) = envelope.eval(k, ti);
        let (s, c) = (2.0 * PI * f * ti + phi).sin_cos();
        d[0] = env * c;
        d[1] = -a * env * s * 2.0 * PI * ti;
        d[2] = -a * env * s;
        d[3] = a * denv * c;
        d[4] = 1.0;
        a * env * c + p[4]
    };
    let names = ["amplitude", "frequency_mhz", "phase", "rate", "offset"];
    let mut fit = levenberg_marquardt(&model, &names, t, y, p0, opts)?;
    let v = &mut fit.values;
    if v[1] < 0.0 {
        v[1] = -v[1];
        v[2] = -v[2];
    }
    if v[0] < 0.0 {
        v[0] = -v[0];
        v[2] += PI;
    }
    v[2] = wrap_phase(v[2]);
    if envelope == Envelope::Gaussian {
        v[3] = v[3].abs();
    }
    Ok(fit)
}

/// y = A env(kappa, t) + C, with C fixed when `floor` is given.
///
/// Parameters `amplitude`, `rate` and, when free, `offset`.
pub fn fit_decay(
    t: &[f64],
    y: &[f64],
    envelope: Envelope,
    floor: Option<f64>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let w = check_data(t, y, 4, opts.weights.as_deref())?;
    // exponentials are fitted on t - t0, so a shifted time axis gives the
    // identical problem and only the reported amplitude changes
    let t0 = match envelope {
        Envelope::Exponential => t[0],
        Envelope::Gaussian => 0.0,
    };
    let ts: Vec<f64> = t.iter().map(|x| x - t0).collect();
    let n = t.len();
    let tail = (n / 5).max(1);
    let c0 = floor.unwrap_or_else(|| mean(&y[n - tail..]));
    let a0 = y[0] - c0;
    let span = ts[n - 1] - ts[0];
    // first time the excess over the floor drops below 1/e of its start
    let t_e = ts
        .iter()
        .zip(y)
        .find(|(_, &v)| a0 != 0.0 && (v - c0) / a0 < (-1.0_f64).exp())
        .map(|(&ti, _)| ti - ts[0]);
    let k0 = match t_e {
        Some(te) if te > 0.0 => 1.0 / te,
        _ => 0.3 / span.max(1e-300),
    };
    let a0 = a0 / envelope.eval(k0, ts[0]).0.max(1e-3);

    let fixed = move |c: f64| {
        move |ti: f64, p: &[f64], d: &mut [f64]| {
            let (env, denv) = envelope.eval(p[1], ti);
            d[0] = env;
            d[1] = p[0] * denv;
            p[0] * env + c
        }
    };
    let free = move |ti: f64, p: &[f64], d: &mut [f64]| {
        let (env, denv) = envelope.eval(p[1], ti);
        d[0] = env;
        d[1] = p[0] * denv;
        d[2] = 1.0;
        p[0] * env + p[2]
    };
    let mut fit = match floor {
        Some(c) => levenberg_marquardt(&fixed(c), &["amplitude", "rate"], &ts, y, vec![a0, k0], opts)?,
        None => levenberg_marquardt(&free, &["amplitude", "rate", "offset"], &ts, y, vec![a0, k0, c0], opts)?,
    };
    if envelope == Envelope::Gaussian {
        fit.values[1] = fit.values[1].abs();
    }
    if t0 != 0.0 {
        let mut p = fit.values.clone();
        p[0] *= (p[1] * t0).exp();
        let names: Vec<&str> = fit.names.iter().map(String::as_str).collect();
        let iterations = fit.n_iterations;
        fit = match floor {
            Some(c) => summarize(&fixed(c), &names, t, y, &w, p, iterations),
            None => summarize(&free, &names, t, y, &w, p, iterations),
        };
    }
    Ok(fit)
}
