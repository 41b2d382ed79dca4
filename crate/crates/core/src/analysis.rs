//! Quantities extracted from simulated traces: oscillation frequencies,
//! decay constants, efficiencies and phase response.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dynamics::TraceRecord;
use crate::error::{Error, Result};
use crate::model::ModeParams;
use crate::units::TWO_PI;

/// Named estimates from a least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<(String, f64)>,
    pub residual_rms: f64,
    /// Linearized parameter covariance, ordered like `params`.
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Set when the data cannot constrain the model (e.g. a flat decay curve).
    pub degenerate: bool,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// One-sigma uncertainty of a parameter, when a covariance is available.
    pub fn sigma(&self, name: &str) -> Option<f64> {
        let i = self.params.iter().position(|(n, _)| n == name)?;
        self.covariance.as_ref().map(|c| c[i][i].max(0.0).sqrt())
    }

    /// Flat `prefix.key = value` lines.
    pub fn to_block(&self, prefix: &str) -> String {
        let mut out = String::new();
        for (name, v) in &self.params {
            let _ = writeln!(out, "{prefix}.{name} = {v:e}");
            if let Some(s) = self.sigma(name) {
                let _ = writeln!(out, "{prefix}.{name}.sigma = {s:e}");
            }
        }
        let _ = writeln!(out, "{prefix}.residual_rms = {:e}", self.residual_rms);
        let _ = writeln!(out, "{prefix}.degenerate = {}", self.degenerate);
        out
    }
}

/// Subtract the least-squares line through `y` sampled at unit spacing.
fn detrend(y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (v - y_mean);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    y.iter().enumerate().map(|(i, v)| v - y_mean - slope * (i as f64 - x_mean)).collect()
}

/// Dominant angular frequency of a uniformly sampled real series.
///
/// The series is detrended, Hann windowed and zero-padded to eight times its
/// length; the strongest bin is refined by a parabola through its neighbours.
pub fn oscillation_frequency(series: &[f64], dt: f64) -> Result<f64> {
    let n = series.len();
    if n < 16 {
        return Err(Error::validation(format!("need at least 16 samples, got {n}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation("sample spacing must be positive"));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("series contains non-finite values"));
    }
    let scale = series.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let flat = detrend(series);
    let spread = flat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || spread <= 1e-12 * scale {
        return Err(Error::NoOscillation);
    }

    let len = 8 * n;
    let mut buf: Vec<Complex64> = flat
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w = 0.5 - 0.5 * (TWO_PI * i as f64 / (n - 1) as f64).cos();
            Complex64::new(v * w, 0.0)
        })
        .collect();
    buf.resize(len, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);

    let mag: Vec<f64> = buf[..=len / 2].iter().map(|c| c.norm()).collect();
    let (k, _) = mag
        .iter()
        .enumerate()
        .skip(1)
        .fold((1, f64::NEG_INFINITY), |best, (i, &m)| if m > best.1 { (i, m) } else { best });
    let offset = if k + 1 < mag.len() {
        let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
        let denom = a - 2.0 * b + c;
        if denom != 0.0 {
            0.5 * (a - c) / denom
        } else {
            0.0
        }
    } else {
        0.0
    };
    let freq = (k as f64 + offset) / (len as f64 * dt);
    if freq < 1.0 / (n as f64 * dt) {
        return Err(Error::NoOscillation);
    }
    Ok(TWO_PI * freq)
}

/// Least-squares fit of `A·exp(−t/τ) + c` to `(t, energy)` points.
///
/// Parameters are reported as `amplitude`, `tau` and `offset`. A flat series
/// gives `tau = inf` with the result flagged degenerate.
pub fn fit_exponential_decay(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 4 {
        return Err(Error::validation(format!("need at least 4 points, got {}", points.len())));
    }
    for w in points.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(Error::validation("decay times must be strictly increasing"));
        }
    }
    if points.iter().any(|&(t, y)| !t.is_finite() || !y.is_finite() || y < 0.0) {
        return Err(Error::validation("energies must be finite and >= 0"));
    }
    let n = points.len();
    let (ymin, ymax) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let mean = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let t0 = points[0].0;
    let span = points[n - 1].0 - t0;

    let degenerate = |offset: f64, rms: f64| FitResult {
        params: vec![("amplitude".into(), 0.0), ("tau".into(), f64::INFINITY), ("offset".into(), offset)],
        residual_rms: rms,
        covariance: None,
        degenerate: true,
    };
    if ymax - ymin <= 1e-9 * ymax.abs() {
        let rms = (points.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        return Ok(degenerate(mean, rms));
    }

    // work in shifted time and rate k = 1/τ for conditioning; amplitude is
    // referenced to the first sample time
    let ts: Vec<f64> = points.iter().map(|p| (p.0 - t0) / span).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();

    // log-linear initialization on the points above the smallest value
    let floor = ymin - 1e-3 * (ymax - ymin);
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (&t, &y) in ts.iter().zip(&ys) {
        let l = (y - floor).ln();
        sx += t;
        sy += l;
        sxx += t * t;
        sxy += t * l;
    }
    let nf = n as f64;
    let slope = (nf * sxy - sx * sy) / (nf * sxx - sx * sx);
    let mut k = (-slope).max(1e-3);
    let (mut amp, mut c) = linear_part(&ts, &ys, k);

    let sse = |amp: f64, k: f64, c: f64| -> f64 {
        ts.iter().zip(&ys).map(|(&t, &y)| (y - amp * (-k * t).exp() - c).powi(2)).sum()
    };
    let mut cost = sse(amp, k, c);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..100 {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&t, &y) in ts.iter().zip(&ys) {
            let e = (-k * t).exp();
            let r = y - amp * e - c;
            let j = [e, -amp * t * e, 1.0];
            for p in 0..3 {
                jtr[p] += j[p] * r;
                for q in 0..3 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let mut step = None;
        for _ in 0..40 {
            let mut m = jtj;
            for (p, row) in m.iter_mut().enumerate() {
                row[p] += lambda * jtj[p][p].max(f64::MIN_POSITIVE);
            }
            let Some(d) = solve3(m, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = sse(amp + d[0], k + d[1], c + d[2]);
            if trial <= cost {
                step = Some((d, trial));
                lambda = (lambda / 10.0).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
        let Some((d, trial)) = step else {
            // no descent direction left: at a minimum to working precision
            converged = true;
            break;
        };
        amp += d[0];
        k += d[1];
        c += d[2];
        cost = trial;
        let rel = (d[0] / amp).abs().max((d[1] / k).abs()).max((d[2] / amp).abs());
        if rel < 1e-10 {
            converged = true;
            break;
        }
    }
    let tau = span / k;
    if !converged {
        return Err(Error::Convergence(format!(
            "decay fit did not settle in 100 iterations (last: amplitude {amp:e}, tau {tau:e}, offset {c:e})"
        )));
    }
    if k < 0.0 {
        return Err(Error::validation(format!("fitted decay time is negative ({tau:e} s)")));
    }
    if k < 1e-9 {
        let rms = (cost / n as f64).sqrt();
        return Ok(degenerate(amp + c, rms));
    }

    // back to physical units: A·exp(−(t−t0)/τ) = A·exp(t0/τ)·exp(−t/τ)
    let amplitude = amp * (t0 / tau).exp();
    let residual_rms = (cost / n as f64).sqrt();
    let covariance = (n > 3).then(|| {
        let s2 = cost / (n - 3) as f64;
        let mut jtj = [[0.0; 3]; 3];
        for &(t, _) in points {
            let e = (-t / tau).exp();
            let j = [e, amplitude * t / (tau * tau) * e, 1.0];
            for p in 0..3 {
                for q in 0..3 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        invert3(jtj).map(|inv| inv.iter().map(|row| row.iter().map(|v| v * s2).collect()).collect())
    });
    Ok(FitResult {
        params: vec![("amplitude".into(), amplitude), ("tau".into(), tau), ("offset".into(), c)],
        residual_rms,
        covariance: covariance.flatten(),
        degenerate: false,
    })
}

/// Best amplitude and offset for a fixed rate.
fn linear_part(ts: &[f64], ys: &[f64], k: f64) -> (f64, f64) {
    let n = ts.len() as f64;
    let (mut se, mut see, mut sy, mut sey) = (0.0, 0.0, 0.0, 0.0);
    for (&t, &y) in ts.iter().zip(ys) {
        let e = (-k * t).exp();
        se += e;
        see += e * e;
        sy += y;
        sey += e * y;
    }
    let det = n * see - se * se;
    if det.abs() < 1e-300 {
        return (sy / n, 0.0);
    }
    ((n * sey - se * sy) / det, (see * sy - se * sey) / det)
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn invert3(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = det3(&m);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    // adjugate: inv[i][j] is the cofactor of m[j][i]
    Some(std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det
        })
    }))
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let inv = invert3(m)?;
    let x = [0, 1, 2].map(|i| inv[i][0] * b[0] + inv[i][1] * b[1] + inv[i][2] * b[2]);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Retrieved-to-reference energy ratio.
pub fn efficiency(retrieved: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0 && reference.is_finite()) {
        return Err(Error::validation("reference energy must be positive"));
    }
    if !(retrieved >= 0.0 && retrieved.is_finite()) {
        return Err(Error::validation("retrieved energy must be finite and >= 0"));
    }
    Ok(retrieved / reference)
}

/// Occupancy-weighted time spent in each mode over `window`:
/// ∫ |a|²/(|a|²+|b|²) dt and ∫ |b|²/(|a|²+|b|²) dt (trapezoidal).
pub fn dwell_times(trace: &TraceRecord, window: (f64, f64)) -> Result<(f64, f64)> {
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(Error::validation("dwell window is empty"));
    }
    let pts: Vec<_> = trace.samples.iter().filter(|s| s.t >= t0 && s.t <= t1).collect();
    if pts.len() < 2 {
        return Err(Error::validation("dwell window holds fewer than two samples"));
    }
    let frac = |s: &crate::dynamics::Sample| -> Result<f64> {
        let (ea, eb) = (s.a.norm_sqr(), s.b.norm_sqr());
        if ea + eb == 0.0 {
            return Err(Error::validation(format!("no energy in either mode at t = {:e} s", s.t)));
        }
        Ok(ea / (ea + eb))
    };
    let (mut ta, mut tb) = (0.0, 0.0);
    for w in pts.windows(2) {
        let h = w[1].t - w[0].t;
        let (fa, fb) = (frac(w[0])?, frac(w[1])?);
        ta += 0.5 * h * (fa + fb);
        tb += 0.5 * h * (2.0 - fa - fb);
    }
    Ok((ta, tb))
}

/// η′ = η·exp(γ_A t_A + γ_B t_B), with the dwell times taken from the
/// simulated occupancy over `window`.
pub fn loss_corrected_efficiency(
    eta: f64,
    trace: &TraceRecord,
    mode_a: &ModeParams,
    mode_b: &ModeParams,
    window: (f64, f64),
) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::validation(format!("efficiency {eta} outside (0, 1]")));
    }
    let (ta, tb) = dwell_times(trace, window)?;
    Ok(eta * (mode_a.gamma_total() * ta + mode_b.gamma_total() * tb).exp())
}

/// Straight line through `(x, phase)` points after unwrapping the phases in
/// order. Reports `slope` and `intercept`.
pub fn fit_phase_slope(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(Error::validation(format!("need at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::validation("phase points must be finite"));
    }
    let (xmin, xmax) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    if xmax - xmin < PI * (1.0 - 1e-12) {
        return Err(Error::validation("phase points must span at least pi"));
    }
    let mut unwrapped = Vec::with_capacity(points.len());
    unwrapped.push(points[0].1);
    for (i, w) in points.windows(2).enumerate() {
        let raw = w[1].1 - w[0].1;
        let d = raw - TWO_PI * (raw / TWO_PI).round();
        if d.abs() >= PI * (1.0 - 1e-9) {
            return Err(Error::validation(format!(
                "phases {} and {} differ by half a turn; unwrapping is ambiguous",
                i + 1,
                i + 2
            )));
        }
        unwrapped.push(unwrapped[i] + d);
    }

    let n = points.len() as f64;
    let xm = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = unwrapped.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (p, y) in points.iter().zip(&unwrapped) {
        sxx += (p.0 - xm).powi(2);
        sxy += (p.0 - xm) * (y - ym);
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let sse: f64 = points.iter().zip(&unwrapped).map(|(p, y)| (y - intercept - slope * p.0).powi(2)).sum();
    let covariance = (points.len() > 2).then(|| {
        let s2 = sse / (n - 2.0);
        let var_slope = s2 / sxx;
        let cov = -xm * var_slope;
        vec![vec![var_slope, cov], vec![cov, s2 / n + xm * xm * var_slope]]
    });
    Ok(FitResult {
        params: vec![("slope".into(), slope), ("intercept".into(), intercept)],
        residual_rms: (sse / n).sqrt(),
        covariance,
        degenerate: false,
    })
}

/// Ordinary least-squares line `y = slope·x + intercept` with its R².
pub fn fit_line(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 2 {
        return Err(Error::validation("need at least 2 points for a line"));
    }
    let n = points.len() as f64;
    let xm = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - xm).powi(2);
        sxy += (x - xm) * (y - ym);
        syy += (y - ym).powi(2);
    }
    if sxx == 0.0 {
        return Err(Error::validation("line fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let sse: f64 = points.iter().map(|&(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(FitResult {
        params: vec![("slope".into(), slope), ("intercept".into(), intercept), ("r_squared".into(), r2)],
        residual_rms: (sse / n).sqrt(),
        covariance: None,
        degenerate: false,
    })
}
