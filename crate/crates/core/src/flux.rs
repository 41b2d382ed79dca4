//! Flux dependence of the cavity frequencies and the conversion of a pump
//! flux amplitude into a parametric coupling rate.
//!
//! Two curve kinds are supported. The coupler model describes a cavity mode
//! pulled by a flux-tuned coupler self-resonance that sits below it:
//!
//! ```text
//! ω(Φ)   = ω_bare + κ / (ω_bare² − ω_C(Φ)²)
//! ω_C(Φ) = ω_C,max · sqrt|cos(π(Φ − Φ_offset))|
//! ```
//!
//! Tabulated curves are periodic cubic splines through measured samples.
//! Flux is always in units of the flux quantum, and every curve has period 1.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{defaults, CouplerState};
use crate::units::{dbm_to_mw, hz_to_angular};

#[derive(Debug, Clone, PartialEq)]
pub enum FluxCurve {
    Tabulated(PeriodicSpline),
    CouplerModel(CouplerPull),
}

/// Dispersive pull of a mode by the coupler self-resonance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplerPull {
    /// Mode frequency with the coupler removed (rad/s).
    pub omega_bare: f64,
    /// Pull strength, (rad/s)³.
    pub kappa_pull: f64,
    /// Coupler self-resonance at zero flux (rad/s); must stay below `omega_bare`.
    pub omega_c_max: f64,
    pub phi_offset: f64,
}

impl CouplerPull {
    pub fn new(omega_bare: f64, kappa_pull: f64, omega_c_max: f64, phi_offset: f64) -> Result<Self> {
        if !(omega_bare.is_finite() && omega_bare > 0.0) {
            return Err(Error::validation("omega_bare must be positive"));
        }
        if !kappa_pull.is_finite() {
            return Err(Error::validation("kappa_pull must be finite"));
        }
        if !(omega_c_max.is_finite() && omega_c_max >= 0.0 && omega_c_max < omega_bare) {
            return Err(Error::validation(
                "coupler resonance must lie below the mode at every flux (omega_c_max < omega_bare)",
            ));
        }
        if !phi_offset.is_finite() {
            return Err(Error::validation("phi_offset must be finite"));
        }
        Ok(Self { omega_bare, kappa_pull, omega_c_max, phi_offset: phi_offset.rem_euclid(1.0) })
    }

    /// ω_bare² − ω_C(Φ)², and the flux derivative of |cos(π(Φ − offset))|.
    fn denominator_and_dcos(&self, phi: f64) -> (f64, f64) {
        let w = (phi - self.phi_offset).rem_euclid(1.0);
        let (s, c) = (PI * w).sin_cos();
        let d = self.omega_bare * self.omega_bare - self.omega_c_max * self.omega_c_max * c.abs();
        // cos(πw) > 0 on [0, 1/2) and < 0 on (1/2, 1); the cusp at w = 1/2
        // gets the symmetric derivative, 0.
        let sign = if w < 0.5 {
            1.0
        } else if w > 0.5 {
            -1.0
        } else {
            0.0
        };
        (d, -PI * s * sign)
    }

    fn omega(&self, phi: f64) -> f64 {
        let (d, _) = self.denominator_and_dcos(phi);
        self.omega_bare + self.kappa_pull / d
    }

    fn slope(&self, phi: f64) -> f64 {
        let (d, dcos) = self.denominator_and_dcos(phi);
        self.kappa_pull * self.omega_c_max * self.omega_c_max * dcos / (d * d)
    }

    /// Peak-to-peak modulation over one period (ω at Φ = offset minus ω at the cusp).
    pub fn modulation_depth(&self) -> f64 {
        let wb2 = self.omega_bare * self.omega_bare;
        let wc2 = self.omega_c_max * self.omega_c_max;
        (self.kappa_pull * (1.0 / (wb2 - wc2) - 1.0 / wb2)).abs()
    }
}

/// Periodic natural cubic spline through `(Φ, ω)` samples covering less than
/// one flux period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSpline {
    phi: Vec<f64>,
    omega: Vec<f64>,
    second: Vec<f64>,
}

impl PeriodicSpline {
    pub fn new(phi: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        let n = phi.len();
        if n != omega.len() {
            return Err(Error::validation("flux and frequency columns differ in length"));
        }
        if n < 4 {
            return Err(Error::validation(format!("tabulated curve needs >= 4 points, got {n}")));
        }
        if phi.iter().chain(omega.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("tabulated curve contains non-finite values"));
        }
        if phi.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("flux samples must be strictly increasing"));
        }
        if phi[n - 1] - phi[0] >= 1.0 {
            return Err(Error::validation("flux samples must span less than one period"));
        }

        let h: Vec<f64> = (0..n)
            .map(|i| if i + 1 < n { phi[i + 1] - phi[i] } else { phi[0] + 1.0 - phi[n - 1] })
            .collect();
        let slope = |i: usize| (omega[(i + 1) % n] - omega[i]) / h[i];
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let prev = (i + n - 1) % n;
            sub[i] = h[prev];
            diag[i] = 2.0 * (h[prev] + h[i]);
            sup[i] = h[i];
            rhs[i] = 6.0 * (slope(i) - slope(prev));
        }
        let second = solve_cyclic_tridiagonal(&sub, &diag, &sup, &rhs);
        Ok(Self { phi, omega, second })
    }

    fn locate(&self, phi: f64) -> (usize, f64, f64) {
        let n = self.phi.len();
        let x0 = self.phi[0];
        let x = x0 + (phi - x0).rem_euclid(1.0);
        // last index with phi[i] <= x
        let i = self.phi.partition_point(|&p| p <= x).saturating_sub(1);
        let right = if i + 1 < n { self.phi[i + 1] } else { x0 + 1.0 };
        (i, x, right - self.phi[i])
    }

    fn eval(&self, phi: f64) -> (f64, f64) {
        let n = self.phi.len();
        let (i, x, h) = self.locate(phi);
        let j = (i + 1) % n;
        let (mi, mj) = (self.second[i], self.second[j]);
        let (yi, yj) = (self.omega[i], self.omega[j]);
        let l = x - self.phi[i];
        let r = h - l;
        let value = mi * r * r * r / (6.0 * h)
            + mj * l * l * l / (6.0 * h)
            + (yi / h - mi * h / 6.0) * r
            + (yj / h - mj * h / 6.0) * l;
        let deriv = -mi * r * r / (2.0 * h) + mj * l * l / (2.0 * h) - (yi / h - mi * h / 6.0)
            + (yj / h - mj * h / 6.0);
        (value, deriv)
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.phi.iter().copied().zip(self.omega.iter().copied())
    }
}

// Sherman–Morrison reduction of a cyclic tridiagonal system to two ordinary
// tridiagonal solves. `sub[0]` is the top-right corner, `sup[n-1]` the
// bottom-left one.
fn solve_cyclic_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let alpha = sup[n - 1];
    let beta = sub[0];
    let gamma = -diag[0];
    let mut bb = diag.to_vec();
    bb[0] -= gamma;
    bb[n - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(sub, &bb, sup, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(sub, &bb, sup, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / m;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

impl FluxCurve {
    pub fn coupler_model(omega_bare: f64, kappa_pull: f64, omega_c_max: f64, phi_offset: f64) -> Result<Self> {
        CouplerPull::new(omega_bare, kappa_pull, omega_c_max, phi_offset).map(FluxCurve::CouplerModel)
    }

    /// Tabulated curve from flux (Φ0) and angular-frequency samples.
    pub fn tabulated(phi: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        PeriodicSpline::new(phi, omega).map(FluxCurve::Tabulated)
    }

    /// Parse a two-column table of flux (Φ0) and frequency (Hz). Columns may be
    /// separated by commas, semicolons, tabs or spaces; `#` starts a comment and
    /// a single non-numeric header line is allowed before the data.
    pub fn parse_table(text: &str) -> Result<Self> {
        let mut phi = Vec::new();
        let mut omega = Vec::new();
        let mut header_seen = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
                .filter(|f| !f.is_empty())
                .collect();
            let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
            match parsed {
                Some(v) if v.len() == 2 => {
                    phi.push(v[0]);
                    omega.push(hz_to_angular(v[1]));
                }
                None if !header_seen && phi.is_empty() => header_seen = true,
                _ => {
                    return Err(Error::Syntax {
                        line: lineno + 1,
                        column: 1,
                        message: format!("expected two numeric columns, got `{line}`"),
                    })
                }
            }
        }
        Self::tabulated(phi, omega)
    }

    pub fn load_table(path: &Path) -> Result<Self> {
        Self::parse_table(&std::fs::read_to_string(path)?)
    }

    /// Mode frequency (rad/s) at flux `phi` (Φ0).
    pub fn omega_at(&self, phi: f64) -> Result<f64> {
        if !phi.is_finite() {
            return Err(Error::validation(format!("flux must be finite, got {phi}")));
        }
        Ok(match self {
            FluxCurve::CouplerModel(m) => m.omega(phi),
            FluxCurve::Tabulated(s) => s.eval(phi).0,
        })
    }

    /// ∂ω/∂Φ in rad/s per Φ0.
    pub fn slope_at(&self, phi: f64) -> f64 {
        match self {
            FluxCurve::CouplerModel(m) => m.slope(phi),
            FluxCurve::Tabulated(s) => s.eval(phi).1,
        }
    }
}

/// Parametric coupling rate from the flux slopes of both modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingRate {
    pub g_p: f64,
    /// Set when either slope vanishes at the bias point.
    pub degenerate_bias: bool,
}

/// g_P = (δΦ/4)·sqrt|∂ω_A/∂Φ · ∂ω_B/∂Φ| at the DC bias point. The sign of the
/// slope product is absorbed into the pump phase.
pub fn coupling_rate(curve_a: &FluxCurve, curve_b: &FluxCurve, state: &CouplerState) -> CouplingRate {
    let sa = curve_a.slope_at(state.phi_dc);
    let sb = curve_b.slope_at(state.phi_dc);
    if sa == 0.0 || sb == 0.0 {
        return CouplingRate { g_p: 0.0, degenerate_bias: true };
    }
    CouplingRate { g_p: state.delta_phi / 4.0 * (sa * sb).abs().sqrt(), degenerate_bias: false }
}

/// Pump flux amplitude (Φ0) for a pump power in dBm, through a lumped
/// calibration in Φ0 per sqrt(mW).
pub fn pump_power_to_flux(p_dbm: f64, calib: f64) -> Result<f64> {
    if !(calib.is_finite() && calib > 0.0) {
        return Err(Error::validation(format!("flux calibration must be positive, got {calib}")));
    }
    if p_dbm.is_nan() {
        return Err(Error::validation("pump power is NaN"));
    }
    Ok(calib * dbm_to_mw(p_dbm).sqrt())
}

/// Calibration constant that maps `p_dbm` to `delta_phi`.
pub fn flux_calibration_for(p_dbm: f64, delta_phi: f64) -> f64 {
    delta_phi / dbm_to_mw(p_dbm).sqrt()
}

/// Flux curves of both modes, the DC bias point and the pump-power scale of
/// the reference device.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCalibration {
    pub curve_a: FluxCurve,
    pub curve_b: FluxCurve,
    pub phi_dc: f64,
    /// Φ0 per sqrt(mW).
    pub flux_calib: f64,
}

impl DeviceCalibration {
    /// Coupler-model curves with the readout mode modulated by
    /// `modulation_hz` peak to peak, the bias at the point of largest slope
    /// product, and the storage pull set so that `delta_phi` gives `coupling_hz`.
    pub fn calibrate(
        omega_a: f64,
        omega_b: f64,
        omega_c_max: f64,
        phi_offset: f64,
        modulation_hz: f64,
        delta_phi: f64,
        coupling_hz: f64,
    ) -> Result<Self> {
        let unit_a = CouplerPull::new(omega_a, 1.0, omega_c_max, phi_offset)?;
        let kappa_a = hz_to_angular(modulation_hz) / unit_a.modulation_depth();
        let pull_a = CouplerPull::new(omega_a, kappa_a, omega_c_max, phi_offset)?;
        let unit_b = CouplerPull::new(omega_b, 1.0, omega_c_max, phi_offset)?;

        // The bias maximising |s_A s_B| does not depend on either pull strength.
        let product = |phi: f64| (pull_a.slope(phi) * unit_b.slope(phi)).abs();
        let phi_rel = maximize(|u| product(phi_offset + u), 1e-4, 0.5 - 1e-4);
        let phi_dc = (phi_offset + phi_rel).rem_euclid(1.0);

        let g_unit = delta_phi / 4.0 * product(phi_dc).sqrt();
        if !(g_unit > 0.0) {
            return Err(Error::validation("calibration needs a nonzero pump flux"));
        }
        let kappa_b = (hz_to_angular(coupling_hz) / g_unit).powi(2);
        let pull_b = CouplerPull::new(omega_b, kappa_b, omega_c_max, phi_offset)?;
        Ok(Self {
            curve_a: FluxCurve::CouplerModel(pull_a),
            curve_b: FluxCurve::CouplerModel(pull_b),
            phi_dc,
            flux_calib: flux_calibration_for(defaults::PUMP_POWER_DBM, delta_phi),
        })
    }

    /// Reference device: 4 MHz readout modulation, 0.2 Φ0 pump at −52 dBm
    /// giving g_P = 2π·1.2 MHz.
    pub fn reference() -> Self {
        Self::calibrate(
            hz_to_angular(defaults::READOUT_FREQ_HZ),
            hz_to_angular(defaults::STORAGE_FREQ_HZ),
            hz_to_angular(defaults::COUPLER_MAX_HZ),
            0.0,
            defaults::READOUT_MODULATION_HZ,
            defaults::PUMP_FLUX,
            defaults::CW_COUPLING_HZ,
        )
        .expect("reference calibration")
    }

    pub fn coupler_state(&self, delta_phi: f64) -> Result<CouplerState> {
        let offset = match &self.curve_a {
            FluxCurve::CouplerModel(m) => m.phi_offset,
            FluxCurve::Tabulated(_) => 0.0,
        };
        let omega_c = match &self.curve_a {
            FluxCurve::CouplerModel(m) => Some(m.omega_c_max),
            FluxCurve::Tabulated(_) => None,
        };
        CouplerState::new(self.phi_dc, delta_phi, offset, omega_c)
    }

    /// Coupling rate (rad/s) for a pump flux amplitude.
    pub fn coupling_for_flux(&self, delta_phi: f64) -> Result<CouplingRate> {
        Ok(coupling_rate(&self.curve_a, &self.curve_b, &self.coupler_state(delta_phi)?))
    }

    /// Coupling rate (rad/s) for a pump power in dBm.
    pub fn coupling_for_power(&self, p_dbm: f64) -> Result<CouplingRate> {
        self.coupling_for_flux(pump_power_to_flux(p_dbm, self.flux_calib)?)
    }
}

// Coarse scan followed by golden-section refinement.
fn maximize(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const SCAN: usize = 400;
    let step = (hi - lo) / SCAN as f64;
    let best = (0..=SCAN)
        .map(|k| lo + step * k as f64)
        .max_by(|x, y| f(*x).total_cmp(&f(*y)))
        .unwrap_or(lo);
    let (mut a, mut b) = ((best - step).max(lo), (best + step).min(hi));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    while b - a > 1e-12 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - inv_phi * (b - a);
        d = a + inv_phi * (b - a);
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::TWO_PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn central_difference(curve: &FluxCurve, phi: f64, h: f64) -> f64 {
        (curve.omega_at(phi + h).unwrap() - curve.omega_at(phi - h).unwrap()) / (2.0 * h)
    }

    // fourth-order central stencil; keeps round-off small where the slope is small
    fn five_point_difference(curve: &FluxCurve, phi: f64, h: f64) -> f64 {
        let w = |x: f64| curve.omega_at(x).unwrap();
        (w(phi - 2.0 * h) - 8.0 * w(phi - h) + 8.0 * w(phi + h) - w(phi + 2.0 * h)) / (12.0 * h)
    }

    fn sample_curve() -> FluxCurve {
        // smooth periodic test curve, nothing to do with the coupler model
        let phi: Vec<f64> = (0..64).map(|k| k as f64 / 64.0).collect();
        let omega = phi
            .iter()
            .map(|p| TWO_PI * (8.7e9 + 2e6 * (TWO_PI * p).cos() + 0.5e6 * (2.0 * TWO_PI * p).sin()))
            .collect();
        FluxCurve::tabulated(phi, omega).unwrap()
    }

    #[test]
    fn zero_pull_is_flat() {
        let c = FluxCurve::coupler_model(TWO_PI * 8.7e9, 0.0, TWO_PI * 7.7e9, 0.0).unwrap();
        for k in 0..20 {
            let phi = k as f64 * 0.05 - 0.3;
            assert_eq!(c.omega_at(phi).unwrap(), TWO_PI * 8.7e9);
            assert_eq!(c.slope_at(phi), 0.0);
        }
    }

    #[test]
    fn half_flux_closed_form() {
        let wb = TWO_PI * 8.7e9;
        let kappa = 3.0e25;
        let c = FluxCurve::coupler_model(wb, kappa, TWO_PI * 7.7e9, 0.0).unwrap();
        let expected = wb + kappa / (wb * wb);
        let got = c.omega_at(0.5).unwrap();
        assert!((got - expected).abs() / expected < 1e-15);
    }

    #[test]
    fn coupler_must_sit_below_mode() {
        assert!(FluxCurve::coupler_model(TWO_PI * 7.0e9, 1.0, TWO_PI * 7.7e9, 0.0).is_err());
    }

    #[test]
    fn reference_readout_modulation_is_four_megahertz() {
        let cal = DeviceCalibration::reference();
        // dense-sampling oracle for the peak-to-peak depth over [0, 0.5]
        let samples: Vec<f64> =
            (0..=20_000).map(|k| cal.curve_a.omega_at(k as f64 * 0.5 / 20_000.0).unwrap()).collect();
        let max = samples.iter().cloned().fold(f64::MIN, f64::max);
        let min = samples.iter().cloned().fold(f64::MAX, f64::min);
        let ptp_mhz = (max - min) / TWO_PI / 1e6;
        assert!((ptp_mhz - 4.0).abs() < 1e-6, "{ptp_mhz}");
    }

    #[test]
    fn reference_coupling_matches_splitting() {
        let cal = DeviceCalibration::reference();
        let g = cal.coupling_for_flux(0.2).unwrap();
        assert!(!g.degenerate_bias);
        assert!((g.g_p / TWO_PI / 1e6 - 1.2).abs() < 1e-9);
        let g = cal.coupling_for_power(-52.0).unwrap();
        assert!((g.g_p / TWO_PI / 1e6 - 1.2).abs() < 1e-9);
    }

    #[test]
    fn bias_point_maximises_slope_product() {
        let cal = DeviceCalibration::reference();
        let p = |phi: f64| (cal.curve_a.slope_at(phi) * cal.curve_b.slope_at(phi)).abs();
        let best = p(cal.phi_dc);
        for k in 1..500 {
            assert!(p(k as f64 / 1000.0) <= best * (1.0 + 1e-12));
        }
    }

    #[test]
    fn slope_vanishes_at_extrema() {
        let cal = DeviceCalibration::reference();
        for curve in [&cal.curve_a, &cal.curve_b] {
            assert_eq!(curve.slope_at(0.0), 0.0);
            assert_eq!(curve.slope_at(0.5), 0.0);
        }
    }

    #[test]
    fn slope_matches_finite_difference_at_quarter_flux() {
        let cal = DeviceCalibration::reference();
        let fd = central_difference(&cal.curve_a, 0.25, 1e-6);
        let an = cal.curve_a.slope_at(0.25);
        assert!(((an - fd) / an).abs() < 1e-6, "{an} vs {fd}");
    }

    #[test]
    fn slope_matches_finite_difference_at_random_points() {
        let cal = DeviceCalibration::reference();
        let table = sample_curve();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 100 {
            let phi: f64 = rng.gen_range(-2.0..2.0);
            // keep clear of the cusp where |cos| changes sign
            if ((phi - 0.5).rem_euclid(1.0) - 0.0).abs() < 1e-4 || ((phi - 0.5).rem_euclid(1.0) - 1.0).abs() < 1e-4 {
                continue;
            }
            for curve in [&cal.curve_a, &cal.curve_b, &table] {
                let an = curve.slope_at(phi);
                let fd = five_point_difference(curve, phi, 1e-4);
                let scale = an.abs().max(1.0);
                assert!((an - fd).abs() / scale < 1e-6, "phi={phi}: {an} vs {fd}");
            }
            checked += 1;
        }
    }

    #[test]
    fn both_kinds_are_periodic() {
        let cal = DeviceCalibration::reference();
        let table = sample_curve();
        for k in 0..50 {
            let phi = -1.3 + 0.071 * k as f64;
            for curve in [&cal.curve_a, &table] {
                let w0 = curve.omega_at(phi).unwrap();
                let w1 = curve.omega_at(phi + 1.0).unwrap();
                assert!((w0 - w1).abs() / w0 < 1e-12);
            }
        }
    }

    #[test]
    fn spline_interpolates_its_samples() {
        let table = sample_curve();
        if let FluxCurve::Tabulated(s) = &table {
            for (p, w) in s.samples() {
                assert!((table.omega_at(p).unwrap() - w).abs() / w < 1e-14);
            }
        }
        // close to the underlying smooth function between samples
        let exact = TWO_PI * (8.7e9 + 2e6 * (TWO_PI * 0.3).cos() + 0.5e6 * (2.0 * TWO_PI * 0.3).sin());
        assert!((table.omega_at(1.3).unwrap() - exact).abs() < TWO_PI * 200.0);
    }

    #[test]
    fn table_validation() {
        assert!(FluxCurve::tabulated(vec![0.0, 0.1, 0.2], vec![1.0; 3]).is_err());
        assert!(FluxCurve::tabulated(vec![0.0, 0.2, 0.1, 0.3], vec![1.0; 4]).is_err());
        assert!(FluxCurve::tabulated(vec![0.0, 0.3, 0.6, 1.0], vec![1.0; 4]).is_err());
        assert!(FluxCurve::coupler_model(1.0, 1.0, 0.5, 0.0).unwrap().omega_at(f64::NAN).is_err());
    }

    #[test]
    fn table_text_with_header_and_comments() {
        let text = "# measured readout curve\nflux_phi0, freq_hz\n0.0, 8.700e9\n0.25 8.701e9 # mid\n0.5;8.702e9\n0.75\t8.701e9\n";
        let c = FluxCurve::parse_table(text).unwrap();
        assert!((c.omega_at(0.25).unwrap() - TWO_PI * 8.701e9).abs() < 1e-3);
        assert!(FluxCurve::parse_table("0 1\n0.1 2\nbad line\n0.3 4\n0.4 5").is_err());
    }

    #[test]
    fn coupling_rate_closed_forms() {
        // identical curves: both slopes equal S, so g_P = S·δΦ/4
        let a = FluxCurve::coupler_model(TWO_PI * 8.7e9, 4.0e25, TWO_PI * 7.7e9, 0.0).unwrap();
        let b = a.clone();
        let s = a.slope_at(0.2);
        let state = CouplerState::new(0.2, 0.2, 0.0, None).unwrap();
        let g = coupling_rate(&a, &b, &state);
        assert!((g.g_p - s.abs() * 0.2 / 4.0).abs() / g.g_p < 1e-12);

        let zero = CouplerState::new(0.2, 0.0, 0.0, None).unwrap();
        assert_eq!(coupling_rate(&a, &b, &zero).g_p, 0.0);

        let g2 = coupling_rate(&a, &b, &CouplerState::new(0.2, 0.4, 0.0, None).unwrap());
        assert_eq!(g2.g_p / g.g_p, 2.0);

        let flat = CouplerState::new(0.0, 0.2, 0.0, None).unwrap();
        let cal = DeviceCalibration::reference();
        let d = coupling_rate(&cal.curve_a, &cal.curve_b, &flat);
        assert!(d.degenerate_bias);
        assert_eq!(d.g_p, 0.0);
    }

    #[test]
    fn pump_power_conversion() {
        let calib = flux_calibration_for(-52.0, 0.2);
        assert!((calib - 0.2 / 10f64.powf(-5.2).sqrt()).abs() < 1e-12);
        // 0.2 / sqrt(10^-5.2) = 0.2 · 10^2.6
        assert!((calib - 79.62).abs() < 0.01, "{calib}");
        let back = pump_power_to_flux(-52.0, calib).unwrap();
        assert!((back - 0.2).abs() < 1e-15);
        let half = pump_power_to_flux(-58.0, calib).unwrap();
        assert!((half - 0.1).abs() / 0.1 < 3e-3);
        assert_eq!(pump_power_to_flux(f64::NEG_INFINITY, calib).unwrap(), 0.0);
        assert!(pump_power_to_flux(-52.0, 0.0).is_err());
    }
}
