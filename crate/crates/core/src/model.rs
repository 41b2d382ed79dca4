//! Shared domain types: cavity modes, coupler bias, pump drive and the
//! complex amplitude state of the two-mode system.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::units::hz_to_angular;

/// Reference device parameters. Frequencies are ordinary (Hz) here and are
/// converted at the point of use.
pub mod defaults {
    pub const READOUT_FREQ_HZ: f64 = 8.70e9;
    pub const STORAGE_FREQ_HZ: f64 = 9.33e9;
    pub const READOUT_Q_INT: f64 = 9.0e5;
    pub const READOUT_Q_EXT: f64 = 5.0e4;
    pub const STORAGE_T1_S: f64 = 14.9e-6;
    /// Coupling rate behind the 2.4 MHz normal-mode splitting.
    pub const CW_COUPLING_HZ: f64 = 1.2e6;
    /// Quoted swap pulse length. Used only where a reconstruction needs it.
    pub const QUOTED_SWAP_S: f64 = 0.6e-6;
    pub const NBAR: f64 = 10.0;
    pub const COUPLER_MAX_HZ: f64 = 7.7e9;
    pub const PUMP_FLUX: f64 = 0.2;
    pub const PUMP_POWER_DBM: f64 = -52.0;
    /// Peak-to-peak flux modulation of the readout mode used for calibration.
    pub const READOUT_MODULATION_HZ: f64 = 4.0e6;
    /// Largest coupling reached before the pump heats the device.
    pub const MAX_COUPLING_HZ: f64 = 3.5e6;
}

/// One cavity mode. All rates are angular (rad/s) energy-decay rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeParams {
    pub omega: f64,
    pub gamma_int: f64,
    pub gamma_ext: f64,
}

impl ModeParams {
    pub fn new(omega: f64, gamma_int: f64, gamma_ext: f64) -> Result<Self> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::validation(format!("mode frequency must be positive, got {omega}")));
        }
        if !(gamma_int.is_finite() && gamma_int >= 0.0) {
            return Err(Error::validation(format!("gamma_int must be >= 0, got {gamma_int}")));
        }
        if !(gamma_ext.is_finite() && gamma_ext >= 0.0) {
            return Err(Error::validation(format!("gamma_ext must be >= 0, got {gamma_ext}")));
        }
        Ok(Self { omega, gamma_int, gamma_ext })
    }

    /// Build from quality factors; an infinite Q maps to a zero rate.
    pub fn from_q(omega: f64, q_int: f64, q_ext: f64) -> Result<Self> {
        Self::new(omega, rate_from_q(omega, q_int, "q_int")?, rate_from_q(omega, q_ext, "q_ext")?)
    }

    /// Build from a total energy decay time, with all loss internal except
    /// `gamma_ext`.
    pub fn from_t1(omega: f64, t1: f64, gamma_ext: f64) -> Result<Self> {
        if !(t1 > 0.0) {
            return Err(Error::validation(format!("t1 must be positive, got {t1}")));
        }
        let gamma_int = 1.0 / t1 - gamma_ext;
        if gamma_int < 0.0 {
            return Err(Error::validation("external rate exceeds 1/t1"));
        }
        Self::new(omega, gamma_int, gamma_ext)
    }

    pub fn lossless(omega: f64) -> Result<Self> {
        Self::new(omega, 0.0, 0.0)
    }

    #[inline]
    pub fn gamma_total(&self) -> f64 {
        self.gamma_int + self.gamma_ext
    }

    pub fn t1(&self) -> f64 {
        1.0 / self.gamma_total()
    }

    pub fn q_int(&self) -> Option<f64> {
        (self.gamma_int > 0.0).then(|| self.omega / self.gamma_int)
    }

    pub fn q_ext(&self) -> Option<f64> {
        (self.gamma_ext > 0.0).then(|| self.omega / self.gamma_ext)
    }

    /// Readout cavity of the reference device.
    pub fn readout_default() -> Self {
        Self::from_q(
            hz_to_angular(defaults::READOUT_FREQ_HZ),
            defaults::READOUT_Q_INT,
            defaults::READOUT_Q_EXT,
        )
        .expect("default readout mode")
    }

    /// Storage cavity of the reference device (port removed).
    pub fn storage_default() -> Self {
        Self::from_t1(hz_to_angular(defaults::STORAGE_FREQ_HZ), defaults::STORAGE_T1_S, 0.0)
            .expect("default storage mode")
    }
}

fn rate_from_q(omega: f64, q: f64, name: &str) -> Result<f64> {
    if q == f64::INFINITY {
        Ok(0.0)
    } else if q.is_finite() && q > 0.0 {
        Ok(omega / q)
    } else {
        Err(Error::validation(format!("{name} must be positive or infinite, got {q}")))
    }
}

/// Free-function form of [`ModeParams::from_q`].
pub fn mode_params_from_q(omega: f64, q_int: f64, q_ext: f64) -> Result<ModeParams> {
    ModeParams::from_q(omega, q_int, q_ext)
}

/// DC bias and pump amplitude on the coupler, in flux quanta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplerState {
    pub phi_dc: f64,
    pub delta_phi: f64,
    pub phi_offset: f64,
    pub omega_c_max: Option<f64>,
}

impl CouplerState {
    pub fn new(phi_dc: f64, delta_phi: f64, phi_offset: f64, omega_c_max: Option<f64>) -> Result<Self> {
        if !phi_dc.is_finite() || !phi_offset.is_finite() {
            return Err(Error::validation("flux bias must be finite"));
        }
        if !(delta_phi.is_finite() && delta_phi >= 0.0) {
            return Err(Error::validation(format!("delta_phi must be >= 0, got {delta_phi}")));
        }
        if let Some(w) = omega_c_max {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::validation("omega_c_max must be positive"));
            }
        }
        Ok(Self {
            phi_dc: phi_dc.rem_euclid(1.0),
            delta_phi,
            phi_offset: phi_offset.rem_euclid(1.0),
            omega_c_max,
        })
    }
}

/// Time profile of the parametric coupling amplitude g_P(t).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Envelope {
    Off,
    /// Continuous wave, on for all time.
    Constant { amplitude: f64 },
    /// On over `[start, end]`, with raised-cosine edges of length `ramp`
    /// (zero ramp gives a rectangular pulse).
    Pulse { amplitude: f64, start: f64, end: f64, ramp: f64 },
}

impl Envelope {
    pub fn rectangular(amplitude: f64, start: f64, end: f64) -> Self {
        Envelope::Pulse { amplitude, start, end, ramp: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Envelope::Off => Ok(()),
            Envelope::Constant { amplitude } => check_amplitude(amplitude),
            Envelope::Pulse { amplitude, start, end, ramp } => {
                check_amplitude(amplitude)?;
                if !(start.is_finite() && end.is_finite() && end > start) {
                    return Err(Error::validation("pulse support must satisfy start < end"));
                }
                if !(ramp >= 0.0 && 2.0 * ramp <= end - start) {
                    return Err(Error::validation("pulse ramp must fit twice inside the pulse"));
                }
                Ok(())
            }
        }
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Envelope::Off => 0.0,
            Envelope::Constant { amplitude } => amplitude,
            Envelope::Pulse { amplitude, start, end, ramp } => {
                if t < start || t > end {
                    0.0
                } else if ramp > 0.0 && t < start + ramp {
                    amplitude * 0.5 * (1.0 - (std::f64::consts::PI * (t - start) / ramp).cos())
                } else if ramp > 0.0 && t > end - ramp {
                    amplitude * 0.5 * (1.0 - (std::f64::consts::PI * (end - t) / ramp).cos())
                } else {
                    amplitude
                }
            }
        }
    }

    pub fn peak(&self) -> f64 {
        match *self {
            Envelope::Off => 0.0,
            Envelope::Constant { amplitude } | Envelope::Pulse { amplitude, .. } => amplitude,
        }
    }
}

fn check_amplitude(g: f64) -> Result<()> {
    if g.is_finite() && g >= 0.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("coupling amplitude must be >= 0, got {g}")))
    }
}

/// Pump tone applied to the coupler: frequency, phase and coupling envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpDrive {
    pub omega_p: f64,
    pub phi_p: f64,
    pub envelope: Envelope,
}

impl PumpDrive {
    pub fn new(omega_p: f64, phi_p: f64, envelope: Envelope) -> Result<Self> {
        if !(omega_p.is_finite() && omega_p >= 0.0) {
            return Err(Error::validation("pump frequency must be >= 0"));
        }
        if !phi_p.is_finite() {
            return Err(Error::validation("pump phase must be finite"));
        }
        envelope.validate()?;
        Ok(Self { omega_p, phi_p, envelope })
    }

    /// Pump placed at detuning `delta` from the mode difference frequency.
    pub fn at_detuning(
        delta: f64,
        mode_a: &ModeParams,
        mode_b: &ModeParams,
        phi_p: f64,
        envelope: Envelope,
    ) -> Result<Self> {
        Self::new((mode_a.omega - mode_b.omega).abs() + delta, phi_p, envelope)
    }

    pub fn off() -> Self {
        Self { omega_p: 0.0, phi_p: 0.0, envelope: Envelope::Off }
    }
}

/// Δ = ω_P − |ω_A − ω_B|, signed.
pub fn detuning(pump: &PumpDrive, mode_a: &ModeParams, mode_b: &ModeParams) -> f64 {
    pump.omega_p - (mode_a.omega - mode_b.omega).abs()
}

/// Complex amplitudes of both modes at time `t`; |a|² is the mean photon number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexAmplitudePair {
    pub a: Complex64,
    pub b: Complex64,
    pub t: f64,
}

impl ComplexAmplitudePair {
    pub fn new(a: Complex64, b: Complex64, t: f64) -> Self {
        Self { a, b, t }
    }

    /// Coherent state with `nbar` photons in the readout mode, storage empty.
    pub fn loaded(nbar: f64) -> Self {
        Self::new(Complex64::new(nbar.sqrt(), 0.0), Complex64::new(0.0, 0.0), 0.0)
    }

    pub fn energy_a(&self) -> f64 {
        self.a.norm_sqr()
    }

    pub fn energy_b(&self) -> f64 {
        self.b.norm_sqr()
    }

    pub fn total_energy(&self) -> f64 {
        self.a.norm_sqr() + self.b.norm_sqr()
    }

    pub fn is_finite(&self) -> bool {
        self.a.re.is_finite() && self.a.im.is_finite() && self.b.re.is_finite() && self.b.im.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::TWO_PI;

    #[test]
    fn readout_rates_from_quality_factors() {
        let m = mode_params_from_q(TWO_PI * 8.70e9, 900_000.0, 50_000.0).unwrap();
        let total_khz = m.gamma_total() / TWO_PI / 1e3;
        // 8.70 GHz / 9e5 + 8.70 GHz / 5e4 = 9.67 + 174 kHz
        assert!((total_khz - 183.67).abs() < 0.01, "{total_khz}");
        let quoted = 170.0;
        assert!((total_khz - quoted).abs() / quoted < 0.10);
    }

    #[test]
    fn infinite_q_is_lossless() {
        let m = mode_params_from_q(1.0e9, f64::INFINITY, f64::INFINITY).unwrap();
        assert_eq!(m.gamma_int, 0.0);
        assert_eq!(m.gamma_ext, 0.0);
        assert_eq!(m.q_int(), None);
    }

    #[test]
    fn non_positive_q_rejected() {
        assert!(mode_params_from_q(1.0e9, 0.0, 1e4).is_err());
        assert!(mode_params_from_q(1.0e9, 1e4, -3.0).is_err());
        assert!(mode_params_from_q(-1.0, 1e4, 1e4).is_err());
        assert!(ModeParams::new(1.0e9, -1.0, 0.0).is_err());
    }

    #[test]
    fn storage_rate_from_t1() {
        let m = ModeParams::storage_default();
        assert!((m.gamma_int - 1.0 / 14.9e-6).abs() < 1e-6);
        let khz = m.gamma_int / TWO_PI / 1e3;
        assert!((khz - 10.68).abs() < 0.01, "{khz}");
        assert_eq!(m.gamma_ext, 0.0);
        assert!((m.t1() - 14.9e-6).abs() < 1e-18);
    }

    #[test]
    fn q_round_trip() {
        for &(w, qi, qe) in &[(TWO_PI * 8.7e9, 9e5, 5e4), (3.3e7, 12.5, 1e12), (1.0, 0.3, 7.0)] {
            let m = ModeParams::from_q(w, qi, qe).unwrap();
            assert!((m.q_int().unwrap() - qi).abs() / qi < 1e-12);
            assert!((m.q_ext().unwrap() - qe).abs() / qe < 1e-12);
        }
    }

    #[test]
    fn detuning_examples() {
        let a = ModeParams::lossless(TWO_PI * 8.70e9).unwrap();
        let b = ModeParams::lossless(TWO_PI * 9.33e9).unwrap();
        let p = PumpDrive::new(TWO_PI * 632.5e6, 0.0, Envelope::Off).unwrap();
        let d = detuning(&p, &a, &b) / TWO_PI;
        assert!((d - 2.5e6).abs() < 1.0, "{d}");

        let p = PumpDrive::new((b.omega - a.omega).abs(), 0.0, Envelope::Off).unwrap();
        assert_eq!(detuning(&p, &a, &b), 0.0);

        let p = PumpDrive::at_detuning(TWO_PI * 1e6, &a, &b, 0.0, Envelope::Off).unwrap();
        assert!((detuning(&p, &a, &b) - TWO_PI * 1e6).abs() < 1e-3);
    }

    #[test]
    fn envelope_support_and_ramps() {
        let e = Envelope::Pulse { amplitude: 2.0, start: 1.0, end: 3.0, ramp: 0.5 };
        e.validate().unwrap();
        assert_eq!(e.value(0.99), 0.0);
        assert_eq!(e.value(3.01), 0.0);
        assert_eq!(e.value(2.0), 2.0);
        assert!((e.value(1.25) - 1.0).abs() < 1e-12);
        assert!((e.value(2.75) - 1.0).abs() < 1e-12);
        assert!(Envelope::Pulse { amplitude: 1.0, start: 0.0, end: 1.0, ramp: 0.6 }
            .validate()
            .is_err());
        assert!(Envelope::Constant { amplitude: -1.0 }.validate().is_err());
    }

    #[test]
    fn coupler_flux_wraps() {
        let c = CouplerState::new(1.25, 0.2, -0.1, None).unwrap();
        assert!((c.phi_dc - 0.25).abs() < 1e-15);
        assert!((c.phi_offset - 0.9).abs() < 1e-15);
        assert!(CouplerState::new(0.0, -0.1, 0.0, None).is_err());
    }
}
