//! Coupled-mode equations of motion for the readout (A) and storage (B)
//! modes, integrated with fixed-step RK4 in either the lab frame or a frame
//! where each mode rotates at its own natural frequency.
//!
//! Lab frame:
//!
//! ```text
//! da/dt = −i(ω_A − iγ_A/2)a − i g(t) e^{+iσ(ω_P t + φ_P)} b + sqrt(γ_ext,A) a_in(t)
//! db/dt = −i(ω_B − iγ_B/2)b − i g(t) e^{−iσ(ω_P t + φ_P)} a
//! ```
//!
//! σ = +1 when ω_B ≥ ω_A, so that the pump bridges the difference frequency;
//! σ = −1 mirrors the labels. In the rotating frame the carrier terms drop
//! out and the pump phase advances at the detuning Δ only. The readout port
//! obeys a_out = a_in − sqrt(γ_ext,A)·a; the storage mode has no port and all
//! of its dissipation is internal.

use std::fmt;
use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{detuning, ComplexAmplitudePair, Envelope, ModeParams, PumpDrive};
use crate::units::TWO_PI;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Minimum number of steps per period of the fastest rate in the frame.
pub const STEPS_PER_PERIOD: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Lab,
    Rotating,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frame::Lab => "lab",
            Frame::Rotating => "rotating",
        })
    }
}

impl std::str::FromStr for Frame {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lab" => Ok(Frame::Lab),
            "rotating" => Ok(Frame::Rotating),
            other => Err(Error::validation(format!("unknown frame `{other}`"))),
        }
    }
}

/// Coherent drive incident on the readout port.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveTone {
    pub omega_d: f64,
    /// Incident amplitude in sqrt(photons/s).
    pub amp_in: f64,
    pub phase: f64,
    pub start: f64,
    pub end: f64,
}

impl DriveTone {
    pub fn new(omega_d: f64, amp_in: f64, phase: f64, start: f64, end: f64) -> Result<Self> {
        if !(amp_in.is_finite() && amp_in >= 0.0) {
            return Err(Error::validation("drive amplitude must be >= 0"));
        }
        if !(omega_d.is_finite() && phase.is_finite()) {
            return Err(Error::validation("drive frequency and phase must be finite"));
        }
        if !(start.is_finite() && end.is_finite() && start <= end) {
            return Err(Error::validation("drive support must satisfy start <= end"));
        }
        Ok(Self { omega_d, amp_in, phase, start, end })
    }

    #[inline]
    fn active(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub frame: Frame,
    /// Upper bound on the integrator step (s).
    pub dt: f64,
    /// Absolute end time (s).
    pub t_end: f64,
    pub record_stride: usize,
    /// Largest accepted relative change when the step is halved.
    pub tolerance: f64,
}

impl SimConfig {
    pub fn rotating(dt: f64, t_end: f64) -> Self {
        Self { frame: Frame::Rotating, dt, t_end, record_stride: 1, tolerance: 1e-6 }
    }

    pub fn lab(dt: f64, t_end: f64) -> Self {
        Self { frame: Frame::Lab, ..Self::rotating(dt, t_end) }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::validation(format!("dt must be positive, got {}", self.dt)));
        }
        if !self.t_end.is_finite() {
            return Err(Error::validation("t_end must be finite"));
        }
        if self.record_stride == 0 {
            return Err(Error::validation("record_stride must be >= 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::validation("tolerance must be positive"));
        }
        Ok(())
    }
}

/// One recorded point of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub a: Complex64,
    pub b: Complex64,
    pub a_out: Complex64,
}

impl Sample {
    pub fn state(&self) -> ComplexAmplitudePair {
        ComplexAmplitudePair::new(self.a, self.b, self.t)
    }
}

/// Labelled time interval inside a trace (one per sequence segment).
#[derive(Debug, Clone, PartialEq)]
pub struct Span {
    pub label: String,
    pub start: f64,
    pub end: f64,
}

/// Sampled output of an integration plus the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub frame: Frame,
    pub samples: Vec<Sample>,
    pub spans: Vec<Span>,
    pub metadata: Vec<(String, String)>,
}

impl TraceRecord {
    pub fn new(frame: Frame) -> Self {
        Self { frame, samples: Vec::new(), spans: Vec::new(), metadata: Vec::new() }
    }

    pub fn last_state(&self) -> Option<ComplexAmplitudePair> {
        self.samples.last().map(Sample::state)
    }

    pub fn push_meta(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.metadata.push((key.into(), value.to_string()));
    }

    /// Append a continuation, dropping its first sample when it repeats our last.
    pub fn extend(&mut self, other: TraceRecord) {
        let mut it = other.samples.into_iter().peekable();
        if let (Some(last), Some(first)) = (self.samples.last(), it.peek()) {
            if last.t == first.t {
                let first = it.next().expect("peeked");
                // the continuation carries the a_out of the new segment's inputs
                *self.samples.last_mut().expect("non-empty") = first;
            }
        }
        self.samples.extend(it);
        self.spans.extend(other.spans);
    }

    pub fn span(&self, label: &str) -> Option<&Span> {
        self.spans.iter().find(|s| s.label == label)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_s,re_a,im_a,re_b,im_b,re_aout,im_aout")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                s.t, s.a.re, s.a.im, s.b.re, s.b.im, s.a_out.re, s.a_out.im
            )?;
        }
        Ok(())
    }

    /// Flat `key = value` sidecar with the frame, spans and parameters.
    pub fn write_metadata<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "frame = {}", self.frame)?;
        writeln!(w, "samples = {}", self.samples.len())?;
        for (k, v) in &self.metadata {
            writeln!(w, "{k} = {v}")?;
        }
        for (i, s) in self.spans.iter().enumerate() {
            writeln!(w, "span.{i} = {} {:e} {:e}", s.label, s.start, s.end)?;
        }
        Ok(())
    }
}

/// Right-hand side of the equations of motion with everything precomputed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Rhs {
    frame: Frame,
    mode_a: ModeParams,
    mode_b: ModeParams,
    envelope: Envelope,
    /// Multiplies the envelope; only flipped by tests that probe sign symmetry.
    pub(crate) g_sign: f64,
    sigma: f64,
    /// Angular rate of the pump phase in this frame (ω_P or Δ).
    pump_rate: f64,
    pump_phase: f64,
    drive: Option<DriveTone>,
    sqrt_gext: f64,
}

impl Rhs {
    pub(crate) fn new(
        mode_a: &ModeParams,
        mode_b: &ModeParams,
        pump: &PumpDrive,
        drive: Option<&DriveTone>,
        frame: Frame,
    ) -> Self {
        let pump_rate = match frame {
            Frame::Lab => pump.omega_p,
            Frame::Rotating => detuning(pump, mode_a, mode_b),
        };
        Self {
            frame,
            mode_a: *mode_a,
            mode_b: *mode_b,
            envelope: pump.envelope,
            g_sign: 1.0,
            sigma: if mode_b.omega >= mode_a.omega { 1.0 } else { -1.0 },
            pump_rate,
            pump_phase: pump.phi_p,
            drive: drive.copied(),
            sqrt_gext: mode_a.gamma_ext.sqrt(),
        }
    }

    /// Incident field in this frame.
    #[inline]
    fn a_in(&self, t: f64) -> Complex64 {
        match self.drive {
            Some(d) if d.active(t) => {
                let rate = match self.frame {
                    Frame::Lab => d.omega_d,
                    Frame::Rotating => d.omega_d - self.mode_a.omega,
                };
                Complex64::from_polar(d.amp_in, -(rate * t + d.phase))
            }
            _ => Complex64::new(0.0, 0.0),
        }
    }

    #[inline]
    fn eval(&self, t: f64, a: Complex64, b: Complex64) -> (Complex64, Complex64) {
        let (ga, gb) = (self.mode_a.gamma_total(), self.mode_b.gamma_total());
        let (mut da, mut db) = match self.frame {
            Frame::Lab => (
                -I * Complex64::new(self.mode_a.omega, -ga / 2.0) * a,
                -I * Complex64::new(self.mode_b.omega, -gb / 2.0) * b,
            ),
            Frame::Rotating => (-0.5 * ga * a, -0.5 * gb * b),
        };
        let g = self.g_sign * self.envelope.value(t);
        if g != 0.0 {
            let pump = Complex64::from_polar(1.0, self.sigma * (self.pump_rate * t + self.pump_phase));
            da -= I * g * pump * b;
            db -= I * g * pump.conj() * a;
        }
        if self.drive.is_some() {
            da += self.sqrt_gext * self.a_in(t);
        }
        (da, db)
    }

    #[inline]
    fn sample(&self, t: f64, a: Complex64, b: Complex64) -> Sample {
        Sample { t, a, b, a_out: self.a_in(t) - self.sqrt_gext * a }
    }

    /// Fastest angular rate the step must resolve.
    fn fastest_rate(&self) -> f64 {
        let mut rates = vec![
            self.envelope.peak(),
            self.mode_a.gamma_total(),
            self.mode_b.gamma_total(),
        ];
        match self.frame {
            Frame::Lab => {
                rates.extend([self.mode_a.omega, self.mode_b.omega]);
                if self.envelope.peak() > 0.0 {
                    rates.push(self.pump_rate.abs());
                }
                if let Some(d) = self.drive {
                    rates.push(d.omega_d.abs());
                }
            }
            Frame::Rotating => {
                if self.envelope.peak() > 0.0 {
                    rates.push(self.pump_rate.abs());
                }
                if let Some(d) = self.drive {
                    rates.push((d.omega_d - self.mode_a.omega).abs());
                }
            }
        }
        rates.into_iter().fold(0.0, f64::max)
    }
}

/// Time derivative of the state (pure).
pub fn derivative(
    state: &ComplexAmplitudePair,
    mode_a: &ModeParams,
    mode_b: &ModeParams,
    pump: &PumpDrive,
    drive: Option<&DriveTone>,
    frame: Frame,
) -> (Complex64, Complex64) {
    Rhs::new(mode_a, mode_b, pump, drive, frame).eval(state.t, state.a, state.b)
}

/// Integrate from `initial.t` to `config.t_end` with classic RK4.
pub fn integrate(
    initial: &ComplexAmplitudePair,
    mode_a: &ModeParams,
    mode_b: &ModeParams,
    pump: &PumpDrive,
    drive: Option<&DriveTone>,
    config: &SimConfig,
) -> Result<TraceRecord> {
    pump.envelope.validate()?;
    let rhs = Rhs::new(mode_a, mode_b, pump, drive, config.frame);
    run(&rhs, initial, config)
}

/// Same as [`integrate`] but also repeats the run at half the step and
/// returns the largest relative disagreement between the two trajectories.
pub fn integrate_checked(
    initial: &ComplexAmplitudePair,
    mode_a: &ModeParams,
    mode_b: &ModeParams,
    pump: &PumpDrive,
    drive: Option<&DriveTone>,
    config: &SimConfig,
) -> Result<(TraceRecord, f64)> {
    let coarse = integrate(initial, mode_a, mode_b, pump, drive, config)?;
    let fine_cfg = SimConfig { dt: config.dt / 2.0, record_stride: config.record_stride * 2, ..*config };
    let fine = integrate(initial, mode_a, mode_b, pump, drive, &fine_cfg)?;
    let diff = trajectory_difference(&coarse, &fine)?;
    Ok((coarse, diff))
}

/// Largest state difference between two traces sampled at the same times,
/// relative to the largest state norm along the coarse trace.
pub fn trajectory_difference(coarse: &TraceRecord, fine: &TraceRecord) -> Result<f64> {
    if coarse.samples.len() != fine.samples.len() {
        return Err(Error::Convergence(format!(
            "half-step run recorded {} samples, full-step run {}",
            fine.samples.len(),
            coarse.samples.len()
        )));
    }
    let mut scale: f64 = 0.0;
    let mut diff: f64 = 0.0;
    for (c, f) in coarse.samples.iter().zip(&fine.samples) {
        scale = scale.max((c.a.norm_sqr() + c.b.norm_sqr()).sqrt());
        diff = diff.max(((c.a - f.a).norm_sqr() + (c.b - f.b).norm_sqr()).sqrt());
    }
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

pub(crate) fn step_count(t0: f64, t_end: f64, dt: f64) -> usize {
    // the small slack keeps exact multiples from gaining a step to rounding
    (((t_end - t0) / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

pub(crate) fn run(rhs: &Rhs, initial: &ComplexAmplitudePair, config: &SimConfig) -> Result<TraceRecord> {
    config.validate()?;
    if !initial.is_finite() {
        return Err(Error::NonFinite { t: initial.t, detail: "initial state".into() });
    }
    let span = config.t_end - initial.t;
    if !(span > 0.0) {
        return Err(Error::validation(format!(
            "t_end {:e} s must exceed the start time {:e} s",
            config.t_end, initial.t
        )));
    }
    let fastest = rhs.fastest_rate();
    if fastest > 0.0 {
        let max_dt = TWO_PI / (STEPS_PER_PERIOD * fastest);
        if config.dt > max_dt {
            let frame = match config.frame {
                Frame::Lab => "lab",
                Frame::Rotating => "rotating",
            };
            return Err(Error::Resolution { frame, dt: config.dt, max_dt });
        }
    }

    let n = step_count(initial.t, config.t_end, config.dt);
    let h = span / n as f64;
    let t0 = initial.t;
    let (mut a, mut b) = (initial.a, initial.b);
    let mut trace = TraceRecord::new(config.frame);
    trace.samples.reserve(n / config.record_stride + 2);
    trace.samples.push(rhs.sample(t0, a, b));

    for k in 0..n {
        let t = t0 + h * k as f64;
        // the last stage sits exactly on t_end so pulse edges there are seen as on
        let t_next = if k + 1 == n { config.t_end } else { t0 + h * (k + 1) as f64 };
        let (k1a, k1b) = rhs.eval(t, a, b);
        let (k2a, k2b) = rhs.eval(t + 0.5 * h, a + 0.5 * h * k1a, b + 0.5 * h * k1b);
        let (k3a, k3b) = rhs.eval(t + 0.5 * h, a + 0.5 * h * k2a, b + 0.5 * h * k2b);
        let (k4a, k4b) = rhs.eval(t_next, a + h * k3a, b + h * k3b);
        a += h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
        b += h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);

        if !(a.re.is_finite() && a.im.is_finite() && b.re.is_finite() && b.im.is_finite()) {
            return Err(Error::NonFinite {
                t: t_next,
                detail: format!("after step {} of {n} (h = {h:e} s)", k + 1),
            });
        }
        if (k + 1) % config.record_stride == 0 || k + 1 == n {
            trace.samples.push(rhs.sample(t_next, a, b));
        }
    }
    trace.push_meta("dt_s", format!("{h:e}"));
    Ok(trace)
}

/// Energy-oscillation angular frequency of the lossless detuned pair,
/// sqrt(Δ² + 4 g_P²).
pub fn rabi_frequency(delta: f64, g_p: f64) -> f64 {
    (delta * delta + 4.0 * g_p * g_p).sqrt()
}

/// Steady-state reflection coefficient of the readout port under a weak
/// continuous probe, with the pump dressing the readout mode through B.
pub fn reflection_spectrum(
    mode_a: &ModeParams,
    mode_b: &ModeParams,
    pump: &PumpDrive,
    probe_omegas: &[f64],
) -> Result<Vec<Complex64>> {
    let g = match pump.envelope {
        Envelope::Off => 0.0,
        Envelope::Constant { amplitude } => amplitude,
        Envelope::Pulse { .. } => {
            return Err(Error::validation("reflection spectrum needs a continuous-wave pump"))
        }
    };
    pump.envelope.validate()?;
    let sigma = if mode_b.omega >= mode_a.omega { 1.0 } else { -1.0 };
    probe_omegas
        .iter()
        .map(|&w| {
            // probe at ω in A couples to the sideband ω + σω_P in B
            let da = Complex64::new(mode_a.gamma_total() / 2.0, mode_a.omega - w);
            let db = Complex64::new(mode_b.gamma_total() / 2.0, mode_b.omega - (w + sigma * pump.omega_p));
            let det = da * db + g * g;
            if det == Complex64::new(0.0, 0.0) {
                return Err(Error::Singular(format!(
                    "undamped resonance at probe {:e} rad/s",
                    w
                )));
            }
            Ok(Complex64::new(1.0, 0.0) - mode_a.gamma_ext * db / det)
        })
        .collect()
}
