//! Timed pulse sequences: load a coherent state into the readout mode, swap
//! it into storage, wait, swap it back and read it out.
//!
//! Sequence files are line oriented. `#` starts a comment. Every line is a
//! directive followed by `key=value` fields; dimensional values must carry
//! one of the units GHz, MHz, kHz, Hz, s, ms, us, ns, deg, rad or dBm.
//!
//! ```text
//! mode A freq=8.70GHz q_int=900e3 q_ext=50e3
//! mode B freq=9.33GHz t1=14.9us
//! sim dt=0.1ns stride=10 frame=rotating load=drive tol=1e-6
//! flux calib=79.6 phi_dc=0.14
//! seg load dur=20us nbar=10
//! seg swap dur=0.6us gp=1.2MHz delta=0Hz phase=0deg
//! seg delay dur=5us
//! seg swap dur=0.6us gp=1.2MHz delta=0Hz phase=90deg
//! seg readout dur=5us
//! ```

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::dynamics::{integrate, DriveTone, Frame, Sample, SimConfig, Span, TraceRecord};
use crate::error::{Error, Result};
use crate::flux::DeviceCalibration;
use crate::model::{ComplexAmplitudePair, Envelope, ModeParams, PumpDrive};
use crate::units::{Dimension, Quantity};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SwapCoupling {
    /// Coupling amplitude g_P (rad/s).
    Rate(f64),
    /// Pump power in dBm, converted through the device calibration.
    Power(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapParams {
    pub coupling: SwapCoupling,
    pub delta: f64,
    pub phase: f64,
    /// Raised-cosine edge length (s); zero for a rectangular pulse.
    pub ramp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoadTarget {
    /// Mean photon number left in the readout mode at the end of the load.
    Nbar(f64),
    /// Incident amplitude in sqrt(photons/s).
    Incident(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadParams {
    pub target: LoadTarget,
    /// Drive frequency (rad/s); the readout frequency when absent.
    pub omega_d: Option<f64>,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentKind {
    Load(LoadParams),
    Swap(SwapParams),
    Delay,
    Readout,
}

impl SegmentKind {
    pub fn name(&self) -> &'static str {
        match self {
            SegmentKind::Load(_) => "load",
            SegmentKind::Swap(_) => "swap",
            SegmentKind::Delay => "delay",
            SegmentKind::Readout => "readout",
        }
    }
}

/// One field as written in the file.
type Field = (String, String);

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub duration: f64,
    fields: Vec<Field>,
}

impl Segment {
    pub fn load_nbar(duration: f64, nbar: f64) -> Self {
        Self {
            kind: SegmentKind::Load(LoadParams { target: LoadTarget::Nbar(nbar), omega_d: None, phase: 0.0 }),
            duration,
            fields: vec![time_field("dur", duration), scalar_field("nbar", nbar)],
        }
    }

    pub fn swap(duration: f64, g_p: f64, delta: f64, phase: f64) -> Self {
        Self::swap_with(duration, SwapParams { coupling: SwapCoupling::Rate(g_p), delta, phase, ramp: 0.0 })
    }

    pub fn swap_with(duration: f64, params: SwapParams) -> Self {
        let mut fields = vec![time_field("dur", duration)];
        match params.coupling {
            SwapCoupling::Rate(g) => fields.push(freq_field("gp", g)),
            SwapCoupling::Power(p) => fields.push(("power".into(), format!("{p}dBm"))),
        }
        fields.push(freq_field("delta", params.delta));
        fields.push(("phase".into(), format!("{}rad", params.phase)));
        if params.ramp > 0.0 {
            fields.push(time_field("ramp", params.ramp));
        }
        Self { kind: SegmentKind::Swap(params), duration, fields }
    }

    pub fn delay(duration: f64) -> Self {
        Self { kind: SegmentKind::Delay, duration, fields: vec![time_field("dur", duration)] }
    }

    pub fn readout(duration: f64) -> Self {
        Self { kind: SegmentKind::Readout, duration, fields: vec![time_field("dur", duration)] }
    }
}

fn time_field(key: &str, v: f64) -> Field {
    (key.into(), Quantity::from_value(v, Dimension::Time, "us").literal().to_string())
}

fn freq_field(key: &str, v: f64) -> Field {
    (key.into(), Quantity::from_value(v, Dimension::Frequency, "MHz").literal().to_string())
}

fn scalar_field(key: &str, v: f64) -> Field {
    (key.into(), format!("{v}"))
}

/// How load segments prepare the coherent state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Integrate a resonant port drive scaled to reach the target n̄.
    Drive,
    /// Place a(t) = sqrt(n̄) at the end of the load window without integrating.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub frame: Frame,
    pub dt: f64,
    pub stride: usize,
    pub load: LoadMode,
    pub tolerance: f64,
    fields: Vec<Field>,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            frame: Frame::Rotating,
            dt: 1e-10,
            stride: 10,
            load: LoadMode::Drive,
            tolerance: 1e-6,
            fields: Vec::new(),
        }
    }
}

/// Ordered segments plus the modes, calibration and integrator settings they
/// run with.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pub mode_a: ModeParams,
    pub mode_b: ModeParams,
    pub calibration: DeviceCalibration,
    pub sim: SimSettings,
    pub segments: Vec<Segment>,
    mode_lines: [Option<Vec<Field>>; 2],
    flux_fields: Option<Vec<Field>>,
}

impl PulseSequence {
    pub fn new(mode_a: ModeParams, mode_b: ModeParams, segments: Vec<Segment>) -> Result<Self> {
        let seq = Self {
            mode_a,
            mode_b,
            calibration: DeviceCalibration::reference(),
            sim: SimSettings::default(),
            segments,
            mode_lines: [None, None],
            flux_fields: None,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn with_sim(mut self, frame: Frame, dt: f64, stride: usize, load: LoadMode) -> Self {
        self.sim.frame = frame;
        self.sim.dt = dt;
        self.sim.stride = stride;
        self.sim.load = load;
        self.sim.fields = vec![
            ("dt".into(), Quantity::from_value(dt, Dimension::Time, "ns").literal().to_string()),
            ("stride".into(), stride.to_string()),
            ("frame".into(), frame.to_string()),
            (
                "load".into(),
                match load {
                    LoadMode::Drive => "drive",
                    LoadMode::Direct => "direct",
                }
                .into(),
            ),
        ];
        self
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::validation("empty sequence"));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            let sem = |message: &str| Error::Semantic { index: i + 1, message: message.into() };
            if !(seg.duration.is_finite() && seg.duration > 0.0) {
                return Err(sem("duration must be positive"));
            }
            match seg.kind {
                SegmentKind::Swap(p) => {
                    match p.coupling {
                        SwapCoupling::Rate(g) if !(g.is_finite() && g >= 0.0) => {
                            return Err(sem("gp must be >= 0"))
                        }
                        SwapCoupling::Power(p) if p.is_nan() || p == f64::INFINITY => {
                            return Err(sem("power must be finite or -inf"))
                        }
                        _ => {}
                    }
                    if !(p.ramp >= 0.0 && 2.0 * p.ramp <= seg.duration) {
                        return Err(sem("ramp must fit twice inside the swap"));
                    }
                }
                SegmentKind::Load(l) => match l.target {
                    LoadTarget::Nbar(n) | LoadTarget::Incident(n) if !(n.is_finite() && n >= 0.0) => {
                        return Err(sem("load target must be >= 0"))
                    }
                    _ => {}
                },
                _ => {}
            }
        }
        if !(self.sim.dt > 0.0) || self.sim.stride == 0 || !(self.sim.tolerance > 0.0) {
            return Err(Error::validation("sim settings need dt > 0, stride >= 1, tol > 0"));
        }
        Ok(())
    }

    /// Text form of the sequence; parses back to an equal sequence.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let line = |out: &mut String, head: &str, fields: &[Field]| {
            out.push_str(head);
            for (k, v) in fields {
                let _ = write!(out, " {k}={v}");
            }
            out.push('\n');
        };
        for (label, fields) in ["A", "B"].iter().zip(&self.mode_lines) {
            if let Some(f) = fields {
                line(&mut out, &format!("mode {label}"), f);
            }
        }
        if !self.sim.fields.is_empty() {
            line(&mut out, "sim", &self.sim.fields);
        }
        if let Some(f) = &self.flux_fields {
            line(&mut out, "flux", f);
        }
        for seg in &self.segments {
            line(&mut out, &format!("seg {}", seg.kind.name()), &seg.fields);
        }
        out
    }

    fn coupling_for(&self, c: SwapCoupling) -> Result<f64> {
        match c {
            SwapCoupling::Rate(g) => Ok(g),
            SwapCoupling::Power(p) => Ok(self.calibration.coupling_for_power(p)?.g_p),
        }
    }
}

// ---------------------------------------------------------------------------
// parsing

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token { text: &line[s..i], column: line[..s].chars().count() + 1 });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token { text: &line[s..], column: line[..s].chars().count() + 1 });
    }
    out
}

/// Key/value fields of one line with their positions, in file order.
struct Fields<'a> {
    line: usize,
    head_column: usize,
    items: Vec<(&'a str, &'a str, usize)>,
}

impl<'a> Fields<'a> {
    fn parse(line: usize, head_column: usize, tokens: &[Token<'a>], allowed: &[&str]) -> Result<Self> {
        let mut items: Vec<(&str, &str, usize)> = Vec::new();
        for tok in tokens {
            let Some((k, v)) = tok.text.split_once('=') else {
                return Err(syntax(line, tok.column, format!("expected key=value, got `{}`", tok.text)));
            };
            if !allowed.contains(&k) {
                return Err(syntax(line, tok.column, format!("unknown key `{k}`")));
            }
            if items.iter().any(|(seen, _, _)| *seen == k) {
                return Err(syntax(line, tok.column, format!("duplicate key `{k}`")));
            }
            items.push((k, v, tok.column));
        }
        Ok(Self { line, head_column, items })
    }

    fn get(&self, key: &str, dim: Dimension) -> Result<Option<f64>> {
        match self.items.iter().find(|(k, _, _)| *k == key) {
            None => Ok(None),
            Some((_, v, col)) => Quantity::parse(v, dim)
                .map(|q| Some(q.value))
                .map_err(|m| syntax(self.line, col + key.len() + 1, format!("{key}: {m}"))),
        }
    }

    fn word(&self, key: &str) -> Option<(&'a str, usize)> {
        self.items.iter().find(|(k, _, _)| *k == key).map(|(_, v, c)| (*v, *c))
    }

    fn has(&self, key: &str) -> bool {
        self.items.iter().any(|(k, _, _)| *k == key)
    }

    fn owned(&self) -> Vec<Field> {
        self.items.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect()
    }
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax { line, column, message: message.into() }
}

fn parse_mode(f: &Fields<'_>) -> Result<ModeParams> {
    let at = |m: String| syntax(f.line, f.head_column, m);
    let omega = f.get("freq", Dimension::Frequency)?.ok_or_else(|| at("mode needs freq=".into()))?;
    let q_int = f.get("q_int", Dimension::Scalar)?;
    let q_ext = f.get("q_ext", Dimension::Scalar)?;
    let t1 = f.get("t1", Dimension::Time)?;
    let gamma_ext = match q_ext {
        Some(q) => ModeParams::from_q(omega, f64::INFINITY, q).map_err(|e| at(e.to_string()))?.gamma_ext,
        None => 0.0,
    };
    match (t1, q_int) {
        (Some(_), Some(_)) => Err(at("t1 and q_int both set the internal loss".into())),
        (Some(t1), None) => ModeParams::from_t1(omega, t1, gamma_ext).map_err(|e| at(e.to_string())),
        (None, q_int) => ModeParams::from_q(omega, q_int.unwrap_or(f64::INFINITY), q_ext.unwrap_or(f64::INFINITY))
            .map_err(|e| at(e.to_string())),
    }
}

/// Parse the text of a sequence file.
pub fn parse_sequence(text: &str) -> Result<PulseSequence> {
    let mut mode_a = ModeParams::readout_default();
    let mut mode_b = ModeParams::storage_default();
    let mut mode_lines: [Option<Vec<Field>>; 2] = [None, None];
    let mut sim = SimSettings::default();
    let mut sim_seen = false;
    let mut flux: Option<(Vec<Field>, Option<f64>, Option<f64>)> = None;
    let mut segments = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens = tokenize(content);
        let Some(head) = tokens.first() else { continue };
        match head.text {
            "mode" => {
                let label = tokens
                    .get(1)
                    .ok_or_else(|| syntax(line_no, head.column, "mode needs a label A or B"))?;
                let slot = match label.text {
                    "A" => 0,
                    "B" => 1,
                    other => return Err(syntax(line_no, label.column, format!("unknown mode `{other}`"))),
                };
                if mode_lines[slot].is_some() {
                    return Err(syntax(line_no, label.column, format!("mode {} given twice", label.text)));
                }
                let f = Fields::parse(line_no, head.column, &tokens[2..], &["freq", "q_int", "q_ext", "t1"])?;
                let params = parse_mode(&f)?;
                if slot == 0 {
                    mode_a = params;
                } else {
                    mode_b = params;
                }
                mode_lines[slot] = Some(f.owned());
            }
            "sim" => {
                if sim_seen {
                    return Err(syntax(line_no, head.column, "sim given twice"));
                }
                sim_seen = true;
                let f = Fields::parse(line_no, head.column, &tokens[1..], &["dt", "stride", "frame", "load", "tol"])?;
                if let Some(dt) = f.get("dt", Dimension::Time)? {
                    sim.dt = dt;
                }
                if let Some(s) = f.get("stride", Dimension::Scalar)? {
                    if !(s >= 1.0 && s.fract() == 0.0) {
                        return Err(syntax(line_no, f.word("stride").map_or(1, |w| w.1), "stride must be a positive integer"));
                    }
                    sim.stride = s as usize;
                }
                if let Some(tol) = f.get("tol", Dimension::Scalar)? {
                    sim.tolerance = tol;
                }
                if let Some((w, col)) = f.word("frame") {
                    sim.frame = w.parse().map_err(|e: Error| syntax(line_no, col, e.to_string()))?;
                }
                if let Some((w, col)) = f.word("load") {
                    sim.load = match w {
                        "drive" => LoadMode::Drive,
                        "direct" => LoadMode::Direct,
                        other => return Err(syntax(line_no, col, format!("unknown load mode `{other}`"))),
                    };
                }
                sim.fields = f.owned();
            }
            "flux" => {
                if flux.is_some() {
                    return Err(syntax(line_no, head.column, "flux given twice"));
                }
                let f = Fields::parse(line_no, head.column, &tokens[1..], &["calib", "phi_dc"])?;
                flux = Some((f.owned(), f.get("calib", Dimension::Scalar)?, f.get("phi_dc", Dimension::Scalar)?));
            }
            "seg" => {
                let kind_tok = tokens
                    .get(1)
                    .ok_or_else(|| syntax(line_no, head.column, "seg needs a kind"))?;
                let index = segments.len() + 1;
                let allowed: &[&str] = match kind_tok.text {
                    "load" => &["dur", "nbar", "amp", "freq", "phase"],
                    "swap" => &["dur", "gp", "power", "delta", "phase", "ramp"],
                    "delay" | "readout" => &["dur"],
                    other => {
                        return Err(syntax(line_no, kind_tok.column, format!("unknown segment kind `{other}`")))
                    }
                };
                let f = Fields::parse(line_no, head.column, &tokens[2..], allowed)?;
                let sem = |message: &str| Error::Semantic { index, message: message.into() };
                let duration = f.get("dur", Dimension::Time)?.ok_or_else(|| sem("missing dur"))?;
                if !(duration > 0.0) {
                    return Err(sem("duration must be positive"));
                }
                let kind = match kind_tok.text {
                    "load" => {
                        let target = match (f.get("nbar", Dimension::Scalar)?, f.get("amp", Dimension::Scalar)?) {
                            (Some(n), None) => LoadTarget::Nbar(n),
                            (None, Some(a)) => LoadTarget::Incident(a),
                            (Some(_), Some(_)) => return Err(sem("load takes exactly one of nbar, amp")),
                            (None, None) => return Err(sem("load needs nbar or amp")),
                        };
                        SegmentKind::Load(LoadParams {
                            target,
                            omega_d: f.get("freq", Dimension::Frequency)?,
                            phase: f.get("phase", Dimension::Angle)?.unwrap_or(0.0),
                        })
                    }
                    "swap" => {
                        let coupling = match (f.get("gp", Dimension::Frequency)?, f.get("power", Dimension::Power)?) {
                            (Some(g), None) => SwapCoupling::Rate(g),
                            (None, Some(p)) => SwapCoupling::Power(p),
                            (Some(_), Some(_)) => return Err(sem("swap takes exactly one of gp, power")),
                            (None, None) => return Err(sem("swap needs gp or power")),
                        };
                        SegmentKind::Swap(SwapParams {
                            coupling,
                            delta: f.get("delta", Dimension::Frequency)?.unwrap_or(0.0),
                            phase: f.get("phase", Dimension::Angle)?.unwrap_or(0.0),
                            ramp: f.get("ramp", Dimension::Time)?.unwrap_or(0.0),
                        })
                    }
                    "delay" => SegmentKind::Delay,
                    _ => SegmentKind::Readout,
                };
                debug_assert!(f.has("dur"));
                segments.push(Segment { kind, duration, fields: f.owned() });
            }
            other => return Err(syntax(line_no, head.column, format!("unknown directive `{other}`"))),
        }
    }

    let mut calibration = DeviceCalibration::reference();
    let flux_fields = flux.map(|(fields, calib, phi_dc)| {
        if let Some(c) = calib {
            calibration.flux_calib = c;
        }
        if let Some(p) = phi_dc {
            calibration.phi_dc = p.rem_euclid(1.0);
        }
        fields
    });
    let seq = PulseSequence { mode_a, mode_b, calibration, sim, segments, mode_lines, flux_fields };
    seq.validate()?;
    Ok(seq)
}

// ---------------------------------------------------------------------------
// execution

/// Incident amplitude that leaves `nbar` photons in an empty readout mode
/// after driving for `duration` at detuning `delta` from it.
pub fn load_amplitude(mode_a: &ModeParams, nbar: f64, duration: f64, delta: f64) -> Result<f64> {
    if mode_a.gamma_ext <= 0.0 {
        return Err(Error::validation("cannot load through a port with zero external coupling"));
    }
    let lambda = Complex64::new(mode_a.gamma_total() / 2.0, -delta);
    let response = if lambda.norm() == 0.0 {
        duration
    } else {
        let num = Complex64::from_polar(1.0, -delta * duration)
            - Complex64::new((-mode_a.gamma_total() * duration / 2.0).exp(), 0.0);
        (num / lambda).norm()
    };
    if response == 0.0 {
        return Err(Error::validation("load drive has no response at this duration"));
    }
    Ok(nbar.sqrt() / (mode_a.gamma_ext.sqrt() * response))
}

fn sim_config(seq: &PulseSequence, dt: f64, stride: usize, t_end: f64) -> SimConfig {
    SimConfig { frame: seq.sim.frame, dt, t_end, record_stride: stride, tolerance: seq.sim.tolerance }
}

fn run_with(seq: &PulseSequence, initial: ComplexAmplitudePair, dt: f64, stride: usize) -> Result<TraceRecord> {
    seq.validate()?;
    let (ma, mb) = (&seq.mode_a, &seq.mode_b);
    let mut state = initial;
    let mut trace = TraceRecord::new(seq.sim.frame);
    for seg in &seq.segments {
        let t0 = state.t;
        let t1 = t0 + seg.duration;
        let cfg = sim_config(seq, dt, stride, t1);
        let mut part = match seg.kind {
            SegmentKind::Load(load) => {
                let omega_d = load.omega_d.unwrap_or(ma.omega);
                match (seq.sim.load, load.target) {
                    (LoadMode::Direct, LoadTarget::Nbar(n)) => {
                        // coherent state with the phase a resonant drive would give;
                        // the storage mode decays freely meanwhile
                        let mut a = Complex64::from_polar(n.sqrt(), -load.phase);
                        let mut b = state.b * (-mb.gamma_total() * seg.duration / 2.0).exp();
                        if seq.sim.frame == Frame::Lab {
                            a *= Complex64::from_polar(1.0, -ma.omega * t1);
                            b *= Complex64::from_polar(1.0, -mb.omega * seg.duration);
                        }
                        let sqrt_gext = ma.gamma_ext.sqrt();
                        let mut p = TraceRecord::new(seq.sim.frame);
                        p.samples = vec![
                            Sample { t: t0, a: state.a, b: state.b, a_out: -sqrt_gext * state.a },
                            Sample { t: t1, a, b, a_out: -sqrt_gext * a },
                        ];
                        p
                    }
                    (_, target) => {
                        let amp = match target {
                            LoadTarget::Nbar(n) => load_amplitude(ma, n, seg.duration, omega_d - ma.omega)?,
                            LoadTarget::Incident(a) => a,
                        };
                        // phase referenced to the start of the window; the same
                        // offset serves both frames
                        let phase = load.phase - (omega_d - ma.omega) * t0;
                        let drive = DriveTone::new(omega_d, amp, phase, t0, t1)?;
                        integrate(&state, ma, mb, &PumpDrive::off(), Some(&drive), &cfg)?
                    }
                }
            }
            SegmentKind::Swap(p) => {
                let g = seq.coupling_for(p.coupling)?;
                let envelope = Envelope::Pulse { amplitude: g, start: t0, end: t1, ramp: p.ramp };
                let pump = PumpDrive::at_detuning(p.delta, ma, mb, p.phase, envelope)?;
                integrate(&state, ma, mb, &pump, None, &cfg)?
            }
            SegmentKind::Delay | SegmentKind::Readout => integrate(&state, ma, mb, &PumpDrive::off(), None, &cfg)?,
        };
        part.spans.push(Span { label: seg.kind.name().into(), start: t0, end: t1 });
        part.metadata.clear();
        state = part.last_state().expect("segment trace is never empty");
        state.t = t1;
        trace.extend(part);
    }
    trace.push_meta("mode_a.freq_hz", crate::units::angular_to_hz(ma.omega));
    trace.push_meta("mode_a.gamma_int_rad_s", ma.gamma_int);
    trace.push_meta("mode_a.gamma_ext_rad_s", ma.gamma_ext);
    trace.push_meta("mode_b.freq_hz", crate::units::angular_to_hz(mb.omega));
    trace.push_meta("mode_b.gamma_int_rad_s", mb.gamma_int);
    trace.push_meta("mode_b.gamma_ext_rad_s", mb.gamma_ext);
    trace.push_meta("sim.dt_s", format!("{dt:e}"));
    trace.push_meta("sim.stride", stride);
    trace.push_meta("sim.tolerance", seq.sim.tolerance);
    Ok(trace)
}

/// Run every segment in order, handing the state from one to the next. The
/// pump phase of each swap is referenced to one continuous oscillator, so
/// phases of different swaps are relative to each other.
pub fn run_sequence(seq: &PulseSequence) -> Result<TraceRecord> {
    run_with(seq, ComplexAmplitudePair::loaded(0.0), seq.sim.dt, seq.sim.stride)
}

/// Largest state difference at segment boundaries, relative to the largest
/// state norm there. Boundaries land on the same instants at any step size.
fn boundary_difference(coarse: &TraceRecord, fine: &TraceRecord) -> f64 {
    let at = |tr: &TraceRecord, t: f64| tr.samples.iter().rev().find(|s| s.t == t).copied();
    let mut scale: f64 = 0.0;
    let mut diff: f64 = 0.0;
    for span in &coarse.spans {
        if let (Some(c), Some(f)) = (at(coarse, span.end), at(fine, span.end)) {
            scale = scale.max((c.a.norm_sqr() + c.b.norm_sqr()).sqrt());
            diff = diff.max(((c.a - f.a).norm_sqr() + (c.b - f.b).norm_sqr()).sqrt());
        }
    }
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// [`run_sequence`] plus a repeat at half the step. Returns the trace and the
/// relative disagreement; fails when it exceeds the sequence tolerance.
pub fn run_sequence_checked(seq: &PulseSequence) -> Result<(TraceRecord, f64)> {
    let coarse = run_sequence(seq)?;
    let fine = run_with(seq, ComplexAmplitudePair::loaded(0.0), seq.sim.dt / 2.0, seq.sim.stride * 2)?;
    let diff = boundary_difference(&coarse, &fine);
    if diff > seq.sim.tolerance {
        return Err(Error::Convergence(format!(
            "halving dt changed the trajectory by {diff:e} (tolerance {:e})",
            seq.sim.tolerance
        )));
    }
    Ok((coarse, diff))
}

/// Residual readout-mode energy after a resonant rectangular swap of length
/// `duration`, starting from one photon in A.
fn swap_residual(mode_a: &ModeParams, mode_b: &ModeParams, g_p: f64, duration: f64, steps: usize) -> Result<f64> {
    let pump = PumpDrive::at_detuning(0.0, mode_a, mode_b, 0.0, Envelope::rectangular(g_p, 0.0, duration))?;
    let cfg = SimConfig { record_stride: steps, ..SimConfig::rotating(duration / steps as f64, duration) };
    let tr = integrate(&ComplexAmplitudePair::loaded(1.0), mode_a, mode_b, &pump, None, &cfg)?;
    Ok(tr.last_state().expect("non-empty").energy_a())
}

/// Pulse length that empties the readout mode after one resonant swap, found
/// by golden-section search over `window`.
pub fn calibrate_swap_time(
    mode_a: &ModeParams,
    mode_b: &ModeParams,
    g_p: f64,
    window: (f64, f64),
    dt: f64,
) -> Result<f64> {
    if !(g_p > 0.0 && g_p.is_finite()) {
        return Err(Error::validation("swap calibration needs g_P > 0"));
    }
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo && dt > 0.0) {
        return Err(Error::validation("swap search window must satisfy 0 < lo < hi"));
    }
    // fixed step count keeps the residual smooth in the pulse length
    let steps = crate::dynamics::step_count(0.0, hi, dt);
    let f = |t: f64| swap_residual(mode_a, mode_b, g_p, t, steps);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..200 {
        if b - a <= 1e-15 * hi {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let t = 0.5 * (a + b);
    let edge = 1e-6 * (hi - lo);
    if t - lo < edge || hi - t < edge {
        return Err(Error::validation(format!(
            "swap search window [{lo:e}, {hi:e}] s does not bracket a minimum"
        )));
    }
    Ok(t)
}

/// Integrated quadratures and energy of the output field over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Demodulated {
    pub i: f64,
    pub q: f64,
    pub energy: f64,
}

impl Demodulated {
    pub fn iq(&self) -> Complex64 {
        Complex64::new(self.i, self.q)
    }
}

/// I + iQ = ∫ a_out(t) e^{+iω_ref t} dt and ∫|a_out|² dt over `window`
/// (trapezoidal rule on the recorded samples). In the rotating frame the
/// reference rotation is the identity.
pub fn demodulate(trace: &TraceRecord, omega_ref: f64, window: (f64, f64)) -> Result<Demodulated> {
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(Error::validation("demodulation window is empty"));
    }
    let (first, last) = match (trace.samples.first(), trace.samples.last()) {
        (Some(f), Some(l)) => (f.t, l.t),
        _ => return Err(Error::validation("demodulation window is empty")),
    };
    let slack = 1e-9 * (last - first).abs().max(t1 - t0);
    if t0 < first - slack || t1 > last + slack {
        return Err(Error::validation("demodulation window lies outside the trace"));
    }
    let pts: Vec<_> = trace.samples.iter().filter(|s| s.t >= t0 - slack && s.t <= t1 + slack).collect();
    if pts.len() < 2 {
        return Err(Error::validation("demodulation window is empty"));
    }
    let rotate = |s: &Sample| match trace.frame {
        Frame::Lab => s.a_out * Complex64::from_polar(1.0, omega_ref * s.t),
        Frame::Rotating => s.a_out,
    };
    let mut iq = Complex64::new(0.0, 0.0);
    let mut energy = 0.0;
    for w in pts.windows(2) {
        let h = w[1].t - w[0].t;
        iq += 0.5 * h * (rotate(w[0]) + rotate(w[1]));
        energy += 0.5 * h * (w[0].a_out.norm_sqr() + w[1].a_out.norm_sqr());
    }
    Ok(Demodulated { i: iq.re, q: iq.im, energy })
}

/// Demodulate the last readout segment of a sequence trace.
pub fn demodulate_readout(trace: &TraceRecord, omega_ref: f64) -> Result<Demodulated> {
    let span = trace
        .spans
        .iter()
        .rev()
        .find(|s| s.label == "readout")
        .ok_or_else(|| Error::validation("trace has no readout segment"))?;
    demodulate(trace, omega_ref, (span.start, span.end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::hz_to_angular;
    use std::f64::consts::PI;

    pub(crate) const CANONICAL: &str = "mode A freq=8.70GHz q_int=900e3 q_ext=50e3
mode B freq=9.33GHz t1=14.9us
seg load dur=20us nbar=10
seg swap dur=0.6us gp=1.2MHz delta=0Hz phase=0deg
seg delay dur=5us
seg swap dur=0.6us gp=1.2MHz delta=0Hz phase=90deg
seg readout dur=5us
";

    #[test]
    fn canonical_file_round_trips() {
        let seq = parse_sequence(CANONICAL).unwrap();
        assert_eq!(seq.segments.len(), 5);
        assert_eq!(seq.emit(), CANONICAL);
        assert_eq!(parse_sequence(&seq.emit()).unwrap(), seq);
        assert_eq!(seq.mode_a, ModeParams::readout_default());
        assert_eq!(seq.mode_b, ModeParams::storage_default());
        match seq.segments[3].kind {
            SegmentKind::Swap(p) => {
                assert!((p.phase - PI / 2.0).abs() < 1e-15);
                assert_eq!(p.coupling, SwapCoupling::Rate(hz_to_angular(1.2e6)));
            }
            _ => panic!("expected swap"),
        }
        assert!((seq.segments[0].duration - 20e-6).abs() < 1e-20);
    }

    #[test]
    fn empty_sequence_rejected() {
        let e = parse_sequence("# nothing here\n\n").unwrap_err();
        assert_eq!(e, Error::Validation("empty sequence".into()));
    }

    #[test]
    fn conflicting_swap_parameters_rejected() {
        let e = parse_sequence("seg load dur=1us nbar=1\nseg swap dur=1us gp=1MHz power=-52dBm\n").unwrap_err();
        assert!(matches!(e, Error::Semantic { index: 2, .. }), "{e}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = parse_sequence("seg delay dur=5us\nseg delay dur=5us colour=red\n").unwrap_err();
        assert_eq!(e, Error::Syntax { line: 2, column: 19, message: "unknown key `colour`".into() });
        let e = parse_sequence("seg delay dur=5\n").unwrap_err();
        assert!(matches!(e, Error::Syntax { line: 1, column: 15, .. }), "{e}");
        let e = parse_sequence("  warp dur=5us\n").unwrap_err();
        assert!(matches!(e, Error::Syntax { line: 1, column: 3, .. }), "{e}");
        let e = parse_sequence("seg delay dur=-5us\n").unwrap_err();
        assert!(matches!(e, Error::Semantic { index: 1, .. }), "{e}");
    }

    #[test]
    fn builder_sequence_round_trips() {
        let seq = PulseSequence::new(
            ModeParams::readout_default(),
            ModeParams::storage_default(),
            vec![
                Segment::load_nbar(1e-6, 10.0),
                Segment::swap(0.2e-6, hz_to_angular(1.2e6), 0.0, 0.25),
                Segment::delay(3e-6),
                Segment::readout(4e-6),
            ],
        )
        .unwrap()
        .with_sim(Frame::Rotating, 0.1e-9, 10, LoadMode::Direct);
        let text = seq.emit();
        let back = parse_sequence(&text).unwrap();
        assert_eq!(back.emit(), text);
        assert_eq!(back.segments.len(), 4);
        assert_eq!(back.sim.load, LoadMode::Direct);
    }

    #[test]
    fn load_then_readout_leaks_branching_ratio() {
        let text = "seg load dur=20us nbar=10\nseg readout dur=5us\n";
        for load in ["drive", "direct"] {
            let seq = parse_sequence(&format!("sim dt=0.2ns load={load}\n{text}")).unwrap();
            let tr = run_sequence(&seq).unwrap();
            let a = seq.mode_a;
            // energy left at the end of the load is the target
            let loaded = tr.samples.iter().find(|s| (s.t - 20e-6).abs() < 1e-12).unwrap();
            assert!((loaded.a.norm_sqr() - 10.0).abs() < 1e-6, "{load}: {}", loaded.a.norm_sqr());
            let d = demodulate_readout(&tr, a.omega).unwrap();
            let expected = 10.0 * a.gamma_ext / a.gamma_total();
            assert!((d.energy - expected).abs() / expected < 0.01, "{load}: {}", d.energy);
        }
    }

    #[test]
    fn lossless_full_swap_parks_state_in_storage() {
        let a = ModeParams::lossless(hz_to_angular(8.7e9)).unwrap();
        let a = ModeParams { gamma_ext: 0.0, ..a };
        let b = ModeParams::lossless(hz_to_angular(9.33e9)).unwrap();
        let g = hz_to_angular(1.2e6);
        let seq = PulseSequence::new(
            a,
            b,
            vec![Segment::load_nbar(1e-6, 10.0), Segment::swap(PI / (2.0 * g), g, 0.0, 0.0), Segment::readout(5e-6)],
        )
        .unwrap()
        .with_sim(Frame::Rotating, 0.1e-9, 10, LoadMode::Direct);
        let tr = run_sequence(&seq).unwrap();
        let end = tr.last_state().unwrap();
        assert!(end.energy_a() < 1e-9 * 10.0);
        assert!((end.energy_b() - 10.0).abs() < 1e-8);
        let d = demodulate_readout(&tr, a.omega).unwrap();
        assert!(d.energy.abs() < 1e-12);
    }

    #[test]
    fn swap_calibration_lossless_and_scaling() {
        let a = ModeParams::lossless(hz_to_angular(8.7e9)).unwrap();
        let b = ModeParams::lossless(hz_to_angular(9.33e9)).unwrap();
        let g = hz_to_angular(1.2e6);
        let t_pi = PI / (2.0 * g);
        let t = calibrate_swap_time(&a, &b, g, (0.5 * t_pi, 1.5 * t_pi), 0.1e-9).unwrap();
        assert!((t - t_pi).abs() < 1e-9, "{t} vs {t_pi}");
        assert!((t_pi * 1e6 - 0.2083).abs() < 1e-3);
        let t2 = calibrate_swap_time(&a, &b, g / 2.0, (t_pi, 3.0 * t_pi), 0.1e-9).unwrap();
        assert!((t2 / t - 2.0).abs() < 1e-6, "{t2} {t}");
    }

    #[test]
    fn swap_calibration_with_readout_loss() {
        // γ_B = 0 closed form: a(t) ∝ cos Ωt − (γ/4Ω) sin Ωt, Ω = sqrt(g² − γ²/16),
        // whose first zero is at tan Ωt = 4Ω/γ
        let a = ModeParams::readout_default();
        let b = ModeParams::lossless(hz_to_angular(9.33e9)).unwrap();
        let g = hz_to_angular(1.2e6);
        let gamma = a.gamma_total();
        let omega = (g * g - gamma * gamma / 16.0).sqrt();
        let expected = (4.0 * omega / gamma).atan() / omega;
        let t_pi = PI / (2.0 * g);
        let t = calibrate_swap_time(&a, &b, g, (0.5 * t_pi, 1.5 * t_pi), 0.1e-9).unwrap();
        assert!((t - expected).abs() < 1e-12, "{t} vs {expected}");
        let shift = (t_pi - t) / t_pi;
        assert!(shift > 0.0 && shift < 0.03, "{shift}");
    }

    #[test]
    fn swap_window_without_minimum_is_an_error() {
        let a = ModeParams::lossless(hz_to_angular(8.7e9)).unwrap();
        let b = ModeParams::lossless(hz_to_angular(9.33e9)).unwrap();
        let g = hz_to_angular(1.2e6);
        let t_pi = PI / (2.0 * g);
        assert!(calibrate_swap_time(&a, &b, g, (0.1 * t_pi, 0.6 * t_pi), 0.1e-9).is_err());
    }

    #[test]
    fn demodulate_constant_tone() {
        let w = hz_to_angular(50e6);
        let amp = Complex64::new(0.3, -0.4);
        let mut tr = TraceRecord::new(Frame::Lab);
        let n = 20_001;
        let period = 1e-6;
        for k in 0..n {
            let t = 2e-6 + period * k as f64 / (n - 1) as f64;
            let a_out = amp * Complex64::from_polar(1.0, -w * t);
            tr.samples.push(Sample { t, a: a_out, b: a_out, a_out });
        }
        let d = demodulate(&tr, w, (2e-6, 3e-6)).unwrap();
        assert!((d.iq() - amp * period).norm() < 1e-15 * 1e3, "{:?}", d);
        assert!((d.energy - amp.norm_sqr() * period).abs() < 1e-18);
    }

    #[test]
    fn demodulate_zero_trace_and_bad_windows() {
        let mut tr = TraceRecord::new(Frame::Rotating);
        for k in 0..11 {
            let z = Complex64::new(0.0, 0.0);
            tr.samples.push(Sample { t: k as f64 * 1e-7, a: z, b: z, a_out: z });
        }
        let d = demodulate(&tr, 1.0, (0.0, 1e-6)).unwrap();
        assert_eq!((d.i, d.q, d.energy), (0.0, 0.0, 0.0));
        assert!(demodulate(&tr, 1.0, (5e-7, 5e-7)).is_err());
        assert!(demodulate(&tr, 1.0, (0.0, 2e-6)).is_err());
    }

    #[test]
    fn identical_sequences_give_identical_traces() {
        let seq = parse_sequence(&format!("sim dt=0.5ns\n{CANONICAL}")).unwrap();
        assert_eq!(run_sequence(&seq).unwrap(), run_sequence(&seq).unwrap());
    }
}
