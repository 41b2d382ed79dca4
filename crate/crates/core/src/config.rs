//! Experiment configuration: flat `key = value` text using the same unit
//! suffixes as sequence files.
//!
//! Every runner declares the keys it reads together with their defaults. The
//! resolved set (defaults plus overrides) is written back verbatim into the
//! run report, so a report's parameter block is itself a valid config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dynamics::Frame;
use crate::error::{Error, Result};
use crate::flux::DeviceCalibration;
use crate::model::ModeParams;
use crate::units::{Dimension, Quantity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Runner {
    Splitting,
    Chevron,
    PowerSweep,
    StoreRetrieve,
    PhaseSweep,
    CustomSequence,
}

impl Runner {
    pub const ALL: [Runner; 6] = [
        Runner::Splitting,
        Runner::Chevron,
        Runner::PowerSweep,
        Runner::StoreRetrieve,
        Runner::PhaseSweep,
        Runner::CustomSequence,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Runner::Splitting => "splitting",
            Runner::Chevron => "chevron",
            Runner::PowerSweep => "power_sweep",
            Runner::StoreRetrieve => "store_retrieve",
            Runner::PhaseSweep => "phase_sweep",
            Runner::CustomSequence => "custom_sequence",
        }
    }

    fn keys(&self) -> Vec<Key> {
        let mut keys = common_keys();
        let own: &[Key] = match self {
            Runner::Splitting => &[
                q("pump.delta_phi", Dimension::Scalar, "0.2"),
                q("split.delta.start", Dimension::Frequency, "-4MHz"),
                q("split.delta.stop", Dimension::Frequency, "4MHz"),
                q("split.delta.count", Dimension::Scalar, "9"),
                q("split.probe.span", Dimension::Frequency, "8MHz"),
                q("split.probe.count", Dimension::Scalar, "1601"),
            ],
            Runner::Chevron => &[
                q("chevron.gp", Dimension::Frequency, "1.2MHz"),
                q("chevron.delta.start", Dimension::Frequency, "-4MHz"),
                q("chevron.delta.stop", Dimension::Frequency, "4MHz"),
                q("chevron.delta.count", Dimension::Scalar, "33"),
                q("chevron.window", Dimension::Time, "10us"),
                q("chevron.nbar", Dimension::Scalar, "10"),
                q("chevron.map_stride", Dimension::Scalar, "10"),
            ],
            Runner::PowerSweep => &[
                q("power.start", Dimension::Power, "-58dBm"),
                q("power.stop", Dimension::Power, "-43dBm"),
                q("power.count", Dimension::Scalar, "7"),
                q("power.include_off", Dimension::Scalar, "1"),
                q("power.window", Dimension::Time, "10us"),
                q("power.nbar", Dimension::Scalar, "10"),
            ],
            Runner::StoreRetrieve => &[
                q("delay.start", Dimension::Time, "1us"),
                q("delay.stop", Dimension::Time, "55us"),
                q("delay.count", Dimension::Scalar, "12"),
            ],
            Runner::PhaseSweep => &[
                q("phase.count", Dimension::Scalar, "16"),
                q("phase.delay", Dimension::Time, "5us"),
            ],
            Runner::CustomSequence => &[Key { name: "sequence.file", kind: Kind::Text, default: "" }],
        };
        keys.extend_from_slice(own);
        if matches!(self, Runner::StoreRetrieve | Runner::PhaseSweep) {
            keys.extend_from_slice(&pulse_keys());
        }
        keys
    }
}

impl fmt::Display for Runner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Runner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Runner::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown runner `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Quantity(Dimension),
    Text,
}

#[derive(Debug, Clone, Copy)]
struct Key {
    name: &'static str,
    kind: Kind,
    default: &'static str,
}

const fn q(name: &'static str, dim: Dimension, default: &'static str) -> Key {
    Key { name, kind: Kind::Quantity(dim), default }
}

fn common_keys() -> Vec<Key> {
    vec![
        q("mode_a.freq", Dimension::Frequency, "8.70GHz"),
        q("mode_a.q_int", Dimension::Scalar, "900e3"),
        q("mode_a.q_ext", Dimension::Scalar, "50e3"),
        q("mode_b.freq", Dimension::Frequency, "9.33GHz"),
        q("mode_b.t1", Dimension::Time, "14.9us"),
        q("sim.dt", Dimension::Time, "0.1ns"),
        q("sim.stride", Dimension::Scalar, "10"),
        q("sim.tol", Dimension::Scalar, "1e-6"),
        Key { name: "sim.frame", kind: Kind::Text, default: "rotating" },
        q("device.coupler_max", Dimension::Frequency, "7.7GHz"),
        q("device.modulation", Dimension::Frequency, "4MHz"),
        q("device.ref_flux", Dimension::Scalar, "0.2"),
        q("device.ref_coupling", Dimension::Frequency, "1.2MHz"),
        q("device.ref_power", Dimension::Power, "-52dBm"),
    ]
}

fn pulse_keys() -> [Key; 7] {
    [
        q("pulse.gp", Dimension::Frequency, "1.2MHz"),
        Key { name: "pulse.t_swap", kind: Kind::Text, default: "auto" },
        q("pulse.ramp", Dimension::Time, "0s"),
        q("load.dur", Dimension::Time, "5us"),
        q("load.nbar", Dimension::Scalar, "10"),
        Key { name: "load.mode", kind: Kind::Text, default: "drive" },
        q("readout.dur", Dimension::Time, "5us"),
    ]
}

/// Resolved configuration for one runner.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub runner: Runner,
    /// Directory that relative paths in the file are resolved against.
    pub base_dir: Option<PathBuf>,
    /// `(key, literal, overridden)` in schema order.
    entries: Vec<(String, String, bool)>,
}

impl ExperimentConfig {
    /// All defaults.
    pub fn defaults(runner: Runner) -> Self {
        Self::parse(runner, "").expect("defaults are valid")
    }

    pub fn load(runner: Runner, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(runner, &text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn parse(runner: Runner, text: &str) -> Result<Self> {
        let keys = runner.keys();
        let mut entries: Vec<(String, String, bool)> =
            keys.iter().map(|k| (k.name.to_string(), k.default.to_string(), false)).collect();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: String| Error::validation(format!("config line {}: {m}", idx + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| at(format!("expected key = value, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "runner" {
                if v != runner.name() {
                    return Err(at(format!("file is for runner `{v}`, not `{runner}`")));
                }
                continue;
            }
            let pos = keys
                .iter()
                .position(|key| key.name == k)
                .ok_or_else(|| at(format!("unknown key `{k}` for runner {runner}")))?;
            if entries[pos].2 {
                return Err(at(format!("duplicate key `{k}`")));
            }
            if let Kind::Quantity(dim) = keys[pos].kind {
                Quantity::parse(v, dim).map_err(|m| at(format!("{k}: {m}")))?;
            }
            entries[pos] = (k.to_string(), v.to_string(), true);
        }
        let cfg = Self { runner, base_dir: None, entries };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replace one value, as if it had been written in the file.
    pub fn set(&mut self, key: &str, literal: &str) -> Result<()> {
        let keys = self.runner.keys();
        let pos = keys
            .iter()
            .position(|k| k.name == key)
            .ok_or_else(|| Error::validation(format!("unknown key `{key}` for runner {}", self.runner)))?;
        if let Kind::Quantity(dim) = keys[pos].kind {
            Quantity::parse(literal, dim).map_err(|m| Error::validation(format!("{key}: {m}")))?;
        }
        let mut next = self.clone();
        next.entries[pos] = (key.to_string(), literal.to_string(), true);
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn literal(&self, key: &str) -> &str {
        self.entries
            .iter()
            .find(|e| e.0 == key)
            .map(|e| e.1.as_str())
            .unwrap_or_else(|| panic!("runner {} has no key {key}", self.runner))
    }

    /// Numeric value in internal units (rad/s, s, rad, dBm).
    pub fn value(&self, key: &str) -> f64 {
        let dim = self
            .runner
            .keys()
            .iter()
            .find_map(|k| match k.kind {
                Kind::Quantity(d) if k.name == key => Some(d),
                _ => None,
            })
            .unwrap_or_else(|| panic!("runner {} has no numeric key {key}", self.runner));
        Quantity::parse(self.literal(key), dim).expect("validated on load").value
    }

    pub fn count(&self, key: &str) -> usize {
        self.value(key) as usize
    }

    pub fn text(&self, key: &str) -> &str {
        self.literal(key)
    }

    pub fn frame(&self) -> Frame {
        self.text("sim.frame").parse().expect("validated on load")
    }

    /// Switch to the lab frame.
    pub fn use_lab_frame(&mut self) {
        self.set("sim.frame", "lab").expect("lab is a valid frame");
    }

    pub fn mode_a(&self) -> Result<ModeParams> {
        ModeParams::from_q(self.value("mode_a.freq"), self.value("mode_a.q_int"), self.value("mode_a.q_ext"))
    }

    pub fn mode_b(&self) -> Result<ModeParams> {
        ModeParams::from_t1(self.value("mode_b.freq"), self.value("mode_b.t1"), 0.0)
    }

    pub fn calibration(&self) -> Result<DeviceCalibration> {
        let ref_flux = self.value("device.ref_flux");
        let mut cal = DeviceCalibration::calibrate(
            self.value("mode_a.freq"),
            self.value("mode_b.freq"),
            self.value("device.coupler_max"),
            0.0,
            crate::units::angular_to_hz(self.value("device.modulation")),
            ref_flux,
            crate::units::angular_to_hz(self.value("device.ref_coupling")),
        )?;
        cal.flux_calib = crate::flux::flux_calibration_for(self.value("device.ref_power"), ref_flux);
        Ok(cal)
    }

    /// Fixed swap duration if configured, `None` for automatic calibration.
    pub fn swap_time(&self) -> Option<f64> {
        match self.text("pulse.t_swap") {
            "auto" => None,
            lit => Some(Quantity::parse(lit, Dimension::Time).expect("validated on load").value),
        }
    }

    fn validate(&self) -> Result<()> {
        let v = |m: String| Error::validation(m);
        for (k, lit, _) in &self.entries {
            if k.ends_with(".count") || k == "sim.stride" || k == "chevron.map_stride" {
                let n: f64 = lit.parse().map_err(|_| v(format!("{k} must be an integer")))?;
                let min = if k.ends_with(".count") { 2.0 } else { 1.0 };
                if !(n >= min && n.fract() == 0.0 && n < 1e9) {
                    return Err(v(format!("{k} must be an integer >= {min}, got {lit}")));
                }
            }
        }
        self.text("sim.frame").parse::<Frame>()?;
        if !(self.value("sim.dt") > 0.0) {
            return Err(v("sim.dt must be positive".into()));
        }
        if !(self.value("sim.tol") > 0.0) {
            return Err(v("sim.tol must be positive".into()));
        }
        self.mode_a()?;
        self.mode_b()?;
        let has = |key: &str| self.entries.iter().any(|e| e.0 == key);
        if has("pulse.t_swap") {
            let t = self.text("pulse.t_swap");
            if t != "auto" {
                let secs = Quantity::parse(t, Dimension::Time).map_err(|m| v(format!("pulse.t_swap: {m}")))?;
                if !(secs.value > 0.0) {
                    return Err(v("pulse.t_swap must be positive or auto".into()));
                }
            }
            match self.text("load.mode") {
                "drive" | "direct" => {}
                other => return Err(v(format!("load.mode must be drive or direct, got `{other}`"))),
            }
            if !(self.value("pulse.gp") > 0.0) {
                return Err(v("pulse.gp must be positive".into()));
            }
        }
        for key in ["delay.start", "phase.delay", "chevron.window", "power.window", "load.dur", "readout.dur"] {
            if has(key) && !(self.value(key) > 0.0) {
                return Err(v(format!("{key} must be positive")));
            }
        }
        if has("delay.start") && !(self.value("delay.stop") > self.value("delay.start")) {
            return Err(v("delay.stop must exceed delay.start".into()));
        }
        if has("power.start") {
            let (a, b) = (self.value("power.start"), self.value("power.stop"));
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(v("power range must be finite with power.stop > power.start".into()));
            }
        }
        if self.runner == Runner::CustomSequence && self.text("sequence.file").is_empty() {
            return Err(v("custom_sequence needs sequence.file".into()));
        }
        Ok(())
    }

    /// Every resolved `key = literal` line, in schema order.
    pub fn resolved(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v, _)| (k.as_str(), v.as_str()))
    }

    pub fn is_overridden(&self, key: &str) -> bool {
        self.entries.iter().any(|e| e.0 == key && e.2)
    }
}

/// Evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![start];
    }
    (0..count)
        .map(|i| if i + 1 == count { stop } else { start + (stop - start) * i as f64 / (count - 1) as f64 })
        .collect()
}
