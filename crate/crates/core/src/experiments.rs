//! Experiment runners: each turns an [`ExperimentConfig`] into CSV tables and
//! a flat key/value report.
//!
//! Sweep points run on a rayon pool and are assembled in sweep order, so the
//! output does not depend on the number of worker threads.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::analysis::{
    dwell_times, efficiency, fit_exponential_decay, fit_line, fit_phase_slope, oscillation_frequency, FitResult,
};
use crate::config::{linspace, ExperimentConfig, Runner};
use crate::dynamics::{integrate_checked, reflection_spectrum, step_count, Frame, SimConfig, TraceRecord};
use crate::error::{Error, Result};
use crate::model::{ComplexAmplitudePair, Envelope, ModeParams, PumpDrive};
use crate::sequencer::{
    calibrate_swap_time, demodulate_readout, parse_sequence, run_sequence_checked, LoadMode, PulseSequence, Segment,
    SwapParams, SwapCoupling,
};
use crate::units::{angular_to_hz, dbm_to_mw};

/// A CSV table with its column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, columns: &[&'static str]) -> Self {
        Self { name: name.into(), columns: columns.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// CSV text with a `#` header block carrying the resolved parameters.
    pub fn to_csv(&self, cfg: &ExperimentConfig) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# runner = {}", cfg.runner);
        let _ = writeln!(out, "# table = {}", self.name);
        for (k, v) in cfg.resolved() {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Values of one numeric column (`none` entries skipped).
    pub fn column(&self, name: &str) -> Vec<f64> {
        let i = self.columns.iter().position(|c| *c == name).unwrap_or_else(|| panic!("no column {name}"));
        self.rows.iter().filter_map(|r| r[i].parse().ok()).collect()
    }
}

/// Everything a runner produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub runner: Runner,
    pub tables: Vec<Table>,
    pub results: Vec<(String, String)>,
    /// Extra free-form files (name, contents).
    pub files: Vec<(String, String)>,
}

impl RunOutput {
    fn new(runner: Runner) -> Self {
        Self { runner, tables: Vec::new(), results: Vec::new(), files: Vec::new() }
    }

    fn put(&mut self, key: &str, value: impl std::fmt::Display) {
        self.results.push((key.into(), value.to_string()));
    }

    fn put_f(&mut self, key: &str, value: f64) {
        self.put(key, format!("{value:e}"));
    }

    fn put_fit(&mut self, prefix: &str, fit: &FitResult) {
        for line in fit.to_block(prefix).lines() {
            if let Some((k, v)) = line.split_once(" = ") {
                self.put(k, v);
            }
        }
    }

    pub fn result(&self, key: &str) -> Option<&str> {
        self.results.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.result(key).and_then(|v| v.parse().ok())
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Report text: the resolved parameters (a valid config file) followed by
    /// the results.
    pub fn report(&self, cfg: &ExperimentConfig) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "runner = {}", cfg.runner);
        let _ = writeln!(out, "# parameters");
        for (k, v) in cfg.resolved() {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(out, "# results");
        for (k, v) in &self.results {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))?;
        let write = |name: &str, text: &str| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
        };
        for t in &self.tables {
            write(&format!("{}.csv", t.name), &t.to_csv(cfg))?;
        }
        for (name, text) in &self.files {
            write(name, text)?;
        }
        write("report.txt", &self.report(cfg))
    }
}

/// Run a configured experiment on `jobs` worker threads (all cores when
/// `None`).
pub fn run_experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<RunOutput> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::validation("--jobs must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Io(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cfg.runner {
        Runner::Splitting => run_splitting(cfg),
        Runner::Chevron => run_chevron(cfg),
        Runner::PowerSweep => run_power_sweep(cfg),
        Runner::StoreRetrieve => run_store_retrieve(cfg),
        Runner::PhaseSweep => run_phase_sweep(cfg),
        Runner::CustomSequence => run_custom_sequence(cfg),
    })
}

fn f(v: f64) -> String {
    format!("{v:e}")
}

fn hz(w: f64) -> String {
    f(angular_to_hz(w))
}

fn sim_config(cfg: &ExperimentConfig, t_end: f64) -> SimConfig {
    SimConfig {
        frame: cfg.frame(),
        dt: cfg.value("sim.dt"),
        t_end,
        record_stride: cfg.count("sim.stride"),
        tolerance: cfg.value("sim.tol"),
    }
}

/// Integrate with the half-step check, failing above the configured tolerance.
fn checked(
    cfg: &ExperimentConfig,
    initial: &ComplexAmplitudePair,
    a: &ModeParams,
    b: &ModeParams,
    pump: &PumpDrive,
    t_end: f64,
) -> Result<(TraceRecord, f64)> {
    let sim = sim_config(cfg, t_end);
    let (trace, diff) = integrate_checked(initial, a, b, pump, None, &sim)?;
    if diff > sim.tolerance {
        return Err(Error::Convergence(format!(
            "halving dt changed the trajectory by {diff:e} (tolerance {:e})",
            sim.tolerance
        )));
    }
    Ok((trace, diff))
}

/// Evenly spaced samples of the readout-mode occupancy |a|²/(|a|²+|b|²) and
/// their spacing. The fraction oscillates without the dissipative envelope
/// that dominates the spectrum of |a|² itself.
fn energy_series(trace: &TraceRecord, t_end: f64, cfg: &ExperimentConfig) -> (Vec<f64>, f64) {
    let stride = cfg.count("sim.stride");
    let n = step_count(0.0, t_end, cfg.value("sim.dt"));
    let spacing = t_end / n as f64 * stride as f64;
    // a trailing partial stride would break the uniform spacing
    let full = n / stride + 1;
    let series = trace
        .samples
        .iter()
        .take(full)
        .map(|s| {
            let total = s.a.norm_sqr() + s.b.norm_sqr();
            if total > 0.0 {
                s.a.norm_sqr() / total
            } else {
                0.0
            }
        })
        .collect();
    (series, spacing)
}

/// Local minima of `y` refined by a parabola through each minimum and its
/// neighbours, deepest first.
fn dips(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let mut found: Vec<(f64, f64)> = (1..y.len() - 1)
        .filter(|&i| y[i] < y[i - 1] && y[i] <= y[i + 1])
        .map(|i| {
            let (a, b, c) = (y[i - 1], y[i], y[i + 1]);
            let denom = a - 2.0 * b + c;
            let p = if denom > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            let h = x[i + 1] - x[i];
            (x[i] + p * h, b - 0.25 * (a - c) * p)
        })
        .collect();
    found.sort_by(|l, r| l.1.total_cmp(&r.1));
    found
}

/// Reflection spectra across pump detunings and the dip separation at Δ = 0.
pub fn run_splitting(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (ma, mb) = (cfg.mode_a()?, cfg.mode_b()?);
    let cal = cfg.calibration()?;
    let coupling = cal.coupling_for_flux(cfg.value("pump.delta_phi"))?;
    let g = coupling.g_p;
    let span = cfg.value("split.probe.span");
    let probes = linspace(ma.omega - span / 2.0, ma.omega + span / 2.0, cfg.count("split.probe.count"));
    let deltas = linspace(cfg.value("split.delta.start"), cfg.value("split.delta.stop"), cfg.count("split.delta.count"));

    let spectrum = |delta: f64| -> Result<Vec<Complex64>> {
        let pump = PumpDrive::at_detuning(delta, &ma, &mb, 0.0, Envelope::Constant { amplitude: g })?;
        reflection_spectrum(&ma, &mb, &pump, &probes)
    };
    let spectra: Vec<Vec<Complex64>> = deltas.par_iter().map(|&d| spectrum(d)).collect::<Result<_>>()?;

    let mut out = RunOutput::new(Runner::Splitting);
    let mut table = Table::new("splitting", &["delta_hz", "probe_offset_hz", "abs_gamma", "re_gamma", "im_gamma"]);
    for (d, spec) in deltas.iter().zip(&spectra) {
        for (w, gamma) in probes.iter().zip(spec) {
            table.push(vec![hz(*d), hz(w - ma.omega), f(gamma.norm()), f(gamma.re), f(gamma.im)]);
        }
    }
    out.tables.push(table);

    let centre = spectrum(0.0)?;
    let mags: Vec<f64> = centre.iter().map(|c| c.norm()).collect();
    let found = dips(&probes, &mags);
    out.put_f("split.coupling_hz", angular_to_hz(g));
    out.put("split.degenerate_bias", coupling.degenerate_bias);
    out.put("split.dips", found.len());
    let separation = match found.as_slice() {
        [d1, d2, ..] => (d1.0 - d2.0).abs(),
        _ => 0.0,
    };
    out.put_f("split.separation_hz", angular_to_hz(separation));
    if g > 0.0 {
        out.put_f("split.separation_over_2g", separation / (2.0 * g));
    }
    Ok(out)
}

struct Oscillation {
    trace: TraceRecord,
    omega: Option<f64>,
    diff: f64,
}

/// Energy exchange under a continuous pump starting from a loaded readout mode.
fn oscillation(cfg: &ExperimentConfig, g: f64, delta: f64, window: f64, nbar: f64) -> Result<Oscillation> {
    let (ma, mb) = (cfg.mode_a()?, cfg.mode_b()?);
    let envelope = if g > 0.0 { Envelope::Constant { amplitude: g } } else { Envelope::Off };
    let pump = PumpDrive::at_detuning(delta, &ma, &mb, 0.0, envelope)?;
    let (trace, diff) = checked(cfg, &ComplexAmplitudePair::loaded(nbar), &ma, &mb, &pump, window)?;
    let (series, spacing) = energy_series(&trace, window, cfg);
    let omega = match oscillation_frequency(&series, spacing) {
        Ok(w) => Some(w),
        Err(Error::NoOscillation) => None,
        Err(e) => return Err(e),
    };
    Ok(Oscillation { trace, omega, diff })
}

/// Time-domain exchange map over pump detuning and its FFT ridge.
pub fn run_chevron(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let g = cfg.value("chevron.gp");
    let window = cfg.value("chevron.window");
    let nbar = cfg.value("chevron.nbar");
    let deltas = linspace(cfg.value("chevron.delta.start"), cfg.value("chevron.delta.stop"), cfg.count("chevron.delta.count"));
    let runs: Vec<Oscillation> =
        deltas.par_iter().map(|&d| oscillation(cfg, g, d, window, nbar)).collect::<Result<_>>()?;

    let mut out = RunOutput::new(Runner::Chevron);
    let map_stride = cfg.count("chevron.map_stride");
    let mut map = Table::new("chevron_map", &["delta_hz", "t_s", "energy_a"]);
    let mut ridge = Table::new("chevron_ridge", &["delta_hz", "omega_hz", "model_hz", "rel_error"]);
    let mut omegas = Vec::with_capacity(deltas.len());
    for (d, run) in deltas.iter().zip(&runs) {
        for s in run.trace.samples.iter().step_by(map_stride) {
            map.push(vec![hz(*d), f(s.t), f(s.a.norm_sqr())]);
        }
        let omega = run.omega.ok_or(Error::NoOscillation)?;
        let model = crate::dynamics::rabi_frequency(*d, g);
        ridge.push(vec![hz(*d), hz(omega), hz(model), f(omega / model - 1.0)]);
        omegas.push(omega);
    }
    out.tables.push(map);
    out.tables.push(ridge);

    let rel: Vec<f64> =
        deltas.iter().zip(&omegas).map(|(d, w)| w / crate::dynamics::rabi_frequency(*d, g) - 1.0).collect();
    let rms = (rel.iter().map(|r| r * r).sum::<f64>() / rel.len() as f64).sqrt();
    let (imin, wmin) = omegas.iter().copied().enumerate().fold((0, f64::INFINITY), |b, (i, w)| if w < b.1 { (i, w) } else { b });
    let asym = (0..deltas.len() / 2)
        .map(|i| {
            let j = deltas.len() - 1 - i;
            (omegas[i] - omegas[j]).abs() / (0.5 * (omegas[i] + omegas[j]))
        })
        .fold(0.0, f64::max);
    // least-squares g for Ω² = Δ² + 4g²
    let four_g2 = deltas.iter().zip(&omegas).map(|(d, w)| w * w - d * d).sum::<f64>() / deltas.len() as f64;
    out.put_f("chevron.coupling_hz", angular_to_hz(g));
    out.put_f("chevron.ridge_min_delta_hz", angular_to_hz(deltas[imin]));
    out.put_f("chevron.ridge_min_hz", angular_to_hz(wmin));
    out.put_f("chevron.ridge_min_over_2g", wmin / (2.0 * g));
    out.put_f("chevron.max_asymmetry", asym);
    out.put_f("chevron.model_rms_rel", rms);
    out.put_f("chevron.fitted_coupling_hz", angular_to_hz(four_g2.max(0.0).sqrt() / 2.0));
    out.put_f("convergence.max_rel_diff", runs.iter().map(|r| r.diff).fold(0.0, f64::max));
    Ok(out)
}

/// Extracted swap rate against pump power.
pub fn run_power_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let cal = cfg.calibration()?;
    let window = cfg.value("power.window");
    let nbar = cfg.value("power.nbar");
    let mut powers = linspace(cfg.value("power.start"), cfg.value("power.stop"), cfg.count("power.count"));
    if cfg.value("power.include_off") != 0.0 {
        powers.insert(0, f64::NEG_INFINITY);
    }
    let runs: Vec<(f64, Oscillation)> = powers
        .par_iter()
        .map(|&p| {
            let g = cal.coupling_for_power(p)?.g_p;
            Ok((g, oscillation(cfg, g, 0.0, window, nbar)?))
        })
        .collect::<Result<_>>()?;

    let mut out = RunOutput::new(Runner::PowerSweep);
    let mut table = Table::new("power_sweep", &["power_dbm", "amplitude_sqrt_mw", "g_model_hz", "g_extracted_hz"]);
    let mut points = Vec::new();
    let mut silent = 0;
    for (p, (g, run)) in powers.iter().zip(&runs) {
        let amp = dbm_to_mw(*p).sqrt();
        let extracted = match run.omega {
            Some(w) => {
                points.push((amp, angular_to_hz(w / 2.0)));
                hz(w / 2.0)
            }
            None => {
                silent += 1;
                "none".into()
            }
        };
        table.push(vec![f(*p), f(amp), hz(*g), extracted]);
    }
    out.tables.push(table);
    out.put("power.no_oscillation_points", silent);
    if points.len() >= 2 {
        let fit = fit_line(&points)?;
        out.put_fit("power.fit", &fit);
    }
    out.put_f("convergence.max_rel_diff", runs.iter().map(|r| r.1.diff).fold(0.0, f64::max));
    Ok(out)
}

/// Load, swap in, wait, swap out and read out, with fixed pulse settings.
#[derive(Debug, Clone)]
pub struct PulsePlan {
    pub mode_a: ModeParams,
    pub mode_b: ModeParams,
    pub g_p: f64,
    pub t_swap: f64,
    pub ramp: f64,
    pub load_duration: f64,
    pub nbar: f64,
    pub readout: f64,
    pub load: LoadMode,
    pub frame: Frame,
    pub dt: f64,
    pub stride: usize,
    pub tolerance: f64,
    pub swap_calibrated: bool,
}

impl PulsePlan {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let (mode_a, mode_b) = (cfg.mode_a()?, cfg.mode_b()?);
        let g_p = cfg.value("pulse.gp");
        let ramp = cfg.value("pulse.ramp");
        let dt = cfg.value("sim.dt");
        let (t_swap, swap_calibrated) = match cfg.swap_time() {
            Some(t) => (t, false),
            None => {
                if ramp > 0.0 {
                    return Err(Error::validation("pulse.t_swap = auto needs pulse.ramp = 0s"));
                }
                let t_pi = PI / (2.0 * g_p);
                (calibrate_swap_time(&mode_a, &mode_b, g_p, (0.5 * t_pi, 1.5 * t_pi), dt)?, true)
            }
        };
        Ok(Self {
            mode_a,
            mode_b,
            g_p,
            t_swap,
            ramp,
            load_duration: cfg.value("load.dur"),
            nbar: cfg.value("load.nbar"),
            readout: cfg.value("readout.dur"),
            load: if cfg.text("load.mode") == "direct" { LoadMode::Direct } else { LoadMode::Drive },
            frame: cfg.frame(),
            dt,
            stride: cfg.count("sim.stride"),
            tolerance: cfg.value("sim.tol"),
            swap_calibrated,
        })
    }

    fn swap(&self, phase: f64) -> Segment {
        Segment::swap_with(
            self.t_swap,
            SwapParams { coupling: SwapCoupling::Rate(self.g_p), delta: 0.0, phase, ramp: self.ramp },
        )
    }

    fn finish(&self, segments: Vec<Segment>) -> Result<PulseSequence> {
        let mut seq = PulseSequence::new(self.mode_a, self.mode_b, segments)?
            .with_sim(self.frame, self.dt, self.stride, self.load);
        seq.sim.tolerance = self.tolerance;
        Ok(seq)
    }

    /// Full store/retrieve sequence with the second swap at `phase`.
    pub fn sequence(&self, delay: f64, phase: f64) -> Result<PulseSequence> {
        self.finish(vec![
            Segment::load_nbar(self.load_duration, self.nbar),
            self.swap(0.0),
            Segment::delay(delay),
            self.swap(phase),
            Segment::readout(self.readout),
        ])
    }

    /// The same load read out directly, with no swaps.
    pub fn reference(&self) -> Result<PulseSequence> {
        self.finish(vec![Segment::load_nbar(self.load_duration, self.nbar), Segment::readout(self.readout)])
    }

    /// Time window between the end of the load and the start of the readout.
    pub fn dwell_window(&self, delay: f64) -> (f64, f64) {
        let start = self.load_duration;
        (start, start + 2.0 * self.t_swap + delay)
    }
}

/// One executed sequence with its readout.
#[derive(Debug, Clone)]
pub struct Retrieval {
    pub trace: TraceRecord,
    pub iq: Complex64,
    pub energy: f64,
    pub diff: f64,
}

pub fn retrieve(seq: &PulseSequence) -> Result<Retrieval> {
    let (trace, diff) = run_sequence_checked(seq)?;
    let d = demodulate_readout(&trace, seq.mode_a.omega)?;
    Ok(Retrieval { iq: d.iq(), energy: d.energy, trace, diff })
}

fn put_plan(out: &mut RunOutput, plan: &PulsePlan, reference: &Retrieval) {
    out.put_f("pulse.t_swap_s", plan.t_swap);
    out.put("pulse.t_swap_calibrated", plan.swap_calibrated);
    out.put_f("pulse.t_swap_over_quarter_period", plan.t_swap / (PI / (2.0 * plan.g_p)));
    out.put_f("reference.energy", reference.energy);
}

/// Retrieved energy against storage delay, with the decay fit and the
/// efficiency at the shortest delay.
pub fn run_store_retrieve(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let plan = PulsePlan::from_config(cfg)?;
    let delays = linspace(cfg.value("delay.start"), cfg.value("delay.stop"), cfg.count("delay.count"));
    let reference = retrieve(&plan.reference()?)?;
    let runs: Vec<Retrieval> =
        delays.par_iter().map(|&d| retrieve(&plan.sequence(d, 0.0)?)).collect::<Result<_>>()?;

    let mut out = RunOutput::new(Runner::StoreRetrieve);
    let mut table = Table::new("store_retrieve", &["delay_s", "retrieved_energy", "eta", "i", "q"]);
    for (d, r) in delays.iter().zip(&runs) {
        table.push(vec![f(*d), f(r.energy), f(r.energy / reference.energy), f(r.iq.re), f(r.iq.im)]);
    }
    out.tables.push(table);

    put_plan(&mut out, &plan, &reference);
    let points: Vec<(f64, f64)> = delays.iter().zip(&runs).map(|(d, r)| (*d, r.energy)).collect();
    let fit = fit_exponential_decay(&points)?;
    out.put_fit("store.fit", &fit);
    if let Some(tau) = fit.get("tau").filter(|t| t.is_finite()) {
        out.put_f("store.tau_over_t1", tau * plan.mode_b.gamma_total());
    }
    let eta = efficiency(runs[0].energy, reference.energy)?;
    out.put_f("store.eta_shortest", eta);
    let window = plan.dwell_window(delays[0]);
    let (ta, tb) = dwell_times(&runs[0].trace, window)?;
    out.put_f("store.dwell_a_s", ta);
    out.put_f("store.dwell_b_s", tb);
    out.put_f(
        "store.eta_corrected_shortest",
        crate::analysis::loss_corrected_efficiency(eta, &runs[0].trace, &plan.mode_a, &plan.mode_b, window)?,
    );
    let diff = runs.iter().map(|r| r.diff).fold(reference.diff, f64::max);
    out.put_f("convergence.max_rel_diff", diff);
    Ok(out)
}

/// Retrieved quadratures against the phase of the retrieving pump pulse.
pub fn run_phase_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let plan = PulsePlan::from_config(cfg)?;
    let delay = cfg.value("phase.delay");
    let n = cfg.count("phase.count");
    let phases: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
    let reference = retrieve(&plan.reference()?)?;
    let runs: Vec<Retrieval> =
        phases.par_iter().map(|&p| retrieve(&plan.sequence(delay, p)?)).collect::<Result<_>>()?;

    if reference.iq.norm() == 0.0 {
        return Err(Error::validation("reference readout carries no signal"));
    }
    let mut out = RunOutput::new(Runner::PhaseSweep);
    let mut table = Table::new("phase_sweep", &["pump_phase_rad", "i_norm", "q_norm", "magnitude", "retrieved_phase_rad"]);
    let mut points = Vec::with_capacity(n);
    let mut mags = Vec::with_capacity(n);
    let mut locus = Vec::with_capacity(n);
    for (p, r) in phases.iter().zip(&runs) {
        // quadratures relative to the reference readout, so |z|² is the efficiency
        let z = r.iq / reference.iq;
        table.push(vec![f(*p), f(z.re), f(z.im), f(z.norm()), f(z.arg())]);
        points.push((*p, z.arg()));
        mags.push(z.norm());
        locus.push(z);
    }
    out.tables.push(table);
    put_plan(&mut out, &plan, &reference);

    let fit = fit_phase_slope(&points)?;
    out.put_fit("phase.fit", &fit);
    let mean = mags.iter().sum::<f64>() / n as f64;
    let spread = mags.iter().map(|m| (m - mean).abs()).fold(0.0, f64::max) / mean;
    out.put_f("phase.magnitude_mean", mean);
    out.put_f("phase.magnitude_spread_rel", spread);
    let eta = efficiency(runs[0].energy, reference.energy)?;
    out.put_f("phase.eta", eta);
    let area = PI * mean * mean;
    out.put_f("phase.locus_area", area);
    out.put_f("phase.locus_area_over_pi_eta", area / (PI * eta));
    let polygon = 0.5
        * (0..n)
            .map(|k| {
                let (p, q) = (locus[k], locus[(k + 1) % n]);
                p.re * q.im - q.re * p.im
            })
            .sum::<f64>()
            .abs();
    out.put_f("phase.polygon_area", polygon);
    let diff = runs.iter().map(|r| r.diff).fold(reference.diff, f64::max);
    out.put_f("convergence.max_rel_diff", diff);
    Ok(out)
}

/// Run a sequence file and report its readout.
pub fn run_custom_sequence(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut path = std::path::PathBuf::from(cfg.text("sequence.file"));
    if path.is_relative() {
        if let Some(base) = &cfg.base_dir {
            path = base.join(path);
        }
    }
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Io(format!("cannot read sequence {}: {e}", path.display())))?;
    let mut seq = parse_sequence(&text)?;
    if cfg.is_overridden("sim.frame") {
        seq.sim.frame = cfg.frame();
    }
    let (trace, diff) = run_sequence_checked(&seq)?;

    let mut out = RunOutput::new(Runner::CustomSequence);
    out.put("custom.segments", seq.segments.len());
    out.put_f("custom.duration_s", seq.total_duration());
    out.put("custom.frame", seq.sim.frame);
    if trace.span("readout").is_some() {
        let d = demodulate_readout(&trace, seq.mode_a.omega)?;
        out.put_f("custom.readout.i", d.i);
        out.put_f("custom.readout.q", d.q);
        out.put_f("custom.readout.energy", d.energy);
    }
    let end = trace.last_state().expect("non-empty trace");
    out.put_f("custom.final_energy_a", end.energy_a());
    out.put_f("custom.final_energy_b", end.energy_b());
    out.put_f("convergence.max_rel_diff", diff);

    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    let mut meta = Vec::new();
    trace.write_metadata(&mut meta)?;
    out.files.push(("trace.csv".into(), String::from_utf8(csv).expect("ascii csv")));
    out.files.push(("trace_meta.txt".into(), String::from_utf8(meta).expect("ascii metadata")));
    out.files.push(("sequence.txt".into(), seq.emit()));
    Ok(out)
}
