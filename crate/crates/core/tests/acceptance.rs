//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line; any failure makes the process exit 1.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use pfconv::config::{ExperimentConfig, Runner};
use pfconv::dynamics::{integrate, DriveTone, Sample, SimConfig, TraceRecord};
use pfconv::experiments::{run_experiment, RunOutput};
use pfconv::flux::{coupling_rate, DeviceCalibration, FluxCurve};
use pfconv::model::{ComplexAmplitudePair, CouplerState, Envelope, ModeParams, PumpDrive};
use pfconv::units::hz_to_angular;

type Outcome = Result<String, String>;

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, outcome: Outcome) {
        match outcome {
            Ok(detail) => println!("criterion {id} [{name}]: PASS ({detail})"),
            Err(detail) => {
                self.failures += 1;
                println!("criterion {id} [{name}]: FAIL ({detail})");
            }
        }
    }
}

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn run_defaults(runner: Runner) -> Result<(RunOutput, Duration), String> {
    let cfg = ExperimentConfig::defaults(runner);
    let start = Instant::now();
    let out = run_experiment(&cfg, None).map_err(|e| format!("{runner} failed: {e}"))?;
    Ok((out, start.elapsed()))
}

fn value(out: &RunOutput, key: &str) -> Result<f64, String> {
    out.value(key).ok_or_else(|| format!("missing result {key}"))
}

fn splitting() -> Outcome {
    let (out, took) = run_defaults(Runner::Splitting)?;
    let sep = value(&out, "split.separation_hz")?;
    let rel = (sep / 2.4e6 - 1.0).abs();
    check(
        rel <= 0.05 && took < Duration::from_secs(10),
        format!("separation {:.4} MHz, rel err {rel:.2e}, {took:.2?}", sep / 1e6),
    )
}

fn lossless_full_swap() -> Outcome {
    let start = Instant::now();
    let a = ModeParams::lossless(hz_to_angular(8.70e9)).map_err(|e| e.to_string())?;
    let b = ModeParams::lossless(hz_to_angular(9.33e9)).map_err(|e| e.to_string())?;
    let g = hz_to_angular(1.2e6);
    let t_swap = PI / (2.0 * g);
    let pump = PumpDrive::at_detuning(0.0, &a, &b, 0.0, Envelope::rectangular(g, 0.0, t_swap))
        .map_err(|e| e.to_string())?;
    let trace = integrate(
        &ComplexAmplitudePair::loaded(1.0),
        &a,
        &b,
        &pump,
        None,
        &SimConfig::rotating(1e-10, t_swap).with_stride(1000),
    )
    .map_err(|e| e.to_string())?;
    let end = trace.last_state().ok_or("empty trace")?;
    let transferred = end.energy_b() / end.total_energy();
    let took = start.elapsed();
    check(
        transferred >= 1.0 - 1e-9 && took < Duration::from_secs(1),
        format!("transferred fraction 1 - {:.1e}, {took:.2?}", 1.0 - transferred),
    )
}

/// Fixed-step midpoint integration of the lossless rotating-frame equations,
/// written out directly. Returns the time of the first minimum of |a|².
fn brute_force_first_minimum(delta: f64, g: f64, dt: f64) -> f64 {
    let i = Complex64::i();
    let rhs = |t: f64, a: Complex64, b: Complex64| {
        let phase = Complex64::from_polar(1.0, delta * t);
        (-i * g * phase * b, -i * g * phase.conj() * a)
    };
    let (mut a, mut b) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
    let mut prev = [f64::INFINITY; 2];
    let mut t = 0.0;
    loop {
        let (ka, kb) = rhs(t, a, b);
        let (ma, mb) = rhs(t + dt / 2.0, a + ka * (dt / 2.0), b + kb * (dt / 2.0));
        a += ma * dt;
        b += mb * dt;
        t += dt;
        let p = a.norm_sqr();
        if prev[1] < prev[0] && prev[1] <= p {
            // parabola through the last three points
            let (y0, y1, y2) = (prev[0], prev[1], p);
            let shift = 0.5 * (y0 - y2) / (y0 - 2.0 * y1 + y2);
            return t - dt + shift * dt;
        }
        prev = [prev[1], p];
    }
}

fn chevron_law(chevron: &(RunOutput, Duration)) -> Outcome {
    let g = hz_to_angular(1.2e6);
    let mut worst: f64 = 0.0;
    let mut half_coupling_worst: f64 = 0.0;
    for k in -4..=4 {
        let delta = hz_to_angular(k as f64 * 1e6);
        let omega = PI / brute_force_first_minimum(delta, g, 2e-11);
        worst = worst.max((omega / (delta * delta + 4.0 * g * g).sqrt() - 1.0).abs());
        half_coupling_worst = half_coupling_worst.max((omega / (delta * delta + g * g).sqrt() - 1.0).abs());
    }
    if worst > 1e-5 {
        return Err(format!("oracle disagrees with sqrt(D^2+4g^2) by {worst:.2e}"));
    }
    let (out, took) = chevron;
    let rms = value(out, "chevron.model_rms_rel")?;
    let points = out.table("chevron_ridge").map(|t| t.rows.len()).unwrap_or(0);
    check(
        rms < 0.02 && *took < Duration::from_secs(60),
        format!(
            "oracle rel err {worst:.1e} (sqrt(D^2+g^2) off by {half_coupling_worst:.2}), \
             {points} detunings, fit rms {rms:.2e}, {took:.2?}"
        ),
    )
}

fn pump_linearity(power: &(RunOutput, Duration)) -> Outcome {
    let (out, took) = power;
    let r2 = value(out, "power.fit.r_squared")?;
    check(r2 > 0.999, format!("R^2 {r2:.8}, {took:.2?}"))
}

fn storage_decay(store: &(RunOutput, Duration)) -> Outcome {
    let (out, took) = store;
    let tau = value(out, "store.fit.tau")?;
    let delays = out.table("store_retrieve").ok_or("missing store_retrieve table")?.column("delay_s");
    let rel = (tau / 14.9e-6 - 1.0).abs();
    let grid = delays.len() == 12
        && (delays[0] - 1e-6).abs() < 1e-12
        && (delays[11] - 55e-6).abs() < 1e-12;
    check(
        rel < 0.01 && grid && *took < Duration::from_secs(60),
        format!("tau {:.4} us, rel err {rel:.1e}, {} delays, {took:.2?}", tau * 1e6, delays.len()),
    )
}

fn efficiency(store: &(RunOutput, Duration)) -> Outcome {
    let out = &store.0;
    let eta = value(out, "store.eta_shortest")?;
    let corrected = value(out, "store.eta_corrected_shortest")?;
    check(
        (0.65..=0.85).contains(&eta) && corrected >= 0.99,
        format!("eta {eta:.4}, loss-corrected {corrected:.4}"),
    )
}

fn phase_control(phase: &(RunOutput, Duration)) -> Outcome {
    let (out, took) = phase;
    let slope = value(out, "phase.fit.slope")?;
    let spread = value(out, "phase.magnitude_spread_rel")?;
    check(
        (slope - 1.0).abs() <= 1e-6 && spread < 1e-9,
        format!("slope 1 + {:.1e}, magnitude spread {spread:.1e}, {took:.2?}", slope - 1.0),
    )
}

fn lossless_drift() -> Result<f64, String> {
    let a = ModeParams::lossless(hz_to_angular(8.70e9)).map_err(|e| e.to_string())?;
    let b = ModeParams::lossless(hz_to_angular(9.33e9)).map_err(|e| e.to_string())?;
    let pump = PumpDrive::at_detuning(
        hz_to_angular(0.7e6),
        &a,
        &b,
        0.4,
        Envelope::Constant { amplitude: hz_to_angular(1.2e6) },
    )
    .map_err(|e| e.to_string())?;
    let trace = integrate(
        &ComplexAmplitudePair::loaded(10.0),
        &a,
        &b,
        &pump,
        None,
        &SimConfig::rotating(1e-10, 100e-6).with_stride(10_000),
    )
    .map_err(|e| e.to_string())?;
    Ok(trace.samples.iter().map(|s| (s.state().total_energy() - 10.0).abs() / 10.0).fold(0.0, f64::max))
}

// composite Simpson over uniformly spaced samples
fn simpson(samples: &[Sample], f: impl Fn(&Sample) -> f64) -> f64 {
    let n = samples.len();
    assert!(n % 2 == 1 && n >= 3);
    let h = samples[1].t - samples[0].t;
    let sum: f64 = samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let w = if k == 0 || k + 1 == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            w * f(s)
        })
        .sum();
    sum * h / 3.0
}

fn port_energy_balance() -> Result<f64, String> {
    let a = ModeParams::readout_default();
    let b = ModeParams::storage_default();
    let pump = PumpDrive::at_detuning(
        hz_to_angular(0.3e6),
        &a,
        &b,
        0.0,
        Envelope::Constant { amplitude: hz_to_angular(1.2e6) },
    )
    .map_err(|e| e.to_string())?;
    let amp_in = 2.0e3;
    let t_on = 1.5e-6;
    let drive = DriveTone::new(a.omega + hz_to_angular(0.2e6), amp_in, 0.1, 0.0, t_on).map_err(|e| e.to_string())?;
    let driven = integrate(
        &ComplexAmplitudePair::loaded(0.0),
        &a,
        &b,
        &pump,
        Some(&drive),
        &SimConfig::rotating(1e-10, t_on),
    )
    .map_err(|e| e.to_string())?;
    let free = integrate(
        &driven.last_state().ok_or("empty trace")?,
        &a,
        &b,
        &pump,
        None,
        &SimConfig::rotating(1e-10, 2.0 * t_on),
    )
    .map_err(|e| e.to_string())?;
    let dissipated = |tr: &TraceRecord| {
        simpson(&tr.samples, |s| a.gamma_int * s.a.norm_sqr() + b.gamma_total() * s.b.norm_sqr())
    };
    let incident = amp_in * amp_in * t_on;
    let outgoing = simpson(&driven.samples, |s| s.a_out.norm_sqr()) + simpson(&free.samples, |s| s.a_out.norm_sqr());
    let stored = free.last_state().ok_or("empty trace")?.total_energy();
    Ok((stored + dissipated(&driven) + dissipated(&free) + outgoing - incident).abs() / incident)
}

fn frame_agreement() -> Result<f64, String> {
    let a = ModeParams::new(hz_to_angular(80e6), 2e5, 1e5).map_err(|e| e.to_string())?;
    let b = ModeParams::new(hz_to_angular(143e6), 5e4, 0.0).map_err(|e| e.to_string())?;
    let pump = PumpDrive::at_detuning(
        hz_to_angular(0.1e6),
        &a,
        &b,
        0.3,
        Envelope::Constant { amplitude: hz_to_angular(0.5e6) },
    )
    .map_err(|e| e.to_string())?;
    let t_end = 1.5e-6;
    let init = ComplexAmplitudePair::loaded(1.0);
    let lab = integrate(&init, &a, &b, &pump, None, &SimConfig::lab(2e-11, t_end).with_stride(500))
        .map_err(|e| e.to_string())?;
    let rot = integrate(&init, &a, &b, &pump, None, &SimConfig::rotating(1e-9, t_end).with_stride(10))
        .map_err(|e| e.to_string())?;
    if lab.samples.len() != rot.samples.len() {
        return Err("frames recorded different sample grids".into());
    }
    Ok(lab
        .samples
        .iter()
        .zip(&rot.samples)
        .map(|(x, y)| (x.a.norm_sqr() - y.a.norm_sqr()).abs().max((x.b.norm_sqr() - y.b.norm_sqr()).abs()))
        .fold(0.0, f64::max))
}

fn conservation_and_convergence(default_runs: &[(Runner, &RunOutput)]) -> Outcome {
    let drift = lossless_drift()?;
    let balance = port_energy_balance()?;
    let frames = frame_agreement()?;
    let mut half_step: f64 = 0.0;
    for (runner, out) in default_runs {
        let d = value(out, "convergence.max_rel_diff").map_err(|e| format!("{runner}: {e}"))?;
        half_step = half_step.max(d);
    }
    check(
        drift < 1e-9 && balance < 1e-6 && frames < 1e-3 && half_step < 1e-8,
        format!(
            "drift {drift:.1e}, port balance {balance:.1e}, lab/rotating {frames:.1e}, \
             half-step {half_step:.1e} over {} default runs",
            default_runs.len()
        ),
    )
}

fn coupling_closed_form() -> Outcome {
    let curve = FluxCurve::coupler_model(hz_to_angular(8.7e9), 4.0e25, hz_to_angular(7.7e9), 0.0)
        .map_err(|e| e.to_string())?;
    let state = |dphi: f64| CouplerState::new(0.2, dphi, 0.0, None).map_err(|e| e.to_string());
    let slope = curve.slope_at(0.2).abs();
    let g = coupling_rate(&curve, &curve, &state(0.2)?).g_p;
    let closed = (g - slope * 0.2 / 4.0).abs() / g;

    let cal = DeviceCalibration::reference();
    let base = cal.coupling_for_flux(0.05).map_err(|e| e.to_string())?.g_p;
    let mut nonlinear: f64 = 0.0;
    for k in [0.0, 1.0, 2.0, 4.0, 8.0] {
        let gk = cal.coupling_for_flux(0.05 * k).map_err(|e| e.to_string())?.g_p;
        nonlinear = nonlinear.max((gk - k * base).abs());
    }
    check(
        closed <= 1e-12 && nonlinear == 0.0,
        format!("closed-form rel err {closed:.1e}, linearity deviation {nonlinear:.1e} rad/s"),
    )
}

fn with_run(
    run: &Result<(RunOutput, Duration), String>,
    criterion: impl FnOnce(&(RunOutput, Duration)) -> Outcome,
) -> Outcome {
    run.as_ref().map_err(Clone::clone).and_then(criterion)
}

fn main() {
    let mut report = Report { failures: 0 };
    report.record(1, "normal-mode splitting", splitting());
    report.record(2, "lossless full swap", lossless_full_swap());

    let integrating = [Runner::Chevron, Runner::PowerSweep, Runner::StoreRetrieve, Runner::PhaseSweep];
    let [chevron, power, store, phase] = integrating.map(run_defaults);
    report.record(3, "chevron law", with_run(&chevron, chevron_law));
    report.record(4, "pump linearity", with_run(&power, pump_linearity));
    report.record(5, "storage decay", with_run(&store, storage_decay));
    report.record(6, "efficiency", with_run(&store, efficiency));
    report.record(7, "phase control", with_run(&phase, phase_control));

    let outcome = [&chevron, &power, &store, &phase]
        .into_iter()
        .zip(integrating)
        .map(|(run, runner)| run.as_ref().map(|(out, _)| (runner, out)).map_err(Clone::clone))
        .collect::<Result<Vec<_>, _>>()
        .and_then(|runs| conservation_and_convergence(&runs));
    report.record(8, "conservation and convergence", outcome);
    report.record(9, "coupling closed form", coupling_closed_form());

    println!("{} of 9 criteria passed", 9 - report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
