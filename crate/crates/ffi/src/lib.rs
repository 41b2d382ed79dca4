//! C ABI over the `pfconv` simulator.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_parse`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`PfcStatus`]; on failure the message is available from
//! [`pfc_last_error`] until the next failing call on the same thread.
//! Frequencies are ordinary frequencies in Hz, decay rates are energy decay
//! rates in 1/s and times are seconds.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pfconv::analysis::{fit_exponential_decay, oscillation_frequency};
use pfconv::dynamics::{reflection_spectrum, TraceRecord};
use pfconv::flux::DeviceCalibration;
use pfconv::model::{Envelope, ModeParams, PumpDrive};
use pfconv::sequencer::{demodulate, parse_sequence, run_sequence, PulseSequence};
use pfconv::units::{angular_to_hz, hz_to_angular};
use pfconv::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfcStatus {
    Ok = 0,
    Validation = 1,
    Resolution = 2,
    NonFinite = 3,
    Syntax = 4,
    Semantic = 5,
    Singular = 6,
    Convergence = 7,
    NoOscillation = 8,
    Io = 9,
    NullPointer = 10,
    OutOfRange = 11,
    Panic = 12,
}

impl From<&Error> for PfcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Validation(_) => PfcStatus::Validation,
            Error::Resolution { .. } => PfcStatus::Resolution,
            Error::NonFinite { .. } => PfcStatus::NonFinite,
            Error::Syntax { .. } => PfcStatus::Syntax,
            Error::Semantic { .. } => PfcStatus::Semantic,
            Error::Singular(_) => PfcStatus::Singular,
            Error::Convergence(_) => PfcStatus::Convergence,
            Error::NoOscillation => PfcStatus::NoOscillation,
            Error::Io(_) => PfcStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: PfcStatus, msg: &str) -> PfcStatus {
    set_error(msg);
    status
}

/// Run `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), (PfcStatus, String)>) -> PfcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PfcStatus::Ok,
        Ok(Err((status, msg))) => fail(status, &msg),
        Err(_) => fail(PfcStatus::Panic, "internal panic"),
    }
}

fn lib(e: Error) -> (PfcStatus, String) {
    (PfcStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (PfcStatus, String) {
    (PfcStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failing call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pfc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pfc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// One cavity mode.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfcMode {
    pub freq_hz: f64,
    /// Internal energy decay rate (1/s).
    pub gamma_int: f64,
    /// Port energy decay rate (1/s).
    pub gamma_ext: f64,
}

impl PfcMode {
    fn params(&self) -> Result<ModeParams, (PfcStatus, String)> {
        ModeParams::new(hz_to_angular(self.freq_hz), self.gamma_int, self.gamma_ext).map_err(lib)
    }

    fn from_params(p: &ModeParams) -> Self {
        Self { freq_hz: angular_to_hz(p.omega), gamma_int: p.gamma_int, gamma_ext: p.gamma_ext }
    }
}

/// Default readout (A) and storage (B) modes.
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_default_modes(mode_a: *mut PfcMode, mode_b: *mut PfcMode) -> PfcStatus {
    guard(|| {
        if mode_a.is_null() || mode_b.is_null() {
            return Err(null("mode output"));
        }
        *mode_a = PfcMode::from_params(&ModeParams::readout_default());
        *mode_b = PfcMode::from_params(&ModeParams::storage_default());
        Ok(())
    })
}

/// Pair of modes the spectral functions operate on.
pub struct PfcSystem {
    a: ModeParams,
    b: ModeParams,
}

/// Create a system from two modes; release with `pfc_system_free`.
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_system_new(mode_a: PfcMode, mode_b: PfcMode, out: *mut *mut PfcSystem) -> PfcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let sys = PfcSystem { a: mode_a.params()?, b: mode_b.params()? };
        *out = Box::into_raw(Box::new(sys));
        Ok(())
    })
}

/// Release a system; null is ignored.
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_system_free(sys: *mut PfcSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Steady-state reflection coefficient at `n` probe frequencies, with a
/// continuous pump of amplitude `g_p_hz` detuned by `delta_hz`.
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_reflection_spectrum(
    sys: *const PfcSystem,
    g_p_hz: f64,
    delta_hz: f64,
    probes_hz: *const f64,
    n: usize,
    out_re: *mut f64,
    out_im: *mut f64,
) -> PfcStatus {
    guard(|| {
        let sys = sys.as_ref().ok_or_else(|| null("system"))?;
        if n > 0 && (probes_hz.is_null() || out_re.is_null() || out_im.is_null()) {
            return Err(null("probe or output buffer"));
        }
        let probes: Vec<f64> = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(probes_hz, n).iter().map(|&f| hz_to_angular(f)).collect()
        };
        let envelope = Envelope::Constant { amplitude: hz_to_angular(g_p_hz) };
        let pump = PumpDrive::at_detuning(hz_to_angular(delta_hz), &sys.a, &sys.b, 0.0, envelope).map_err(lib)?;
        let gamma = reflection_spectrum(&sys.a, &sys.b, &pump, &probes).map_err(lib)?;
        for (i, g) in gamma.iter().enumerate() {
            *out_re.add(i) = g.re;
            *out_im.add(i) = g.im;
        }
        Ok(())
    })
}

/// Coupling rate (Hz) of the reference device for a pump flux amplitude in
/// flux quanta.
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_reference_coupling_hz(delta_phi: f64, out_hz: *mut f64) -> PfcStatus {
    guard(|| {
        if out_hz.is_null() {
            return Err(null("out_hz"));
        }
        let g = DeviceCalibration::reference().coupling_for_flux(delta_phi).map_err(lib)?;
        *out_hz = angular_to_hz(g.g_p);
        Ok(())
    })
}

/// Parsed pulse sequence.
pub struct PfcSequence(PulseSequence);

/// Parse sequence text (UTF-8, NUL-terminated).
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_sequence_parse(text: *const c_char, out: *mut *mut PfcSequence) -> PfcStatus {
    guard(|| {
        if text.is_null() || out.is_null() {
            return Err(null("text or out"));
        }
        let text = CStr::from_ptr(text)
            .to_str()
            .map_err(|_| (PfcStatus::Validation, "sequence text is not UTF-8".to_string()))?;
        let seq = parse_sequence(text).map_err(lib)?;
        *out = Box::into_raw(Box::new(PfcSequence(seq)));
        Ok(())
    })
}

/// Write the sequence text into `buf` (capacity `len` bytes, NUL included).
/// `needed` receives the required capacity; a short buffer gives
/// `OutOfRange` and leaves `buf` untouched.
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_sequence_emit(
    seq: *const PfcSequence,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> PfcStatus {
    guard(|| {
        let seq = seq.as_ref().ok_or_else(|| null("sequence"))?;
        let text = seq.0.emit();
        let size = text.len() + 1;
        if !needed.is_null() {
            *needed = size;
        }
        if buf.is_null() || len < size {
            return Err((PfcStatus::OutOfRange, format!("buffer needs {size} bytes")));
        }
        ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// Release a sequence; null is ignored.
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_sequence_free(seq: *mut PfcSequence) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

/// Simulated trajectory.
pub struct PfcTrace(TraceRecord);

/// One recorded instant.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PfcSample {
    pub t: f64,
    pub re_a: f64,
    pub im_a: f64,
    pub re_b: f64,
    pub im_b: f64,
    pub re_aout: f64,
    pub im_aout: f64,
}

/// Run every segment of a sequence.
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_sequence_run(seq: *const PfcSequence, out: *mut *mut PfcTrace) -> PfcStatus {
    guard(|| {
        let seq = seq.as_ref().ok_or_else(|| null("sequence"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let trace = run_sequence(&seq.0).map_err(lib)?;
        *out = Box::into_raw(Box::new(PfcTrace(trace)));
        Ok(())
    })
}

/// Number of recorded samples; 0 for a null trace.
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_trace_len(trace: *const PfcTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.samples.len())
}

/// Copy sample `index` into `out`.
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_trace_sample(trace: *const PfcTrace, index: usize, out: *mut PfcSample) -> PfcStatus {
    guard(|| {
        let trace = trace.as_ref().ok_or_else(|| null("trace"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = trace
            .0
            .samples
            .get(index)
            .ok_or_else(|| (PfcStatus::OutOfRange, format!("sample {index} of {}", trace.0.samples.len())))?;
        *out = PfcSample {
            t: s.t,
            re_a: s.a.re,
            im_a: s.a.im,
            re_b: s.b.re,
            im_b: s.b.im,
            re_aout: s.a_out.re,
            im_aout: s.a_out.im,
        };
        Ok(())
    })
}

/// Integrated output quadratures and energy over `[t0, t1]`, demodulated at
/// `ref_hz` (ignored for rotating-frame traces).
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_trace_demodulate(
    trace: *const PfcTrace,
    ref_hz: f64,
    t0: f64,
    t1: f64,
    out_i: *mut f64,
    out_q: *mut f64,
    out_energy: *mut f64,
) -> PfcStatus {
    guard(|| {
        let trace = trace.as_ref().ok_or_else(|| null("trace"))?;
        if out_i.is_null() || out_q.is_null() || out_energy.is_null() {
            return Err(null("output"));
        }
        let d = demodulate(&trace.0, hz_to_angular(ref_hz), (t0, t1)).map_err(lib)?;
        *out_i = d.i;
        *out_q = d.q;
        *out_energy = d.energy;
        Ok(())
    })
}

/// Start and end of the last span labelled `label` (e.g. "readout").
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_trace_span(
    trace: *const PfcTrace,
    label: *const c_char,
    out_start: *mut f64,
    out_end: *mut f64,
) -> PfcStatus {
    guard(|| {
        let trace = trace.as_ref().ok_or_else(|| null("trace"))?;
        if label.is_null() || out_start.is_null() || out_end.is_null() {
            return Err(null("label or output"));
        }
        let label = CStr::from_ptr(label).to_string_lossy();
        let span = trace
            .0
            .spans
            .iter()
            .rev()
            .find(|s| s.label == label)
            .ok_or_else(|| (PfcStatus::OutOfRange, format!("no span labelled {label}")))?;
        *out_start = span.start;
        *out_end = span.end;
        Ok(())
    })
}

/// Release a trace; null is ignored.
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_trace_free(trace: *mut PfcTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Dominant angular frequency (rad/s) of a uniformly sampled series.
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_oscillation_frequency(
    series: *const f64,
    n: usize,
    dt: f64,
    out_omega: *mut f64,
) -> PfcStatus {
    guard(|| {
        if series.is_null() || out_omega.is_null() {
            return Err(null("series or output"));
        }
        *out_omega = oscillation_frequency(std::slice::from_raw_parts(series, n), dt).map_err(lib)?;
        Ok(())
    })
}

/// Fit `A·exp(−t/τ) + c`. A flat series sets `*degenerate = 1` and τ = ∞.
///
/// # Safety
/// Pointers must be null or valid for the documented length, and handles
/// must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pfc_fit_exponential_decay(
    t: *const f64,
    y: *const f64,
    n: usize,
    out_amplitude: *mut f64,
    out_tau: *mut f64,
    out_offset: *mut f64,
    degenerate: *mut i32,
) -> PfcStatus {
    guard(|| {
        if t.is_null() || y.is_null() || out_amplitude.is_null() || out_tau.is_null() || out_offset.is_null() {
            return Err(null("input or output"));
        }
        let (ts, ys) = (std::slice::from_raw_parts(t, n), std::slice::from_raw_parts(y, n));
        let points: Vec<(f64, f64)> = ts.iter().copied().zip(ys.iter().copied()).collect();
        let fit = fit_exponential_decay(&points).map_err(lib)?;
        *out_amplitude = fit.get("amplitude").unwrap_or(f64::NAN);
        *out_tau = fit.get("tau").unwrap_or(f64::NAN);
        *out_offset = fit.get("offset").unwrap_or(f64::NAN);
        if !degenerate.is_null() {
            *degenerate = i32::from(fit.degenerate);
        }
        Ok(())
    })
}
