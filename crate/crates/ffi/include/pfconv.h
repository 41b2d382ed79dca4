#ifndef PFCONV_H
#define PFCONV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum PfcStatus {
  PFC_STATUS_OK = 0,
  PFC_STATUS_VALIDATION = 1,
  PFC_STATUS_RESOLUTION = 2,
  PFC_STATUS_NON_FINITE = 3,
  PFC_STATUS_SYNTAX = 4,
  PFC_STATUS_SEMANTIC = 5,
  PFC_STATUS_SINGULAR = 6,
  PFC_STATUS_CONVERGENCE = 7,
  PFC_STATUS_NO_OSCILLATION = 8,
  PFC_STATUS_IO = 9,
  PFC_STATUS_NULL_POINTER = 10,
  PFC_STATUS_OUT_OF_RANGE = 11,
  PFC_STATUS_PANIC = 12,
} PfcStatus;

/**
 * Parsed pulse sequence.
 */
typedef struct PfcSequence PfcSequence;

/**
 * Pair of modes the spectral functions operate on.
 */
typedef struct PfcSystem PfcSystem;

/**
 * Simulated trajectory.
 */
typedef struct PfcTrace PfcTrace;

/**
 * One cavity mode.
 */
typedef struct PfcMode {
  double freq_hz;
  /**
   * Internal energy decay rate (1/s).
   */
  double gamma_int;
  /**
   * Port energy decay rate (1/s).
   */
  double gamma_ext;
} PfcMode;

/**
 * One recorded instant.
 */
typedef struct PfcSample {
  double t;
  double re_a;
  double im_a;
  double re_b;
  double im_b;
  double re_aout;
  double im_aout;
} PfcSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *pfc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pfc_version(void);

/**
 * Default readout (A) and storage (B) modes.
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
enum PfcStatus pfc_default_modes(struct PfcMode *mode_a, struct PfcMode *mode_b);

/**
 * Create a system from two modes; release with `pfc_system_free`.
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
enum PfcStatus pfc_system_new(struct PfcMode mode_a, struct PfcMode mode_b, struct PfcSystem **out);

/**
 * Release a system; null is ignored.
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
void pfc_system_free(struct PfcSystem *sys);

/**
 * Steady-state reflection coefficient at `n` probe frequencies, with a
 * continuous pump of amplitude `g_p_hz` detuned by `delta_hz`.
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
enum PfcStatus pfc_reflection_spectrum(const struct PfcSystem *sys,
                                       double g_p_hz,
                                       double delta_hz,
                                       const double *probes_hz,
                                       size_t n,
                                       double *out_re,
                                       double *out_im);

/**
 * Coupling rate (Hz) of the reference device for a pump flux amplitude in
 * flux quanta.
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
enum PfcStatus pfc_reference_coupling_hz(double delta_phi, double *out_hz);

/**
 * Parse sequence text (UTF-8, NUL-terminated).
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
enum PfcStatus pfc_sequence_parse(const char *text, struct PfcSequence **out);

/**
 * Write the sequence text into `buf` (capacity `len` bytes, NUL included).
 * `needed` receives the required capacity; a short buffer gives
 * `OutOfRange` and leaves `buf` untouched.
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
enum PfcStatus pfc_sequence_emit(const struct PfcSequence *seq,
                                 char *buf,
                                 size_t len,
                                 size_t *needed);

/**
 * Release a sequence; null is ignored.
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
void pfc_sequence_free(struct PfcSequence *seq);

/**
 * Run every segment of a sequence.
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
enum PfcStatus pfc_sequence_run(const struct PfcSequence *seq, struct PfcTrace **out);

/**
 * Number of recorded samples; 0 for a null trace.
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
size_t pfc_trace_len(const struct PfcTrace *trace);

/**
 * Copy sample `index` into `out`.
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
enum PfcStatus pfc_trace_sample(const struct PfcTrace *trace, size_t index, struct PfcSample *out);

/**
 * Integrated output quadratures and energy over `[t0, t1]`, demodulated at
 * `ref_hz` (ignored for rotating-frame traces).
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
enum PfcStatus pfc_trace_demodulate(const struct PfcTrace *trace,
                                    double ref_hz,
                                    double t0,
                                    double t1,
                                    double *out_i,
                                    double *out_q,
                                    double *out_energy);

/**
 * Start and end of the last span labelled `label` (e.g. "readout").
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
enum PfcStatus pfc_trace_span(const struct PfcTrace *trace,
                              const char *label,
                              double *out_start,
                              double *out_end);

/**
 * Release a trace; null is ignored.
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
void pfc_trace_free(struct PfcTrace *trace);

/**
 * Dominant angular frequency (rad/s) of a uniformly sampled series.
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
enum PfcStatus pfc_oscillation_frequency(const double *series,
                                         size_t n,
                                         double dt,
                                         double *out_omega);

/**
 * Fit `A·exp(−t/τ) + c`. A flat series sets `*degenerate = 1` and τ = ∞.
 *
 * # Safety
 * Pointers must be null or valid for the documented length, and handles
 * must come from this library and not have been freed.
 */
enum PfcStatus pfc_fit_exponential_decay(const double *t,
                                         const double *y,
                                         size_t n,
                                         double *out_amplitude,
                                         double *out_tau,
                                         double *out_offset,
                                         int32_t *degenerate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PFCONV_H */
