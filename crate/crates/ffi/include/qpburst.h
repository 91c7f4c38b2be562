#ifndef QPBURST_H
#define QPBURST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QpStatus {
  QP_STATUS_OK = 0,
  QP_STATUS_NULL_POINTER = 1,
  QP_STATUS_INVALID_ARGUMENT = 2,
  QP_STATUS_IO = 3,
  QP_STATUS_OUT_OF_RANGE = 4,
  QP_STATUS_INTERNAL = 5,
} QpStatus;

typedef enum QpLabel {
  QP_LABEL_RADIATION = 0,
  QP_LABEL_PULSE_TUBE = 1,
  QP_LABEL_AMBIGUOUS = 2,
  QP_LABEL_FAILED_FIT = 3,
} QpLabel;

// Labelled events of an analysis run.
typedef struct QpEvents QpEvents;

// A relaxation record.
typedef struct QpRecord QpRecord;

// An amplitude spectral density table.
typedef struct QpSpectrum QpSpectrum;

// One characterized event.
typedef struct QpEvent {
  uint64_t file_id;
  uint64_t start_index;
  uint64_t global_index;
  double start_time_s;
  double filter_score;
  double lifetime_s;
  // NaN when no qubit responded.
  double asymmetry;
  // Nonzero when the decay fit was flagged.
  int32_t fit_failed;
  enum QpLabel label;
} QpEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. Valid until the next
// call into the library from this thread.
const char *qp_last_error(void);

// Library version as a static NUL-terminated string.
const char *qp_version(void);

// Fidelity factor `a` reproducing `t1_ref` from decay probability `p_ref`.
//
// # Safety
// `out` must point to writable storage for one double.
enum QpStatus qp_calibrate_a(double p_ref, double t1_ref, double delta_t, double *out);

// T1 from decay probability `p`. `nonphysical` receives 1 when the rate is
// nonphysical and the estimate fell back to `a = 1`.
//
// # Safety
// `t1` and `nonphysical` must point to writable storage.
enum QpStatus qp_estimate_t1(double p, double a, double delta_t, double *t1, int32_t *nonphysical);

// Top/bottom asymmetry of `n` per-qubit peaks on the default ten-qubit layout.
//
// # Safety
// `peaks` must point to `n` doubles and `out` to writable storage.
enum QpStatus qp_localization_metric(const double *peaks, size_t n, double *out);

// Reads a record file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum QpStatus qp_record_open(const char *path, struct QpRecord **out);

// Renders file `index` of the default scenario with `seed`, with
// `n_files` files planned in total.
//
// # Safety
// `out` must be writable.
enum QpStatus qp_record_synth(uint64_t seed, size_t n_files, size_t index, struct QpRecord **out);

// # Safety
// `r` must be NULL or a handle from this library not yet freed.
void qp_record_free(struct QpRecord *r);

// Measurements per qubit; 0 for NULL.
//
// # Safety
// `r` must be NULL or a live handle.
size_t qp_record_len(const struct QpRecord *r);

// # Safety
// `r` must be NULL or a live handle.
size_t qp_record_qubits(const struct QpRecord *r);

// Seconds per measurement; NaN for NULL.
//
// # Safety
// `r` must be NULL or a live handle.
double qp_record_cadence(const struct QpRecord *r);

// Relaxations recorded on 0-based `qubit`.
//
// # Safety
// `r` must be a live handle and `out` writable.
enum QpStatus qp_record_relaxations(const struct QpRecord *r, size_t qubit, uint64_t *out);

// Runs detection, characterization and labelling over `n` consecutive
// records with default parameters and the given score `threshold`
// (non-positive: default).
//
// # Safety
// `records` must point to `n` live handles and `out` must be writable.
enum QpStatus qp_analyze(const struct QpRecord *const *records,
                         size_t n,
                         double threshold,
                         size_t workers,
                         struct QpEvents **out);

// # Safety
// `e` must be NULL or a live handle.
size_t qp_events_len(const struct QpEvents *e);

// Copies event `i` into `out`.
//
// # Safety
// `e` must be a live handle and `out` writable.
enum QpStatus qp_events_get(const struct QpEvents *e, size_t i, struct QpEvent *out);

// Writes the labelled event catalog as CSV.
//
// # Safety
// `e` must be a live handle and `path` a NUL-terminated string.
enum QpStatus qp_events_write_csv(const struct QpEvents *e, const char *path);

// # Safety
// `e` must be NULL or a live handle.
void qp_events_free(struct QpEvents *e);

// Welch ASD of `n` samples at `sample_rate` with Hann segments of
// `segment_len` and 50% overlap.
//
// # Safety
// `series` must point to `n` doubles and `out` must be writable.
enum QpStatus qp_spectrum_compute(const double *series,
                                  size_t n,
                                  double sample_rate,
                                  size_t segment_len,
                                  struct QpSpectrum **out);

// # Safety
// `s` must be NULL or a live handle.
size_t qp_spectrum_len(const struct QpSpectrum *s);

// Frequency and ASD of bin `i`.
//
// # Safety
// `s` must be a live handle; `frequency` and `asd` must be writable.
enum QpStatus qp_spectrum_get(const struct QpSpectrum *s, size_t i, double *frequency, double *asd);

// Harmonic-comb search around `f0_guess +- band` over `harmonics` multiples.
//
// # Safety
// `s` must be a live handle; `f0` and `score` must be writable.
enum QpStatus qp_spectrum_comb(const struct QpSpectrum *s,
                               double f0_guess,
                               size_t harmonics,
                               double band,
                               double *f0,
                               double *score);

// # Safety
// `s` must be NULL or a live handle.
void qp_spectrum_free(struct QpSpectrum *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QPBURST_H */
