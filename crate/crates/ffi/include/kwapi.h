#ifndef KWAPI_H
#define KWAPI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum KwapiStatus {
  KWAPI_STATUS_OK = 0,
  KWAPI_STATUS_NULL_POINTER = 1,
  KWAPI_STATUS_INVALID_ARGUMENT = 2,
  KWAPI_STATUS_DECODE = 3,
  KWAPI_STATUS_KEY_TOO_SHORT = 4,
  KWAPI_STATUS_OUT_OF_ORDER = 5,
  KWAPI_STATUS_FORMAT = 6,
  KWAPI_STATUS_BUFFER_TOO_SMALL = 7,
  KWAPI_STATUS_PANIC = 8,
} KwapiStatus;

// Archive consolidation function.
typedef enum KwapiConsolidation {
  KWAPI_CONSOLIDATION_AVERAGE = 0,
  KWAPI_CONSOLIDATION_MIN = 1,
  KWAPI_CONSOLIDATION_MAX = 2,
} KwapiConsolidation;

// Outcome of [`kwapi_archive_update`].
typedef enum KwapiUpdate {
  KWAPI_UPDATE_ACCEPTED = 0,
  KWAPI_UPDATE_LATE = 1,
  KWAPI_UPDATE_INVALID = 2,
} KwapiUpdate;

// Opaque archive handle.
typedef struct KwapiArchive KwapiArchive;

// Opaque measurement handle.
typedef struct KwapiMeasurement KwapiMeasurement;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message on this thread, or NULL. The pointer stays valid
// until the next failing call on the same thread.
const char *kwapi_last_error(void);

// Library version as a static NUL-terminated string.
const char *kwapi_version(void);

// Creates a measurement for probe `"site/name"`.
//
// # Safety
// `probe` must be a NUL-terminated string and `out` a valid pointer.
enum KwapiStatus kwapi_measurement_new(const char *probe,
                                       double timestamp,
                                       double watts,
                                       struct KwapiMeasurement **out);

// Sets the optional voltage; a negative or non-finite value is rejected.
//
// # Safety
// `m` must be a live handle.
enum KwapiStatus kwapi_measurement_set_volts(struct KwapiMeasurement *m, double volts);

// Sets the optional current.
//
// # Safety
// `m` must be a live handle.
enum KwapiStatus kwapi_measurement_set_amps(struct KwapiMeasurement *m, double amps);

// # Safety
// `m` must be NULL or a handle not yet freed.
void kwapi_measurement_free(struct KwapiMeasurement *m);

// Power in watts, or NaN for a NULL handle.
//
// # Safety
// `m` must be NULL or a live handle.
double kwapi_measurement_watts(const struct KwapiMeasurement *m);

// Timestamp in Unix seconds, or NaN for a NULL handle.
//
// # Safety
// `m` must be NULL or a live handle.
double kwapi_measurement_timestamp(const struct KwapiMeasurement *m);

// Writes the probe id (without NUL terminator).
//
// # Safety
// `m` must be a live handle, `buf` valid for `cap` bytes, `out_len` valid.
enum KwapiStatus kwapi_measurement_probe(const struct KwapiMeasurement *m,
                                         uint8_t *buf,
                                         size_t cap,
                                         size_t *out_len);

// Canonical JSON payload.
//
// # Safety
// `m` must be a live handle, `buf` valid for `cap` bytes, `out_len` valid.
enum KwapiStatus kwapi_measurement_encode(const struct KwapiMeasurement *m,
                                          uint8_t *buf,
                                          size_t cap,
                                          size_t *out_len);

// Parses a JSON payload into a new handle.
//
// # Safety
// `data` must be valid for `len` bytes and `out` a valid pointer.
enum KwapiStatus kwapi_measurement_decode(const uint8_t *data,
                                          size_t len,
                                          struct KwapiMeasurement **out);

// Signs in place with HMAC-SHA-256. Keys shorter than 16 bytes are refused.
//
// # Safety
// `m` must be a live handle and `key` valid for `key_len` bytes.
enum KwapiStatus kwapi_measurement_sign(struct KwapiMeasurement *m,
                                        const uint8_t *key,
                                        size_t key_len);

// Sets `*out_valid` to whether the signature checks.
//
// # Safety
// `m` must be a live handle, `key` valid for `key_len` bytes, `out_valid` valid.
enum KwapiStatus kwapi_measurement_verify(const struct KwapiMeasurement *m,
                                          const uint8_t *key,
                                          size_t key_len,
                                          bool *out_valid);

// Trapezoidal kWh between two samples. Pairs further apart than
// `gap_limit_s` yield 0 with `*out_gap` set.
//
// # Safety
// `out_kwh` and `out_gap` must be valid pointers.
enum KwapiStatus kwapi_integrate_energy(double prev_w,
                                        double prev_t,
                                        double w,
                                        double t,
                                        double gap_limit_s,
                                        double *out_kwh,
                                        bool *out_gap);

// Rounds to the nearest multiple of `precision_w`; NaN if the precision
// is not a positive finite number.
double kwapi_quantize(double watts, double precision_w);

// # Safety
// `out` must be a valid pointer.
enum KwapiStatus kwapi_archive_new(double step_s,
                                   uint32_t capacity,
                                   enum KwapiConsolidation consolidation,
                                   struct KwapiArchive **out);

// # Safety
// `a` must be NULL or a handle not yet freed.
void kwapi_archive_free(struct KwapiArchive *a);

// # Safety
// `a` must be a live handle and `out` valid.
enum KwapiStatus kwapi_archive_update(struct KwapiArchive *a,
                                      double t,
                                      double w,
                                      enum KwapiUpdate *out);

// Retained buckets intersecting `[t_from, t_to)`. Bucket starts go to
// `starts`, values to `values` with NaN for absent buckets; both arrays
// hold `cap` entries and `*out_len` receives the bucket count.
//
// # Safety
// `a` must be a live handle; `starts` and `values` valid for `cap` doubles.
enum KwapiStatus kwapi_archive_fetch(const struct KwapiArchive *a,
                                     double t_from,
                                     double t_to,
                                     double *starts,
                                     double *values,
                                     size_t cap,
                                     size_t *out_len);

// Serialized archive in the on-disk format.
//
// # Safety
// `a` must be a live handle, `buf` valid for `cap` bytes, `out_len` valid.
enum KwapiStatus kwapi_archive_serialize(const struct KwapiArchive *a,
                                         uint8_t *buf,
                                         size_t cap,
                                         size_t *out_len);

// # Safety
// `data` must be valid for `len` bytes and `out` a valid pointer.
enum KwapiStatus kwapi_archive_deserialize(const uint8_t *data,
                                           size_t len,
                                           struct KwapiArchive **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KWAPI_H */
