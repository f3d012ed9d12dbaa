#ifndef NVMAG_H
#define NVMAG_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NvmStatus {
  NVM_STATUS_OK = 0,
  NVM_STATUS_NULL_POINTER = 1,
  NVM_STATUS_INVALID_ARGUMENT = 2,
  NVM_STATUS_INVALID_FIELD = 3,
  NVM_STATUS_CONFIG = 4,
  NVM_STATUS_DEGENERATE_REFERENCE = 5,
  NVM_STATUS_ENBW_TOO_WIDE = 6,
  NVM_STATUS_OVERFLOW = 7,
  NVM_STATUS_FIT_FAILED = 8,
  NVM_STATUS_NO_CROSSING = 9,
  NVM_STATUS_UNDERDETERMINED = 10,
  NVM_STATUS_NUMERIC = 11,
  NVM_STATUS_IO = 12,
  NVM_STATUS_BUFFER_TOO_SMALL = 13,
  NVM_STATUS_PANIC = 99,
} NvmStatus;

typedef enum NvmChannel {
  NVM_CHANNEL_A = 0,
  NVM_CHANNEL_B = 1,
} NvmChannel;

typedef enum NvmMode {
  NVM_MODE_UNBALANCED = 0,
  NVM_MODE_BALANCED = 1,
  NVM_MODE_ELECTRONIC = 2,
} NvmMode;

/**
 * A parsed and validated scenario.
 */
typedef struct NvmScenario NvmScenario;

/**
 * Two-channel ADC record.
 */
typedef struct NvmTimeSeries NvmTimeSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (NUL-terminated, truncated
 * to fit) and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t nvm_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *nvm_version(void);

/**
 * Scenario with every field at its default and the given seed.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum NvmStatus nvm_scenario_new(uint64_t seed, struct NvmScenario **out);

/**
 * Parses a JSON scenario. The seed must be present in the text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NvmStatus nvm_scenario_from_json(const char *json, struct NvmScenario **out);

/**
 * # Safety
 * `sc` must be null or a handle from this library, not yet freed.
 */
void nvm_scenario_free(struct NvmScenario *sc);

/**
 * # Safety
 * `sc` must be a live handle.
 */
enum NvmStatus nvm_scenario_set_seed(struct NvmScenario *sc, uint64_t seed);

/**
 * Runs the acquisition chain for `duration` seconds.
 *
 * # Safety
 * `sc` must be a live handle and `out` a valid pointer.
 */
enum NvmStatus nvm_simulate(const struct NvmScenario *sc,
                            double duration,
                            struct NvmTimeSeries **out);

/**
 * # Safety
 * `ts` must be null or a handle from this library, not yet freed.
 */
void nvm_timeseries_free(struct NvmTimeSeries *ts);

/**
 * Sample count per channel and sample rate in Hz.
 *
 * # Safety
 * `ts` must be a live handle; the out-pointers must be valid.
 */
enum NvmStatus nvm_timeseries_info(const struct NvmTimeSeries *ts,
                                   size_t *len,
                                   double *sample_rate,
                                   uint8_t *bits);

/**
 * Copies one channel's ADC codes. Pass a null buffer with zero capacity to
 * query the length through `written`.
 *
 * # Safety
 * `ts` must be a live handle; `buf` must be valid for `capacity` values.
 */
enum NvmStatus nvm_timeseries_codes(const struct NvmTimeSeries *ts,
                                    enum NvmChannel channel,
                                    uint16_t *buf,
                                    size_t capacity,
                                    size_t *written);

/**
 * Writes the record in the binary NVTS format.
 *
 * # Safety
 * `ts` must be a live handle and `path` a NUL-terminated string.
 */
enum NvmStatus nvm_timeseries_write(const struct NvmTimeSeries *ts, const char *path);

/**
 * Reads an NVTS file. `full_scale` is the ADC range in volts, which the
 * file does not store.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NvmStatus nvm_timeseries_read(const char *path, double full_scale, struct NvmTimeSeries **out);

/**
 * Balances the record with the scenario's k1 and the given k2, then runs
 * the AC-coupled float lock-in. X and Y each receive `written` values.
 *
 * # Safety
 * Handles must be live; `x` and `y` must be valid for `capacity` values.
 */
enum NvmStatus nvm_demodulate(const struct NvmScenario *sc,
                              const struct NvmTimeSeries *ts,
                              double k2,
                              double *x,
                              double *y,
                              size_t capacity,
                              size_t *written);

/**
 * Simulated sensitivity of the scenario in T/√Hz.
 *
 * # Safety
 * `sc` must be a live handle and `eta` a valid pointer.
 */
enum NvmStatus nvm_sensitivity(const struct NvmScenario *sc, enum NvmMode mode, double *eta);

/**
 * Normalized CW-ODMR spectrum of the default spin system at field `b_xyz`
 * (tesla), evaluated on `grid` (Hz, strictly increasing).
 *
 * # Safety
 * `b_xyz` must point to 3 values; `grid` and `values` to `n` values each.
 */
enum NvmStatus nvm_odmr_spectrum(const double *b_xyz,
                                 const double *grid,
                                 size_t n,
                                 bool hs_on,
                                 double mw_power_dbm,
                                 double *values);

/**
 * Lock-in lineshape `[S(ν+δ/2) - S(ν-δ/2)] / 2` on `grid`; see
 * [`nvm_odmr_spectrum`].
 *
 * # Safety
 * As for [`nvm_odmr_spectrum`].
 */
enum NvmStatus nvm_lockin_lineshape(const double *b_xyz,
                                    const double *grid,
                                    size_t n,
                                    bool hs_on,
                                    double mw_power_dbm,
                                    double depth,
                                    double *values);

/**
 * Photon-shot-noise-limited sensitivity in T/√Hz.
 *
 * # Safety
 * `eta` must be a valid pointer.
 */
enum NvmStatus nvm_shot_noise_limit(double hwhm,
                                    double contrast,
                                    double photon_rate,
                                    double gamma,
                                    double *eta);

/**
 * Least-squares field (tesla) from the Zeeman splittings of the four axes,
 * ordered like the crate's axis list, with the given projection signs (±1).
 *
 * # Safety
 * `splittings` and `signs` must point to 4 values, `b_xyz` to 3, and
 * `residual` must be valid.
 */
enum NvmStatus nvm_reconstruct_field(const double *splittings,
                                     const double *signs,
                                     double *b_xyz,
                                     double *residual);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NVMAG_H */
