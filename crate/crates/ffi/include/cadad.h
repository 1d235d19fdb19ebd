#ifndef CADAD_H
#define CADAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Configuration, numeric and I/O codes match the exit codes
 * of the command-line tool.
 */
typedef enum CadadStatus {
  CADAD_STATUS_OK = 0,
  CADAD_STATUS_NULL_POINTER = 1,
  CADAD_STATUS_CONFIG = 2,
  CADAD_STATUS_NUMERIC = 3,
  CADAD_STATUS_IO = 4,
  CADAD_STATUS_CONTRACT = 5,
  CADAD_STATUS_INDEX = 6,
  CADAD_STATUS_PARSE = 7,
  CADAD_STATUS_PANIC = 8,
} CadadStatus;

/**
 * Trained network loaded from a checkpoint.
 */
typedef struct CadadNetwork CadadNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty when none failed.
 * Valid until the next failing call on the same thread.
 */
const char *cadad_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cadad_version(void);

/**
 * Loads a checkpoint file into a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CadadStatus cadad_network_load(const char *path, struct CadadNetwork **out);

/**
 * Parses checkpoint JSON into a new handle.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CadadStatus cadad_network_from_json(const char *json, struct CadadNetwork **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void cadad_network_free(struct CadadNetwork *net);

/**
 * Input channels; 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t cadad_network_n_inputs(const struct CadadNetwork *net);

/**
 * Output classes; 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t cadad_network_n_classes(const struct CadadNetwork *net);

/**
 * Layers including the readout; 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t cadad_network_n_layers(const struct CadadNetwork *net);

/**
 * Training epoch stored with the checkpoint.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
uint32_t cadad_network_epoch(const struct CadadNetwork *net);

/**
 * Class scores of a batch.
 *
 * `input` is `[batch x steps x channels]`, `scores` receives
 * `[batch x n_classes]`. A nonzero `discretize` rounds delays to whole steps.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum CadadStatus cadad_network_forward(const struct CadadNetwork *net,
                                       const double *input,
                                       size_t batch,
                                       size_t steps,
                                       size_t channels,
                                       int32_t discretize,
                                       double *scores,
                                       size_t scores_len);

/**
 * Shift scale at `epoch`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CadadStatus cadad_anneal_scale(uint32_t epoch,
                                    double s_max,
                                    double s_min,
                                    uint32_t e_decay,
                                    double *out);

/**
 * Slope-limited copy of a raw shift sequence; `input` and `output` hold `len` values.
 *
 * # Safety
 * Both buffers must hold `len` values.
 */
enum CadadStatus cadad_slope_limit(const double *input, double *output, size_t len);

/**
 * Interpolated delayed read of a `[steps x channels]` signal with one delay
 * per step and channel.
 *
 * # Safety
 * `signal`, `delays` and `output` must each hold `steps * channels` values.
 */
enum CadadStatus cadad_delayed_read(const double *signal,
                                    const double *delays,
                                    size_t steps,
                                    size_t channels,
                                    double *output);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CADAD_H */
