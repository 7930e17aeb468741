#ifndef EVENTCAUSE_H
#define EVENTCAUSE_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EcCountLevel {
  EC_COUNT_LEVEL_COMPACT = 0,
  EC_COUNT_LEVEL_TOTAL = 1,
} EcCountLevel;

typedef enum EcLevel {
  EC_LEVEL_NODE = 0,
  EC_LEVEL_INSTANCE = 1,
} EcLevel;

typedef enum EcStatus {
  EC_STATUS_OK = 0,
  EC_STATUS_NULL_POINTER = 1,
  EC_STATUS_INVALID_UTF8 = 2,
  EC_STATUS_IO = 3,
  EC_STATUS_VALIDATION = 4,
  EC_STATUS_UNKNOWN_NODE = 5,
  EC_STATUS_INVALID_ARGUMENT = 6,
  EC_STATUS_INTERNAL = 7,
} EcStatus;

typedef enum EcTransitionScheme {
  EC_TRANSITION_SCHEME_NODE_UNIFORM = 0,
  EC_TRANSITION_SCHEME_TRAJECTORY_UNIFORM = 1,
} EcTransitionScheme;

/**
 * A loaded activity: observational and causal graphs plus node texts.
 */
typedef struct EcBundle EcBundle;

/**
 * A generated set of causal query triplets.
 */
typedef struct EcTriplets EcTriplets;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The message of the last failed call on this thread, or null. Valid
 * until the next call into this library on the same thread.
 */
const char *ec_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ec_string_free(char *s);

/**
 * Loads a bundle file. Invariant violations do not fail the load; query
 * them with [`ec_bundle_validate`].
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum EcStatus ec_bundle_load(const char *path, struct EcBundle **out);

/**
 * Parses a bundle from JSON text.
 *
 * # Safety
 * `json` must be a valid C string; `out` must be writable.
 */
enum EcStatus ec_bundle_from_json(const char *json, struct EcBundle **out);

/**
 * Releases a bundle. Null is ignored.
 *
 * # Safety
 * `bundle` must come from this library and not have been freed.
 */
void ec_bundle_free(struct EcBundle *bundle);

/**
 * Number of invariant violations. When non-zero, the call returns
 * `Validation` and the violations are in the last-error message.
 *
 * # Safety
 * `bundle` must be a live handle; `violations` must be writable.
 */
enum EcStatus ec_bundle_validate(const struct EcBundle *bundle, size_t *violations);

/**
 * # Safety
 * `bundle` must be a live handle; `out` must be writable.
 */
enum EcStatus ec_bundle_node_count(const struct EcBundle *bundle, size_t *out);

/**
 * Trajectory count between two nodes as a decimal string (counts can
 * exceed 64 bits). Null `from`/`to` mean the start and end nodes.
 *
 * # Safety
 * `bundle` must be a live handle; `from`/`to` null or valid C strings;
 * `out` must be writable.
 */
enum EcStatus ec_count_trajectories(const struct EcBundle *bundle,
                                    const char *from,
                                    const char *to,
                                    enum EcCountLevel level,
                                    char **out);

/**
 * d-separation of `x` and `y` given `z` in the causal graph.
 *
 * # Safety
 * `bundle` must be a live handle; `x`, `y` valid C strings; `z` points to
 * `z_len` valid C strings (or is null when `z_len` is 0); `out` writable.
 */
enum EcStatus ec_d_separated(const struct EcBundle *bundle,
                             const char *x,
                             const char *y,
                             const char *const *z,
                             size_t z_len,
                             bool *out);

/**
 * Generates the causal triplets of a bundle, or the causally-hard variant.
 *
 * # Safety
 * `bundle` must be a live handle; `out` must be writable.
 */
enum EcStatus ec_triplets_generate(const struct EcBundle *bundle,
                                   bool hard,
                                   struct EcTriplets **out);

/**
 * # Safety
 * `triplets` must be a live handle; `out` must be writable.
 */
enum EcStatus ec_triplets_len(const struct EcTriplets *triplets, size_t *out);

/**
 * Releases a triplet set. Null is ignored.
 *
 * # Safety
 * `triplets` must come from this library and not have been freed.
 */
void ec_triplets_free(struct EcTriplets *triplets);

/**
 * Writes a balanced dataset file and returns its digest.
 *
 * # Safety
 * `bundle` and `triplets` must be live handles from the same activity;
 * `path` a valid C string; `digest_out` writable.
 */
enum EcStatus ec_dataset_write(const struct EcBundle *bundle,
                               const struct EcTriplets *triplets,
                               enum EcLevel level,
                               const char *path,
                               uint64_t seed,
                               char **digest_out);

/**
 * Closed-form `Δ` between two events of the observational graph.
 *
 * # Safety
 * `bundle` must be a live handle; `e1`, `e2` valid C strings; `out`
 * writable.
 */
enum EcStatus ec_delta_graph(const struct EcBundle *bundle,
                             const char *e1,
                             const char *e2,
                             enum EcTransitionScheme scheme,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVENTCAUSE_H */
