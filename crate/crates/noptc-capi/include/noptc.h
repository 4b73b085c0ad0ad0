/* C API for the noptc model-optimization library.
 *
 * All functions return a status code (noptc_status); NOPTC_OK is 0. On
 * failure, noptc_last_error() returns a thread-local message that stays
 * valid until the next failing call on the same thread.
 */
#ifndef NOPTC_H
#define NOPTC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Opaque model handle. */
typedef struct NoptcModel NoptcModel;

typedef enum noptc_status {
  NOPTC_OK = 0,
  NOPTC_ERR_INVALID_ARG = 1, /* null pointer, bad preset, bad UTF-8 */
  NOPTC_ERR_PARSE = 2,       /* model bytes failed to deserialize */
  NOPTC_ERR_PASS = 3,        /* an optimization pass failed */
  NOPTC_ERR_EXEC = 4         /* interpretation failed */
} noptc_status;

/* Thread-local message for the most recent failure; "" if none. */
const char *noptc_last_error(void);

/* Stable name for a status code ("ok", "parse_error", ...). */
const char *noptc_status_name(int status);

/* Deserializes `len` bytes into a new handle stored in `*out`.
 * Free with noptc_model_free. */
int noptc_model_load(const unsigned char *bytes, size_t len,
                     NoptcModel **out);

/* Frees a model handle. Null is a no-op. */
void noptc_model_free(NoptcModel *model);

/* Serializes the model. `*out` is owned by the caller; release it with
 * noptc_buffer_free(*out, *out_len). */
int noptc_model_save(const NoptcModel *model, unsigned char **out,
                     size_t *out_len);

/* Frees a buffer returned by noptc_model_save. Null is a no-op. */
void noptc_buffer_free(unsigned char *bytes, size_t len);

/* Applies a preset ("smallest", "accurate", "fastest") in place. Int8 modes
 * calibrate on 8 seeded random inputs derived from `seed`. */
int noptc_model_optimize(NoptcModel *model, const char *preset,
                         uint64_t seed);

/* Stores the trainable-parameter count in `*out`. */
int noptc_model_param_count(const NoptcModel *model, size_t *out);

/* Stores the constant-payload byte count in `*out`. */
int noptc_model_payload_bytes(const NoptcModel *model, uint64_t *out);

/* Runs the model on one seeded random input; stores the argmax over the
 * first output's innermost axis in `*out`. */
int noptc_model_run_argmax(const NoptcModel *model, uint64_t seed,
                           size_t *out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* NOPTC_H */
