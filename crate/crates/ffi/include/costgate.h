#ifndef COSTGATE_H
#define COSTGATE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CostgateStatus {
  COSTGATE_STATUS_OK = 0,
  COSTGATE_STATUS_NULL_ARGUMENT = 1,
  COSTGATE_STATUS_INVALID_UTF8 = 2,
  COSTGATE_STATUS_INVALID_JSON = 3,
  COSTGATE_STATUS_BAD_REQUEST = 4,
  COSTGATE_STATUS_NOT_FOUND = 5,
  COSTGATE_STATUS_QUEUE_FULL = 6,
  COSTGATE_STATUS_CONTEXT_OVERFLOW = 7,
  COSTGATE_STATUS_UPSTREAM = 8,
  COSTGATE_STATUS_CONFIG = 9,
  COSTGATE_STATUS_INTERNAL = 10,
} CostgateStatus;

/**
 * Opaque gateway handle.
 */
typedef struct CostgateGateway CostgateGateway;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a gateway from a JSON configuration (the TOML file's fields),
 * or defaults when `config_json` is null or empty. Models of providers
 * without credentials in the environment are served by the mock.
 *
 * # Safety
 * `config_json` is null or a NUL-terminated string; `out` is writable.
 */
enum CostgateStatus costgate_gateway_new(const char *config_json, struct CostgateGateway **out);

/**
 * # Safety
 * `gateway` is null or a handle from [`costgate_gateway_new`] not yet freed.
 */
void costgate_gateway_free(struct CostgateGateway *gateway);

/**
 * Serves one chat request (JSON as for `POST /v1/chat`) and writes the
 * response JSON to `out`. Blocks until the answer is ready.
 *
 * # Safety
 * `gateway` is a live handle, `request_json` a NUL-terminated string and
 * `out` writable.
 */
enum CostgateStatus costgate_chat(const struct CostgateGateway *gateway,
                                  const char *request_json,
                                  char **out);

/**
 * Writes the stored record of `request_id` as JSON to `out`.
 *
 * # Safety
 * As for [`costgate_chat`].
 */
enum CostgateStatus costgate_get_request(const struct CostgateGateway *gateway,
                                         const char *request_id,
                                         char **out);

/**
 * Writes the session's records, oldest first, as a JSON array to `out`.
 *
 * # Safety
 * As for [`costgate_chat`].
 */
enum CostgateStatus costgate_session(const struct CostgateGateway *gateway,
                                     const char *user_id,
                                     const char *session_id,
                                     char **out);

/**
 * Mock token count of `text`; 0 for null or non-UTF-8 input.
 *
 * # Safety
 * `text` is null or a NUL-terminated string.
 */
uint64_t costgate_count_tokens(const char *text);

/**
 * Exact cost in USD of a call to `model_id` in the built-in catalog,
 * written to `out` as a decimal string.
 *
 * # Safety
 * `model_id` is a NUL-terminated string and `out` writable.
 */
enum CostgateStatus costgate_cost_of(const char *model_id,
                                     uint64_t input_tokens,
                                     uint64_t output_tokens,
                                     char **out);

/**
 * Total chat input tokens of `n` messages under last-`k` context, given
 * per-message input and output token counts.
 *
 * # Safety
 * `inputs` and `outputs` point to `n` values each (or are null when `n` is 0).
 */
uint64_t costgate_lastk_input_tokens(const uint64_t *inputs,
                                     const uint64_t *outputs,
                                     uintptr_t n,
                                     uintptr_t k);

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread; do not free.
 */
const char *costgate_last_error(void);

/**
 * # Safety
 * `s` is null or a string returned by this library, not yet freed.
 */
void costgate_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COSTGATE_H */
