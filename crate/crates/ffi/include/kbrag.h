#ifndef KBRAG_H
#define KBRAG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KbragStatus {
  KBRAG_STATUS_OK = 0,
  KBRAG_STATUS_NULL_ARGUMENT = 1,
  KBRAG_STATUS_INVALID = 2,
  KBRAG_STATUS_BACKEND = 3,
  KBRAG_STATUS_IO = 4,
  KBRAG_STATUS_PANIC = 5,
} KbragStatus;

/**
 * Model gateway handle (mock oracle or HTTP backend).
 */
typedef struct KbragGateway KbragGateway;

/**
 * Knowledge base handle.
 */
typedef struct KbragKb KbragKb;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next kbrag call on the same thread.
 */
const char *kbrag_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void kbrag_string_free(char *s);

/**
 * Two-way softmax: probability of the positive tag.
 *
 * # Safety
 * `out` must point to writable memory for one `double`.
 */
enum KbragStatus kbrag_softmax_pair(double z_pos, double z_neg, double *out);

/**
 * Retrieval gate from the `[Ret]`/`[NoRet]` logits. `out_retrieve` is set
 * to true iff the score is strictly above `gamma`.
 *
 * # Safety
 * `out_score` and `out_retrieve` must be writable.
 */
enum KbragStatus kbrag_decide_ret(double z_ret,
                                  double z_no_ret,
                                  double gamma,
                                  double *out_score,
                                  bool *out_retrieve);

/**
 * Opens an index bundle directory written by `kbrag ingest`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum KbragStatus kbrag_kb_open(const char *dir, struct KbragKb **out);

/**
 * # Safety
 * `kb` must be NULL or a live handle from [`kbrag_kb_open`].
 */
void kbrag_kb_free(struct KbragKb *kb);

/**
 * Number of documents, or 0 for a NULL handle.
 *
 * # Safety
 * `kb` must be NULL or a live handle.
 */
size_t kbrag_kb_len(const struct KbragKb *kb);

/**
 * Embedding dimension, or 0 for a NULL handle.
 *
 * # Safety
 * `kb` must be NULL or a live handle.
 */
size_t kbrag_kb_dim(const struct KbragKb *kb);

/**
 * Top-k cosine retrieval. Writes a JSON array of
 * `{"doc_id", "similarity", "rank"}` objects to `out_json`.
 *
 * # Safety
 * `query` must point to `len` floats; `out_json` must be writable.
 */
enum KbragStatus kbrag_kb_retrieve(const struct KbragKb *kb,
                                   const float *query,
                                   size_t len,
                                   size_t k,
                                   char **out_json);

/**
 * Gateway backed by the mock oracle loaded from a truth-table JSON file.
 *
 * # Safety
 * `table_path` must be a NUL-terminated string; `out` must be writable.
 */
enum KbragStatus kbrag_gateway_mock(const char *table_path, struct KbragGateway **out);

/**
 * Gateway that talks to a backend over HTTP with default timeouts.
 *
 * # Safety
 * `base_url` must be a NUL-terminated string; `out` must be writable.
 */
enum KbragStatus kbrag_gateway_http(const char *base_url, struct KbragGateway **out);

/**
 * # Safety
 * `gateway` must be NULL or a live handle.
 */
void kbrag_gateway_free(struct KbragGateway *gateway);

/**
 * Answers one query and writes its trace as JSON to `out_json`.
 *
 * `query_json` is a query record; `vector`/`len` is its image embedding
 * (may be NULL when retrieval is never needed). `config_json` may be NULL
 * for the default configuration. Per-query failures are reported inside
 * the trace, not through the status.
 *
 * # Safety
 * Pointers must be valid as described; `out_json` must be writable.
 */
enum KbragStatus kbrag_run_query(const struct KbragKb *kb,
                                 const struct KbragGateway *gateway,
                                 const char *query_json,
                                 const float *vector,
                                 size_t len,
                                 const char *config_json,
                                 char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KBRAG_H */
