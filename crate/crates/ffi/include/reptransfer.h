#ifndef REPTRANSFER_H
#define REPTRANSFER_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define RT_KIND_UR 0

#define RT_KIND_IR 1

#define RT_KIND_CR_USER 2

#define RT_KIND_CR_ITEM 3

#define RT_DOMAIN_CONTENT 0

#define RT_DOMAIN_AD 1

/**
 * Result of every fallible call.
 */
typedef enum RtStatus {
  RT_STATUS_OK = 0,
  RT_STATUS_NULL_ARGUMENT = 1,
  RT_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Write rejected because the kind is frozen or the write was anomalous.
   */
  RT_STATUS_FROZEN = 3,
  RT_STATUS_NOT_FOUND = 4,
  RT_STATUS_INTEGRITY = 5,
  RT_STATUS_IO = 6,
  RT_STATUS_BUFFER_TOO_SMALL = 7,
  RT_STATUS_PANIC = 8,
  RT_STATUS_OTHER = 9,
} RtStatus;

/**
 * Opaque pretrained foundation model.
 */
typedef struct RtLfm RtLfm;

/**
 * Opaque representation store.
 */
typedef struct RtStore RtStore;

/**
 * Store settings; start from [`rt_store_config_default`].
 */
typedef struct RtStoreConfig {
  double tau;
  double threshold;
  size_t window;
  size_t min_fill;
  bool aggregate_cr;
  size_t keep_snapshots;
} RtStoreConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none failed.
 * Valid until the next failing call on the same thread.
 */
const char *rt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rt_version(void);

struct RtStoreConfig rt_store_config_default(void);

/**
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum RtStatus rt_store_new(struct RtStoreConfig config, struct RtStore **out);

/**
 * # Safety
 * `store` must come from [`rt_store_new`] and not be used afterwards. Null is ignored.
 */
void rt_store_free(struct RtStore *store);

/**
 * Writes `len` values under `(kind, entity_id)` at time `now`.
 * Returns `RT_STATUS_FROZEN` when the write is rejected by the monitor.
 *
 * # Safety
 * `store` must be a live handle and `values` valid for `len` reads.
 */
enum RtStatus rt_store_put(struct RtStore *store,
                           uint32_t kind_id,
                           uint64_t entity_id,
                           const double *values,
                           size_t len,
                           double now);

/**
 * Reads the stored vector; `RT_STATUS_NOT_FOUND` when the key was never written.
 *
 * # Safety
 * `store` must be a live handle, `out` valid for `cap` writes, `out_len` for one.
 */
enum RtStatus rt_store_get(const struct RtStore *store,
                           uint32_t kind_id,
                           uint64_t entity_id,
                           double *out,
                           size_t cap,
                           size_t *out_len);

/**
 * # Safety
 * `store` must be a live handle and `out` valid for one write.
 */
enum RtStatus rt_store_is_frozen(const struct RtStore *store, uint32_t kind_id, bool *out);

/**
 * Number of stored entries; 0 for a null handle.
 *
 * # Safety
 * `store` must be a live handle or null.
 */
size_t rt_store_len(const struct RtStore *store);

/**
 * Takes an in-memory snapshot; refused with `RT_STATUS_FROZEN` while any kind is frozen.
 *
 * # Safety
 * `store` must be a live handle and `out_id` valid for one write.
 */
enum RtStatus rt_store_snapshot(struct RtStore *store, double now, uint64_t *out_id);

/**
 * Restores snapshot `id` and unfreezes every kind.
 *
 * # Safety
 * `store` must be a live handle.
 */
enum RtStatus rt_store_rollback(struct RtStore *store, uint64_t id);

/**
 * Loads a checkpoint file written by the `pretrain` command.
 * `RT_STATUS_INTEGRITY` on a corrupted or truncated file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for a pointer write.
 */
enum RtStatus rt_lfm_load(const char *path, struct RtLfm **out);

/**
 * Same as [`rt_lfm_load`] from an in-memory checkpoint.
 *
 * # Safety
 * `bytes` must be valid for `len` reads and `out` for a pointer write.
 */
enum RtStatus rt_lfm_load_bytes(const uint8_t *bytes, size_t len, struct RtLfm **out);

/**
 * # Safety
 * `lfm` must come from a load call and not be used afterwards. Null is ignored.
 */
void rt_lfm_free(struct RtLfm *lfm);

/**
 * Click probability of `(user, item)` through the branch for `domain_id`.
 *
 * # Safety
 * `lfm` must be a live handle and `out` valid for one write.
 */
enum RtStatus rt_lfm_predict(const struct RtLfm *lfm,
                             uint64_t user,
                             uint64_t item,
                             uint32_t domain_id,
                             double *out);

/**
 * User tower output for `user`.
 *
 * # Safety
 * As [`rt_store_get`] for the buffer arguments; `lfm` must be a live handle.
 */
enum RtStatus rt_lfm_user_repr(const struct RtLfm *lfm,
                               uint64_t user,
                               double *out,
                               size_t cap,
                               size_t *out_len);

/**
 * Item tower output for `item`.
 *
 * # Safety
 * As [`rt_lfm_user_repr`].
 */
enum RtStatus rt_lfm_item_repr(const struct RtLfm *lfm,
                               uint64_t item,
                               double *out,
                               size_t cap,
                               size_t *out_len);

/**
 * Ad-branch activation for `(user, item)` at `tap`, e.g. `"dnn/1"`, or
 * the penultimate layer when `tap` is null.
 *
 * # Safety
 * `tap` must be null or NUL-terminated; otherwise as [`rt_lfm_user_repr`].
 */
enum RtStatus rt_lfm_extract_cr(const struct RtLfm *lfm,
                                uint64_t user,
                                uint64_t item,
                                const char *tap,
                                double *out,
                                size_t cap,
                                size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REPTRANSFER_H */
