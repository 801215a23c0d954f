/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef VISERN_H
#define VISERN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; the nonzero values match the command-line exit codes.
 */
typedef enum VisernStatus {
  VISERN_STATUS_OK = 0,
  /**
   * A Rust panic was caught at the boundary.
   */
  VISERN_STATUS_INTERNAL = 1,
  /**
   * Bad arguments: null pointers, wrong buffer sizes, invalid settings.
   */
  VISERN_STATUS_USAGE = 2,
  VISERN_STATUS_IO = 3,
  VISERN_STATUS_FORMAT = 4,
  VISERN_STATUS_NUMERIC = 5,
} VisernStatus;

/**
 * Opaque model handle.
 */
typedef struct VisernModel VisernModel;

/**
 * Retrieval metrics for one direction. Recalls are percentages.
 */
typedef struct VisernReport {
  double r1;
  double r5;
  double r10;
  double med_r;
  double mean_r;
  double sum_of_recalls;
} VisernReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *visern_version(void);

/**
 * Message for the most recent failed call on this thread, or null if the
 * last call succeeded. Valid until the next call on the same thread.
 */
const char *visern_last_error(void);

/**
 * Loads the model stored in a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum VisernStatus visern_model_load(const char *path, struct VisernModel **out);

/**
 * Creates a freshly initialized model with random-walk reasoning over the
 * raw adjacency.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum VisernStatus visern_model_init(size_t d,
                                    size_t common_dim,
                                    size_t word_dim,
                                    size_t vocab_size,
                                    uint64_t seed,
                                    struct VisernModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void visern_model_free(struct VisernModel *model);

/**
 * Region feature width, common-space width and vocabulary size.
 *
 * # Safety
 * All pointers must be valid.
 */
enum VisernStatus visern_model_dims(const struct VisernModel *model,
                                    size_t *d,
                                    size_t *common_dim,
                                    size_t *vocab_size);

/**
 * Embeds one video given `frames × n × d` region features, writing
 * `common_dim` values to `out`.
 *
 * # Safety
 * `features` must hold `frames·n·d` doubles and `out` `out_len` doubles.
 */
enum VisernStatus visern_model_encode_video(const struct VisernModel *model,
                                            const double *features,
                                            size_t frames,
                                            size_t n,
                                            double *out,
                                            size_t out_len);

/**
 * Embeds one caption given its token ids, writing `common_dim` values to
 * `out`.
 *
 * # Safety
 * `tokens` must hold `len` ids and `out` `out_len` doubles.
 */
enum VisernStatus visern_model_encode_text(const struct VisernModel *model,
                                           const size_t *tokens,
                                           size_t len,
                                           double *out,
                                           size_t out_len);

/**
 * Attention scores and 0-based ranks of the `n` regions of one frame.
 *
 * # Safety
 * `regions` must hold `n·d` doubles; `scores` and `ranks` `n` entries each.
 */
enum VisernStatus visern_model_attention(const struct VisernModel *model,
                                         const double *regions,
                                         size_t n,
                                         double *scores,
                                         size_t *ranks);

/**
 * Hard-negative triplet loss, summed over a `b × b` similarity matrix whose
 * diagonal holds the matching pairs.
 *
 * # Safety
 * `similarity` must hold `b·b` doubles and `loss` be valid.
 */
enum VisernStatus visern_triplet_loss(const double *similarity,
                                      size_t b,
                                      double margin,
                                      double *loss);

/**
 * Ranks `queries` rows of a `queries × gallery` score matrix against one
 * correct gallery index per query and summarizes the ranks.
 *
 * # Safety
 * `scores` must hold `queries·gallery` doubles, `truth` `queries` indices.
 */
enum VisernStatus visern_retrieval_report(const double *scores,
                                          size_t queries,
                                          size_t gallery,
                                          const size_t *truth,
                                          struct VisernReport *out);

/**
 * Whole-model finite-difference gradient check. A failed check is reported
 * through `passed`, not the status.
 *
 * # Safety
 * Both pointers must be valid.
 */
enum VisernStatus visern_gradcheck(uint64_t seed, double *max_rel_error, bool *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VISERN_H */
