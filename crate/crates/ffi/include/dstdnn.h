#ifndef DSTDNN_H
#define DSTDNN_H

/* Generated by cbindgen; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum DstStatus {
  DST_STATUS_OK = 0,
  DST_STATUS_NULL_POINTER = 1,
  DST_STATUS_INVALID_INPUT = 2,
  DST_STATUS_SHAPE = 3,
  DST_STATUS_NUMERIC = 4,
  DST_STATUS_IO = 5,
  DST_STATUS_CHECKPOINT = 6,
  DST_STATUS_BUFFER_TOO_SMALL = 7,
  DST_STATUS_PANIC = 8,
  DST_STATUS_OTHER = 9,
} DstStatus;

/**
 * Opaque model handle.
 */
typedef struct DstModel DstModel;

typedef struct DstMetrics {
  double eer;
  double eer_threshold;
  double min_dcf;
  double dcf_threshold;
} DstMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dst_version(void);

/**
 * Copies the calling thread's last error message into `buf`, truncated and
 * NUL-terminated. Returns the full message length in bytes, excluding the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t dst_last_error(char *buf, size_t len);

/**
 * Loads a checkpoint. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
 */
enum DstStatus dst_model_load(const char *path, struct DstModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`dst_model_load`] and not be used afterwards.
 */
void dst_model_free(struct DstModel *model);

/**
 * # Safety
 * `model` must be a live handle or null.
 */
size_t dst_model_embedding_dim(const struct DstModel *model);

/**
 * # Safety
 * `model` must be a live handle or null.
 */
size_t dst_model_n_mels(const struct DstModel *model);

/**
 * Embeds `batch × n_mels × frames` features into `out` (`batch × embedding_dim`).
 *
 * # Safety
 * `features` must hold `batch * n_mels * frames` values and `out` `out_len`.
 */
enum DstStatus dst_model_embed_features(const struct DstModel *model,
                                        const double *features,
                                        size_t batch,
                                        size_t n_mels,
                                        size_t frames,
                                        double *out,
                                        size_t out_len);

/**
 * Embeds a mono waveform through the standard log-Mel front end.
 *
 * # Safety
 * `samples` must hold `n` values and `out` `out_len`.
 */
enum DstStatus dst_model_embed_waveform(const struct DstModel *model,
                                        const float *samples,
                                        size_t n,
                                        uint32_t sample_rate,
                                        double *out,
                                        size_t out_len);

/**
 * Circular global filtering of `x` (`batch × channels × len`) by a complex
 * half-spectrum filter given as separate real and imaginary planes of
 * `channels × (len / 2 + 1)`. Writes `batch × channels × len` values to `out`.
 *
 * # Safety
 * All pointers must reference arrays of the sizes above.
 */
enum DstStatus dst_gf_forward(const double *x,
                              size_t batch,
                              size_t channels,
                              size_t len,
                              const double *filter_re,
                              const double *filter_im,
                              double *out);

/**
 * EER and minimum detection cost over `n` scored trials. `labels[i]` is
 * nonzero for target trials.
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out` must be valid.
 */
enum DstStatus dst_compute_metrics(const double *scores,
                                   const uint8_t *labels,
                                   size_t n,
                                   struct DstMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DSTDNN_H */
