#ifndef RSM_H
#define RSM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RsmStatus {
  RSM_STATUS_OK = 0,
  RSM_STATUS_NULL_POINTER = 1,
  RSM_STATUS_INVALID_ARGUMENT = 2,
  RSM_STATUS_BUFFER_TOO_SMALL = 3,
  RSM_STATUS_IO = 4,
  RSM_STATUS_FORMAT = 5,
  RSM_STATUS_CONFIG = 6,
  RSM_STATUS_VALIDATION = 7,
  RSM_STATUS_NUMERIC = 8,
  RSM_STATUS_PANIC = 9,
} RsmStatus;

typedef enum RsmNormalization {
  RSM_NORMALIZATION_PEAK = 0,
  RSM_NORMALIZATION_RMS = 1,
  RSM_NORMALIZATION_NONE = 2,
} RsmNormalization;

// A log-mel spectrogram.
typedef struct RsmMel RsmMel;

// A trained checkpoint.
typedef struct RsmModel RsmModel;

// Shape of a loaded model.
typedef struct RsmModelInfo {
  // Embedding dimension.
  size_t dim;
  // Tokens per layer.
  size_t tokens;
  // Number of residual layers.
  size_t layers;
  // Mel bins expected on input.
  size_t mel_bins;
} RsmModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *rsm_version(void);

// Message for the most recent failure on the calling thread, or an empty
// string. Valid until the next failing call on this thread.
const char *rsm_last_error(void);

// Loads an RSMC checkpoint from `path`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum RsmStatus rsm_model_load(const char *path, struct RsmModel **out);

// Loads an RSMC checkpoint from an in-memory buffer.
//
// # Safety
// `bytes` must point to `len` readable bytes and `out` be writable.
enum RsmStatus rsm_model_load_bytes(const uint8_t *bytes, size_t len, struct RsmModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from `rsm_model_load*` and not be used afterwards.
void rsm_model_free(struct RsmModel *model);

// # Safety
// `model` must be a live handle and `info` writable.
enum RsmStatus rsm_model_info(const struct RsmModel *model, struct RsmModelInfo *info);

// Computes the log-mel spectrogram of mono samples in [-1, 1] using the
// model's feature configuration.
//
// # Safety
// `samples` must point to `len` floats; `model` must be live; `out` writable.
enum RsmStatus rsm_mel_from_samples(const struct RsmModel *model,
                                    const float *samples,
                                    size_t len,
                                    uint32_t sample_rate,
                                    enum RsmNormalization normalization,
                                    struct RsmMel **out);

// Reads a MELF feature file.
//
// # Safety
// `path` must be NUL-terminated and `out` writable.
enum RsmStatus rsm_mel_load(const char *path, struct RsmMel **out);

// Releases a spectrogram. Null is ignored.
//
// # Safety
// `mel` must come from `rsm_mel_*` and not be used afterwards.
void rsm_mel_free(struct RsmMel *mel);

// # Safety
// `mel` must be live; `frames` and `bins` writable.
enum RsmStatus rsm_mel_shape(const struct RsmMel *mel, size_t *frames, size_t *bins);

// Writes the `dim`-length speaker embedding.
//
// # Safety
// Handles must be live; `out` must hold `out_len` doubles.
enum RsmStatus rsm_embed(const struct RsmModel *model,
                         const struct RsmMel *mel,
                         double *out,
                         size_t out_len);

// Writes the `layers x tokens` attention weights, row-major.
//
// # Safety
// Handles must be live; `out` must hold `out_len` doubles.
enum RsmStatus rsm_extract_weights(const struct RsmModel *model,
                                   const struct RsmMel *mel,
                                   double *out,
                                   size_t out_len);

// Rebuilds an embedding from row-major `layers x tokens` weights.
//
// # Safety
// `weights` must hold `len` doubles; `out` must hold `out_len` doubles.
enum RsmStatus rsm_recompose(const struct RsmModel *model,
                             const double *weights,
                             size_t len,
                             double *out,
                             size_t out_len);

// Applies a JSON edit script to source and target weights and writes the
// edited `layers x tokens` weights.
//
// # Safety
// `src` and `tgt` must hold `len` doubles each; `script` must be
// NUL-terminated; `out` must hold `out_len` doubles.
enum RsmStatus rsm_apply_edits(const struct RsmModel *model,
                               const double *src,
                               const double *tgt,
                               size_t len,
                               const char *script,
                               double *out,
                               size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RSM_H */
