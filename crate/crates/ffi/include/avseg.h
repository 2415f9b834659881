#ifndef AVSEG_H
#define AVSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum AvsegStatus {
  AVSEG_STATUS_OK = 0,
  AVSEG_STATUS_NULL_ARGUMENT = 1,
  AVSEG_STATUS_INVALID_UTF8 = 2,
  AVSEG_STATUS_DIMENSION = 3,
  AVSEG_STATUS_CONTRACT = 4,
  AVSEG_STATUS_CONFIG = 5,
  AVSEG_STATUS_FORMAT = 6,
  AVSEG_STATUS_NON_FINITE = 7,
  AVSEG_STATUS_IO = 8,
  AVSEG_STATUS_BUFFER_TOO_SMALL = 9,
  AVSEG_STATUS_PANIC = 10,
} AvsegStatus;

/**
 * A generated clip.
 */
typedef struct AvsegClip AvsegClip;

/**
 * A model together with the run configuration it was built from.
 */
typedef struct AvsegModel AvsegModel;

/**
 * Extents needed to size buffers for [`avseg_model_predict`].
 */
typedef struct AvsegModelInfo {
  /**
   * Frames per clip the model was configured for.
   */
  size_t frames;
  size_t height;
  size_t width;
  /**
   * Audio embedding width.
   */
  size_t audio_dim;
  /**
   * Output channels: 1 for binary tasks.
   */
  size_t n_class;
  size_t mask_height;
  size_t mask_width;
} AvsegModelInfo;

/**
 * Shape of a clip: frames `[frames, 3, height, width]`, audio
 * `[frames, audio_dim]`, labels `[frames, height / 4, width / 4]`.
 */
typedef struct AvsegClipShape {
  size_t frames;
  size_t height;
  size_t width;
  size_t audio_dim;
} AvsegClipShape;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread ("" after a success).
 * The pointer stays valid until the next call into this library on the thread.
 */
const char *avseg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *avseg_version(void);

/**
 * Builds a freshly initialized model from `key = value` config text.
 *
 * # Safety
 * `config` must be a NUL-terminated string; `out` must be writable.
 */
enum AvsegStatus avseg_model_new(const char *config, uint64_t seed, struct AvsegModel **out);

/**
 * Trains a model as described by `config` text (checkpoint and log paths
 * in the config are honoured).
 *
 * # Safety
 * As [`avseg_model_new`].
 */
enum AvsegStatus avseg_train(const char *config, struct AvsegModel **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AvsegStatus avseg_model_load(const char *path, struct AvsegModel **out);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `model` must come from this library; `path` must be a NUL-terminated string.
 */
enum AvsegStatus avseg_model_save(const struct AvsegModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum AvsegStatus avseg_model_info(const struct AvsegModel *model, struct AvsegModelInfo *out);

/**
 * Mask logits for `n_frames` frames.
 *
 * `frames` holds `n_frames·3·height·width` values, `audio` holds
 * `n_frames·audio_dim`, and `logits` receives `n_frames·n_class·mask_height·mask_width`.
 *
 * # Safety
 * Buffers must hold at least the stated number of values.
 */
enum AvsegStatus avseg_model_predict(const struct AvsegModel *model,
                                     size_t n_frames,
                                     const double *frames,
                                     const double *audio,
                                     double *logits,
                                     size_t logits_len);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void avseg_model_free(struct AvsegModel *model);

/**
 * Generates the synthetic clip `seed` for the model's task and extents.
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum AvsegStatus avseg_clip_generate(const struct AvsegModel *model,
                                     uint64_t seed,
                                     struct AvsegClip **out);

/**
 * # Safety
 * `clip` must come from this library; `out` must be writable.
 */
enum AvsegStatus avseg_clip_shape(const struct AvsegClip *clip, struct AvsegClipShape *out);

/**
 * Copies the clip's frames `[T, 3, H, W]` into `out`.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum AvsegStatus avseg_clip_frames(const struct AvsegClip *clip, double *out, size_t len);

/**
 * Copies the clip's audio `[T, D]` into `out`.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum AvsegStatus avseg_clip_audio(const struct AvsegClip *clip, double *out, size_t len);

/**
 * Copies the clip's labels `[T, H/4, W/4]` into `out`.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum AvsegStatus avseg_clip_labels(const struct AvsegClip *clip, uint16_t *out, size_t len);

/**
 * Releases a clip; null is ignored.
 *
 * # Safety
 * `clip` must come from this library and not be used afterwards.
 */
void avseg_clip_free(struct AvsegClip *clip);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AVSEG_H */
