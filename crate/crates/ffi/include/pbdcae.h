#ifndef PBDCAE_H
#define PBDCAE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Length of a motor vector (joints and gripper).
#define PBDCAE_MOTOR_DIM 13

typedef enum PbdcaeStatus {
  PBDCAE_STATUS_OK = 0,
  PBDCAE_STATUS_NULL_POINTER = 1,
  PBDCAE_STATUS_INVALID_ARGUMENT = 2,
  PBDCAE_STATUS_SHAPE_MISMATCH = 3,
  PBDCAE_STATUS_IO = 4,
  PBDCAE_STATUS_FORMAT = 5,
  PBDCAE_STATUS_CHECKSUM = 6,
  PBDCAE_STATUS_UNSUPPORTED_VERSION = 7,
  PBDCAE_STATUS_INTERNAL = 8,
  PBDCAE_STATUS_PANIC = 9,
} PbdcaeStatus;

// Loaded model; shareable by any number of sessions.
typedef struct PbdcaeModel PbdcaeModel;

// Recurrent state bound to one model.
typedef struct PbdcaeSession PbdcaeSession;

typedef struct PbdcaeModelInfo {
  uint32_t input_size;
  uint32_t input_channels;
  uint32_t feature_dim;
  uint32_t motor_dim;
  uint32_t lstm_layers;
  // 1 partial, 2 binary.
  uint32_t mode;
} PbdcaeModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a `.pbdc` file. On success `*out` receives a new handle.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum PbdcaeStatus pbdcae_model_load(const char *path, struct PbdcaeModel **out);

// Parses a `.pbdc` image held in memory.
//
// # Safety
// `data` must point to `len` readable bytes; `out` must be writable.
enum PbdcaeStatus pbdcae_model_from_bytes(const uint8_t *data,
                                          size_t len,
                                          struct PbdcaeModel **out);

// Releases a model handle. Null is ignored. Sessions created from it stay valid.
//
// # Safety
// `model` must come from this library and not be freed twice.
void pbdcae_model_free(struct PbdcaeModel *model);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum PbdcaeStatus pbdcae_model_info(const struct PbdcaeModel *model, struct PbdcaeModelInfo *out);

// Encodes one frame (resized to the model input when needed) into
// `feature_dim` values of ±1.
//
// # Safety
// `pixels` must hold `height * width * 3` bytes, `features` `feature_len` floats.
enum PbdcaeStatus pbdcae_encode(const struct PbdcaeModel *model,
                                const uint8_t *pixels,
                                size_t height,
                                size_t width,
                                float *features,
                                size_t feature_len);

// Starts a session with zero recurrent state.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum PbdcaeStatus pbdcae_session_new(const struct PbdcaeModel *model, struct PbdcaeSession **out);

// # Safety
// `session` must come from this library and not be freed twice.
void pbdcae_session_free(struct PbdcaeSession *session);

// Clears the recurrent state.
//
// # Safety
// `session` must be a live handle.
enum PbdcaeStatus pbdcae_session_reset(struct PbdcaeSession *session);

// Feeds the current frame and motor vector, advances the state and writes
// the predicted next motor vector. The state is unchanged on failure.
//
// # Safety
// `pixels` must hold `height * width * 3` bytes; `motor` and `next_motor`
// must each hold `motor_len` floats.
enum PbdcaeStatus pbdcae_session_step(struct PbdcaeSession *session,
                                      const uint8_t *pixels,
                                      size_t height,
                                      size_t width,
                                      const float *motor,
                                      float *next_motor,
                                      size_t motor_len);

// Message of the last failure on this thread; empty if none. Valid until
// the next failing call on the same thread.
const char *pbdcae_last_error(void);

// Static name of a status code.
const char *pbdcae_status_str(enum PbdcaeStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PBDCAE_H */
