#ifndef C2W2C_H
#define C2W2C_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum C2w2cStatus {
  C2W2C_STATUS_OK = 0,
  C2W2C_STATUS_NULL_POINTER = 1,
  C2W2C_STATUS_INVALID_UTF8 = 2,
  C2W2C_STATUS_IO = 3,
  C2W2C_STATUS_FORMAT = 4,
  C2W2C_STATUS_UNKNOWN_CHARACTER = 5,
  C2W2C_STATUS_INVALID_ARGUMENT = 6,
  C2W2C_STATUS_INTERNAL = 7,
} C2w2cStatus;

/**
 * A loaded model. Opaque to C.
 */
typedef struct C2w2cModel C2w2cModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *c2w2c_version(void);

/**
 * Message of the last failed call on this thread, or an empty string.
 * Valid until the next call into the library from the same thread.
 */
const char *c2w2c_last_error(void);

/**
 * Loads a checkpoint (either precision) for inference.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum C2w2cStatus c2w2c_model_load(const char *path, struct C2w2cModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`c2w2c_model_load`] and not be used afterwards.
 */
void c2w2c_model_free(struct C2w2cModel *model);

/**
 * Number of scalar parameters in the model.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum C2w2cStatus c2w2c_model_param_count(const struct C2w2cModel *model, uint64_t *out);

/**
 * Mean per-word negative log-likelihood of one whitespace-tokenized
 * sentence. Words with unknown characters fail with
 * `UnknownCharacter`; the message lists them.
 *
 * # Safety
 * `model` must be a live handle, `sentence` a NUL-terminated string and
 * `out` a valid pointer.
 */
enum C2w2cStatus c2w2c_score_sentence(const struct C2w2cModel *model,
                                      const char *sentence,
                                      bool include_end,
                                      double *out);

/**
 * Word perplexity of newline-separated sentences.
 *
 * # Safety
 * `model` must be a live handle, `text` a NUL-terminated string and `out`
 * a valid pointer.
 */
enum C2w2cStatus c2w2c_perplexity(const struct C2w2cModel *model, const char *text, double *out);

/**
 * Generates text after the space-separated `context`. With `beam` false
 * the most likely character is taken at every step and one line is
 * returned; otherwise up to `sentence_k` lines `rank\tlogp\tsentence`.
 * The result must be freed with [`c2w2c_string_free`].
 *
 * # Safety
 * `model` must be a live handle, `context` a NUL-terminated string and
 * `out` a valid pointer.
 */
enum C2w2cStatus c2w2c_sample(const struct C2w2cModel *model,
                              const char *context,
                              bool beam,
                              uint32_t word_k,
                              uint32_t sentence_k,
                              uint32_t max_words,
                              char **out);

/**
 * Frees a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void c2w2c_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* C2W2C_H */
