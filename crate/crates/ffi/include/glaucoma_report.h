#ifndef GLAUCOMA_REPORT_H
#define GLAUCOMA_REPORT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum GrStatus {
  GR_STATUS_OK = 0,
  GR_STATUS_NULL_ARGUMENT = 1,
  GR_STATUS_INVALID_UTF8 = 2,
  // Bad input record, configuration or argument.
  GR_STATUS_VALIDATION = 3,
  GR_STATUS_IO = 4,
  GR_STATUS_CHECKPOINT = 5,
  // Numerical or internal failure while running.
  GR_STATUS_RUNTIME = 6,
  GR_STATUS_PANIC = 7,
  // Output buffer too small; nothing was written.
  GR_STATUS_BUFFER_TOO_SMALL = 8,
} GrStatus;

// Opaque model handle.
typedef struct GrModel GrModel;

// Corpus scores in [0, 1], CIDEr unscaled.
typedef struct GrMetrics {
  double bleu1;
  double bleu2;
  double bleu3;
  double bleu4;
  double rouge_l;
  double cider;
} GrMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call on the same thread.
const char *gr_last_error_message(void);

// Library version as a static string.
const char *gr_version(void);

// Load a checkpoint written by the `train` command.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must point to writable
// storage for one pointer.
enum GrStatus gr_model_load(const char *path, struct GrModel **out);

// Release a model. Null is accepted.
//
// # Safety
// `model` must be null or a handle from `gr_model_load` not yet freed.
void gr_model_free(struct GrModel *model);

// Number of label scores `gr_predict_labels` writes.
//
// # Safety
// `model` must be a live handle; `out` writable.
enum GrStatus gr_model_label_count(const struct GrModel *model, uintptr_t *out);

// Generate a report for one JSON record. The result is written to `*out`
// and must be released with `gr_string_free`.
//
// # Safety
// `model` must be a live handle, `record_json` NUL-terminated, `out`
// writable.
enum GrStatus gr_generate(const struct GrModel *model,
                          const char *record_json,
                          uintptr_t beam_width,
                          uintptr_t max_len,
                          char **out);

// Label scores of a report text, in the model's label order. `len` must be
// at least `gr_model_label_count`.
//
// # Safety
// `model` must be a live handle, `report` NUL-terminated, `out` valid for
// `len` doubles.
enum GrStatus gr_predict_labels(const struct GrModel *model,
                                const char *report,
                                double *out,
                                uintptr_t len);

// Corpus scores of newline-separated candidates against references, one
// reference per candidate line.
//
// # Safety
// Both strings NUL-terminated; `out` writable.
enum GrStatus gr_evaluate(const char *candidates, const char *references, struct GrMetrics *out);

// Release a string returned by the library. Null is accepted.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void gr_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLAUCOMA_REPORT_H */
