#ifndef ORDERBENCH_H
#define ORDERBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ObStatus {
  OB_STATUS_OK = 0,
  OB_STATUS_NULL_ARGUMENT = 1,
  OB_STATUS_INVALID_UTF8 = 2,
  OB_STATUS_INVALID_ARGUMENT = 3,
  OB_STATUS_OUT_OF_RANGE = 4,
  OB_STATUS_DATASET = 5,
  OB_STATUS_PROMPT = 6,
  OB_STATUS_STATS = 7,
  OB_STATUS_PANIC = 99,
} ObStatus;

// A loaded, normalised dataset.
typedef struct ObDataset ObDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or "" after a success.
// Borrowed; valid until the next call into this library on the same thread.
const char *ob_last_error(void);

// # Safety
// `s` must be NULL or a string returned by this library, freed at most once.
void ob_string_free(char *s);

// Loads `path` in `format` (`mmlu_csv`, `truthfulqa_mc`, `logiqa_txt`,
// `canonical_jsonl`), keeping the first `limit` questions (0 keeps all).
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum ObStatus ob_dataset_load(const char *name,
                              const char *format,
                              const char *path,
                              size_t limit,
                              struct ObDataset **out);

// # Safety
// `ds` must be NULL or a live handle from [`ob_dataset_load`].
size_t ob_dataset_len(const struct ObDataset *ds);

// # Safety
// `ds` must be NULL or a handle from [`ob_dataset_load`] not yet freed.
void ob_dataset_free(struct ObDataset *ds);

// Question `index` as one canonical JSON record.
//
// # Safety
// `ds` must be a live handle; `out` must be writable.
enum ObStatus ob_dataset_question_json(const struct ObDataset *ds, size_t index, char **out);

// Prompt text for question `index` under `order` (`raw`, `answer_first`, `logic_first`).
//
// # Safety
// `ds` must be a live handle; `order` NUL-terminated; `out` writable.
enum ObStatus ob_render_variant(const struct ObDataset *ds,
                                size_t index,
                                const char *order,
                                char **out);

// Reflexive prompt for question `index`. Result 1 is the answer-first
// response, Result 2 the logic-first response.
//
// # Safety
// `ds` must be a live handle; strings NUL-terminated; `out` writable.
enum ObStatus ob_render_reflexive(const struct ObDataset *ds,
                                  size_t index,
                                  const char *answer_first,
                                  const char *logic_first,
                                  char **out);

// Extracts the option label `text` selects for question `index`.
// `*out_label` is NULL when nothing could be parsed.
//
// # Safety
// `ds` must be a live handle; strings NUL-terminated; `out_label` writable.
enum ObStatus ob_extract(const struct ObDataset *ds,
                         size_t index,
                         const char *text,
                         const char *order,
                         char **out_label);

// Pearson correlation of two series of length `n`.
//
// # Safety
// `x` and `y` must point to `n` readable doubles; `out` must be writable.
enum ObStatus ob_pearson(const double *x, const double *y, size_t n, double *out);

// Runs the benchmark described by the TOML file at `config_path`, the same
// as `orderbench run`. `output_dir` may be NULL to use the configured one.
// Returns the command's exit code; on 0, `*out_run_dir` holds the run
// directory, otherwise [`ob_last_error`] holds the diagnostics.
//
// # Safety
// Strings must be NUL-terminated; `out_run_dir` must be writable.
int32_t ob_run(const char *config_path, const char *output_dir, bool offline, char **out_run_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ORDERBENCH_H */
