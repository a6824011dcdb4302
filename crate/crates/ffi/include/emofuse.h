/* C ABI for the emofuse visual-emotion classification library. */

#ifndef EMOFUSE_H
#define EMOFUSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define EMOFUSE_OK 0

#define EMOFUSE_ERR_CHECK 1

#define EMOFUSE_ERR_CONFIG 2

#define EMOFUSE_ERR_DATA 3

#define EMOFUSE_ERR_MODEL 4

#define EMOFUSE_ERR_ARGUMENT 5

// Opaque trained-model handle.
typedef struct EmofuseModel EmofuseModel;

// Opaque emotion taxonomy handle.
typedef struct EmofuseTaxonomy EmofuseTaxonomy;

// Loss decomposition: `l_total = l_emo + lambda * l_pol`.
typedef struct EmofuseLoss {
  double l_emo;
  double l_pol;
  double lambda;
  double l_total;
} EmofuseLoss;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread. The
// pointer stays valid until the next failing call on the same thread.
const char *emofuse_last_error(void);

// Library version as a static string.
const char *emofuse_version(void);

// Free a string returned by this library.
//
// # Safety
// `s` must have been returned by an emofuse function and not freed yet.
void emofuse_string_free(char *s);

// The Mikel eight-emotion wheel.
struct EmofuseTaxonomy *emofuse_taxonomy_mikel(void);

// Parse a taxonomy from its JSON config form. Null on error.
//
// # Safety
// `json` must be a valid NUL-terminated string.
struct EmofuseTaxonomy *emofuse_taxonomy_from_json(const char *json);

// Number of emotion categories.
//
// # Safety
// `t` must be a live taxonomy handle.
size_t emofuse_taxonomy_count(const struct EmofuseTaxonomy *t);

// Polarity of emotion `index`: 0 positive, 1 negative, -1 on error.
//
// # Safety
// `t` must be a live taxonomy handle.
int emofuse_taxonomy_polarity(const struct EmofuseTaxonomy *t, size_t index);

// # Safety
// `t` must come from a taxonomy constructor and not be freed twice.
void emofuse_taxonomy_free(struct EmofuseTaxonomy *t);

// Hierarchical loss of a probability vector against a label.
//
// # Safety
// `probs` must point to `len` doubles; `out` must be writable.
int emofuse_hierarchical_loss(const struct EmofuseTaxonomy *t,
                              const double *probs,
                              size_t len,
                              size_t label,
                              double lambda,
                              struct EmofuseLoss *out);

// Load a model file. Null on error.
//
// # Safety
// `path` must be a valid NUL-terminated string.
struct EmofuseModel *emofuse_model_load(const char *path);

// Number of emotion classes the model predicts.
//
// # Safety
// `m` must be a live model handle.
size_t emofuse_model_classes(const struct EmofuseModel *m);

// Classify one sample from raw stimulus features.
//
// `objects` is row-major `n_objects x object_len` and may be null when
// `n_objects` is 0; `face` may be null for a faceless sample.
// `probs_out` receives the full emotion distribution
// (`emofuse_model_classes` doubles, taxonomy order).
//
// # Safety
// All pointers must satisfy the stated lengths.
int emofuse_model_predict(const struct EmofuseModel *m,
                          const double *global,
                          size_t global_len,
                          const double *objects,
                          size_t n_objects,
                          size_t object_len,
                          const double *face,
                          size_t face_len,
                          double *probs_out);

// # Safety
// `m` must come from `emofuse_model_load` and not be freed twice.
void emofuse_model_free(struct EmofuseModel *m);

// Train a model. `config_json` null means defaults. Exactly one data
// source: `data_path` for a JSONL fixture, else `synth_spec_json` (null
// for both falls back to the builtin synthetic spec). Writes the model
// file to `model_out` and, when non-null, the JSON report to
// `report_out`.
//
// # Safety
// All strings must be valid NUL-terminated UTF-8 or null.
int emofuse_train(const char *config_json,
                  const char *data_path,
                  const char *synth_spec_json,
                  const char *model_out,
                  const char *report_out);

// Evaluate a model file on a JSONL fixture and return the metrics as a
// JSON string (caller frees with `emofuse_string_free`). Null on error.
//
// # Safety
// Both paths must be valid NUL-terminated strings.
char *emofuse_eval(const char *model_path, const char *data_path);

// Run the full gradient verification. Returns `EMOFUSE_OK` when every
// component matches finite differences, `EMOFUSE_ERR_CHECK` otherwise;
// `max_rel_err_out` (nullable) receives the worst error seen.
//
// # Safety
// `max_rel_err_out` must be null or point to a writable double.
int emofuse_grad_check(uint64_t seed, size_t seeds_per_component, double *max_rel_err_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMOFUSE_H */
