#ifndef KGH_H
#define KGH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum KghStatus {
  KGH_STATUS_OK = 0,
  KGH_STATUS_NULL_POINTER = 1,
  KGH_STATUS_INVALID_ARGUMENT = 2,
  KGH_STATUS_IO = 3,
  KGH_STATUS_PARSE = 4,
  KGH_STATUS_DATA = 5,
  KGH_STATUS_ORACLE = 6,
  KGH_STATUS_NOT_FOUND = 7,
  KGH_STATUS_BUFFER_TOO_SMALL = 8,
  KGH_STATUS_PANIC = 9,
} KghStatus;

// A loaded knowledge graph.
typedef struct KghGraph KghGraph;

// A trained knowledgeability regressor.
typedef struct KghModel KghModel;

// Per-entity knowledgeability scores.
typedef struct KghScores KghScores;

// Degree-matched baseline summary.
typedef struct KghBaseline {
  double true_mean;
  double baseline_mean;
  double baseline_std;
  double z;
  double p_two_tailed;
  double ci99_low;
  double ci99_high;
  size_t trials;
} KghBaseline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *kgh_version(void);

// Message for the last failure on this thread; empty if none. The pointer
// stays valid until the next failing call on the same thread.
const char *kgh_last_error(void);

// Loads a TSV graph (`head⇥relation⇥tail`, or with a fourth date column
// when `temporal` is true).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum KghStatus kgh_graph_load(const char *path, bool temporal, struct KghGraph **out);

// # Safety
// `g` must be null or a handle from [`kgh_graph_load`] not yet freed.
void kgh_graph_free(struct KghGraph *g);

// # Safety
// `g` must be a live graph handle and `out` writable.
enum KghStatus kgh_graph_num_entities(const struct KghGraph *g, size_t *out);

// # Safety
// `g` must be a live graph handle and `out` writable.
enum KghStatus kgh_graph_num_triplets(const struct KghGraph *g, size_t *out);

// Copies the label of `entity` into `buf` with a trailing NUL. `out_len`
// receives the label length in bytes (without the NUL) even when the
// buffer is too small.
//
// # Safety
// `g` must be a live graph handle, `buf` must have room for `buf_len`
// bytes (it may be null when `buf_len` is 0) and `out_len` must be writable.
enum KghStatus kgh_graph_entity_label(const struct KghGraph *g,
                                      uint32_t entity,
                                      char *buf,
                                      size_t buf_len,
                                      size_t *out_len);

// # Safety
// `g` must be a live graph handle, `label` NUL-terminated, `out` writable.
enum KghStatus kgh_graph_entity_by_label(const struct KghGraph *g,
                                         const char *label,
                                         uint32_t *out);

// Labels every triplet with a two-community planted oracle and aggregates
// entity scores.
//
// # Safety
// `g` must be a live graph handle and `out` writable.
enum KghStatus kgh_planted_scores(const struct KghGraph *g,
                                  double high_rate,
                                  double low_rate,
                                  double noise,
                                  uint64_t seed,
                                  struct KghScores **out);

// Reads scores from a CSV with columns `entity_id,label,k_score,degree`.
//
// # Safety
// `path` must be NUL-terminated and `out` writable.
enum KghStatus kgh_scores_load_csv(const char *path, struct KghScores **out);

// # Safety
// `g` and `s` must be live handles and `path` NUL-terminated.
enum KghStatus kgh_scores_save_csv(const struct KghGraph *g,
                                   const struct KghScores *s,
                                   const char *path);

// # Safety
// `s` must be null or a live scores handle.
void kgh_scores_free(struct KghScores *s);

// # Safety
// `s` must be a live scores handle and `out` writable.
enum KghStatus kgh_scores_len(const struct KghScores *s, size_t *out);

// Score of `entity`, or `KGH_STATUS_NOT_FOUND` when it has none.
//
// # Safety
// `s` must be a live scores handle and `out` writable.
enum KghStatus kgh_scores_get(const struct KghScores *s, uint32_t entity, double *out);

// Mean node homophily over entities with at least one scored neighbor.
//
// # Safety
// `g` and `s` must be live handles and `out` writable.
enum KghStatus kgh_homophily_mean(const struct KghGraph *g, const struct KghScores *s, double *out);

// # Safety
// `g` and `s` must be live handles and `out` writable.
enum KghStatus kgh_baseline(const struct KghGraph *g,
                            const struct KghScores *s,
                            size_t trials,
                            uint64_t seed,
                            struct KghBaseline *out);

// Loads a model saved by `kgh train`.
//
// # Safety
// `path` must be NUL-terminated and `out` writable.
enum KghStatus kgh_model_load(const char *path, struct KghModel **out);

// # Safety
// `m` must be null or a live model handle.
void kgh_model_free(struct KghModel *m);

// Predicts every entity using hashed label features of size `dim`, which
// must match the dimension the model was trained with.
//
// # Safety
// `m` and `g` must be live handles and `out` writable.
enum KghStatus kgh_model_predict_hashed(const struct KghModel *m,
                                        const struct KghGraph *g,
                                        size_t dim,
                                        struct KghScores **out);

// Runs the whole pipeline from a TOML config. `out_dir` may be null to
// keep the configured output directory.
//
// # Safety
// `config_path` must be NUL-terminated; `out_dir` null or NUL-terminated.
enum KghStatus kgh_run_pipeline(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KGH_H */
