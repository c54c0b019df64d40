#ifndef HER_H
#define HER_H

/*
 * C interface to the HER re-identification library.
 *
 * Every call returns a her_status. On failure a one-line diagnostic is
 * available from her_last_error() on the calling thread until the next call
 * into the library. Handles are opaque and owned by the caller, who releases
 * them with the matching *_free function (NULL is accepted).
 */

#include <stddef.h>
#include <stdint.h>

#if defined(HER_BUILDING_LIBRARY)
#define HER_API __attribute__((visibility("default")))
#else
#define HER_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum her_status {
  HER_OK = 0,
  HER_INVALID_INPUT = 1,
  HER_INVALID_PARAMETER = 2,
  HER_MODEL_NOT_INCREMENTAL = 3,
  HER_FORMAT_ERROR = 4,
  HER_IO_ERROR = 5,
  HER_BOOTSTRAP_REQUIRED = 6,
  HER_INVALID_STATE = 7,
  HER_POOL_EXHAUSTED = 8,
  HER_NOT_FOUND = 9,
  HER_CONFLICT = 10,
  HER_INTERNAL = 99
} her_status;

typedef struct her_dataset her_dataset_t;
typedef struct her_model her_model_t;
typedef struct her_service her_service_t;

HER_API const char* her_last_error(void);
HER_API const char* her_status_name(her_status status);
HER_API const char* her_version(void);

/* Worker threads for dense linear algebra; 0 restores the default. */
HER_API her_status her_set_threads(int threads);

/* ---- datasets ---------------------------------------------------------- */

/* values is d x n column-major; views holds 0 (probe) or 1 (gallery). */
HER_API her_status her_dataset_create(size_t dim, size_t count, const double* values,
                                      const uint32_t* labels, const uint8_t* views,
                                      her_dataset_t** out);
HER_API her_status her_dataset_load(const char* path, her_dataset_t** out);
HER_API her_status her_dataset_import_text(const char* path, her_dataset_t** out);
/* dtype: 0 = float32, 1 = float64 */
HER_API her_status her_dataset_save(const her_dataset_t* data, const char* path, int dtype);
HER_API her_status her_dataset_dims(const her_dataset_t* data, size_t* dim, size_t* count,
                                    size_t* classes);
/* Copies out values (d*n), labels (n) and views (n); any pointer may be NULL. */
HER_API her_status her_dataset_read(const her_dataset_t* data, double* values,
                                    uint32_t* labels, uint8_t* views);
/* Samples of one view (0 probe, 1 gallery). */
HER_API her_status her_dataset_view(const her_dataset_t* data, int view, her_dataset_t** out);
HER_API her_status her_dataset_concat(const her_dataset_t* a, const her_dataset_t* b,
                                      her_dataset_t** out);
HER_API void her_dataset_free(her_dataset_t* data);

typedef struct her_synth_spec {
  size_t identities;
  size_t images_per_view;
  size_t dim;
  double identity_spread;
  double view_shift;
  double noise;
  uint64_t seed;
} her_synth_spec;

HER_API void her_synth_spec_default(her_synth_spec* spec);
/* Probe columns first, then gallery columns. */
HER_API her_status her_dataset_synth(const her_synth_spec* spec, her_dataset_t** out);

/* protocol: 0 = equal halves, 1 = equal halves with single-shot gallery. */
HER_API her_status her_dataset_split(const her_dataset_t* data, uint64_t seed, int protocol,
                                     her_dataset_t** train, her_dataset_t** test_probe,
                                     her_dataset_t** test_gallery);

/* ---- models ------------------------------------------------------------ */

typedef struct her_fit_report {
  double elapsed_seconds;
  double residual; /* relative normal-equation residual */
  size_t dim;
  size_t classes;
} her_fit_report;

typedef struct her_update_report {
  size_t samples_applied;
  size_t classes_added;
  int chunk_path; /* 0 scalar sequential, 1 Woodbury chunk */
  double elapsed_seconds;
  double drift_estimate;
  size_t stale_class_rows;
} her_update_report;

HER_API her_status her_model_fit(const her_dataset_t* data, double lambda, int incremental,
                                 her_model_t** out, her_fit_report* report);
/* mean_rank1 receives one entry per lambda and may be NULL. */
HER_API her_status her_model_fit_cv(const her_dataset_t* data, const double* lambdas,
                                    size_t count, int folds, uint64_t seed, double* chosen,
                                    double* mean_rank1);
HER_API her_status her_model_update(her_model_t* model, const her_dataset_t* batch,
                                    her_update_report* report);
HER_API her_status her_model_save(const her_model_t* model, const char* path);
HER_API her_status her_model_load(const char* path, her_model_t** out);
HER_API her_status her_model_dims(const her_model_t* model, size_t* dim, size_t* classes,
                                  double* lambda, int* incremental);
/* x is d x n column-major; out receives n x c row-major embeddings. */
HER_API her_status her_model_project(const her_model_t* model, const double* x, size_t count,
                                     double* out);
HER_API her_status her_model_distance(const her_model_t* model, const double* x1,
                                      const double* x2, double* out);
HER_API void her_model_free(her_model_t* model);

/* ---- evaluation -------------------------------------------------------- */

/* rates receives CMC values for ranks 1..max_rank (saturating past the
   gallery size). */
HER_API her_status her_eval_cmc(const her_model_t* model, const her_dataset_t* probe,
                                const her_dataset_t* gallery, double* rates, size_t max_rank,
                                size_t* probe_count);

/* ---- JSON workflows ---------------------------------------------------- */

/* Runs simulated-oracle active learning; config keys as in docs/api.json
   ("simulation"). The result string is released with her_string_free. */
HER_API her_status her_active_sim(const her_dataset_t* data, const char* config_json,
                                  char** result_json);
HER_API her_status her_bench(const char* config_json, char** result_json);
HER_API void her_string_free(char* text);

/* ---- service ----------------------------------------------------------- */

/* config keys: top_r, static_dir, snapshot_dir (all optional). */
HER_API her_status her_service_create(const char* config_json, her_service_t** out);
HER_API her_status her_service_add_dataset(her_service_t* service, const char* name,
                                           const her_dataset_t* data);
/* port 0 picks a free port; bound_port may be NULL. */
HER_API her_status her_service_bind(her_service_t* service, const char* host, int port,
                                    int* bound_port);
/* Blocks until her_service_stop is called from another thread. */
HER_API her_status her_service_run(her_service_t* service);
HER_API void her_service_stop(her_service_t* service);
HER_API void her_service_free(her_service_t* service);

#ifdef __cplusplus
}
#endif

#endif
