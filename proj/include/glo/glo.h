#ifndef GLO_GLO_H
#define GLO_GLO_H

/* C interface to the loss-search library. All handles are opaque; every
 * function returning glo_status records a message retrievable with
 * glo_last_error() on the calling thread. Strings returned through char**
 * are owned by the caller and released with glo_string_free(). */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define GLO_API __declspec(dllexport)
#else
#define GLO_API __attribute__((visibility("default")))
#endif

typedef enum glo_status {
  GLO_OK = 0,
  GLO_ERR_INVALID_ARGUMENT = 1,
  GLO_ERR_PARSE = 2,
  GLO_ERR_IO = 3,
  GLO_ERR_INTERNAL = 4
} glo_status;

/* Exit codes of glo_run_command and glo_rerun_manifest. */
enum {
  GLO_EXIT_OK = 0,
  GLO_EXIT_FAILURE = 1,
  GLO_EXIT_CONFIG = 2,
  GLO_EXIT_NUMERICAL = 3,
  GLO_EXIT_IO = 4
};

GLO_API const char* glo_version(void);
/* Message of the last failed call on this thread; "" if none. */
GLO_API const char* glo_last_error(void);
GLO_API void glo_string_free(char* s);

/* ---- expressions ---- */

typedef struct glo_expr glo_expr;

GLO_API glo_status glo_expr_parse(const char* text, glo_expr** out);
/* cross_entropy, baikal or baikal_cma (coefficients expanded into the tree). */
GLO_API glo_status glo_expr_builtin(const char* name, glo_expr** out);
GLO_API glo_status glo_expr_format(const glo_expr* e, char** out);
GLO_API glo_status glo_expr_canonical(const glo_expr* e, char** out);
/* *valid is 0 when the expression is undefined at (x, y); *out is then NaN. */
GLO_API glo_status glo_expr_evaluate(const glo_expr* e, double x, double y, double* out, int* valid);
GLO_API glo_status glo_expr_derivative(const glo_expr* e, glo_expr** out);
GLO_API glo_status glo_expr_size(const glo_expr* e, size_t* out);
/* 1 if the tree holds at least one x and one y leaf. */
GLO_API glo_status glo_expr_has_required_leaves(const glo_expr* e, int* out);
GLO_API void glo_expr_free(glo_expr* e);

/* ---- trained models ---- */

typedef struct glo_model glo_model;

GLO_API glo_status glo_model_load(const char* path, glo_model** out);
GLO_API glo_status glo_model_shape(const glo_model* m, int* input_dim, int* num_classes, int* layers);
/* features: rows x input_dim, row-major; probs: rows x num_classes, row-major. */
GLO_API glo_status glo_model_predict(const glo_model* m, const float* features, size_t rows, double* probs);
GLO_API void glo_model_free(glo_model* m);

/* ---- workflows ---- */

typedef void (*glo_progress_fn)(const char* message, void* user);

/* Default configuration document (JSON) for a command. */
GLO_API glo_status glo_default_config(const char* command, char** out);

/* Runs evolve, tune, train, analyze or hist. config_json may be NULL or an
 * object overriding the defaults; unknown keys are rejected. Returns one of
 * the GLO_EXIT_* codes; the message is available through glo_last_error(). */
GLO_API int glo_run_command(const char* command, const char* config_json, const char* out_dir,
                            glo_progress_fn progress, void* user);
GLO_API int glo_rerun_manifest(const char* manifest_path, const char* out_dir, glo_progress_fn progress,
                               void* user);

#ifdef __cplusplus
}
#endif

#endif
