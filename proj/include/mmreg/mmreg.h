#ifndef MMREG_H
#define MMREG_H

/* C interface to the mmreg registration and training engine.
 *
 * Every function returns an mmreg_status. On failure the message of the
 * last error on the calling thread is available from mmreg_last_error().
 * Handles are opaque and owned by the caller; free them with the matching
 * *_free function (NULL is accepted). */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MMREG_API __declspec(dllexport)
#else
#define MMREG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mmreg_status {
    MMREG_OK = 0,
    MMREG_ERR_INTERNAL = 1,
    MMREG_ERR_IO = 2,
    MMREG_ERR_CONFIG = 3,
    MMREG_WARN_NOT_CONVERGED = 4, /* outputs were written */
    MMREG_ERR_INPUT = 5,          /* inputs read fine but are inconsistent */
    MMREG_ERR_ARGUMENT = 6,       /* NULL or out-of-range argument */
    MMREG_ERR_BUFFER = 7          /* output buffer too small; required size reported */
} mmreg_status;

typedef struct mmreg_config mmreg_config;
typedef struct mmreg_volume mmreg_volume;
typedef struct mmreg_mask mmreg_mask;
typedef struct mmreg_model mmreg_model;

MMREG_API const char* mmreg_version(void);
MMREG_API const char* mmreg_last_error(void);
MMREG_API const char* mmreg_status_name(mmreg_status status);

/* Run configuration: flat key=value pairs validated against a fixed schema. */
MMREG_API mmreg_status mmreg_config_new(mmreg_config** out);
MMREG_API void mmreg_config_free(mmreg_config* config);
MMREG_API mmreg_status mmreg_config_load(mmreg_config* config, const char* path);
/* "key=value" */
MMREG_API mmreg_status mmreg_config_override(mmreg_config* config, const char* assignment);
MMREG_API mmreg_status mmreg_config_set(mmreg_config* config, const char* key, const char* value);
MMREG_API mmreg_status mmreg_config_validate(const mmreg_config* config);
/* Copies the value text including the terminator; *needed receives its size. */
MMREG_API mmreg_status mmreg_config_get(const mmreg_config* config, const char* key, char* buffer, size_t capacity,
                                        size_t* needed);
MMREG_API mmreg_status mmreg_config_dump(const mmreg_config* config, char* buffer, size_t capacity, size_t* needed);
/* Writes <dir>/resolved_config.txt. */
MMREG_API mmreg_status mmreg_config_dump_to(const mmreg_config* config, const char* dir);

/* Volumes and masks (header + raw payload files). */
MMREG_API mmreg_status mmreg_volume_read(const char* header, mmreg_volume** out);
MMREG_API void mmreg_volume_free(mmreg_volume* volume);
MMREG_API mmreg_status mmreg_volume_dims(const mmreg_volume* volume, int dims[3], double spacing[3]);
MMREG_API const float* mmreg_volume_data(const mmreg_volume* volume);

MMREG_API mmreg_status mmreg_mask_read(const char* header, mmreg_mask** out);
MMREG_API void mmreg_mask_free(mmreg_mask* mask);
MMREG_API mmreg_status mmreg_mask_dims(const mmreg_mask* mask, int dims[3]);
/* label < 0 compares all nonzero voxels. */
MMREG_API mmreg_status mmreg_dice(const mmreg_mask* a, const mmreg_mask* b, int label, double* out);

/* Weight/model files. */
MMREG_API mmreg_status mmreg_model_read(const char* path, mmreg_model** out);
MMREG_API void mmreg_model_free(mmreg_model* model);
MMREG_API mmreg_status mmreg_model_shape(const mmreg_model* model, size_t* metrics, size_t* classes);
/* Class id, metric weights (length `metrics`) and pairwise weight of column k. */
MMREG_API mmreg_status mmreg_model_column(const mmreg_model* model, size_t k, int* class_id, double* weights,
                                          double* pairwise);

/* Workflows. Optional paths may be NULL or empty. */
MMREG_API mmreg_status mmreg_register(const mmreg_config* config, const char* source, const char* target,
                                      const char* source_mask, const char* weights, const char* out_field,
                                      const char* out_warped, const char* out_diagnostics, const char* out_overlays,
                                      const char* target_mask);
MMREG_API mmreg_status mmreg_train(const mmreg_config* config, const char* dataset, const char* out_model);
MMREG_API mmreg_status mmreg_evaluate(const mmreg_config* config, const char* dataset, const char* model,
                                      const char* out_report);
/* spec may be NULL for generator defaults. */
MMREG_API mmreg_status mmreg_synth(const char* spec, uint64_t seed, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif
