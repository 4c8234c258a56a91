#include "mmreg/mmreg.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "mmreg/config.hpp"
#include "mmreg/eval.hpp"
#include "mmreg/io.hpp"
#include "mmreg/workflows.hpp"

struct mmreg_config {
    mmreg::RunConfig value;
};
struct mmreg_volume {
    mmreg::Volume value;
};
struct mmreg_mask {
    mmreg::SegmentationMask value;
};
struct mmreg_model {
    mmreg::Model value;
};

namespace {

thread_local std::string last_error;

mmreg_status fail(mmreg_status status, std::string message) {
    last_error = std::move(message);
    return status;
}

mmreg_status status_of(mmreg::ErrorKind kind) {
    switch (kind) {
        case mmreg::ErrorKind::IO: return MMREG_ERR_IO;
        case mmreg::ErrorKind::Config: return MMREG_ERR_CONFIG;
        case mmreg::ErrorKind::Input: return MMREG_ERR_INPUT;
        case mmreg::ErrorKind::Structural: return MMREG_ERR_INTERNAL;
    }
    return MMREG_ERR_INTERNAL;
}

template <typename Fn>
mmreg_status guarded(Fn&& fn) {
    try {
        last_error.clear();
        return fn();
    } catch (const mmreg::Error& e) {
        return fail(status_of(e.kind()), e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(MMREG_ERR_IO, e.what());
    } catch (const std::bad_alloc&) {
        return fail(MMREG_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(MMREG_ERR_INTERNAL, e.what());
    }
}

std::string opt(const char* s) { return s ? s : ""; }

mmreg_status copy_out(const std::string& text, char* buffer, size_t capacity, size_t* needed) {
    if (needed) *needed = text.size() + 1;
    if (!buffer) return MMREG_OK;
    if (capacity < text.size() + 1) return fail(MMREG_ERR_BUFFER, "buffer holds " + std::to_string(capacity) +
                                                                      " bytes, " + std::to_string(text.size() + 1) +
                                                                      " required");
    std::memcpy(buffer, text.c_str(), text.size() + 1);
    return MMREG_OK;
}

#define MMREG_REQUIRE(cond)                                                        \
    do {                                                                           \
        if (!(cond)) return fail(MMREG_ERR_ARGUMENT, "invalid argument: " #cond); \
    } while (0)

}  // namespace

extern "C" {

const char* mmreg_version(void) { return "1.0.0"; }

const char* mmreg_last_error(void) { return last_error.c_str(); }

const char* mmreg_status_name(mmreg_status status) {
    switch (status) {
        case MMREG_OK: return "ok";
        case MMREG_ERR_INTERNAL: return "internal error";
        case MMREG_ERR_IO: return "I/O error";
        case MMREG_ERR_CONFIG: return "config error";
        case MMREG_WARN_NOT_CONVERGED: return "not converged";
        case MMREG_ERR_INPUT: return "input error";
        case MMREG_ERR_ARGUMENT: return "invalid argument";
        case MMREG_ERR_BUFFER: return "buffer too small";
    }
    return "unknown status";
}

mmreg_status mmreg_config_new(mmreg_config** out) {
    MMREG_REQUIRE(out);
    return guarded([&] {
        *out = new mmreg_config{};
        return MMREG_OK;
    });
}

void mmreg_config_free(mmreg_config* config) { delete config; }

mmreg_status mmreg_config_load(mmreg_config* config, const char* path) {
    MMREG_REQUIRE(config && path);
    return guarded([&] {
        mmreg::RunConfig next = config->value;
        mmreg::apply_config_text(next, mmreg::read_text_file(path), path);
        config->value = next;
        return MMREG_OK;
    });
}

mmreg_status mmreg_config_override(mmreg_config* config, const char* assignment) {
    MMREG_REQUIRE(config && assignment);
    return guarded([&] {
        mmreg::apply_override(config->value, assignment);
        return MMREG_OK;
    });
}

mmreg_status mmreg_config_set(mmreg_config* config, const char* key, const char* value) {
    MMREG_REQUIRE(config && key && value);
    return guarded([&] {
        config->value.set(key, value);
        return MMREG_OK;
    });
}

mmreg_status mmreg_config_validate(const mmreg_config* config) {
    MMREG_REQUIRE(config);
    return guarded([&] {
        config->value.validate();
        return MMREG_OK;
    });
}

mmreg_status mmreg_config_get(const mmreg_config* config, const char* key, char* buffer, size_t capacity,
                              size_t* needed) {
    MMREG_REQUIRE(config && key);
    return guarded([&] { return copy_out(config->value.get(key), buffer, capacity, needed); });
}

mmreg_status mmreg_config_dump(const mmreg_config* config, char* buffer, size_t capacity, size_t* needed) {
    MMREG_REQUIRE(config);
    return guarded([&] { return copy_out(config->value.dump(), buffer, capacity, needed); });
}

mmreg_status mmreg_config_dump_to(const mmreg_config* config, const char* dir) {
    MMREG_REQUIRE(config && dir);
    return guarded([&] {
        mmreg::dump_config(config->value, dir);
        return MMREG_OK;
    });
}

mmreg_status mmreg_volume_read(const char* header, mmreg_volume** out) {
    MMREG_REQUIRE(header && out);
    return guarded([&] {
        *out = new mmreg_volume{mmreg::read_volume(header)};
        return MMREG_OK;
    });
}

void mmreg_volume_free(mmreg_volume* volume) { delete volume; }

mmreg_status mmreg_volume_dims(const mmreg_volume* volume, int dims[3], double spacing[3]) {
    MMREG_REQUIRE(volume && dims);
    for (int a = 0; a < 3; ++a) {
        dims[a] = volume->value.dims()[a];
        if (spacing) spacing[a] = volume->value.spacing()[a];
    }
    return MMREG_OK;
}

const float* mmreg_volume_data(const mmreg_volume* volume) { return volume ? volume->value.data().data() : nullptr; }

mmreg_status mmreg_mask_read(const char* header, mmreg_mask** out) {
    MMREG_REQUIRE(header && out);
    return guarded([&] {
        *out = new mmreg_mask{mmreg::read_mask(header)};
        return MMREG_OK;
    });
}

void mmreg_mask_free(mmreg_mask* mask) { delete mask; }

mmreg_status mmreg_mask_dims(const mmreg_mask* mask, int dims[3]) {
    MMREG_REQUIRE(mask && dims);
    for (int a = 0; a < 3; ++a) dims[a] = mask->value.dims()[a];
    return MMREG_OK;
}

mmreg_status mmreg_dice(const mmreg_mask* a, const mmreg_mask* b, int label, double* out) {
    MMREG_REQUIRE(a && b && out);
    return guarded([&] {
        *out = label < 0 ? mmreg::exact_dice(a->value, b->value) : mmreg::exact_dice(a->value, b->value, label);
        return MMREG_OK;
    });
}

mmreg_status mmreg_model_read(const char* path, mmreg_model** out) {
    MMREG_REQUIRE(path && out);
    return guarded([&] {
        *out = new mmreg_model{mmreg::parse_model(mmreg::read_text_file(path))};
        return MMREG_OK;
    });
}

void mmreg_model_free(mmreg_model* model) { delete model; }

mmreg_status mmreg_model_shape(const mmreg_model* model, size_t* metrics, size_t* classes) {
    MMREG_REQUIRE(model);
    if (metrics) *metrics = model->value.weights.n_metrics();
    if (classes) *classes = model->value.weights.n_classes();
    return MMREG_OK;
}

mmreg_status mmreg_model_column(const mmreg_model* model, size_t k, int* class_id, double* weights,
                                double* pairwise) {
    MMREG_REQUIRE(model);
    const auto& w = model->value.weights;
    MMREG_REQUIRE(k < w.n_classes());
    if (class_id) *class_id = w.class_ids()[k];
    if (weights) {
        const auto col = w.column_at(k);
        std::copy(col.begin(), col.end(), weights);
    }
    if (pairwise) *pairwise = w.pairwise_at(k);
    return MMREG_OK;
}

mmreg_status mmreg_register(const mmreg_config* config, const char* source, const char* target,
                            const char* source_mask, const char* weights, const char* out_field,
                            const char* out_warped, const char* out_diagnostics, const char* out_overlays,
                            const char* target_mask) {
    MMREG_REQUIRE(config && source && target && weights && out_field && out_warped);
    return guarded([&] {
        mmreg::RegisterPaths p{source,           target,     opt(source_mask),      opt(target_mask), weights,
                               out_field,        out_warped, opt(out_diagnostics), opt(out_overlays)};
        return mmreg::run_register(config->value, p) ? MMREG_OK : MMREG_WARN_NOT_CONVERGED;
    });
}

mmreg_status mmreg_train(const mmreg_config* config, const char* dataset, const char* out_model) {
    MMREG_REQUIRE(config && dataset && out_model);
    return guarded([&] {
        if (mmreg::run_train(config->value, dataset, out_model)) return MMREG_OK;
        return fail(MMREG_WARN_NOT_CONVERGED, "training hit an iteration cap; the best iterate was written");
    });
}

mmreg_status mmreg_evaluate(const mmreg_config* config, const char* dataset, const char* model,
                            const char* out_report) {
    MMREG_REQUIRE(config && dataset && model && out_report);
    return guarded([&] {
        return mmreg::run_evaluate(config->value, dataset, model, out_report) ? MMREG_OK : MMREG_WARN_NOT_CONVERGED;
    });
}

mmreg_status mmreg_synth(const char* spec, uint64_t seed, const char* out_dir) {
    MMREG_REQUIRE(out_dir);
    return guarded([&] {
        mmreg::run_synth(opt(spec), seed, out_dir);
        return MMREG_OK;
    });
}

}  // extern "C"
