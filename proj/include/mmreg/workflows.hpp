#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mmreg/config.hpp"

namespace mmreg {

// File-level workflows behind the C API. Each throws mmreg::Error on failure
// and returns false when outputs were written but an iteration cap was hit.

struct RegisterPaths {
    std::filesystem::path source;
    std::filesystem::path target;
    std::filesystem::path source_mask;  // optional unless the model has several columns
    std::filesystem::path target_mask;  // optional, used by overlays only
    std::filesystem::path weights;
    std::filesystem::path out_field;
    std::filesystem::path out_warped;
    std::filesystem::path out_diagnostics;  // empty: <out_field without extension>_diagnostics.txt
    std::filesystem::path out_overlays;     // empty: none
};

bool run_register(const RunConfig& config, const RegisterPaths& paths);

/// Writes the model and, next to it, <model>.log with the training manifest.
bool run_train(const RunConfig& config, const std::filesystem::path& dataset, const std::filesystem::path& out_model);

/// Writes the report CSV plus <stem>_summary.csv and <stem>_skipped.csv in
/// the same directory; overlays go to <stem>_overlays/ when enabled.
bool run_evaluate(const RunConfig& config, const std::filesystem::path& dataset, const std::filesystem::path& model,
                  const std::filesystem::path& out_report);

/// Empty spec path: generator defaults. Returns the manifest path.
std::filesystem::path run_synth(const std::filesystem::path& spec, std::uint64_t seed,
                                const std::filesystem::path& out_dir);

/// Writes config.dump() to <dir>/resolved_config.txt.
void dump_config(const RunConfig& config, const std::filesystem::path& dir);

}  // namespace mmreg
