#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mmreg/eval.hpp"
#include "mmreg/graphreg.hpp"
#include "mmreg/learn.hpp"
#include "mmreg/metrics.hpp"

namespace mmreg {

// Flat key=value run configuration. Blank lines and lines starting with '#'
// are ignored; every key must be one of run_config_keys().
struct RunConfig {
    PyramidConfig pyramid;
    std::vector<MetricId> metrics = default_metrics();
    MetricSettings metric;
    SolverOptions solver;
    TrainConfig train;
    bool w0_set = false;  // false: w0 follows the metric list (0.1 for SAD, 10 otherwise)
    bool eval_timing = true;
    bool eval_overlays = false;
    std::uint64_t seed = 0;
    int threads = 1;

    /// Throws Config naming the key on unknown keys or malformed values.
    void set(std::string_view key, std::string_view value);
    /// Throws Config on out-of-range values.
    void validate() const;
    std::string get(std::string_view key) const;
    /// Every key, sorted, one `key=value` line each.
    std::string dump() const;

    RegisterOptions register_options() const;
    TrainConfig train_config() const;
    EvalOptions eval_options() const;
};

std::vector<std::string> run_config_keys();

/// Default hand-tuned weight for a metric: 0.1 for SAD, 10 otherwise.
double default_weight(MetricId id);

void apply_config_text(RunConfig& config, std::string_view text, std::string_view origin = "config");
/// `key=value` override, as given on the command line.
void apply_override(RunConfig& config, std::string_view assignment);

/// Defaults, then the file (if any), then overrides; validated.
RunConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

}  // namespace mmreg
