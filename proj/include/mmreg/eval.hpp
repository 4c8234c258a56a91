#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mmreg/dataset.hpp"
#include "mmreg/graphreg.hpp"
#include "mmreg/metrics.hpp"
#include "mmreg/volume.hpp"

namespace mmreg {

/// 2|A ∩ B| / (|A| + |B|) over nonzero voxels; 1 when both are empty.
double exact_dice(const SegmentationMask& a, const SegmentationMask& b);
/// Same, restricted to voxels equal to `label`.
double exact_dice(const SegmentationMask& a, const SegmentationMask& b, int label);

struct BenchmarkMethod {
    std::string tag;
    Model model;
};

/// One-hot single-metric columns (0.1 for SAD, 10 otherwise) sharing the
/// learned model's scales and the training w_p0, followed by the learned
/// model tagged MW.
std::vector<BenchmarkMethod> benchmark_methods(const Model& learned);

struct EvalRow {
    std::string pair;
    int organ = 0;
    std::string method;
    double dice_before = 0.0;
    double dice_after = 0.0;
    double runtime_s = 0.0;
};

struct SummaryRow {
    int organ = 0;
    std::string method;
    std::size_t pairs = 0;
    double mean_before = 0.0;
    double mean_after = 0.0;
    double median_after = 0.0;
    double mean_runtime_s = 0.0;
};

struct SkippedPair {
    std::string pair;
    std::string reason;
};

struct EvalReport {
    std::vector<EvalRow> rows;  // ordered by (pair, organ, method)
    std::vector<SummaryRow> summary;
    std::vector<SkippedPair> skipped;

    /// Mean dice_after of one (organ, method) cell; throws Input when absent.
    double mean_after(int organ, const std::string& method) const;
};

struct EvalOptions {
    RegisterOptions registration;  // its thread count is ignored; pairs run concurrently instead
    int threads = 1;
    bool timing = true;             // false writes runtime_s = 0 for byte-stable reports
    std::filesystem::path overlay_dir;  // empty: no overlays
};

/// Summary rows per (organ, method) in first-appearance order.
std::vector<SummaryRow> summarize(const std::vector<EvalRow>& rows);

/// Registers every pair with every method and scores each organ present in
/// either mask of any pair. A pair whose masks cannot be read is skipped with
/// the error text as reason.
EvalReport run_benchmark(const std::vector<DatasetEntry>& entries, const std::vector<BenchmarkMethod>& methods,
                         const EvalOptions& options);

/// pair,organ,method,dice_before,dice_after,runtime_s
std::string format_report_csv(const EvalReport& report);
/// organ,method,pairs,mean_before,mean_after,median_after,mean_runtime_s
std::string format_summary_csv(const EvalReport& report);
/// pair,reason
std::string format_skipped_csv(const EvalReport& report);

/// Mid-slice overlays in three views (target mask red, warped source mask
/// green, over the target intensity) and |warped - target| slices:
/// <prefix>_{axial,coronal,sagittal}_{overlay.ppm,diff.pgm}. Returns the paths.
std::vector<std::filesystem::path> emit_overlays(const Volume& target, const Volume& warped,
                                                 const SegmentationMask& target_mask,
                                                 const SegmentationMask& warped_mask,
                                                 const std::filesystem::path& dir, const std::string& prefix);

}  // namespace mmreg
