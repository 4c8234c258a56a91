#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmreg/volume.hpp"

namespace mmreg {

/// Registry order fixes the coordinate layout of every feature and weight vector.
enum class MetricId { SAD = 0, MI = 1, NCC = 2, DWT = 3 };

std::string_view metric_name(MetricId id);
std::optional<MetricId> metric_from_name(std::string_view name);
std::vector<MetricId> default_metrics();

struct MetricSettings {
    int mi_bins = 16;
    /// Value reported when a patch pair has no overlapping voxels.
    double worst_value = 1.0;
};

// Raw dissimilarities on two equally shaped voxel blocks (x-fastest layout
// of `shape`). Lower is a better match.
double sad(std::span<const float> a, std::span<const float> b);
double ncc_dissimilarity(std::span<const float> a, std::span<const float> b);
double mi_dissimilarity(std::span<const float> a, std::span<const float> b, int bins);
double dwt_dissimilarity(std::span<const float> a, std::span<const float> b, const Dims& shape);

/// One metric on a block pair. Empty blocks give settings.worst_value; non-finite data throws.
double compute_metric(MetricId id, std::span<const float> src, std::span<const float> tgt, const Dims& shape,
                      const MetricSettings& settings = {});

/// One metric on two patches, intersected on their common window relative to
/// each patch's centre voxel.
double compute_metric(MetricId id, const Patch<float>& src, const Index3& src_center, const Patch<float>& tgt,
                      const Index3& tgt_center, const MetricSettings& settings = {});

using UnaryFeatureVector = std::vector<double>;

/// Ordered metric set plus per-metric normalisation scales. Immutable once built.
class MetricRegistry {
public:
    MetricRegistry() : MetricRegistry(default_metrics()) {}
    explicit MetricRegistry(std::vector<MetricId> ids, MetricSettings settings = {}, std::vector<double> scales = {});

    std::size_t size() const { return ids_.size(); }
    const std::vector<MetricId>& ids() const { return ids_; }
    const MetricSettings& settings() const { return settings_; }
    const std::vector<double>& scales() const { return scales_; }

    MetricRegistry with_scales(std::vector<double> scales) const;

    /// Raw metric values (unscaled) for a block pair.
    void evaluate_raw(std::span<const float> src, std::span<const float> tgt, const Dims& shape,
                      std::span<double> out) const;
    /// Normalised values: raw / scale. Empty input gives worst_value on every entry.
    void evaluate(std::span<const float> src, std::span<const float> tgt, const Dims& shape,
                  std::span<double> out) const;

private:
    std::vector<MetricId> ids_;
    MetricSettings settings_;
    std::vector<double> scales_;
};

/// Normalised unary features of node `node` for displacement `d`. The window
/// is the target patch around the undisplaced control point; the source is
/// sampled at the same voxels shifted by `d`, trilinearly with edge clamping
/// (so the window does not depend on `d`). Both volumes must share one lattice.
UnaryFeatureVector unary_features(const Volume& source, const Volume& target, const ControlGrid& grid,
                                  std::size_t node, const Vec3& d, const MetricRegistry& registry,
                                  const Index3& extent);
void unary_features(const Volume& source, const Volume& target, const ControlGrid& grid, std::size_t node,
                    const Vec3& d, const MetricRegistry& registry, const Index3& extent, std::span<double> out);

/// Raw zero-displacement metric values over all nodes with a non-empty patch,
/// one vector per metric.
std::vector<std::vector<double>> zero_label_raw_values(const Volume& source, const Volume& target,
                                                       const ControlGrid& grid, const MetricRegistry& registry,
                                                       const Index3& extent);

/// Per-metric 95th percentile (nearest rank) of pooled raw values; 1 when degenerate.
std::vector<double> percentile_scales(const std::vector<std::vector<double>>& raw_per_metric, double q = 0.95);

/// Most frequent foreground class in the source-mask patch around p_i + d.
/// Ties go to the smaller class id; a patch with no foreground gives 0.
int dominant_class(const SegmentationMask& source_mask, const ControlGrid& grid, std::size_t node, const Vec3& d,
                   const Index3& extent);

/// n x |C| aggregation weights (one column per class id) plus a per-class
/// pairwise weight. Column lookups for ids without a column resolve to the
/// background column: class 0 when present, otherwise the lowest class id.
class WeightMatrix {
public:
    WeightMatrix(std::vector<MetricId> metrics, std::vector<int> class_ids, std::vector<std::vector<double>> columns,
                 std::vector<double> pairwise);

    /// Single column shared by every class.
    static WeightMatrix single(std::vector<MetricId> metrics, std::vector<double> column, double pairwise);

    const std::vector<MetricId>& metrics() const { return metrics_; }
    const std::vector<int>& class_ids() const { return class_ids_; }
    std::size_t n_metrics() const { return metrics_.size(); }
    std::size_t n_classes() const { return class_ids_.size(); }

    std::size_t resolve(int class_id) const;
    std::span<const double> column_at(std::size_t index) const { return columns_[index]; }
    double pairwise_at(std::size_t index) const { return pairwise_[index]; }
    std::span<const double> column(int class_id) const { return columns_[resolve(class_id)]; }
    double pairwise(int class_id) const { return pairwise_[resolve(class_id)]; }

    friend bool operator==(const WeightMatrix&, const WeightMatrix&) = default;

private:
    std::vector<MetricId> metrics_;
    std::vector<int> class_ids_;
    std::vector<std::vector<double>> columns_;
    std::vector<double> pairwise_;
};

/// w(c)^T U
double aggregated_unary(std::span<const double> features, std::span<const double> column);

/// A weight matrix with the provenance needed to reuse it: normalisation
/// scales and an echo of the settings that produced it.
struct Model {
    WeightMatrix weights;
    std::vector<double> scales;  // empty: calibrate on the pair being registered
    std::vector<std::pair<std::string, std::string>> echo;

    friend bool operator==(const Model&, const Model&) = default;
};

// Weight/model file:
//   metrics=SAD,MI,NCC,DWT classes=0,1,2
//   <n weights> <w_p>            one line per class, in class order
//   scales=<n values>            optional
//   <key>=<value>                optional config echo
std::string serialize_model(const Model& model);
Model parse_model(std::string_view text);

}  // namespace mmreg
