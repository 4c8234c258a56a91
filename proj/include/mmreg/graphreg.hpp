#pragma once

#include <string>
#include <vector>

#include "mmreg/metrics.hpp"
#include "mmreg/mrf.hpp"
#include "mmreg/volume.hpp"

namespace mmreg {

struct PyramidConfig {
    int levels = 2;
    int steps_per_level = 5;
    int labels_per_level = 125;
    double finest_spacing_mm = 25.0;
    double bound_factor = 0.4;
    double refine_factor = 0.7;

    /// Throws Config on values outside their documented ranges.
    void validate() const;
};

/// k^3 displacements on a regular cube with per-axis values in
/// [-bound_factor*spacing, +bound_factor*spacing]; label 0 is the zero vector.
/// Throws Config unless `count` is the cube of an odd integer.
LabelSpace initialize_label_space(int count, const Vec3& spacing_mm, double bound_factor = 0.4);
LabelSpace refine_label_space(const LabelSpace& labels, double factor = 0.7);

/// Normalised unary features for every (node, label): nodes x labels x metrics.
struct FeatureTensor {
    std::size_t nodes = 0;
    std::size_t labels = 0;
    std::size_t metrics = 0;
    std::vector<double> values;

    std::span<const double> at(std::size_t node, std::size_t label) const {
        return {values.data() + (node * labels + label) * metrics, metrics};
    }
};

/// Metrics flagged false in `active` are skipped and left at 0.
FeatureTensor compute_features(const Volume& source, const Volume& target, const ControlGrid& grid,
                               const LabelSpace& labels, const MetricRegistry& registry, const Index3& extent,
                               int threads = 1, const std::vector<bool>& active = {});

/// Dominant source-mask class for every (node, label), node-major.
std::vector<int> dominant_classes(const SegmentationMask& source_mask, const ControlGrid& grid,
                                  const LabelSpace& labels, const Index3& extent, int threads = 1);

/// unary(i, l) = w(class(i, l))^T U_i(l). The pairwise weight of an edge is
/// the mean of its nodes' w_p, each taken from the node's zero-label class.
/// Empty `classes` puts every node in class 0.
MrfInstance assemble_instance(const FeatureTensor& features, const std::vector<int>& classes,
                              const WeightMatrix& weights, const ControlGrid& grid, const LabelSpace& labels);

/// Features, dominant classes and assembly in one call. `source_mask` may be
/// null when `weights` has a single column.
MrfInstance build_instance(const Volume& source, const Volume& target, const SegmentationMask* source_mask,
                           const WeightMatrix& weights, const ControlGrid& grid, const LabelSpace& labels,
                           const MetricRegistry& registry, const Index3& extent, int threads = 1);

/// Per-metric normalisation scales of a pair at the finest grid.
std::vector<double> calibrate_scales(const Volume& source, const Volume& target, const MetricRegistry& registry,
                                     double spacing_mm);

struct RegisterOptions {
    PyramidConfig pyramid;
    MetricSettings metric_settings;
    SolverOptions solver;
    int threads = 1;
};

struct StepDiagnostics {
    int level = 0;
    int step = 0;
    std::size_t labels = 0;
    double spacing_mm = 0.0;
    double max_norm_mm = 0.0;
    double max_component_mm = 0.0;  // largest |component| of the accepted sparse field
    double energy_before = 0.0;     // all-zero labeling
    double energy_after = 0.0;
};

struct RegistrationResult {
    DenseField field;                    // finest-level displacements (mm)
    std::vector<double> scales;          // normalisation actually used
    std::vector<StepDiagnostics> steps;
};

/// Pyramidal registration of `source` onto `target`: levels run coarse to
/// fine (level l uses volumes downsampled l times and control spacing
/// finest*2^l); every step warps the source by the accumulated field, solves
/// one MRF and composes acc(x) <- s(x) + acc(x + s(x)).
/// Model scales are used when present, otherwise calibrated on this pair.
RegistrationResult register_pair(const Volume& source, const Volume& target, const SegmentationMask* source_mask,
                                 const Model& model, const RegisterOptions& options);

/// Plain-text run manifest, one line per step.
std::string format_diagnostics(const std::vector<StepDiagnostics>& steps);

}  // namespace mmreg
