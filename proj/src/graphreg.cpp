#include "mmreg/graphreg.hpp"

#include <cmath>
#include <sstream>

#include "mmreg/io.hpp"
#include "mmreg/parallel.hpp"

namespace mmreg {

void PyramidConfig::validate() const {
    if (levels < 1) throw Error(ErrorKind::Config, "pyramid.levels must be >= 1");
    if (steps_per_level < 1) throw Error(ErrorKind::Config, "pyramid.steps must be >= 1");
    if (!(finest_spacing_mm > 0.0)) throw Error(ErrorKind::Config, "pyramid.spacing_mm must be > 0");
    if (!(bound_factor > 0.0) || bound_factor > 0.4) {
        throw Error(ErrorKind::Config, "pyramid.bound_factor must lie in (0, 0.4]");
    }
    if (!(refine_factor > 0.0) || !(refine_factor < 1.0)) {
        throw Error(ErrorKind::Config, "pyramid.refine_factor must lie in (0, 1)");
    }
    initialize_label_space(labels_per_level, {1.0, 1.0, 1.0}, bound_factor);
}

LabelSpace initialize_label_space(int count, const Vec3& spacing_mm, double bound_factor) {
    const int k = static_cast<int>(std::lround(std::cbrt(static_cast<double>(count))));
    if (count < 1 || k * k * k != count || k % 2 == 0) {
        throw Error(ErrorKind::Config, "label count " + std::to_string(count) + " is not the cube of an odd integer");
    }
    auto value = [&](int axis, int i) {
        if (k == 1) return 0.0;
        const double b = bound_factor * spacing_mm[axis];
        return b * static_cast<double>(2 * i - (k - 1)) / static_cast<double>(k - 1);
    };
    std::vector<Vec3> out{Vec3{}};
    const int mid = (k - 1) / 2;
    for (int z = 0; z < k; ++z) {
        for (int y = 0; y < k; ++y) {
            for (int x = 0; x < k; ++x) {
                if (x == mid && y == mid && z == mid) continue;
                out.push_back({value(0, x), value(1, y), value(2, z)});
            }
        }
    }
    const double bound = k == 1 ? 0.0 : bound_factor * std::max({spacing_mm.x, spacing_mm.y, spacing_mm.z});
    return LabelSpace(std::move(out), bound);
}

LabelSpace refine_label_space(const LabelSpace& labels, double factor) { return labels.scaled(factor); }

FeatureTensor compute_features(const Volume& source, const Volume& target, const ControlGrid& grid,
                               const LabelSpace& labels, const MetricRegistry& registry, const Index3& extent,
                               int threads, const std::vector<bool>& active) {
    FeatureTensor t;
    t.nodes = grid.size();
    t.labels = labels.size();
    t.metrics = registry.size();
    t.values.assign(t.nodes * t.labels * t.metrics, 0.0);

    std::vector<std::size_t> slots;
    std::vector<MetricId> ids;
    std::vector<double> scales;
    for (std::size_t j = 0; j < registry.size(); ++j) {
        if (active.empty() || active[j]) {
            slots.push_back(j);
            ids.push_back(registry.ids()[j]);
            scales.push_back(registry.scales()[j]);
        }
    }
    if (slots.empty()) return t;
    const MetricRegistry sub(ids, registry.settings(), scales);

    parallel_for(t.nodes, threads, [&](std::size_t node) {
        std::vector<double> out(slots.size());
        for (std::size_t l = 0; l < t.labels; ++l) {
            unary_features(source, target, grid, node, labels[l], sub, extent, out);
            double* dst = t.values.data() + (node * t.labels + l) * t.metrics;
            for (std::size_t s = 0; s < slots.size(); ++s) dst[slots[s]] = out[s];
        }
    });
    return t;
}

std::vector<int> dominant_classes(const SegmentationMask& source_mask, const ControlGrid& grid,
                                  const LabelSpace& labels, const Index3& extent, int threads) {
    std::vector<int> out(grid.size() * labels.size(), 0);
    parallel_for(grid.size(), threads, [&](std::size_t node) {
        for (std::size_t l = 0; l < labels.size(); ++l) {
            out[node * labels.size() + l] = dominant_class(source_mask, grid, node, labels[l], extent);
        }
    });
    return out;
}

MrfInstance assemble_instance(const FeatureTensor& features, const std::vector<int>& classes,
                              const WeightMatrix& weights, const ControlGrid& grid, const LabelSpace& labels) {
    if (features.nodes != grid.size() || features.labels != labels.size()) {
        throw Error(ErrorKind::Structural, "feature tensor does not match the grid and label space");
    }
    if (features.metrics != weights.n_metrics()) {
        throw Error(ErrorKind::Structural, "feature length does not match the weight matrix");
    }
    if (!classes.empty() && classes.size() != features.nodes * features.labels) {
        throw Error(ErrorKind::Structural, "class table does not match the grid and label space");
    }
    std::vector<double> unaries(features.nodes * features.labels);
    std::vector<double> node_wp(features.nodes);
    for (std::size_t i = 0; i < features.nodes; ++i) {
        for (std::size_t l = 0; l < features.labels; ++l) {
            const int c = classes.empty() ? 0 : classes[i * features.labels + l];
            unaries[i * features.labels + l] = aggregated_unary(features.at(i, l), weights.column(c));
        }
        node_wp[i] = weights.pairwise(classes.empty() ? 0 : classes[i * features.labels]);
    }
    MrfInstance m = make_instance(std::move(unaries), grid, labels, 0.0);
    for (std::size_t e = 0; e < m.edges.size(); ++e) {
        m.edge_weights[e] = 0.5 * (node_wp[m.edges[e].a] + node_wp[m.edges[e].b]);
    }
    return m;
}

MrfInstance build_instance(const Volume& source, const Volume& target, const SegmentationMask* source_mask,
                           const WeightMatrix& weights, const ControlGrid& grid, const LabelSpace& labels,
                           const MetricRegistry& registry, const Index3& extent, int threads) {
    if (registry.ids() != weights.metrics()) {
        throw Error(ErrorKind::Config, "metric registry and weight matrix disagree on metric order");
    }
    std::vector<int> classes;
    if (weights.n_classes() > 1) {
        if (!source_mask) throw Error(ErrorKind::Config, "a multi-class weight matrix needs a source mask");
        check_mask_alignment(*source_mask, source.geometry());
        classes = dominant_classes(*source_mask, grid, labels, extent, threads);
    }
    const auto features = compute_features(source, target, grid, labels, registry, extent, threads);
    return assemble_instance(features, classes, weights, grid, labels);
}

std::vector<double> calibrate_scales(const Volume& source, const Volume& target, const MetricRegistry& registry,
                                     double spacing_mm) {
    const Vec3 spacing{spacing_mm, spacing_mm, spacing_mm};
    const auto grid = ControlGrid::covering(target.geometry(), spacing);
    const Index3 extent = patch_extent(spacing, target.spacing());
    return percentile_scales(zero_label_raw_values(source, target, grid, registry, extent));
}

namespace {

DenseField compose(const DenseField& acc, const DenseField& step, int threads) {
    DenseField out(acc.geometry());
    const Geometry& g = acc.geometry();
    parallel_for(static_cast<std::size_t>(g.dims.z), threads, [&](std::size_t zz) {
        const int z = static_cast<int>(zz);
        for (int y = 0; y < g.dims.y; ++y) {
            for (int x = 0; x < g.dims.x; ++x) {
                const Vec3& s = step(x, y, z);
                out(x, y, z) = s + sample_field(acc, g.to_physical({x, y, z}) + s);
            }
        }
    });
    return out;
}

}  // namespace

RegistrationResult register_pair(const Volume& source, const Volume& target, const SegmentationMask* source_mask,
                                 const Model& model, const RegisterOptions& options) {
    const PyramidConfig& pc = options.pyramid;
    pc.validate();
    if (!(source.geometry() == target.geometry())) {
        throw Error(ErrorKind::Input, "source and target volumes must share one lattice");
    }
    const WeightMatrix& weights = model.weights;
    const bool multi = weights.n_classes() > 1;
    if (multi && !source_mask) throw Error(ErrorKind::Config, "a multi-class weight matrix needs a source mask");
    if (source_mask) check_mask_alignment(*source_mask, source.geometry());

    MetricRegistry registry(weights.metrics(), options.metric_settings);
    RegistrationResult result;
    result.scales = model.scales.empty() ? calibrate_scales(source, target, registry, pc.finest_spacing_mm)
                                         : model.scales;
    registry = registry.with_scales(result.scales);

    std::vector<bool> active(weights.n_metrics(), false);
    for (std::size_t k = 0; k < weights.n_classes(); ++k) {
        for (std::size_t j = 0; j < weights.n_metrics(); ++j) active[j] = active[j] || weights.column_at(k)[j] != 0.0;
    }

    std::vector<Volume> src{source}, tgt{target};
    std::vector<SegmentationMask> msk;
    if (multi) msk.push_back(*source_mask);
    for (int l = 1; l < pc.levels; ++l) {
        src.push_back(downsample(src.back()));
        tgt.push_back(downsample(tgt.back()));
        if (multi) msk.push_back(downsample_mask(msk.back()));
    }

    const Geometry& fine = source.geometry();
    DenseField acc(fine, Vec3{});
    for (int level = pc.levels - 1; level >= 0; --level) {
        const auto li = static_cast<std::size_t>(level);
        const double spacing = pc.finest_spacing_mm * std::ldexp(1.0, level);
        const Vec3 sp{spacing, spacing, spacing};
        const Geometry& geo = src[li].geometry();
        const auto grid = ControlGrid::covering(geo, sp);
        const Index3 extent = patch_extent(sp, geo.spacing);
        LabelSpace labels = initialize_label_space(pc.labels_per_level, sp, pc.bound_factor);

        for (int step = 0; step < pc.steps_per_level; ++step) {
            const DeformationField acc_level{{}, level == 0 ? acc : resample_field(acc, geo, options.threads)};
            const Volume moved = warp_clamped(src[li], acc_level, options.threads);
            std::vector<int> classes;
            if (multi) {
                const auto moved_mask = warp_mask(msk[li], acc_level, options.threads);
                classes = dominant_classes(moved_mask, grid, labels, extent, options.threads);
            }
            const auto features =
                compute_features(moved, tgt[li], grid, labels, registry, extent, options.threads, active);
            const MrfInstance instance = assemble_instance(features, classes, weights, grid, labels);
            const Labeling labeling = solve(instance, options.solver);

            StepDiagnostics d;
            d.level = level;
            d.step = step;
            d.labels = labels.size();
            d.spacing_mm = spacing;
            d.max_norm_mm = labels.max_norm_mm();
            d.energy_before = instance.energy(Labeling(instance.num_nodes, 0));
            d.energy_after = instance.energy(labeling);

            DeformationField sparse;
            sparse.sparse.reserve(grid.size());
            for (std::size_t i = 0; i < grid.size(); ++i) {
                const Vec3& v = labels[static_cast<std::size_t>(labeling[i])];
                sparse.sparse.push_back(v);
                d.max_component_mm = std::max(d.max_component_mm, v.max_abs());
            }
            result.steps.push_back(d);
            if (d.max_component_mm > 0.0) {
                const auto dense = interpolate_dense(grid, sparse, fine, options.threads);
                acc = compose(acc, *dense.dense, options.threads);
            }
            labels = refine_label_space(labels, pc.refine_factor);
        }
    }
    result.field = std::move(acc);
    return result;
}

std::string format_diagnostics(const std::vector<StepDiagnostics>& steps) {
    std::ostringstream ss;
    ss << "level step labels spacing_mm max_norm_mm max_component_mm energy_before energy_after\n";
    for (const auto& d : steps) {
        ss << d.level << ' ' << d.step << ' ' << d.labels << ' ' << format_number(d.spacing_mm) << ' '
           << format_number(d.max_norm_mm) << ' ' << format_number(d.max_component_mm) << ' '
           << format_number(d.energy_before) << ' ' << format_number(d.energy_after) << '\n';
    }
    return ss.str();
}

}  // namespace mmreg
