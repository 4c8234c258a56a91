#include "mmreg/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "mmreg/io.hpp"

namespace mmreg {

std::string_view metric_name(MetricId id) {
    switch (id) {
        case MetricId::SAD: return "SAD";
        case MetricId::MI: return "MI";
        case MetricId::NCC: return "NCC";
        case MetricId::DWT: return "DWT";
    }
    return "?";
}

std::optional<MetricId> metric_from_name(std::string_view name) {
    for (auto id : {MetricId::SAD, MetricId::MI, MetricId::NCC, MetricId::DWT}) {
        if (metric_name(id) == name) return id;
    }
    return std::nullopt;
}

std::vector<MetricId> default_metrics() { return {MetricId::SAD, MetricId::MI, MetricId::NCC, MetricId::DWT}; }

// ---------------------------------------------------------------------------

double sad(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i]) - b[i]);
    return acc / static_cast<double>(a.size());
}

double ncc_dissimilarity(std::span<const float> a, std::span<const float> b) {
    const auto n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    // Variance below float resolution of the patch mean counts as constant.
    const double floor_a = 1e-12 * (1.0 + ma * ma) * n;
    const double floor_b = 1e-12 * (1.0 + mb * mb) * n;
    if (saa <= floor_a || sbb <= floor_b) return 1.0;
    const double r = std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
    return 1.0 - r;
}

namespace {

void bin_indices(std::span<const float> v, int bins, std::vector<int>& out) {
    out.resize(v.size());
    const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!(hi > lo)) {
        std::fill(out.begin(), out.end(), 0);
        return;
    }
    const double scale = bins / (hi - lo);
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::min(bins - 1, static_cast<int>((v[i] - lo) * scale));
    }
}

double entropy(const std::vector<int>& counts, double total) {
    double h = 0.0;
    for (int c : counts) {
        if (c > 0) {
            const double p = c / total;
            h -= p * std::log(p);
        }
    }
    return h;
}

}  // namespace

double mi_dissimilarity(std::span<const float> a, std::span<const float> b, int bins) {
    thread_local std::vector<int> ia, ib, joint, ha, hb;
    bin_indices(a, bins, ia);
    bin_indices(b, bins, ib);
    const auto nb = static_cast<std::size_t>(bins);
    joint.assign(nb * nb, 0);
    ha.assign(nb, 0);
    hb.assign(nb, 0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++ha[static_cast<std::size_t>(ia[i])];
        ++hb[static_cast<std::size_t>(ib[i])];
        ++joint[static_cast<std::size_t>(ia[i]) * nb + static_cast<std::size_t>(ib[i])];
    }
    const auto total = static_cast<double>(a.size());
    const double mi = entropy(ha, total) + entropy(hb, total) - entropy(joint, total);
    return std::max(0.0, std::log(static_cast<double>(bins)) - mi);
}

double dwt_dissimilarity(std::span<const float> a, std::span<const float> b, const Dims& shape) {
    // Single-level 3D Haar: the approximation band is the 2x2x2 block average
    // (block length 1 on axes shorter than 2; a trailing odd voxel is dropped).
    int block[3], blocks[3];
    for (int ax = 0; ax < 3; ++ax) {
        block[ax] = shape[ax] >= 2 ? 2 : 1;
        blocks[ax] = shape[ax] / block[ax];
    }
    const double inv = 1.0 / (block[0] * block[1] * block[2]);
    double acc = 0.0;
    for (int bz = 0; bz < blocks[2]; ++bz) {
        for (int by = 0; by < blocks[1]; ++by) {
            for (int bx = 0; bx < blocks[0]; ++bx) {
                double diff = 0.0;
                for (int k = 0; k < block[2]; ++k) {
                    for (int j = 0; j < block[1]; ++j) {
                        const std::size_t row = static_cast<std::size_t>(bx * block[0]) +
                                                static_cast<std::size_t>(shape.x) *
                                                    (static_cast<std::size_t>(by * block[1] + j) +
                                                     static_cast<std::size_t>(shape.y) * static_cast<std::size_t>(bz * block[2] + k));
                        for (int i = 0; i < block[0]; ++i) diff += static_cast<double>(a[row + static_cast<std::size_t>(i)]) - b[row + static_cast<std::size_t>(i)];
                    }
                }
                acc += std::abs(diff * inv);
            }
        }
    }
    return acc / (static_cast<double>(blocks[0]) * blocks[1] * blocks[2]);
}

namespace {

void check_finite(std::span<const float> v) {
    for (float x : v) {
        if (!std::isfinite(x)) throw Error(ErrorKind::Input, "patch contains NaN or infinite intensities");
    }
}

double raw_metric(MetricId id, std::span<const float> src, std::span<const float> tgt, const Dims& shape,
                  const MetricSettings& settings) {
    switch (id) {
        case MetricId::SAD: return sad(src, tgt);
        case MetricId::MI: return mi_dissimilarity(src, tgt, settings.mi_bins);
        case MetricId::NCC: return ncc_dissimilarity(src, tgt);
        case MetricId::DWT: return dwt_dissimilarity(src, tgt, shape);
    }
    return 0.0;
}

}  // namespace

double compute_metric(MetricId id, std::span<const float> src, std::span<const float> tgt, const Dims& shape,
                      const MetricSettings& settings) {
    if (src.size() != tgt.size() || src.size() != (src.empty() ? src.size() : shape.count())) {
        throw Error(ErrorKind::Structural, "metric inputs must have equal voxel counts matching their shape");
    }
    if (src.empty()) return settings.worst_value;
    check_finite(src);
    check_finite(tgt);
    return raw_metric(id, src, tgt, shape, settings);
}

double compute_metric(MetricId id, const Patch<float>& src, const Index3& src_center, const Patch<float>& tgt,
                      const Index3& tgt_center, const MetricSettings& settings) {
    if (src.empty() || tgt.empty()) return settings.worst_value;
    // Offsets relative to each patch centre; keep the shared range.
    int lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::max(src.lo[a] - src_center[a], tgt.lo[a] - tgt_center[a]);
        hi[a] = std::min(src.lo[a] + src.size[a] - 1 - src_center[a], tgt.lo[a] + tgt.size[a] - 1 - tgt_center[a]);
        if (hi[a] < lo[a]) return settings.worst_value;
    }
    const Dims shape{hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
    std::vector<float> a, b;
    a.reserve(shape.count());
    b.reserve(shape.count());
    auto at = [](const Patch<float>& p, const Index3& c, int x, int y, int z) {
        const std::size_t px = static_cast<std::size_t>(c.x + x - p.lo.x);
        const std::size_t py = static_cast<std::size_t>(c.y + y - p.lo.y);
        const std::size_t pz = static_cast<std::size_t>(c.z + z - p.lo.z);
        return p.values[px + static_cast<std::size_t>(p.size.x) * (py + static_cast<std::size_t>(p.size.y) * pz)];
    };
    for (int z = lo[2]; z <= hi[2]; ++z) {
        for (int y = lo[1]; y <= hi[1]; ++y) {
            for (int x = lo[0]; x <= hi[0]; ++x) {
                a.push_back(at(src, src_center, x, y, z));
                b.push_back(at(tgt, tgt_center, x, y, z));
            }
        }
    }
    return compute_metric(id, a, b, shape, settings);
}

// ---------------------------------------------------------------------------

MetricRegistry::MetricRegistry(std::vector<MetricId> ids, MetricSettings settings, std::vector<double> scales)
    : ids_(std::move(ids)), settings_(settings), scales_(std::move(scales)) {
    if (ids_.empty()) throw Error(ErrorKind::Config, "metric registry needs at least one metric");
    if (settings_.mi_bins < 2) throw Error(ErrorKind::Config, "MI needs at least 2 histogram bins");
    if (scales_.empty()) scales_.assign(ids_.size(), 1.0);
    if (scales_.size() != ids_.size()) throw Error(ErrorKind::Config, "one normalisation scale per metric required");
    for (double s : scales_) {
        if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorKind::Config, "normalisation scales must be positive");
    }
}

MetricRegistry MetricRegistry::with_scales(std::vector<double> scales) const {
    return MetricRegistry(ids_, settings_, std::move(scales));
}

void MetricRegistry::evaluate_raw(std::span<const float> src, std::span<const float> tgt, const Dims& shape,
                                  std::span<double> out) const {
    if (src.size() != tgt.size() || (!src.empty() && src.size() != shape.count())) {
        throw Error(ErrorKind::Structural, "metric inputs must have equal voxel counts matching their shape");
    }
    if (src.empty()) {
        std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(ids_.size()), settings_.worst_value);
        return;
    }
    check_finite(src);
    check_finite(tgt);
    for (std::size_t j = 0; j < ids_.size(); ++j) out[j] = raw_metric(ids_[j], src, tgt, shape, settings_);
}

void MetricRegistry::evaluate(std::span<const float> src, std::span<const float> tgt, const Dims& shape,
                              std::span<double> out) const {
    if (src.empty()) {
        std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(ids_.size()), settings_.worst_value);
        return;
    }
    evaluate_raw(src, tgt, shape, out);
    for (std::size_t j = 0; j < ids_.size(); ++j) out[j] /= scales_[j];
}

namespace {

// Fills `src`/`tgt` with the block pair for node/displacement: the target
// patch around the node and the source sampled at the same voxels shifted by
// `d`, trilinear with edge clamping (the arithmetic of warp_clamped).
// Returns the block shape (count 0 when the node lies outside the volume).
Dims gather_pair(const Volume& source, const Volume& target, const ControlGrid& grid, std::size_t node, const Vec3& d,
                 const Index3& extent, std::vector<float>& src, std::vector<float>& tgt) {
    src.clear();
    tgt.clear();
    const Geometry& g = target.geometry();
    const auto center = g.nearest_voxel(grid.point(node));
    if (!center) return {0, 0, 0};

    struct Axis {
        std::vector<int> i0, i1;
        std::vector<double> f;
    };
    thread_local Axis axes[3];
    int lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
        const int n = g.dims[a];
        lo[a] = std::max(0, (*center)[a] - extent[a]);
        hi[a] = std::min(n - 1, (*center)[a] + extent[a]);
        const double s = d[a] / g.spacing[a];
        Axis& ax = axes[a];
        ax.i0.clear();
        ax.i1.clear();
        ax.f.clear();
        for (int p = lo[a]; p <= hi[a]; ++p) {
            const double c = std::clamp(p + s, 0.0, n - 1.0);
            int i = static_cast<int>(c);
            double f = c - i;
            if (i >= n - 1) {
                i = n - 1;
                f = 0.0;
            }
            ax.i0.push_back(i);
            ax.i1.push_back(f > 0.0 ? i + 1 : i);
            ax.f.push_back(f);
        }
    }
    const Dims shape{hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
    src.resize(shape.count());
    tgt.resize(shape.count());
    std::size_t out = 0;
    for (int z = 0; z < shape.z; ++z) {
        const int iz = axes[2].i0[static_cast<std::size_t>(z)], jz = axes[2].i1[static_cast<std::size_t>(z)];
        const double fz = axes[2].f[static_cast<std::size_t>(z)];
        for (int y = 0; y < shape.y; ++y) {
            const int iy = axes[1].i0[static_cast<std::size_t>(y)], jy = axes[1].i1[static_cast<std::size_t>(y)];
            const double fy = axes[1].f[static_cast<std::size_t>(y)];
            const std::size_t trow = target.index(lo[0], lo[1] + y, lo[2] + z);
            for (int x = 0; x < shape.x; ++x, ++out) {
                const int ix = axes[0].i0[static_cast<std::size_t>(x)], jx = axes[0].i1[static_cast<std::size_t>(x)];
                const double fx = axes[0].f[static_cast<std::size_t>(x)];
                const double c00 = source(ix, iy, iz) * (1.0 - fx) + source(jx, iy, iz) * fx;
                const double c10 = source(ix, jy, iz) * (1.0 - fx) + source(jx, jy, iz) * fx;
                const double c01 = source(ix, iy, jz) * (1.0 - fx) + source(jx, iy, jz) * fx;
                const double c11 = source(ix, jy, jz) * (1.0 - fx) + source(jx, jy, jz) * fx;
                const double c0 = c00 * (1.0 - fy) + c10 * fy;
                const double c1 = c01 * (1.0 - fy) + c11 * fy;
                src[out] = static_cast<float>(c0 * (1.0 - fz) + c1 * fz);
                tgt[out] = target[trow + static_cast<std::size_t>(x)];
            }
        }
    }
    return shape;
}

void require_same_lattice(const Volume& a, const Volume& b) {
    if (!(a.geometry() == b.geometry())) {
        throw Error(ErrorKind::Structural, "source and target volumes must share one lattice");
    }
}

}  // namespace

void unary_features(const Volume& source, const Volume& target, const ControlGrid& grid, std::size_t node,
                    const Vec3& d, const MetricRegistry& registry, const Index3& extent, std::span<double> out) {
    require_same_lattice(source, target);
    thread_local std::vector<float> src, tgt;
    const Dims shape = gather_pair(source, target, grid, node, d, extent, src, tgt);
    registry.evaluate(src, tgt, shape, out);
}

UnaryFeatureVector unary_features(const Volume& source, const Volume& target, const ControlGrid& grid,
                                  std::size_t node, const Vec3& d, const MetricRegistry& registry,
                                  const Index3& extent) {
    UnaryFeatureVector out(registry.size());
    unary_features(source, target, grid, node, d, registry, extent, out);
    return out;
}

std::vector<std::vector<double>> zero_label_raw_values(const Volume& source, const Volume& target,
                                                       const ControlGrid& grid, const MetricRegistry& registry,
                                                       const Index3& extent) {
    require_same_lattice(source, target);
    std::vector<std::vector<double>> out(registry.size());
    std::vector<float> src, tgt;
    std::vector<double> values(registry.size());
    for (std::size_t node = 0; node < grid.size(); ++node) {
        const Dims shape = gather_pair(source, target, grid, node, {}, extent, src, tgt);
        if (src.empty()) continue;
        registry.evaluate_raw(src, tgt, shape, values);
        for (std::size_t j = 0; j < values.size(); ++j) out[j].push_back(values[j]);
    }
    return out;
}

std::vector<double> percentile_scales(const std::vector<std::vector<double>>& raw_per_metric, double q) {
    std::vector<double> scales;
    for (auto values : raw_per_metric) {
        double s = 1.0;
        if (!values.empty()) {
            std::sort(values.begin(), values.end());
            const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
            const double v = values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
            if (v > 1e-12 && std::isfinite(v)) s = v;
        }
        scales.push_back(s);
    }
    return scales;
}

int dominant_class(const SegmentationMask& source_mask, const ControlGrid& grid, std::size_t node, const Vec3& d,
                   const Index3& extent) {
    const auto patch = extract_patch(source_mask, grid.point(node) + d, extent);
    std::array<int, 256> counts{};
    for (auto v : patch.values) ++counts[v];
    int best = 0;
    int best_count = 0;
    for (int c = 1; c < 256; ++c) {
        if (counts[static_cast<std::size_t>(c)] > best_count) {
            best = c;
            best_count = counts[static_cast<std::size_t>(c)];
        }
    }
    return best;
}

// ---------------------------------------------------------------------------

WeightMatrix::WeightMatrix(std::vector<MetricId> metrics, std::vector<int> class_ids,
                           std::vector<std::vector<double>> columns, std::vector<double> pairwise)
    : metrics_(std::move(metrics)), class_ids_(std::move(class_ids)), columns_(std::move(columns)),
      pairwise_(std::move(pairwise)) {
    if (metrics_.empty()) throw Error(ErrorKind::Config, "weight matrix needs at least one metric");
    if (class_ids_.empty()) throw Error(ErrorKind::Config, "weight matrix needs at least one class column");
    if (columns_.size() != class_ids_.size() || pairwise_.size() != class_ids_.size()) {
        throw Error(ErrorKind::Config, "weight matrix column count does not match its class list");
    }
    for (std::size_t k = 0; k < class_ids_.size(); ++k) {
        if (k > 0 && class_ids_[k] <= class_ids_[k - 1]) {
            throw Error(ErrorKind::Config, "weight matrix class ids must be strictly increasing");
        }
        if (class_ids_[k] < 0 || class_ids_[k] > 255) throw Error(ErrorKind::Config, "class ids must lie in [0,255]");
        if (columns_[k].size() != metrics_.size()) {
            throw Error(ErrorKind::Config, "weight column length does not match the metric count");
        }
        if (!(pairwise_[k] >= 0.0)) throw Error(ErrorKind::Config, "pairwise weights must be >= 0");
    }
}

WeightMatrix WeightMatrix::single(std::vector<MetricId> metrics, std::vector<double> column, double pairwise) {
    return WeightMatrix(std::move(metrics), {0}, {std::move(column)}, {pairwise});
}

std::size_t WeightMatrix::resolve(int class_id) const {
    const auto it = std::lower_bound(class_ids_.begin(), class_ids_.end(), class_id);
    if (it != class_ids_.end() && *it == class_id) return static_cast<std::size_t>(it - class_ids_.begin());
    return 0;  // class 0 when present, else the lowest id: both sit at index 0
}

double aggregated_unary(std::span<const double> features, std::span<const double> column) {
    double acc = 0.0;
    for (std::size_t j = 0; j < features.size(); ++j) acc += column[j] * features[j];
    return acc;
}

// ---------------------------------------------------------------------------

std::string serialize_model(const Model& model) {
    const WeightMatrix& w = model.weights;
    std::ostringstream ss;
    ss << "metrics=";
    for (std::size_t j = 0; j < w.n_metrics(); ++j) ss << (j ? "," : "") << metric_name(w.metrics()[j]);
    ss << " classes=";
    for (std::size_t k = 0; k < w.n_classes(); ++k) ss << (k ? "," : "") << w.class_ids()[k];
    ss << '\n';
    for (std::size_t k = 0; k < w.n_classes(); ++k) {
        for (double v : w.column_at(k)) ss << format_number(v) << ' ';
        ss << format_number(w.pairwise_at(k)) << '\n';
    }
    if (!model.scales.empty()) {
        ss << "scales=";
        for (std::size_t j = 0; j < model.scales.size(); ++j) ss << (j ? "," : "") << format_number(model.scales[j]);
        ss << '\n';
    }
    for (const auto& [k, v] : model.echo) ss << k << '=' << v << '\n';
    return ss.str();
}

Model parse_model(std::string_view text) {
    std::vector<std::string> lines;
    for (auto& l : split(text, '\n')) {
        const auto t = trim(l);
        if (!t.empty()) lines.emplace_back(t);
    }
    if (lines.empty()) throw Error(ErrorKind::IO, "weights file is empty");

    std::vector<MetricId> metrics;
    std::vector<int> classes;
    {
        std::istringstream head(lines[0]);
        std::string tok;
        while (head >> tok) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos) throw Error(ErrorKind::IO, "weights header token '" + tok + "' lacks '='");
            const std::string key = tok.substr(0, eq);
            const auto values = split(std::string_view(tok).substr(eq + 1), ',');
            if (key == "metrics") {
                for (const auto& v : values) {
                    const auto id = metric_from_name(v);
                    if (!id) throw Error(ErrorKind::IO, "unknown metric '" + v + "' in weights header");
                    metrics.push_back(*id);
                }
            } else if (key == "classes") {
                for (const auto& v : values) classes.push_back(static_cast<int>(parse_integer(v)));
            } else {
                throw Error(ErrorKind::IO, "unknown weights header key '" + key + "'");
            }
        }
    }
    if (metrics.empty() || classes.empty()) throw Error(ErrorKind::IO, "weights header needs metrics= and classes=");
    if (lines.size() < 1 + classes.size()) throw Error(ErrorKind::IO, "weights file has fewer rows than classes");

    std::vector<std::vector<double>> columns;
    std::vector<double> pairwise;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        std::istringstream row(lines[1 + k]);
        std::vector<double> vals;
        std::string tok;
        while (row >> tok) vals.push_back(parse_number(tok));
        if (vals.size() != metrics.size() + 1) {
            throw Error(ErrorKind::IO, "weights row " + std::to_string(k + 1) + " needs " +
                                           std::to_string(metrics.size() + 1) + " values");
        }
        pairwise.push_back(vals.back());
        vals.pop_back();
        columns.push_back(std::move(vals));
    }

    Model model{WeightMatrix(metrics, classes, columns, pairwise), {}, {}};
    for (std::size_t i = 1 + classes.size(); i < lines.size(); ++i) {
        const auto eq = lines[i].find('=');
        if (eq == std::string::npos) throw Error(ErrorKind::IO, "model trailer line '" + lines[i] + "' lacks '='");
        const std::string key = lines[i].substr(0, eq);
        const std::string value = lines[i].substr(eq + 1);
        if (key == "scales") {
            for (const auto& v : split(value, ',')) model.scales.push_back(parse_number(v));
            if (model.scales.size() != metrics.size()) throw Error(ErrorKind::IO, "scales= needs one value per metric");
        } else {
            model.echo.emplace_back(key, value);
        }
    }
    return model;
}

}  // namespace mmreg
