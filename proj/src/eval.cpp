#include "mmreg/eval.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>

#include "mmreg/io.hpp"
#include "mmreg/learn.hpp"
#include "mmreg/parallel.hpp"

namespace mmreg {

namespace {

double dice_counts(std::int64_t both, std::int64_t na, std::int64_t nb) {
    return na + nb == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

void check_same_lattice(const SegmentationMask& a, const SegmentationMask& b) {
    if (!(a.geometry() == b.geometry())) throw Error(ErrorKind::Input, "dice: masks do not share one lattice");
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double exact_dice(const SegmentationMask& a, const SegmentationMask& b) {
    check_same_lattice(a, b);
    std::int64_t both = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0, y = b[i] != 0;
        na += x;
        nb += y;
        both += x && y;
    }
    return dice_counts(both, na, nb);
}

double exact_dice(const SegmentationMask& a, const SegmentationMask& b, int label) {
    check_same_lattice(a, b);
    std::int64_t both = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] == label, y = b[i] == label;
        na += x;
        nb += y;
        both += x && y;
    }
    return dice_counts(both, na, nb);
}

std::vector<BenchmarkMethod> benchmark_methods(const Model& learned) {
    double wp0 = TrainConfig{}.wp0;
    for (const auto& [k, v] : learned.echo) {
        if (k == "train.wp0") wp0 = parse_number(v, ErrorKind::Config);
    }
    const auto& metrics = learned.weights.metrics();
    std::vector<BenchmarkMethod> out;
    for (std::size_t m = 0; m < metrics.size(); ++m) {
        std::vector<double> column(metrics.size(), 0.0);
        column[m] = metrics[m] == MetricId::SAD ? 0.1 : 10.0;
        out.push_back({std::string(metric_name(metrics[m])),
                       Model{WeightMatrix::single(metrics, column, wp0), learned.scales, {}}});
    }
    out.push_back({"MW", learned});
    return out;
}

double EvalReport::mean_after(int organ, const std::string& method) const {
    for (const auto& s : summary) {
        if (s.organ == organ && s.method == method) return s.mean_after;
    }
    throw Error(ErrorKind::Input, "report has no rows for organ " + std::to_string(organ) + " method " + method);
}

std::vector<SummaryRow> summarize(const std::vector<EvalRow>& rows) {
    std::vector<std::pair<int, std::string>> order;
    std::map<std::pair<int, std::string>, std::vector<const EvalRow*>> cells;
    for (const auto& r : rows) {
        const auto key = std::make_pair(r.organ, r.method);
        auto& cell = cells[key];
        if (cell.empty()) order.push_back(key);
        cell.push_back(&r);
    }
    std::vector<SummaryRow> out;
    for (const auto& key : order) {
        const auto& cell = cells[key];
        SummaryRow s;
        s.organ = key.first;
        s.method = key.second;
        s.pairs = cell.size();
        std::vector<double> after;
        for (const auto* r : cell) {
            s.mean_before += r->dice_before;
            s.mean_after += r->dice_after;
            s.mean_runtime_s += r->runtime_s;
            after.push_back(r->dice_after);
        }
        const double n = static_cast<double>(cell.size());
        s.mean_before /= n;
        s.mean_after /= n;
        s.mean_runtime_s /= n;
        s.median_after = median(std::move(after));
        out.push_back(s);
    }
    return out;
}

EvalReport run_benchmark(const std::vector<DatasetEntry>& entries, const std::vector<BenchmarkMethod>& methods,
                         const EvalOptions& options) {
    if (methods.empty()) throw Error(ErrorKind::Config, "benchmark needs at least one method");
    options.registration.pyramid.validate();
    const std::size_t n = entries.size();

    struct PairResult {
        std::optional<SkippedPair> skipped;
        std::vector<int> organs;
        std::vector<double> before;                 // per organ
        std::vector<std::vector<double>> after;     // per method, per organ
        std::vector<double> runtime;                // per method
    };
    std::vector<PairResult> results(n);
    RegisterOptions reg = options.registration;
    reg.threads = 1;

    parallel_for(n, options.threads, [&](std::size_t p) {
        const auto& e = entries[p];
        const std::string name = pair_label(e, p);
        auto& out = results[p];
        Volume source = read_volume(e.source);
        Volume target = read_volume(e.target);
        if (!(source.geometry() == target.geometry())) {
            throw Error(ErrorKind::Input, e.source + " and " + e.target + " do not share one lattice");
        }
        SegmentationMask source_mask(source.geometry()), target_mask(source.geometry());
        try {
            source_mask = read_mask(e.source_mask);
            target_mask = read_mask(e.target_mask);
            check_mask_alignment(source_mask, source.geometry());
            check_mask_alignment(target_mask, target.geometry());
        } catch (const Error& err) {
            out.skipped = SkippedPair{name, err.what()};
            return;
        }
        std::set<int> organs;
        for (int c : mask_classes(source_mask)) organs.insert(c);
        for (int c : mask_classes(target_mask)) organs.insert(c);
        out.organs.assign(organs.begin(), organs.end());
        for (int c : out.organs) out.before.push_back(exact_dice(source_mask, target_mask, c));
        for (const auto& m : methods) {
            const auto t0 = std::chrono::steady_clock::now();
            const auto r = register_pair(source, target, &source_mask, m.model, reg);
            const DeformationField field{{}, r.field};
            const auto warped_mask = warp_mask(source_mask, field);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::vector<double> after;
            for (int c : out.organs) after.push_back(exact_dice(warped_mask, target_mask, c));
            out.after.push_back(std::move(after));
            out.runtime.push_back(options.timing ? secs : 0.0);
            if (!options.overlay_dir.empty()) {
                emit_overlays(target, warp_clamped(source, field), target_mask, warped_mask, options.overlay_dir,
                              name + "_" + m.tag);
            }
        }
    });

    std::set<int> all_organs;
    for (const auto& r : results) all_organs.insert(r.organs.begin(), r.organs.end());
    EvalReport report;
    for (std::size_t p = 0; p < n; ++p) {
        const auto& r = results[p];
        if (r.skipped) {
            report.skipped.push_back(*r.skipped);
            continue;
        }
        const std::string name = pair_label(entries[p], p);
        for (int organ : all_organs) {
            const auto it = std::find(r.organs.begin(), r.organs.end(), organ);
            const std::size_t k = static_cast<std::size_t>(it - r.organs.begin());
            for (std::size_t m = 0; m < methods.size(); ++m) {
                EvalRow row{name, organ, methods[m].tag, 1.0, 1.0, r.runtime[m]};
                if (it != r.organs.end()) {
                    row.dice_before = r.before[k];
                    row.dice_after = r.after[m][k];
                }
                report.rows.push_back(row);
            }
        }
    }
    report.summary = summarize(report.rows);
    return report;
}

std::string format_report_csv(const EvalReport& report) {
    std::string out = "pair,organ,method,dice_before,dice_after,runtime_s\n";
    for (const auto& r : report.rows) {
        out += r.pair + "," + std::to_string(r.organ) + "," + r.method + "," + format_number(r.dice_before) + "," +
               format_number(r.dice_after) + "," + format_number(r.runtime_s) + "\n";
    }
    return out;
}

std::string format_summary_csv(const EvalReport& report) {
    std::string out = "organ,method,pairs,mean_before,mean_after,median_after,mean_runtime_s\n";
    for (const auto& s : report.summary) {
        out += std::to_string(s.organ) + "," + s.method + "," + std::to_string(s.pairs) + "," +
               format_number(s.mean_before) + "," + format_number(s.mean_after) + "," + format_number(s.median_after) +
               "," + format_number(s.mean_runtime_s) + "\n";
    }
    return out;
}

std::string format_skipped_csv(const EvalReport& report) {
    std::string out = "pair,reason\n";
    for (const auto& s : report.skipped) {
        std::string reason = s.reason;
        std::replace(reason.begin(), reason.end(), ',', ';');
        std::replace(reason.begin(), reason.end(), '\n', ' ');
        out += s.pair + "," + reason + "\n";
    }
    return out;
}

namespace {

struct Slice {
    int width = 0;
    int height = 0;
    std::vector<Index3> voxels;  // row-major
};

Slice mid_slice(const Dims& d, int view) {
    Slice s;
    const int cx = d.x / 2, cy = d.y / 2, cz = d.z / 2;
    if (view == 0) {
        s.width = d.x;
        s.height = d.y;
        for (int y = d.y - 1; y >= 0; --y)
            for (int x = 0; x < d.x; ++x) s.voxels.push_back({x, y, cz});
    } else if (view == 1) {
        s.width = d.x;
        s.height = d.z;
        for (int z = d.z - 1; z >= 0; --z)
            for (int x = 0; x < d.x; ++x) s.voxels.push_back({x, cy, z});
    } else {
        s.width = d.y;
        s.height = d.z;
        for (int z = d.z - 1; z >= 0; --z)
            for (int y = 0; y < d.y; ++y) s.voxels.push_back({cx, y, z});
    }
    return s;
}

void write_binary(const std::filesystem::path& path, const std::string& header, const std::vector<unsigned char>& px) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::IO, "cannot write " + path.string());
    f << header;
    f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!f) throw Error(ErrorKind::IO, "write failed: " + path.string());
}

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::vector<std::filesystem::path> emit_overlays(const Volume& target, const Volume& warped,
                                                 const SegmentationMask& target_mask,
                                                 const SegmentationMask& warped_mask,
                                                 const std::filesystem::path& dir, const std::string& prefix) {
    const Geometry& g = target.geometry();
    if (!(warped.geometry() == g) || !(target_mask.geometry() == g) || !(warped_mask.geometry() == g)) {
        throw Error(ErrorKind::Input, "overlay inputs do not share one lattice");
    }
    std::filesystem::create_directories(dir);
    const auto [lo_it, hi_it] = std::minmax_element(target.values().begin(), target.values().end());
    const double lo = *lo_it;
    const double range = *hi_it - *lo_it > 0.0f ? static_cast<double>(*hi_it) - lo : 1.0;

    static constexpr std::array<const char*, 3> views{"axial", "coronal", "sagittal"};
    std::vector<std::filesystem::path> written;
    for (int v = 0; v < 3; ++v) {
        const Slice s = mid_slice(g.dims, v);
        const std::string size = std::to_string(s.width) + " " + std::to_string(s.height) + "\n255\n";
        std::vector<unsigned char> rgb, diff;
        for (const auto& p : s.voxels) {
            const unsigned char gray = to_byte(0.6 * (target(p.x, p.y, p.z) - lo) / range);
            const bool red = target_mask(p.x, p.y, p.z) != 0;
            const bool green = warped_mask(p.x, p.y, p.z) != 0;
            rgb.push_back(red ? 255 : gray);
            rgb.push_back(green ? 255 : gray);
            rgb.push_back(red || green ? 0 : gray);
            diff.push_back(to_byte(std::abs(static_cast<double>(warped(p.x, p.y, p.z)) - target(p.x, p.y, p.z)) / range));
        }
        const auto overlay = dir / (prefix + "_" + views[v] + "_overlay.ppm");
        const auto difference = dir / (prefix + "_" + views[v] + "_diff.pgm");
        write_binary(overlay, "P6\n" + size, rgb);
        write_binary(difference, "P5\n" + size, diff);
        written.push_back(overlay);
        written.push_back(difference);
    }
    return written;
}

}  // namespace mmreg
