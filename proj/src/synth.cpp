#include "mmreg/synth.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "mmreg/dataset.hpp"
#include "mmreg/io.hpp"

namespace mmreg {

void SynthSpec::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::Config, "synth: " + msg); };
    if (dims.x < 8 || dims.y < 8 || dims.z < 8) fail("dims must be >= 8 on every axis");
    if (!(spacing_mm > 0.0)) fail("spacing_mm must be > 0");
    if (pairs < 1) fail("pairs must be >= 1");
    if (organs < 0 || organs > 254) fail("organs must lie in [0, 254]");
    if (!(organ_radius_min_mm > 0.0) || organ_radius_max_mm < organ_radius_min_mm) {
        fail("organ radii must satisfy 0 < min <= max");
    }
    if (texture_blobs < 0) fail("texture_blobs must be >= 0");
    if (!(gt_spacing_mm > 0.0)) fail("gt_spacing_mm must be > 0");
    if (noise_sigma < 0.0 || pattern_amplitude < 0.0) fail("noise_sigma and pattern_amplitude must be >= 0");
    if (!(remap_gamma > 0.0)) fail("remap_gamma must be > 0");
    const double gt = deformation == GroundTruth::Translation ? translation_mm.max_abs()
                      : deformation == GroundTruth::Smooth    ? gt_amplitude_mm
                                                              : 0.0;
    if (gt < 0.0 || gt > gt_bound_mm) {
        fail("ground-truth displacement " + format_number(gt) + " mm exceeds the bound of " +
             format_number(gt_bound_mm) + " mm");
    }
}

namespace {

struct Field {
    std::function<void(SynthSpec&, const std::string&)> set;
    std::function<std::string(const SynthSpec&)> get;
};

Vec3 parse_vec(const std::string& v) {
    std::string s = v;
    for (auto& c : s) {
        if (c == ',') c = ' ';
    }
    std::istringstream ss(s);
    std::string a, b, c, extra;
    if (!(ss >> a >> b >> c) || (ss >> extra)) throw Error(ErrorKind::Config, "expected three values: '" + v + "'");
    return {parse_number(a, ErrorKind::Config), parse_number(b, ErrorKind::Config), parse_number(c, ErrorKind::Config)};
}

std::string vec_text(const Vec3& v) {
    return format_number(v.x) + "," + format_number(v.y) + "," + format_number(v.z);
}

Field real(double SynthSpec::*member) {
    return {[member](SynthSpec& s, const std::string& v) { s.*member = parse_number(v, ErrorKind::Config); },
            [member](const SynthSpec& s) { return format_number(s.*member); }};
}

Field integer(int SynthSpec::*member) {
    return {[member](SynthSpec& s, const std::string& v) {
                s.*member = static_cast<int>(parse_integer(v, ErrorKind::Config));
            },
            [member](const SynthSpec& s) { return std::to_string(s.*member); }};
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = {
        {"dims",
         {[](SynthSpec& s, const std::string& v) {
              const Vec3 d = parse_vec(v);
              for (int a = 0; a < 3; ++a) {
                  if (d[a] != std::floor(d[a])) throw Error(ErrorKind::Config, "dims must be integers");
              }
              s.dims = {static_cast<int>(d.x), static_cast<int>(d.y), static_cast<int>(d.z)};
          },
          [](const SynthSpec& s) {
              return std::to_string(s.dims.x) + "," + std::to_string(s.dims.y) + "," + std::to_string(s.dims.z);
          }}},
        {"spacing_mm", real(&SynthSpec::spacing_mm)},
        {"pairs", integer(&SynthSpec::pairs)},
        {"organs", integer(&SynthSpec::organs)},
        {"organ_radius_min_mm", real(&SynthSpec::organ_radius_min_mm)},
        {"organ_radius_max_mm", real(&SynthSpec::organ_radius_max_mm)},
        {"organ_contrast", real(&SynthSpec::organ_contrast)},
        {"background", real(&SynthSpec::background)},
        {"texture_amplitude", real(&SynthSpec::texture_amplitude)},
        {"texture_blobs", integer(&SynthSpec::texture_blobs)},
        {"deformation",
         {[](SynthSpec& s, const std::string& v) {
              if (v == "identity") {
                  s.deformation = GroundTruth::Identity;
              } else if (v == "translation") {
                  s.deformation = GroundTruth::Translation;
              } else if (v == "smooth") {
                  s.deformation = GroundTruth::Smooth;
              } else {
                  throw Error(ErrorKind::Config, "deformation must be identity, translation or smooth");
              }
          },
          [](const SynthSpec& s) {
              return std::string(s.deformation == GroundTruth::Identity      ? "identity"
                                 : s.deformation == GroundTruth::Translation ? "translation"
                                                                             : "smooth");
          }}},
        {"translation_mm",
         {[](SynthSpec& s, const std::string& v) { s.translation_mm = parse_vec(v); },
          [](const SynthSpec& s) { return vec_text(s.translation_mm); }}},
        {"gt_amplitude_mm", real(&SynthSpec::gt_amplitude_mm)},
        {"gt_spacing_mm", real(&SynthSpec::gt_spacing_mm)},
        {"gt_bound_mm", real(&SynthSpec::gt_bound_mm)},
        {"noise_sigma", real(&SynthSpec::noise_sigma)},
        {"pattern_amplitude", real(&SynthSpec::pattern_amplitude)},
        {"remap",
         {[](SynthSpec& s, const std::string& v) {
              const long b = parse_integer(v, ErrorKind::Config);
              if (b != 0 && b != 1) throw Error(ErrorKind::Config, "remap must be 0 or 1");
              s.remap = b == 1;
          },
          [](const SynthSpec& s) { return std::string(s.remap ? "1" : "0"); }}},
        {"remap_offset", real(&SynthSpec::remap_offset)},
        {"remap_gain", real(&SynthSpec::remap_gain)},
        {"remap_gamma", real(&SynthSpec::remap_gamma)},
    };
    return table;
}

}  // namespace

SynthSpec parse_synth_spec(std::string_view text) {
    SynthSpec spec;
    int line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        const auto line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw Error(ErrorKind::Config, "synth spec line " + std::to_string(line_no) + " lacks '='");
        }
        const std::string key(trim(line.substr(0, eq)));
        const std::string value(trim(line.substr(eq + 1)));
        const auto it = fields().find(key);
        if (it == fields().end()) throw Error(ErrorKind::Config, "unknown synth spec key '" + key + "'");
        it->second.set(spec, value);
    }
    spec.validate();
    return spec;
}

std::string format_synth_spec(const SynthSpec& spec) {
    std::string out;
    for (const auto& [key, f] : fields()) out += key + "=" + f.get(spec) + "\n";
    return out;
}

namespace {

struct Organ {
    Vec3 center;
    Vec3 axes;
    int label;
};

void add_texture(Volume& vol, const SynthSpec& spec, std::mt19937_64& rng) {
    const Geometry& g = vol.geometry();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int b = 0; b < spec.texture_blobs; ++b) {
        const Vec3 c{unit(rng) * (g.dims.x - 1) * g.spacing.x, unit(rng) * (g.dims.y - 1) * g.spacing.y,
                     unit(rng) * (g.dims.z - 1) * g.spacing.z};
        const double sigma = 3.0 + 5.0 * unit(rng);
        const double amp = spec.texture_amplitude * (2.0 * unit(rng) - 1.0);
        int lo[3], hi[3];
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max(0, static_cast<int>(std::floor((c[a] - 3.0 * sigma) / g.spacing[a])));
            hi[a] = std::min(g.dims[a] - 1, static_cast<int>(std::ceil((c[a] + 3.0 * sigma) / g.spacing[a])));
        }
        const double inv = -0.5 / (sigma * sigma);
        for (int z = lo[2]; z <= hi[2]; ++z) {
            for (int y = lo[1]; y <= hi[1]; ++y) {
                for (int x = lo[0]; x <= hi[0]; ++x) {
                    const Vec3 p = g.to_physical({x, y, z}) - c;
                    vol(x, y, z) += static_cast<float>(amp * std::exp(inv * (p.x * p.x + p.y * p.y + p.z * p.z)));
                }
            }
        }
    }
}

DenseField ground_truth(const SynthSpec& spec, const Geometry& g, std::mt19937_64& rng) {
    switch (spec.deformation) {
        case GroundTruth::Identity: return DenseField(g, Vec3{});
        case GroundTruth::Translation: return DenseField(g, spec.translation_mm);
        case GroundTruth::Smooth: break;
    }
    const double s = spec.gt_spacing_mm;
    const auto grid = ControlGrid::covering(g, {s, s, s});
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    DeformationField sparse;
    for (std::size_t i = 0; i < grid.size(); ++i) sparse.sparse.push_back({u(rng), u(rng), u(rng)});
    DenseField dense = *interpolate_dense(grid, sparse, g).dense;
    double peak = 0.0;
    for (const auto& v : dense.data()) peak = std::max(peak, v.max_abs());
    const double scale = peak > 0.0 ? spec.gt_amplitude_mm / peak : 0.0;
    for (auto& v : dense.data()) v = scale * v;
    return dense;
}

}  // namespace

SynthPair synth_pair(const SynthSpec& spec, std::uint64_t seed, int index) {
    spec.validate();
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const Geometry g{spec.dims, {spec.spacing_mm, spec.spacing_mm, spec.spacing_mm}, {}};
    const Vec3 extent{(g.dims.x - 1) * g.spacing.x, (g.dims.y - 1) * g.spacing.y, (g.dims.z - 1) * g.spacing.z};
    const double mid = 0.5 * extent.x;

    Volume clean(g, static_cast<float>(spec.background));
    add_texture(clean, spec, rng);

    std::vector<Organ> organs;
    const double margin = 4.0 + (spec.deformation == GroundTruth::Translation ? spec.translation_mm.max_abs()
                                                                              : spec.gt_amplitude_mm);
    for (int k = 0; k < spec.organs; ++k) {
        const double r = spec.organ_radius_min_mm + (spec.organ_radius_max_mm - spec.organ_radius_min_mm) * unit(rng);
        Organ o;
        o.label = k + 1;
        o.axes = {r * (0.85 + 0.3 * unit(rng)), r * (0.85 + 0.3 * unit(rng)), r * (0.85 + 0.3 * unit(rng))};
        const double pad = 1.15 * r + margin;
        const double xlo = k % 2 == 0 ? pad : mid + pad;
        const double xhi = k % 2 == 0 ? mid - pad : extent.x - pad;
        auto pick = [&](double lo, double hi) { return hi > lo ? lo + (hi - lo) * unit(rng) : 0.5 * (lo + hi); };
        o.center = {pick(xlo, xhi), pick(pad, extent.y - pad), pick(pad, extent.z - pad)};
        organs.push_back(o);
    }

    SegmentationMask mask(g);
    for (int z = 0; z < g.dims.z; ++z) {
        for (int y = 0; y < g.dims.y; ++y) {
            for (int x = 0; x < g.dims.x; ++x) {
                const Vec3 p = g.to_physical({x, y, z});
                for (const auto& o : organs) {
                    const Vec3 q = p - o.center;
                    const double rho = std::sqrt((q.x / o.axes.x) * (q.x / o.axes.x) + (q.y / o.axes.y) * (q.y / o.axes.y) +
                                                 (q.z / o.axes.z) * (q.z / o.axes.z));
                    const double mean_axis = (o.axes.x + o.axes.y + o.axes.z) / 3.0;
                    const double w = std::clamp((1.0 - rho) * mean_axis / spec.spacing_mm + 0.5, 0.0, 1.0);
                    clean(x, y, z) += static_cast<float>(spec.organ_contrast * w);
                    if (rho <= 1.0) mask(x, y, z) = static_cast<std::uint8_t>(o.label);
                }
            }
        }
    }

    SynthPair pair;
    pair.ground_truth = ground_truth(spec, g, rng);
    const DeformationField gt{{}, pair.ground_truth};
    Volume target = warp(clean, gt, static_cast<float>(spec.background));
    pair.target_mask = warp_mask(mask, gt);
    pair.source_mask = std::move(mask);

    if (spec.remap) {
        for (int z = 0; z < g.dims.z; ++z) {
            for (int y = 0; y < g.dims.y; ++y) {
                for (int x = 0; x < g.dims.x; ++x) {
                    if (x * g.spacing.x < mid) continue;
                    const double v = std::max(0.0, static_cast<double>(target(x, y, z)));
                    target(x, y, z) =
                        static_cast<float>(spec.remap_offset + spec.remap_gain * std::pow(v, spec.remap_gamma));
                }
            }
        }
    }

    std::normal_distribution<double> gauss(0.0, 1.0);
    auto add_noise = [&](Volume& vol) {
        if (spec.noise_sigma <= 0.0) return;
        for (auto& v : vol.data()) v = static_cast<float>(v + spec.noise_sigma * gauss(rng));
    };
    add_noise(clean);
    add_noise(target);
    if (spec.pattern_amplitude > 0.0) {
        for (int z = 0; z < g.dims.z; ++z) {
            for (int y = 0; y < g.dims.y; ++y) {
                for (int x = 0; x < g.dims.x; ++x) {
                    if (x * g.spacing.x >= mid) continue;
                    const double sign = (x + y + z) % 2 == 0 ? 1.0 : -1.0;
                    target(x, y, z) = static_cast<float>(target(x, y, z) + sign * spec.pattern_amplitude);
                }
            }
        }
    }
    pair.source = std::move(clean);
    pair.target = std::move(target);
    return pair;
}

std::vector<SynthPair> synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
    std::vector<SynthPair> out;
    for (int i = 0; i < spec.pairs; ++i) out.push_back(synth_pair(spec, seed, i));
    return out;
}

std::filesystem::path write_synth_dataset(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& dir) {
    spec.validate();
    std::filesystem::create_directories(dir);
    std::vector<DatasetEntry> entries;
    for (int i = 0; i < spec.pairs; ++i) {
        const SynthPair p = synth_pair(spec, seed, i);
        char stem[32];
        std::snprintf(stem, sizeof(stem), "pair%03d_", i);
        const std::string s(stem);
        write_volume(dir / (s + "source.hdr"), p.source);
        write_volume(dir / (s + "target.hdr"), p.target);
        write_mask(dir / (s + "source_mask.hdr"), p.source_mask);
        write_mask(dir / (s + "target_mask.hdr"), p.target_mask);
        write_field(dir / (s + "gt.hdr"), p.ground_truth);
        entries.push_back({s + "source.hdr", s + "target.hdr", s + "source_mask.hdr", s + "target_mask.hdr"});
    }
    write_text_file(dir / "synth_spec.txt", "# seed=" + std::to_string(seed) + "\n" + format_synth_spec(spec));
    const auto manifest = dir / "manifest.csv";
    write_manifest(manifest, entries);
    return manifest;
}

}  // namespace mmreg
