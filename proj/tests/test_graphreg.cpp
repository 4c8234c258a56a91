#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include "doctest.h"

#include <cmath>
#include <random>
#include <set>

#include "mmreg/graphreg.hpp"
#include "mmreg/learn.hpp"
#include "mmreg/synth.hpp"

using namespace mmreg;

namespace {

std::set<double> axis_values(const LabelSpace& labels, int axis) {
    std::set<double> out;
    for (const auto& d : labels.displacements()) out.insert(d[axis]);
    return out;
}

Volume textured(const Geometry& g, std::uint64_t seed) {
    Volume v(g);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::array<double, 4>> blobs(40);
    for (auto& b : blobs) b = {u(rng) * g.dims.x, u(rng) * g.dims.y, u(rng) * g.dims.z, 1.5 + 2.5 * u(rng)};
    for (int z = 0; z < g.dims.z; ++z)
        for (int y = 0; y < g.dims.y; ++y)
            for (int x = 0; x < g.dims.x; ++x) {
                double s = 0.2;
                for (const auto& b : blobs) {
                    const double r2 = (x - b[0]) * (x - b[0]) + (y - b[1]) * (y - b[1]) + (z - b[2]) * (z - b[2]);
                    s += 0.5 * std::exp(-r2 / (2 * b[3] * b[3]));
                }
                v(x, y, z) = static_cast<float>(s);
            }
    return v;
}

double mask_dice(const SegmentationMask& a, const SegmentationMask& b, int c) {
    long both = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i] == c;
        nb += b[i] == c;
        both += a[i] == c && b[i] == c;
    }
    return na + nb == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

SynthSpec small_spec() {
    SynthSpec s;
    s.dims = {32, 32, 32};
    s.organs = 2;
    s.organ_radius_min_mm = 7;
    s.organ_radius_max_mm = 9;
    s.remap = false;
    s.noise_sigma = 0.0;
    return s;
}

}  // namespace

TEST_CASE("label space examples") {
    const auto l125 = initialize_label_space(125, {25, 25, 25});
    CHECK(l125.size() == 125);
    CHECK(l125[0] == Vec3{});
    CHECK(l125.max_norm_mm() == 10.0);
    for (int a = 0; a < 3; ++a) CHECK(axis_values(l125, a) == std::set<double>{-10, -5, 0, 5, 10});
    const auto l27 = initialize_label_space(27, {10, 10, 10});
    CHECK(axis_values(l27, 0) == std::set<double>{-4, 0, 4});
    const auto r = refine_label_space(l125);
    CHECK(r.max_norm_mm() == doctest::Approx(7.0));
    for (const double v : axis_values(r, 1)) {
        bool hit = false;
        for (double e : {-7.0, -3.5, 0.0, 3.5, 7.0}) hit = hit || std::abs(v - e) < 1e-12;
        CHECK(hit);
    }
    LabelSpace s = l125;
    for (int k = 0; k < 5; ++k) s = refine_label_space(s, 0.7);
    CHECK(s.max_norm_mm() == doctest::Approx(10.0 * std::pow(0.7, 5)));
    CHECK(s[124].x == doctest::Approx(10.0 * std::pow(0.7, 5)));
    CHECK(initialize_label_space(1, {25, 25, 25}).size() == 1);
    CHECK_THROWS_AS(initialize_label_space(8, {25, 25, 25}), Error);
    CHECK_THROWS_AS(initialize_label_space(124, {25, 25, 25}), Error);
    CHECK_THROWS_AS(initialize_label_space(0, {25, 25, 25}), Error);
}

TEST_CASE("pairwise table of every generated label space is a metric") {
    for (int count : {1, 27, 125}) {
        LabelSpace s = initialize_label_space(count, {25, 20, 15});
        for (int step = 0; step < 3; ++step, s = refine_label_space(s)) {
            const auto t = l1_pairwise_table(s);
            const std::size_t L = s.size();
            for (std::size_t a = 0; a < L; ++a) {
                CHECK(t[a * L + a] == 0.0);
                for (std::size_t b = 0; b < L; b += 7) {
                    CHECK(t[a * L + b] == t[b * L + a]);
                    for (std::size_t c = 0; c < L; c += 11) CHECK(t[a * L + c] <= t[a * L + b] + t[b * L + c] + 1e-12);
                }
            }
        }
    }
}

TEST_CASE("pyramid config validation") {
    PyramidConfig p;
    CHECK_NOTHROW(p.validate());
    p.levels = 0;
    CHECK_THROWS_AS(p.validate(), Error);
    p = {};
    p.bound_factor = 0.5;
    CHECK_THROWS_AS(p.validate(), Error);
    p = {};
    p.refine_factor = 1.0;
    CHECK_THROWS_AS(p.validate(), Error);
    p = {};
    p.labels_per_level = 64;
    CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("build_instance matches a straight-loop oracle") {
    const Geometry g{{12, 12, 6}, {2, 2, 2}, {}};
    const Volume src = textured(g, 1), tgt = textured(g, 2);
    SegmentationMask mask(g);
    for (int z = 0; z < 6; ++z)
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 12; ++x) mask(x, y, z) = x < 5 ? 1 : (y < 6 ? 2 : 0);
    const ControlGrid grid({2, 2, 1}, {10, 10, 10}, {6, 6, 5});
    const LabelSpace labels({{0, 0, 0}, {2, 0, 0}, {0, -3, 1}});
    const Index3 extent{2, 2, 2};
    const MetricRegistry reg(default_metrics(), {}, {0.5, 2.0, 1.0, 0.25});
    const WeightMatrix w(default_metrics(), {0, 1, 2}, {{0.1, 10, 10, 10}, {1, 2, 3, 4}, {4, 3, 2, 1}}, {0.3, 0.5, 0.9});

    const MrfInstance m = build_instance(src, tgt, &mask, w, grid, labels, reg, extent);
    REQUIRE(m.num_nodes == 4);
    REQUIRE(m.num_labels == 3);
    std::vector<int> zero_class(4);
    for (std::size_t i = 0; i < 4; ++i) {
        zero_class[i] = dominant_class(mask, grid, i, labels[0], extent);
        for (std::size_t l = 0; l < 3; ++l) {
            const auto f = unary_features(src, tgt, grid, i, labels[l], reg, extent);
            const auto col = w.column(dominant_class(mask, grid, i, labels[l], extent));
            double e = 0.0;
            for (std::size_t j = 0; j < 4; ++j) e += col[j] * f[j];
            CHECK(m.unary(i, l) == doctest::Approx(e).epsilon(1e-12));
        }
    }
    REQUIRE(m.edges.size() == 4);
    for (std::size_t e = 0; e < m.edges.size(); ++e) {
        const double expect = 0.5 * (w.pairwise(zero_class[m.edges[e].a]) + w.pairwise(zero_class[m.edges[e].b]));
        CHECK(m.edge_weights[e] == doctest::Approx(expect));
    }
    CHECK(m.table(1, 2) == doctest::Approx(2 + 3 + 1));
    CHECK_THROWS_AS(build_instance(src, tgt, nullptr, w, grid, labels, reg, extent), Error);
}

TEST_CASE("single-class instance energy equals the learned linear form") {
    const Geometry g{{16, 16, 8}, {2, 2, 2}, {}};
    const Volume src = textured(g, 3), tgt = textured(g, 4);
    const ControlGrid grid({3, 2, 1}, {12, 12, 12}, {6, 10, 8});
    const LabelSpace labels = initialize_label_space(27, {5, 5, 5});
    const MetricRegistry reg;
    TrainingSet set{grid, labels, {}};
    set.samples.push_back({"p", compute_features(src, tgt, grid, labels, reg, {3, 3, 3}), {}});
    set.samples.back().loss = loss_table(SegmentationMask(g), SegmentationMask(g), grid, labels);
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> w{0.1 * (trial % 3), 10, 3.0 * trial, 1, 0.05 * trial};
        const WeightMatrix wm = WeightMatrix::single(default_metrics(), {w[0], w[1], w[2], w[3]}, w[4]);
        const MrfInstance m = assemble_instance(set.samples[0].features, {}, wm, grid, labels);
        Labeling l(grid.size());
        for (int& v : l) v = static_cast<int>(rng() % labels.size());
        const double e = m.energy(l);
        CHECK(std::abs(e - linear_energy(w, joint_feature(set, set.samples[0], l))) / std::max(1.0, std::abs(e)) < 1e-9);
    }
}

TEST_CASE("unary at label d equals the zero-label unary of the source warped by d") {
    const Geometry g{{20, 18, 12}, {2, 2, 2}, {}};
    const Volume src = textured(g, 5), tgt = textured(g, 6);
    const ControlGrid grid = ControlGrid::covering(g, {15, 15, 15});
    const Index3 extent = patch_extent({15, 15, 15}, g.spacing);
    const MetricRegistry reg;
    for (const Vec3 d : {Vec3{2.5, -1.0, 0.7}, Vec3{-6, 6, 3}, Vec3{0.2, 0.0, -5.5}}) {
        const Volume moved = warp_clamped(src, DeformationField{{}, DenseField(g, d)});
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const auto a = unary_features(src, tgt, grid, i, d, reg, extent);
            const auto b = unary_features(moved, tgt, grid, i, Vec3{}, reg, extent);
            for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
        }
    }
}

TEST_CASE("the zero label dominates on a self-match") {
    const Geometry g{{32, 32, 32}, {2, 2, 2}, {}};
    const Volume v = textured(g, 8);
    const ControlGrid grid = ControlGrid::covering(g, {25, 25, 25});
    const LabelSpace labels = initialize_label_space(27, {25, 25, 25});
    const Index3 extent = patch_extent({25, 25, 25}, g.spacing);
    MetricRegistry reg;
    reg = reg.with_scales(calibrate_scales(v, v, reg, 25));
    const auto f = compute_features(v, v, grid, labels, reg, extent);
    int active = 0, zero_best = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!g.nearest_voxel(grid.point(i))) continue;
        ++active;
        std::size_t best = 0;
        double best_e = 1e300;
        for (std::size_t l = 0; l < labels.size(); ++l) {
            const double e = aggregated_unary(f.at(i, l), std::vector<double>{0.1, 10, 10, 10});
            if (e < best_e) {
                best_e = e;
                best = l;
            }
        }
        zero_best += best == 0;
    }
    REQUIRE(active > 0);
    CHECK(zero_best >= 0.9 * active);
}

TEST_CASE("a single-label pyramid leaves the field at zero") {
    const Geometry g{{24, 24, 24}, {2, 2, 2}, {}};
    const Volume a = textured(g, 9), b = textured(g, 10);
    RegisterOptions o;
    o.pyramid.labels_per_level = 1;
    const auto r = register_pair(a, b, nullptr, Model{WeightMatrix::single(default_metrics(), {0.1, 10, 10, 10}, 0.05), {}, {}}, o);
    for (const auto& v : r.field.values()) CHECK(v == Vec3{});
    CHECK(r.steps.size() == 10);
}

TEST_CASE("pyramid registration: bound, refinement, energy and recovery") {
    const Model model{WeightMatrix::single(default_metrics(), {0.1, 10, 10, 10}, 0.05), {}, {}};
    RegisterOptions o;

    SUBCASE("self-registration stays put") {
        const auto p = synth_pair(small_spec(), 3, 0);
        const auto r = register_pair(p.source, p.source, &p.source_mask, model, o);
        double mean = 0.0;
        for (const auto& v : r.field.values()) mean += v.norm();
        mean /= static_cast<double>(r.field.size());
        CHECK(mean < 0.5);
        const auto warped = warp_mask(p.source_mask, DeformationField{{}, r.field});
        for (int c : {1, 2}) CHECK(mask_dice(warped, p.source_mask, c) >= 1.0);
    }

    SUBCASE("translation recovery") {
        auto spec = small_spec();
        spec.deformation = GroundTruth::Translation;
        spec.translation_mm = {6, 0, 0};
        const auto p = synth_pair(spec, 4, 0);
        const auto r = register_pair(p.source, p.target, &p.source_mask, model, o);
        double err = 0.0;
        int n = 0;
        for (std::size_t i = 0; i < p.target_mask.size(); ++i) {
            if (!p.target_mask[i]) continue;
            err += (r.field[i] - p.ground_truth[i]).norm();
            ++n;
        }
        REQUIRE(n > 0);
        CHECK(err / n <= 2.5);

        REQUIRE(r.steps.size() == 10);
        for (std::size_t k = 0; k < r.steps.size(); ++k) {
            const auto& d = r.steps[k];
            CHECK(d.max_component_mm <= 0.4 * d.spacing_mm + 1e-9);
            CHECK(d.energy_after <= d.energy_before);
            if (k > 0 && r.steps[k - 1].level == d.level) {
                CHECK(d.max_norm_mm == doctest::Approx(0.7 * r.steps[k - 1].max_norm_mm).epsilon(1e-12));
            }
        }
        CHECK(r.steps.front().spacing_mm == 50.0);
        CHECK(r.steps.back().spacing_mm == 25.0);
        const auto text = format_diagnostics(r.steps);
        CHECK(std::count(text.begin(), text.end(), '\n') == 11);
    }
}

TEST_CASE("register_pair argument checks") {
    const Geometry g{{16, 16, 16}, {2, 2, 2}, {}};
    const Geometry h{{16, 16, 12}, {2, 2, 2}, {}};
    const Volume a = textured(g, 1), b = textured(h, 2);
    const Model single{WeightMatrix::single(default_metrics(), {0.1, 10, 10, 10}, 0.05), {}, {}};
    CHECK_THROWS_AS(register_pair(a, b, nullptr, single, {}), Error);
    const Model multi{WeightMatrix(default_metrics(), {0, 1}, {{0.1, 10, 10, 10}, {1, 1, 1, 1}}, {0.05, 0.05}), {}, {}};
    try {
        register_pair(a, a, nullptr, multi, {});
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
    }
    for (double s : calibrate_scales(a, textured(g, 3), MetricRegistry(), 25)) CHECK(s > 0.0);
}
