#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "mmreg/io.hpp"
#include "mmreg/volume.hpp"

using namespace mmreg;

namespace {

// Centred cubic B-spline kernel, written from its piecewise definition.
double bspline_kernel(double u) {
    u = std::abs(u);
    if (u < 1.0) return 2.0 / 3.0 - u * u + 0.5 * u * u * u;
    if (u < 2.0) return (2.0 - u) * (2.0 - u) * (2.0 - u) / 6.0;
    return 0.0;
}

Volume random_volume(const Geometry& g, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Volume v(g);
    for (auto& x : v.data()) x = u(rng);
    return v;
}

DeformationField constant_field(const Geometry& g, const Vec3& d) {
    return {{}, DenseField(g, d)};
}

Geometry geom(int nx, int ny, int nz, double s = 1.0) { return {{nx, ny, nz}, {s, s, s}, {}}; }

}  // namespace

TEST_CASE("geometry validation") {
    CHECK_THROWS_AS(Volume(geom(0, 1, 1)), Error);
    Geometry g = geom(2, 2, 2);
    g.spacing.y = 0.0;
    CHECK_THROWS_AS(g.validate(), Error);
    CHECK_THROWS_AS(Volume(geom(2, 2, 2), std::vector<float>(7)), Error);
}

TEST_CASE("control grid covers the volume and has lattice edges") {
    const Geometry g{{64, 64, 64}, {2.0, 2.0, 2.0}, {0.0, 0.0, 0.0}};
    const auto grid = ControlGrid::covering(g, {25.0, 25.0, 25.0});
    // extent 126mm -> 5 interior intervals + padding
    CHECK(grid.dims() == Dims{9, 9, 9});
    CHECK(grid.origin() == Vec3{-25.0, -25.0, -25.0});
    const Dims d = grid.dims();
    const std::size_t expected = static_cast<std::size_t>((d.x - 1) * d.y * d.z + d.x * (d.y - 1) * d.z + d.x * d.y * (d.z - 1));
    CHECK(grid.edges().size() == expected);
    for (int a = 0; a < 3; ++a) {
        CHECK(grid.point(0)[a] <= g.origin[a]);
        const double last = grid.origin()[a] + (d[a] - 1) * grid.spacing()[a];
        CHECK(last >= g.origin[a] + (g.dims[a] - 1) * g.spacing[a]);
    }
}

TEST_CASE("dense interpolation: zero and constant fields") {
    const Geometry g{{20, 17, 13}, {1.5, 2.0, 2.5}, {3.0, -1.0, 0.5}};
    const auto grid = ControlGrid::covering(g, {10.0, 12.0, 9.0});
    DeformationField zero{std::vector<Vec3>(grid.size()), std::nullopt};
    const auto dz = interpolate_dense(grid, zero, g);
    for (const auto& v : dz.dense->data()) CHECK(v == Vec3{});

    DeformationField c{std::vector<Vec3>(grid.size(), Vec3{5.0, -2.0, 0.25}), std::nullopt};
    const auto dc = interpolate_dense(grid, c, g);
    for (const auto& v : dc.dense->data()) {
        CHECK(std::abs(v.x - 5.0) < 1e-6);
        CHECK(std::abs(v.y + 2.0) < 1e-6);
        CHECK(std::abs(v.z - 0.25) < 1e-6);
    }
}

TEST_CASE("dense interpolation matches a tensor-product kernel oracle") {
    const Geometry g{{30, 30, 30}, {1.0, 1.0, 1.0}, {}};
    const Vec3 spacing{6.0, 6.0, 6.0};
    const auto grid = ControlGrid::covering(g, spacing);
    std::vector<Vec3> sparse(grid.size());
    const std::size_t node = grid.node_id(3, 2, 4);
    const Vec3 d{1.0, -2.0, 3.0};
    sparse[node] = d;
    const auto dense = interpolate_dense(grid, {sparse, std::nullopt}, g);
    const Vec3 p = grid.point(node);
    const auto vox = g.nearest_voxel(p);
    REQUIRE(vox);
    const double central = bspline_kernel(0.0) * bspline_kernel(0.0) * bspline_kernel(0.0);
    const Vec3 at = (*dense.dense)(vox->x, vox->y, vox->z);
    CHECK(at.x == doctest::Approx(central * d.x).epsilon(1e-12));
    CHECK(at.z == doctest::Approx(central * d.z).epsilon(1e-12));

    std::mt19937 rng(3);
    for (auto& v : sparse) v = {std::normal_distribution<>()(rng), std::normal_distribution<>()(rng), 0.0};
    const auto full = interpolate_dense(grid, {sparse, std::nullopt}, g);
    for (int trial = 0; trial < 200; ++trial) {
        const int x = static_cast<int>(rng() % 30), y = static_cast<int>(rng() % 30), z = static_cast<int>(rng() % 30);
        const Vec3 mm = g.to_physical({x, y, z});
        Vec3 expect;
        for (std::size_t n = 0; n < grid.size(); ++n) {
            const Vec3 q = grid.point(n);
            const double w = bspline_kernel((mm.x - q.x) / spacing.x) * bspline_kernel((mm.y - q.y) / spacing.y) *
                             bspline_kernel((mm.z - q.z) / spacing.z);
            expect = expect + w * sparse[n];
        }
        const Vec3 got = (*full.dense)(x, y, z);
        CHECK(std::abs(got.x - expect.x) < 1e-9);
        CHECK(std::abs(got.y - expect.y) < 1e-9);
    }
}

TEST_CASE("interpolate_dense rejects a mismatched sparse field") {
    const Geometry g = geom(8, 8, 8);
    const auto grid = ControlGrid::covering(g, {4.0, 4.0, 4.0});
    CHECK_THROWS_AS(interpolate_dense(grid, {std::vector<Vec3>(3), std::nullopt}, g), Error);
}

TEST_CASE("warp: identity, integral shift and half-voxel shift") {
    const Geometry g{{9, 7, 5}, {2.0, 1.0, 3.0}, {}};
    const Volume v = random_volume(g, 7);
    CHECK(warp(v, constant_field(g, {})) == v);

    const Volume s = warp(v, constant_field(g, {2.0, 0.0, 0.0}), -1.0f);
    for (int z = 0; z < 5; ++z) {
        for (int y = 0; y < 7; ++y) {
            for (int x = 0; x < 8; ++x) CHECK(s(x, y, z) == v(x + 1, y, z));
            CHECK(s(8, y, z) == -1.0f);
        }
    }

    const Volume h = warp(v, constant_field(g, {1.0, 0.0, 0.0}));
    for (int z = 0; z < 5; ++z) {
        for (int y = 0; y < 7; ++y) {
            for (int x = 0; x < 8; ++x) {
                const double expect = 0.5 * v(x, y, z) + 0.5 * v(x + 1, y, z);
                CHECK(h(x, y, z) == doctest::Approx(expect).epsilon(1e-6));
            }
        }
    }
    CHECK_THROWS_AS(warp(v, DeformationField{}), Error);
}

TEST_CASE("warp matches a per-voxel trilinear oracle") {
    const Geometry g = geom(10, 10, 10);
    const Volume v = random_volume(g, 11);
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    DenseField f(g);
    for (auto& d : f.data()) d = {u(rng), u(rng), u(rng)};
    const Volume w = warp(v, {{}, f});
    for (int z = 0; z < 10; ++z) {
        for (int y = 0; y < 10; ++y) {
            for (int x = 0; x < 10; ++x) {
                const Vec3 c = Vec3{double(x), double(y), double(z)} + f(x, y, z);
                double expect = 0.0;
                bool inside = true;
                for (int a = 0; a < 3; ++a) inside = inside && c[a] >= 0.0 && c[a] <= 9.0;
                if (inside) {
                    for (int corner = 0; corner < 8; ++corner) {
                        double wt = 1.0;
                        int idx[3];
                        for (int a = 0; a < 3; ++a) {
                            const int base = std::min(static_cast<int>(std::floor(c[a])), 8);
                            const double fr = c[a] - base;
                            const int bit = (corner >> a) & 1;
                            idx[a] = base + bit;
                            wt *= bit ? fr : 1.0 - fr;
                        }
                        if (wt != 0.0) expect += wt * v(idx[0], idx[1], idx[2]);
                    }
                }
                CHECK(w(x, y, z) == doctest::Approx(expect).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("warp_mask: identity, shift and label closure") {
    const Geometry g = geom(8, 8, 8);
    SegmentationMask m(g);
    std::mt19937 rng(2);
    for (auto& v : m.data()) v = static_cast<std::uint8_t>(std::array<int, 3>{0, 2, 5}[rng() % 3]);
    CHECK(warp_mask(m, constant_field(g, {})) == m);
    const auto s = warp_mask(m, constant_field(g, {0.0, 1.0, 0.0}));
    for (int z = 0; z < 8; ++z) {
        for (int x = 0; x < 8; ++x) {
            for (int y = 0; y < 7; ++y) CHECK(s(x, y, z) == m(x, y + 1, z));
            CHECK(s(x, 7, z) == 0);
        }
    }
    DenseField f(g);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (auto& d : f.data()) d = {u(rng), u(rng), u(rng)};
    const auto warped = warp_mask(m, {{}, f});
    for (auto v : warped.data()) CHECK((v == 0 || v == 2 || v == 5));
}

TEST_CASE("extract_patch: examples") {
    const Geometry g = geom(16, 16, 16);
    Volume v(g);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i);
    const auto p = extract_patch(v, {8.0, 8.0, 8.0}, {0, 0, 0});
    REQUIRE(p.count() == 1);
    CHECK(p.values[0] == v(8, 8, 8));

    const auto corner = extract_patch(v, {0.0, 0.0, 0.0}, {3, 3, 3});
    CHECK(corner.count() == 64);

    const auto edge = extract_patch(v, {13.0, 8.0, 8.0}, {3, 3, 3});
    CHECK(edge.size.x == 6);
    CHECK(edge.lo.x == 10);

    CHECK(extract_patch(v, {-5.0, 8.0, 8.0}, {1, 1, 1}).empty());
    CHECK_THROWS_AS(extract_patch(v, {1.0, 1.0, 1.0}, {-1, 0, 0}), Error);
}

TEST_CASE("extract_patch voxel count equals the cropped box size everywhere on 8^3") {
    const Geometry g = geom(8, 8, 8);
    const Volume v(g, 1.0f);
    for (int r = 0; r <= 4; ++r) {
        for (int z = 0; z < 8; ++z) {
            for (int y = 0; y < 8; ++y) {
                for (int x = 0; x < 8; ++x) {
                    const auto p = extract_patch(v, {double(x), double(y), double(z)}, {r, r, r});
                    std::size_t expect = 1;
                    for (int c : {x, y, z}) expect *= static_cast<std::size_t>(std::min(7, c + r) - std::max(0, c - r) + 1);
                    CHECK(p.count() == expect);
                }
            }
        }
    }
}

TEST_CASE("patch extent follows the control spacing") {
    CHECK(patch_extent({25.0, 25.0, 25.0}, {2.0, 2.0, 2.0}) == Index3{6, 6, 6});
    CHECK(patch_extent({10.0, 4.0, 2.0}, {1.0, 1.0, 1.0}) == Index3{5, 2, 1});
}

TEST_CASE("label space keeps the zero vector first and scales exactly") {
    CHECK_THROWS_AS(LabelSpace({Vec3{1.0, 0.0, 0.0}}), Error);
    const LabelSpace ls({Vec3{}, Vec3{1.0, -2.0, 0.5}}, 4.0);
    const auto s = ls.scaled(0.7);
    CHECK(s.max_norm_mm() == 0.7 * 4.0);
    CHECK(s[1].y == 0.7 * -2.0);
}

TEST_CASE("downsampling halves the lattice and keeps constants") {
    const Geometry g{{9, 8, 1}, {1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}};
    const Volume v(g, 3.0f);
    const Volume d = downsample(v);
    CHECK(d.dims() == Dims{5, 4, 1});
    CHECK(d.spacing() == Vec3{2.0, 4.0, 3.0});
    CHECK(d.origin() == g.origin);
    for (auto x : d.data()) CHECK(x == doctest::Approx(3.0));
    SegmentationMask m(g, 4);
    const auto dm = downsample_mask(m);
    CHECK(dm.dims() == d.dims());
    for (auto x : dm.data()) CHECK(x == 4);
}

TEST_CASE("resample_field on the same lattice is the identity") {
    const Geometry g = geom(5, 6, 7);
    DenseField f(g);
    std::mt19937 rng(1);
    for (auto& v : f.data()) v = {double(rng() % 7), double(rng() % 5), 0.5};
    CHECK(resample_field(f, g) == f);
}

TEST_CASE("mask helpers") {
    const Geometry g = geom(4, 4, 4);
    SegmentationMask m(g);
    m(1, 1, 1) = 3;
    m(2, 2, 2) = 1;
    CHECK(mask_classes(m) == std::vector<int>{1, 3});
    const auto b = binary_mask(m, 3);
    CHECK(b(1, 1, 1) == 1);
    CHECK(b(2, 2, 2) == 0);
    CHECK_THROWS_AS(check_mask_alignment(m, geom(4, 4, 5)), Error);
}

TEST_CASE("volume, mask and field files round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "mmreg_test_volume_io";
    std::filesystem::create_directories(dir);
    const Geometry g{{5, 4, 3}, {0.5, 1.25, 3.0}, {-1.0, 2.0, 0.1}};
    const Volume v = random_volume(g, 9);
    write_volume(dir / "v.hdr", v);
    CHECK(read_volume(dir / "v.hdr") == v);

    SegmentationMask m(g);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<std::uint8_t>(i % 3);
    write_mask(dir / "m.hdr", m);
    CHECK(read_mask(dir / "m.hdr") == m);

    DenseField f(g);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = {0.5 * double(i), -1.0, 2.25};
    write_field(dir / "f.hdr", f);
    CHECK(read_field(dir / "f.hdr") == f);

    CHECK_THROWS_AS(read_volume(dir / "missing.hdr"), Error);
    write_text_file(dir / "bad.hdr", "dims: 2 2\nspacing: 1 1 1\ndtype: f32\ndata: v.raw\n");
    CHECK_THROWS_AS(read_volume(dir / "bad.hdr"), Error);
    write_text_file(dir / "short.hdr", "dims: 9 9 9\nspacing: 1 1 1\ndtype: f32\ndata: v.raw\n");
    CHECK_THROWS_AS(read_volume(dir / "short.hdr"), Error);
    std::filesystem::remove_all(dir);
}
