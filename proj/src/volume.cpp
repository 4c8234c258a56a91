#include "mmreg/volume.hpp"

#include <algorithm>
#include <array>
#include <set>

#include "mmreg/parallel.hpp"

namespace mmreg {

void Geometry::validate() const {
    if (dims.x < 1 || dims.y < 1 || dims.z < 1) {
        throw Error(ErrorKind::Structural, "volume dims must be >= 1 on every axis");
    }
    if (!(spacing.x > 0.0) || !(spacing.y > 0.0) || !(spacing.z > 0.0)) {
        throw Error(ErrorKind::Structural, "volume spacing must be > 0 on every axis");
    }
}

std::optional<Index3> Geometry::nearest_voxel(const Vec3& mm) const {
    const Vec3 c = to_continuous_index(mm);
    const Index3 idx{static_cast<int>(std::lround(c.x)), static_cast<int>(std::lround(c.y)),
                     static_cast<int>(std::lround(c.z))};
    for (int a = 0; a < 3; ++a) {
        if (!std::isfinite(c[a]) || idx[a] < 0 || idx[a] >= dims[a]) return std::nullopt;
    }
    return idx;
}

void check_mask_alignment(const SegmentationMask& mask, const Geometry& geometry) {
    if (!(mask.geometry() == geometry)) {
        throw Error(ErrorKind::Structural, "segmentation mask geometry does not match its volume");
    }
}

std::vector<int> mask_classes(const SegmentationMask& mask) {
    std::array<bool, 256> seen{};
    for (auto v : mask.data()) seen[v] = true;
    std::vector<int> out;
    for (int c = 1; c < 256; ++c) {
        if (seen[c]) out.push_back(c);
    }
    return out;
}

SegmentationMask binary_mask(const SegmentationMask& mask, int label) {
    SegmentationMask out(mask.geometry());
    auto src = mask.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] == label ? 1 : 0;
    return out;
}

// ---------------------------------------------------------------------------

ControlGrid::ControlGrid(const Dims& grid_dims, const Vec3& spacing_mm, const Vec3& origin_mm)
    : dims_(grid_dims), spacing_(spacing_mm), origin_(origin_mm) {
    if (dims_.x < 1 || dims_.y < 1 || dims_.z < 1) {
        throw Error(ErrorKind::Structural, "control grid dims must be >= 1");
    }
    if (!(spacing_.x > 0.0) || !(spacing_.y > 0.0) || !(spacing_.z > 0.0)) {
        throw Error(ErrorKind::Structural, "control grid spacing must be > 0");
    }
    for (int z = 0; z < dims_.z; ++z) {
        for (int y = 0; y < dims_.y; ++y) {
            for (int x = 0; x < dims_.x; ++x) {
                const auto i = static_cast<std::uint32_t>(node_id(x, y, z));
                if (x + 1 < dims_.x) edges_.push_back({i, static_cast<std::uint32_t>(node_id(x + 1, y, z))});
                if (y + 1 < dims_.y) edges_.push_back({i, static_cast<std::uint32_t>(node_id(x, y + 1, z))});
                if (z + 1 < dims_.z) edges_.push_back({i, static_cast<std::uint32_t>(node_id(x, y, z + 1))});
            }
        }
    }
}

ControlGrid ControlGrid::covering(const Geometry& volume, const Vec3& spacing_mm) {
    volume.validate();
    Dims d;
    int* counts[3] = {&d.x, &d.y, &d.z};
    for (int a = 0; a < 3; ++a) {
        if (!(spacing_mm[a] > 0.0)) throw Error(ErrorKind::Structural, "control grid spacing must be > 0");
        const double extent = (volume.dims[a] - 1) * volume.spacing[a];
        *counts[a] = static_cast<int>(std::floor(extent / spacing_mm[a] + 1e-9)) + 4;
    }
    return ControlGrid(d, spacing_mm, volume.origin - spacing_mm);
}

Index3 ControlGrid::node_index(std::size_t node) const {
    const auto gx = static_cast<std::size_t>(dims_.x);
    const auto gy = static_cast<std::size_t>(dims_.y);
    return {static_cast<int>(node % gx), static_cast<int>((node / gx) % gy), static_cast<int>(node / (gx * gy))};
}

Vec3 ControlGrid::point(std::size_t node) const {
    const Index3 n = node_index(node);
    return {origin_.x + n.x * spacing_.x, origin_.y + n.y * spacing_.y, origin_.z + n.z * spacing_.z};
}

std::size_t ControlGrid::nearest_node(const Vec3& mm) const {
    int k[3];
    for (int a = 0; a < 3; ++a) {
        const double t = (mm[a] - origin_[a]) / spacing_[a];
        k[a] = std::clamp(static_cast<int>(std::floor(t + 0.5)), 0, dims_[a] - 1);
    }
    return node_id(k[0], k[1], k[2]);
}

// ---------------------------------------------------------------------------

LabelSpace::LabelSpace(std::vector<Vec3> displacements) : displacements_(std::move(displacements)) {
    if (displacements_.empty() || !(displacements_.front() == Vec3{})) {
        throw Error(ErrorKind::Structural, "label 0 of a label space must be the zero displacement");
    }
    for (const auto& d : displacements_) max_norm_mm_ = std::max(max_norm_mm_, d.max_abs());
}

LabelSpace::LabelSpace(std::vector<Vec3> displacements, double max_norm_mm) : LabelSpace(std::move(displacements)) {
    max_norm_mm_ = max_norm_mm;
}

LabelSpace LabelSpace::scaled(double factor) const {
    std::vector<Vec3> out;
    out.reserve(displacements_.size());
    for (const auto& d : displacements_) out.push_back(factor * d);
    return LabelSpace(std::move(out), factor * max_norm_mm_);
}

// ---------------------------------------------------------------------------

void bspline_basis(double t, double out[4]) {
    const double t2 = t * t;
    const double t3 = t2 * t;
    const double m = 1.0 - t;
    out[0] = m * m * m / 6.0;
    out[1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0;
    out[2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0;
    out[3] = t3 / 6.0;
}

namespace {

struct AxisSupport {
    int first = 0;  // node index of the first of the four supporting nodes
    double weight[4] = {0, 0, 0, 0};
};

AxisSupport axis_support(double grid_coord) {
    AxisSupport s;
    const double cell = std::floor(grid_coord);
    bspline_basis(grid_coord - cell, s.weight);
    s.first = static_cast<int>(cell) - 1;
    return s;
}

Vec3 combine_support(const ControlGrid& grid, std::span<const Vec3> sparse, const AxisSupport& sx,
                     const AxisSupport& sy, const AxisSupport& sz) {
    const Dims& gd = grid.dims();
    Vec3 acc;
    for (int c = 0; c < 4; ++c) {
        const int nz = sz.first + c;
        if (nz < 0 || nz >= gd.z || sz.weight[c] == 0.0) continue;
        for (int b = 0; b < 4; ++b) {
            const int ny = sy.first + b;
            if (ny < 0 || ny >= gd.y || sy.weight[b] == 0.0) continue;
            const double wyz = sy.weight[b] * sz.weight[c];
            for (int a = 0; a < 4; ++a) {
                const int nx = sx.first + a;
                if (nx < 0 || nx >= gd.x || sx.weight[a] == 0.0) continue;
                const double w = sx.weight[a] * wyz;
                const Vec3& d = sparse[grid.node_id(nx, ny, nz)];
                acc.x += w * d.x;
                acc.y += w * d.y;
                acc.z += w * d.z;
            }
        }
    }
    return acc;
}

}  // namespace

Vec3 evaluate_ffd(const ControlGrid& grid, std::span<const Vec3> sparse, const Vec3& point_mm) {
    const auto sx = axis_support((point_mm.x - grid.origin().x) / grid.spacing().x);
    const auto sy = axis_support((point_mm.y - grid.origin().y) / grid.spacing().y);
    const auto sz = axis_support((point_mm.z - grid.origin().z) / grid.spacing().z);
    return combine_support(grid, sparse, sx, sy, sz);
}

DeformationField interpolate_dense(const ControlGrid& grid, const DeformationField& sparse_field,
                                   const Geometry& target, int threads) {
    if (sparse_field.sparse.size() != grid.size()) {
        throw Error(ErrorKind::Structural, "sparse field has " + std::to_string(sparse_field.sparse.size()) +
                                               " vectors but the control grid has " + std::to_string(grid.size()) +
                                               " nodes");
    }
    target.validate();
    std::array<std::vector<AxisSupport>, 3> support;
    for (int a = 0; a < 3; ++a) {
        support[a].resize(static_cast<std::size_t>(target.dims[a]));
        for (int i = 0; i < target.dims[a]; ++i) {
            const double mm = target.origin[a] + i * target.spacing[a];
            support[a][static_cast<std::size_t>(i)] = axis_support((mm - grid.origin()[a]) / grid.spacing()[a]);
        }
    }
    DenseField dense(target);
    const std::span<const Vec3> sparse(sparse_field.sparse);
    parallel_for(static_cast<std::size_t>(target.dims.z), threads, [&](std::size_t z) {
        for (int y = 0; y < target.dims.y; ++y) {
            for (int x = 0; x < target.dims.x; ++x) {
                dense(x, y, static_cast<int>(z)) =
                    combine_support(grid, sparse, support[0][static_cast<std::size_t>(x)],
                                    support[1][static_cast<std::size_t>(y)], support[2][z]);
            }
        }
    });
    return {sparse_field.sparse, std::move(dense)};
}

// ---------------------------------------------------------------------------

namespace {

// Lower index and fractional weight along one axis; false when outside [0, n-1].
inline bool linear_axis(double c, int n, int& i0, double& frac) {
    if (!(c >= 0.0) || c > n - 1) return false;
    i0 = static_cast<int>(c);
    frac = c - i0;
    if (i0 >= n - 1) {
        i0 = n - 1;
        frac = 0.0;
    }
    return true;
}

}  // namespace

double sample_linear(const Volume& vol, const Vec3& c, double fill) {
    const Dims& d = vol.dims();
    int ix, iy, iz;
    double fx, fy, fz;
    if (!linear_axis(c.x, d.x, ix, fx) || !linear_axis(c.y, d.y, iy, fy) || !linear_axis(c.z, d.z, iz, fz)) {
        return fill;
    }
    const int jx = fx > 0.0 ? ix + 1 : ix;
    const int jy = fy > 0.0 ? iy + 1 : iy;
    const int jz = fz > 0.0 ? iz + 1 : iz;
    const double c00 = vol(ix, iy, iz) * (1.0 - fx) + vol(jx, iy, iz) * fx;
    const double c10 = vol(ix, jy, iz) * (1.0 - fx) + vol(jx, jy, iz) * fx;
    const double c01 = vol(ix, iy, jz) * (1.0 - fx) + vol(jx, iy, jz) * fx;
    const double c11 = vol(ix, jy, jz) * (1.0 - fx) + vol(jx, jy, jz) * fx;
    const double c0 = c00 * (1.0 - fy) + c10 * fy;
    const double c1 = c01 * (1.0 - fy) + c11 * fy;
    return c0 * (1.0 - fz) + c1 * fz;
}

Vec3 sample_field(const DenseField& field, const Vec3& mm) {
    const Dims& d = field.dims();
    const Vec3 c = field.geometry().to_continuous_index(mm);
    int lo[3], hi[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        const double v = std::clamp(c[a], 0.0, static_cast<double>(d[a] - 1));
        lo[a] = std::min(static_cast<int>(v), d[a] - 1);
        f[a] = v - lo[a];
        hi[a] = std::min(lo[a] + 1, d[a] - 1);
    }
    Vec3 out;
    for (int k = 0; k < 2; ++k) {
        const double wz = k ? f[2] : 1.0 - f[2];
        if (wz == 0.0) continue;
        for (int j = 0; j < 2; ++j) {
            const double wy = j ? f[1] : 1.0 - f[1];
            if (wy == 0.0) continue;
            for (int i = 0; i < 2; ++i) {
                const double wx = i ? f[0] : 1.0 - f[0];
                if (wx == 0.0) continue;
                const Vec3& v = field(i ? hi[0] : lo[0], j ? hi[1] : lo[1], k ? hi[2] : lo[2]);
                const double w = wx * wy * wz;
                out.x += w * v.x;
                out.y += w * v.y;
                out.z += w * v.z;
            }
        }
    }
    return out;
}

namespace {

const DenseField& require_dense(const DeformationField& field, const Geometry& geometry) {
    if (!field.dense) throw Error(ErrorKind::Structural, "warp requires a dense deformation field");
    if (!(field.dense->dims() == geometry.dims)) {
        throw Error(ErrorKind::Structural, "dense field dims do not match the volume");
    }
    return *field.dense;
}

}  // namespace

Volume warp(const Volume& vol, const DeformationField& field, float fill, int threads) {
    const DenseField& d = require_dense(field, vol.geometry());
    Volume out(vol.geometry());
    const Vec3 sp = vol.spacing();
    const Dims dims = vol.dims();
    parallel_for(static_cast<std::size_t>(dims.z), threads, [&](std::size_t zz) {
        const int z = static_cast<int>(zz);
        for (int y = 0; y < dims.y; ++y) {
            for (int x = 0; x < dims.x; ++x) {
                const Vec3& v = d(x, y, z);
                const Vec3 c{x + v.x / sp.x, y + v.y / sp.y, z + v.z / sp.z};
                out(x, y, z) = static_cast<float>(sample_linear(vol, c, fill));
            }
        }
    });
    return out;
}

Volume warp_clamped(const Volume& vol, const DeformationField& field, int threads) {
    const DenseField& d = require_dense(field, vol.geometry());
    Volume out(vol.geometry());
    const Vec3 sp = vol.spacing();
    const Dims dims = vol.dims();
    parallel_for(static_cast<std::size_t>(dims.z), threads, [&](std::size_t zz) {
        const int z = static_cast<int>(zz);
        for (int y = 0; y < dims.y; ++y) {
            for (int x = 0; x < dims.x; ++x) {
                const Vec3& v = d(x, y, z);
                const Vec3 c{std::clamp(x + v.x / sp.x, 0.0, dims.x - 1.0), std::clamp(y + v.y / sp.y, 0.0, dims.y - 1.0),
                             std::clamp(z + v.z / sp.z, 0.0, dims.z - 1.0)};
                out(x, y, z) = static_cast<float>(sample_linear(vol, c, 0.0));
            }
        }
    });
    return out;
}

SegmentationMask warp_mask(const SegmentationMask& mask, const DeformationField& field, int threads) {
    const DenseField& d = require_dense(field, mask.geometry());
    SegmentationMask out(mask.geometry());
    const Vec3 sp = mask.spacing();
    const Dims dims = mask.dims();
    parallel_for(static_cast<std::size_t>(dims.z), threads, [&](std::size_t zz) {
        const int z = static_cast<int>(zz);
        for (int y = 0; y < dims.y; ++y) {
            for (int x = 0; x < dims.x; ++x) {
                const Vec3& v = d(x, y, z);
                const long sx = std::lround(x + v.x / sp.x);
                const long sy = std::lround(y + v.y / sp.y);
                const long sz = std::lround(z + v.z / sp.z);
                if (sx < 0 || sy < 0 || sz < 0 || sx >= dims.x || sy >= dims.y || sz >= dims.z) continue;
                out(x, y, z) = mask(static_cast<int>(sx), static_cast<int>(sy), static_cast<int>(sz));
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Patch<T> extract_patch(const Image<T>& image, const Vec3& center_mm, const Index3& extent) {
    if (extent.x < 0 || extent.y < 0 || extent.z < 0) {
        throw Error(ErrorKind::Input, "patch extent must be >= 0 on every axis");
    }
    Patch<T> patch;
    const auto center = image.geometry().nearest_voxel(center_mm);
    if (!center) return patch;
    const Dims& d = image.dims();
    int lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::max(0, (*center)[a] - extent[a]);
        hi[a] = std::min(d[a] - 1, (*center)[a] + extent[a]);
    }
    patch.lo = {lo[0], lo[1], lo[2]};
    patch.size = {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
    patch.values.reserve(patch.size.count());
    for (int z = lo[2]; z <= hi[2]; ++z) {
        for (int y = lo[1]; y <= hi[1]; ++y) {
            for (int x = lo[0]; x <= hi[0]; ++x) patch.values.push_back(image(x, y, z));
        }
    }
    return patch;
}

template Patch<float> extract_patch(const Image<float>&, const Vec3&, const Index3&);
template Patch<std::uint8_t> extract_patch(const Image<std::uint8_t>&, const Vec3&, const Index3&);

Index3 patch_extent(const Vec3& control_spacing, const Vec3& voxel_spacing) {
    return {static_cast<int>(std::lround(0.5 * control_spacing.x / voxel_spacing.x)),
            static_cast<int>(std::lround(0.5 * control_spacing.y / voxel_spacing.y)),
            static_cast<int>(std::lround(0.5 * control_spacing.z / voxel_spacing.z))};
}

// ---------------------------------------------------------------------------

namespace {

Geometry decimated(const Geometry& g) {
    Geometry out = g;
    for (int a = 0; a < 3; ++a) {
        const int n = g.dims[a];
        if (n > 1) {
            (a == 0 ? out.dims.x : a == 1 ? out.dims.y : out.dims.z) = (n + 1) / 2;
            out.spacing[a] = 2.0 * g.spacing[a];
        }
    }
    return out;
}

void smooth_axis(std::vector<float>& buf, const Dims& d, int axis) {
    static constexpr double kernel[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    const int n = d[axis];
    if (n == 1) return;
    const std::size_t stride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(d.x) : static_cast<std::size_t>(d.x) * d.y;
    std::vector<float> line(static_cast<std::size_t>(n));
    const std::size_t lines = d.count() / static_cast<std::size_t>(n);
    for (std::size_t l = 0; l < lines; ++l) {
        std::size_t base;
        if (axis == 0) {
            base = l * static_cast<std::size_t>(d.x);
        } else if (axis == 1) {
            base = (l % d.x) + (l / d.x) * static_cast<std::size_t>(d.x) * d.y;
        } else {
            base = l;
        }
        for (int i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = buf[base + static_cast<std::size_t>(i) * stride];
        for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int k = -2; k <= 2; ++k) {
                const int j = std::clamp(i + k, 0, n - 1);
                acc += kernel[k + 2] * line[static_cast<std::size_t>(j)];
            }
            buf[base + static_cast<std::size_t>(i) * stride] = static_cast<float>(acc);
        }
    }
}

}  // namespace

Volume downsample(const Volume& vol) {
    std::vector<float> buf(vol.data().begin(), vol.data().end());
    for (int a = 0; a < 3; ++a) smooth_axis(buf, vol.dims(), a);
    const Geometry g = decimated(vol.geometry());
    Volume out(g);
    const int sx = vol.dims().x > 1 ? 2 : 1;
    const int sy = vol.dims().y > 1 ? 2 : 1;
    const int sz = vol.dims().z > 1 ? 2 : 1;
    for (int z = 0; z < g.dims.z; ++z) {
        for (int y = 0; y < g.dims.y; ++y) {
            for (int x = 0; x < g.dims.x; ++x) out(x, y, z) = buf[vol.index(x * sx, y * sy, z * sz)];
        }
    }
    return out;
}

SegmentationMask downsample_mask(const SegmentationMask& mask) {
    const Geometry g = decimated(mask.geometry());
    SegmentationMask out(g);
    const int sx = mask.dims().x > 1 ? 2 : 1;
    const int sy = mask.dims().y > 1 ? 2 : 1;
    const int sz = mask.dims().z > 1 ? 2 : 1;
    for (int z = 0; z < g.dims.z; ++z) {
        for (int y = 0; y < g.dims.y; ++y) {
            for (int x = 0; x < g.dims.x; ++x) out(x, y, z) = mask(x * sx, y * sy, z * sz);
        }
    }
    return out;
}

DenseField resample_field(const DenseField& field, const Geometry& geometry, int threads) {
    DenseField out(geometry);
    parallel_for(static_cast<std::size_t>(geometry.dims.z), threads, [&](std::size_t zz) {
        const int z = static_cast<int>(zz);
        for (int y = 0; y < geometry.dims.y; ++y) {
            for (int x = 0; x < geometry.dims.x; ++x) {
                out(x, y, z) = sample_field(field, geometry.to_physical({x, y, z}));
            }
        }
    });
    return out;
}

}  // namespace mmreg
