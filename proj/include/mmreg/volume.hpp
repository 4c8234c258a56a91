#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmreg/types.hpp"

namespace mmreg {

/// Sampling lattice of a volume: voxel counts, voxel size in mm and the
/// physical position of voxel (0,0,0). Voxel (i,j,k) sits at origin + (i,j,k)*spacing.
struct Geometry {
    Dims dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin;

    void validate() const;
    Vec3 to_physical(const Index3& idx) const {
        return {origin.x + idx.x * spacing.x, origin.y + idx.y * spacing.y, origin.z + idx.z * spacing.z};
    }
    Vec3 to_continuous_index(const Vec3& mm) const {
        return {(mm.x - origin.x) / spacing.x, (mm.y - origin.y) / spacing.y, (mm.z - origin.z) / spacing.z};
    }
    /// Voxel nearest to a physical point; nullopt when that voxel lies outside the lattice.
    std::optional<Index3> nearest_voxel(const Vec3& mm) const;

    friend bool operator==(const Geometry&, const Geometry&) = default;
};

/// Dense 3D grid of values in x-fastest order.
template <typename T>
class Image {
public:
    using value_type = T;

    Image() = default;
    Image(const Geometry& geometry, T fill = T{}) : geometry_(geometry) {
        geometry_.validate();
        data_.assign(geometry_.dims.count(), fill);
    }
    Image(const Geometry& geometry, std::vector<T> data) : geometry_(geometry), data_(std::move(data)) {
        geometry_.validate();
        if (data_.size() != geometry_.dims.count()) {
            throw Error(ErrorKind::Structural, "image data length " + std::to_string(data_.size()) +
                                                   " does not match dims (" + std::to_string(geometry_.dims.count()) + ")");
        }
    }

    const Geometry& geometry() const { return geometry_; }
    const Dims& dims() const { return geometry_.dims; }
    const Vec3& spacing() const { return geometry_.spacing; }
    const Vec3& origin() const { return geometry_.origin; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<const T> data() const { return data_; }
    std::span<T> data() { return data_; }
    const std::vector<T>& values() const { return data_; }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(geometry_.dims.x) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(geometry_.dims.y) * static_cast<std::size_t>(z));
    }
    T& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }
    const T& operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    bool contains(int x, int y, int z) const {
        return x >= 0 && y >= 0 && z >= 0 && x < geometry_.dims.x && y < geometry_.dims.y && z < geometry_.dims.z;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    Geometry geometry_;
    std::vector<T> data_;
};

using Volume = Image<float>;
using SegmentationMask = Image<std::uint8_t>;
using DenseField = Image<Vec3>;

/// Throws unless every mask voxel lies in {0} ∪ classes and the geometry matches.
void check_mask_alignment(const SegmentationMask& mask, const Geometry& geometry);

/// Sorted class ids present in a mask, background excluded.
std::vector<int> mask_classes(const SegmentationMask& mask);

/// 1 where mask == label, else 0.
SegmentationMask binary_mask(const SegmentationMask& mask, int label);

struct Edge {
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    friend bool operator==(const Edge&, const Edge&) = default;
};

/// Regular lattice of FFD control points with its 6-neighbourhood graph.
/// Node i = x + gx*(y + gy*z).
class ControlGrid {
public:
    ControlGrid(const Dims& grid_dims, const Vec3& spacing_mm, const Vec3& origin_mm);

    /// Grid with the given spacing whose cubic B-spline support covers every
    /// voxel of `volume`: one control point of padding before the first voxel
    /// and enough after the last one for a full 4x4x4 neighbourhood.
    static ControlGrid covering(const Geometry& volume, const Vec3& spacing_mm);

    const Dims& dims() const { return dims_; }
    const Vec3& spacing() const { return spacing_; }
    const Vec3& origin() const { return origin_; }
    std::size_t size() const { return dims_.count(); }
    const std::vector<Edge>& edges() const { return edges_; }

    Index3 node_index(std::size_t node) const;
    std::size_t node_id(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims_.x) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims_.y) * static_cast<std::size_t>(z));
    }
    Vec3 point(std::size_t node) const;

    /// Node whose tile contains the physical point (nearest control point, clamped).
    std::size_t nearest_node(const Vec3& mm) const;

private:
    Dims dims_;
    Vec3 spacing_;
    Vec3 origin_;
    std::vector<Edge> edges_;
};

/// Catalogue of candidate displacements (mm). Label 0 is always the zero vector.
class LabelSpace {
public:
    explicit LabelSpace(std::vector<Vec3> displacements);
    LabelSpace(std::vector<Vec3> displacements, double max_norm_mm);

    std::size_t size() const { return displacements_.size(); }
    const Vec3& operator[](std::size_t label) const { return displacements_[label]; }
    const std::vector<Vec3>& displacements() const { return displacements_; }
    /// Per-axis displacement bound of this catalogue.
    double max_norm_mm() const { return max_norm_mm_; }

    LabelSpace scaled(double factor) const;

private:
    std::vector<Vec3> displacements_;
    double max_norm_mm_ = 0.0;
};

/// Sparse (one vector per control node) and optionally dense (one vector per voxel) displacements.
struct DeformationField {
    std::vector<Vec3> sparse;
    std::optional<DenseField> dense;
};

/// Cubic B-spline basis values for the four nodes around fractional offset t in [0,1).
void bspline_basis(double t, double out[4]);

/// FFD displacement at a physical point. Nodes outside the grid contribute nothing.
Vec3 evaluate_ffd(const ControlGrid& grid, std::span<const Vec3> sparse, const Vec3& point_mm);

DeformationField interpolate_dense(const ControlGrid& grid, const DeformationField& sparse_field,
                                   const Geometry& target, int threads = 1);

/// Trilinear sample at a continuous voxel index; fill outside [0, n-1] on any axis.
double sample_linear(const Volume& vol, const Vec3& cindex, double fill);

/// Trilinear sample of a dense field at a physical point, clamped to the lattice.
Vec3 sample_field(const DenseField& field, const Vec3& mm);

/// out(x) = vol(x + d(x)), trilinear; samples outside the volume take `fill`.
Volume warp(const Volume& vol, const DeformationField& field, float fill = 0.0f, int threads = 1);

/// As warp, but samples outside the volume take the nearest edge value.
Volume warp_clamped(const Volume& vol, const DeformationField& field, int threads = 1);

/// Nearest-neighbour variant of warp; out-of-bounds voxels become background.
SegmentationMask warp_mask(const SegmentationMask& mask, const DeformationField& field, int threads = 1);

/// Axis-aligned block of voxels cropped to the lattice.
template <typename T>
struct Patch {
    Index3 lo;   // first voxel (inclusive)
    Dims size{0, 0, 0};
    std::vector<T> values;

    std::size_t count() const { return values.size(); }
    bool empty() const { return values.empty(); }
};

/// Block of half-width `extent` around the voxel nearest to `center_mm`.
/// Empty when that voxel falls outside the volume.
template <typename T>
Patch<T> extract_patch(const Image<T>& image, const Vec3& center_mm, const Index3& extent);

/// Patch half-width (voxels per axis) for a control spacing: round(0.5 * spacing / voxel).
Index3 patch_extent(const Vec3& control_spacing, const Vec3& voxel_spacing);

/// One level of a factor-2 Gaussian pyramid: binomial smoothing then decimation.
Volume downsample(const Volume& vol);
SegmentationMask downsample_mask(const SegmentationMask& mask);

/// Displacements (mm) at every voxel of `geometry`, drawn from `field` by trilinear sampling.
DenseField resample_field(const DenseField& field, const Geometry& geometry, int threads = 1);

}  // namespace mmreg
