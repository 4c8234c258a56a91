#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mmreg/volume.hpp"

namespace mmreg {

enum class GroundTruth { Identity, Translation, Smooth };

/// Two-region phantom. Region A (x below the midplane) keeps matched
/// intensities; its target carries a +-pattern_amplitude voxel checkerboard,
/// which cancels in every 2x2x2 block average and in the pyramid's binomial
/// smoothing but dilutes correlation and histogram statistics. Region B (x at
/// or above the midplane) is remapped monotonically in the target. Organ k
/// sits in region A for even k and region B for odd k, with class id k + 1.
struct SynthSpec {
    Dims dims{64, 64, 64};
    double spacing_mm = 2.0;
    int pairs = 1;
    int organs = 2;
    double organ_radius_min_mm = 10.0;
    double organ_radius_max_mm = 14.0;
    double organ_contrast = 0.4;
    double background = 0.3;
    double texture_amplitude = 0.1;
    int texture_blobs = 400;
    GroundTruth deformation = GroundTruth::Smooth;
    Vec3 translation_mm{6.0, 0.0, 0.0};
    double gt_amplitude_mm = 8.0;
    double gt_spacing_mm = 64.0;
    double gt_bound_mm = 10.0;
    double noise_sigma = 0.002;
    double pattern_amplitude = 0.0;
    bool remap = true;
    double remap_offset = 0.45;
    double remap_gain = 0.5;
    double remap_gamma = 2.0;

    /// Throws Config on invalid values, including a ground truth above gt_bound_mm.
    void validate() const;
};

/// key=value lines; unknown keys are rejected.
SynthSpec parse_synth_spec(std::string_view text);
std::string format_synth_spec(const SynthSpec& spec);

struct SynthPair {
    Volume source;
    Volume target;
    SegmentationMask source_mask;
    SegmentationMask target_mask;
    DenseField ground_truth;  // target(x) = remap(source(x + gt(x)))
};

/// Deterministic in (spec, seed).
SynthPair synth_pair(const SynthSpec& spec, std::uint64_t seed, int index);
std::vector<SynthPair> synth_dataset(const SynthSpec& spec, std::uint64_t seed);

/// Writes pairNNN_{source,target,source_mask,target_mask,gt}.hdr files plus
/// manifest.csv into `dir`; returns the manifest path.
std::filesystem::path write_synth_dataset(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& dir);

}  // namespace mmreg
