#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mmreg/volume.hpp"

namespace mmreg {

// Dataset manifest: CSV with the header `source,target,source_mask,target_mask`,
// one pair per row. Relative paths resolve against the manifest's directory.
struct DatasetEntry {
    std::string source;
    std::string target;
    std::string source_mask;
    std::string target_mask;
};

struct LoadedPair {
    Volume source;
    Volume target;
    SegmentationMask source_mask;
    SegmentationMask target_mask;
};

/// Throws IO naming the offending row (1-based, header is row 1).
std::vector<DatasetEntry> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<DatasetEntry>& entries);

/// Paths of `entry` resolved against `base`.
DatasetEntry resolve_entry(const DatasetEntry& entry, const std::filesystem::path& base);

/// "<index>_<source stem>", the pair id used in reports and logs.
std::string pair_label(const DatasetEntry& entry, std::size_t index);

/// Reads all four files of a resolved entry and checks their alignment.
LoadedPair load_pair(const DatasetEntry& entry);

}  // namespace mmreg
