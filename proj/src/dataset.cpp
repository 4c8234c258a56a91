#include "mmreg/dataset.hpp"

#include <cstdio>

#include "mmreg/io.hpp"

namespace mmreg {

namespace {

constexpr const char* kHeader = "source,target,source_mask,target_mask";

}  // namespace

std::vector<DatasetEntry> read_manifest(const std::filesystem::path& manifest) {
    const std::string text = read_text_file(manifest);
    const auto lines = split(text, '\n');
    std::vector<DatasetEntry> out;
    bool header = false;
    int row = 0;
    for (const auto& raw : lines) {
        ++row;
        const auto line = trim(raw);
        if (line.empty()) continue;
        if (!header) {
            if (line != kHeader) {
                throw Error(ErrorKind::IO, manifest.string() + ": row " + std::to_string(row) +
                                               ": expected header '" + kHeader + "'");
            }
            header = true;
            continue;
        }
        const auto cols = split(line, ',');
        if (cols.size() != 4) {
            throw Error(ErrorKind::IO, manifest.string() + ": row " + std::to_string(row) + ": expected 4 columns, got " +
                                           std::to_string(cols.size()));
        }
        DatasetEntry e{std::string(trim(cols[0])), std::string(trim(cols[1])), std::string(trim(cols[2])),
                       std::string(trim(cols[3]))};
        if (e.source.empty() || e.target.empty() || e.source_mask.empty() || e.target_mask.empty()) {
            throw Error(ErrorKind::IO, manifest.string() + ": row " + std::to_string(row) + ": empty path");
        }
        out.push_back(resolve_entry(e, manifest.parent_path()));
    }
    if (!header) throw Error(ErrorKind::IO, manifest.string() + ": empty manifest");
    return out;
}

void write_manifest(const std::filesystem::path& manifest, const std::vector<DatasetEntry>& entries) {
    std::string text = std::string(kHeader) + "\n";
    for (const auto& e : entries) text += e.source + "," + e.target + "," + e.source_mask + "," + e.target_mask + "\n";
    write_text_file(manifest, text);
}

DatasetEntry resolve_entry(const DatasetEntry& entry, const std::filesystem::path& base) {
    auto r = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return (path.is_absolute() ? path : base / path).lexically_normal().string();
    };
    return {r(entry.source), r(entry.target), r(entry.source_mask), r(entry.target_mask)};
}

std::string pair_label(const DatasetEntry& entry, std::size_t index) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%03zu_", index);
    return buf + std::filesystem::path(entry.source).stem().string();
}

LoadedPair load_pair(const DatasetEntry& entry) {
    LoadedPair p{read_volume(entry.source), read_volume(entry.target), read_mask(entry.source_mask),
                 read_mask(entry.target_mask)};
    if (!(p.source.geometry() == p.target.geometry())) {
        throw Error(ErrorKind::Input, entry.source + " and " + entry.target + " do not share one lattice");
    }
    check_mask_alignment(p.source_mask, p.source.geometry());
    check_mask_alignment(p.target_mask, p.target.geometry());
    return p;
}

}  // namespace mmreg
