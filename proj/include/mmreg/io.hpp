#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mmreg/volume.hpp"

namespace mmreg {

// Volumes travel as a pair of files: a plain-text header of `key: value`
// lines and a little-endian raw payload in x-fastest order.
//
//   dims: 64 64 64
//   spacing: 2 2 2
//   origin: 0 0 0
//   dtype: f32            (f32 | u8)
//   components: 1         (3 for displacement fields, interleaved per voxel)
//   data: pair0_source.raw
//
// `data` is resolved relative to the header's directory.

Volume read_volume(const std::filesystem::path& header);
void write_volume(const std::filesystem::path& header, const Volume& vol);

SegmentationMask read_mask(const std::filesystem::path& header);
void write_mask(const std::filesystem::path& header, const SegmentationMask& mask);

DenseField read_field(const std::filesystem::path& header);
void write_field(const std::filesystem::path& header, const DenseField& field);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_number(double v);

/// Strict parse of a full token; throws Error(kind) on trailing garbage.
double parse_number(std::string_view text, ErrorKind kind = ErrorKind::IO);
long parse_integer(std::string_view text, ErrorKind kind = ErrorKind::IO);

std::vector<std::string> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace mmreg
