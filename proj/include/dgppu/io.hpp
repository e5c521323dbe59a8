#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "dgppu/phantom.hpp"

namespace dgppu {

// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);
// Strict parse; throws ParseError on trailing garbage or non-numbers.
double parse_double(std::string_view text, std::size_t line);

// Columnar text cloud: header "x,y,z,label,scan_id,frame,u,v,artifact"
// (plus a trailing "synthetic" column when the cloud holds augmentation
// copies), one point per row, label as integer code.
void save_cloud_csv(const std::filesystem::path& path, const LabeledCloud& cloud);
LabeledCloud load_cloud_csv(const std::filesystem::path& path);

// Binary little-endian polygon-file point export with the same fields.
void save_cloud_ply(const std::filesystem::path& path, const LabeledCloud& cloud);
LabeledCloud load_cloud_ply(const std::filesystem::path& path);

// Dispatches on extension: ".ply" or anything else (columnar text).
void save_cloud(const std::filesystem::path& path, const LabeledCloud& cloud);
LabeledCloud load_cloud(const std::filesystem::path& path);

// UTF-8 JSON with stable key order; validates transforms on load.
void save_manifest(const std::filesystem::path& path, const ScanRecord& scan);
ScanRecord load_manifest(const std::filesystem::path& path);
std::string manifest_to_string(const ScanRecord& scan);
ScanRecord manifest_from_string(const std::string& text);

std::string read_text_file(const std::filesystem::path& path);
// Writes through a temporary and renames, so readers never see partial files.
void write_text_file(const std::filesystem::path& path, std::string_view text);

// 1-based line holding byte offset `byte` of `text`.
std::size_t line_of_offset(std::string_view text, std::size_t byte);

}  // namespace dgppu
