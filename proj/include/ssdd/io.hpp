#pragma once

// PNG images, named-weight archives and small file helpers.
//
// Archive layout (little endian): magic "SSDDWTS1", u64 entry count, then per
// entry u32 name length, name bytes, u32 rank, i32 dims, f32 values. Entries
// are written in name order.

#include "ssdd/tensor.hpp"

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

namespace ssdd {

// [3, H, W] in [-1, 1]. Gray, palette, alpha and 16-bit inputs are converted
// to 8-bit RGB first. Throws on undecodable files.
Tensor<float> load_png(const std::filesystem::path& path);
// Values are clamped to [-1, 1] and rounded to 8 bits.
void save_png(const std::filesystem::path& path, const Tensor<float>& image);

// 8-bit code value <-> [-1, 1].
inline float from_u8(unsigned char v) { return static_cast<float>(v) / 127.5f - 1.0f; }
unsigned char to_u8(float v);

using WeightMap = std::map<std::string, Tensor<float>>;

void save_archive(const std::filesystem::path& path, const WeightMap& weights);
WeightMap load_archive(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames over the target.
void write_text(const std::filesystem::path& path, const std::string& text);
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace ssdd
