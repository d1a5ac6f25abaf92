#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "alm/model.hpp"

namespace alm {

inline constexpr std::uint32_t kModelFormatVersion = 1;

// Little-endian "ALMM" container: magic, version, six config fields, then each
// tensor as (name length, name, rank, dims, f32 data), then a 64-bit FNV-1a
// checksum over every preceding byte.
std::string serialize_model(const Model& model);

// Rejects bad magic/version, wrong total length (naming the byte offset where
// the data ends) and checksum mismatches before touching any weights.
Model parse_model(std::string_view bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

std::string read_binary_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace alm
