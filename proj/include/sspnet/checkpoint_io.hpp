#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sspnet/tensor.hpp"

namespace sspnet {

// Single-file container: magic, format version, JSON header, named float64
// arrays, and a whole-file CRC32. Array bytes round-trip exactly.
struct BlobFile {
    nlohmann::json header;
    std::vector<std::pair<std::string, Tensor>> arrays;
};

inline constexpr uint32_t kBlobFormatVersion = 1;

void write_blob_file(const BlobFile& blob, const std::filesystem::path& path);

// Throws IntegrityError on truncation/corruption and VersionError on a
// format version mismatch.
BlobFile read_blob_file(const std::filesystem::path& path);

uint32_t crc32_bytes(const uint8_t* data, size_t size);

}  // namespace sspnet
