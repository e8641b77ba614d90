#pragma once

// Little-endian binary records: an 8-byte magic, a JSON metadata block and a
// sequence of float32 tensors.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddimedit/tensor.hpp"

namespace ddimedit {

struct BinaryRecord {
    nlohmann::json meta;
    std::vector<Tensor> tensors;
};

void write_binary_record(const std::filesystem::path& path, const std::string& magic, const BinaryRecord& rec);
// Throws InputFormatError on a magic mismatch or truncated payload.
BinaryRecord read_binary_record(const std::filesystem::path& path, const std::string& magic);

}  // namespace ddimedit
