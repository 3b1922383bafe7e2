#pragma once
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "brainrot/linalg.hpp"

namespace brainrot {

// One entry of a .brvt parameter archive. Rank-1 tensors are held as 1xN
// matrices; dims carries the declared shape.
struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    MatX data;

    static NamedTensor vector(std::string name, const MatX& row);
    static NamedTensor matrix(std::string name, const MatX& m);
};

// .brvt: magic "BRVT", u32 version=1, u32 tensor count; per tensor
// u16 name length, name bytes, u8 rank, u32 dims[rank], f32 LE data
// in row-major order.
void save_tensor_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
[[nodiscard]] std::vector<NamedTensor> load_tensor_archive(const std::filesystem::path& path);

// Serialized-payload byte stream of an archive (what save would write).
[[nodiscard]] std::vector<std::uint8_t> archive_bytes(const std::vector<NamedTensor>& tensors);

// FNV-1a over the serialized bytes; stable across runs and platforms.
[[nodiscard]] std::uint64_t archive_checksum(const std::vector<NamedTensor>& tensors);

[[nodiscard]] const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace brainrot
