#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "shd/matrix.hpp"

namespace shd {

/// Directory layout for dumped attention tensors: manifest.json plus one
/// maps file (heads x N x N) and one head-values file (heads x N x d_model)
/// per layer, little-endian f32.
struct DumpManifest {
    int version = 1;
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t seq_len = 0;
    std::size_t d_model = 0;
    bool causal = false;
    std::string dtype = "f32";
    std::string byte_order = "little";
    struct LayerFiles {
        std::string maps;
        std::string head_values;
    };
    std::vector<LayerFiles> files;
};

struct Dump {
    DumpManifest manifest;
    std::vector<std::vector<Matrix>> maps;         // [layer][head], N x N
    std::vector<std::vector<Matrix>> head_values;  // [layer][head], N x d_model
};

// Writes manifest.json and the referenced binaries, creating dir if needed.
void write_dump(const std::filesystem::path& dir, const Dump& dump);

// Reads and validates: manifest schema, file existence, exact byte lengths.
// Throws ConfigError on any violation.
Dump read_dump(const std::filesystem::path& dir);

// Seeded synthetic dump: maps are softmaxed random scores (causally masked
// when requested), head values carry the rank-(d_model/heads) structure of
// real attention value terms.
Dump random_dump(std::uint64_t seed, std::size_t layers, std::size_t heads, std::size_t seq_len,
                 std::size_t d_model, bool causal);

// Round-trip helpers for little-endian f32 blobs.
void write_f32_file(const std::filesystem::path& path, const std::vector<Matrix>& mats);
std::vector<Matrix> read_f32_file(const std::filesystem::path& path, std::size_t count,
                                  std::size_t rows, std::size_t cols);

}  // namespace shd
