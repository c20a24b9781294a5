// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: magic "PTUM", format version, a JSON config blob,
// then named tensors as (name, dtype tag, shape, row-major little-endian
// payload), closed by a CRC-32 of everything after the version field.
// Files are written to a temp path and renamed, so an interrupted run
// never leaves a partial checkpoint.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ptum/optim.hpp"

namespace ptum {

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

struct NamedTensor {
    std::string name;
    DType dtype = DType::f64;
    std::vector<std::size_t> shape;
    std::vector<double> data;  // in-memory values are always 64-bit
};

struct ModelCheckpoint {
    static constexpr std::uint32_t kVersion = 1;
    std::string config_json;
    std::vector<NamedTensor> tensors;

    static ModelCheckpoint from_registry(const ParameterRegistry& registry,
                                         std::string config_json, DType dtype = DType::f64);
    // Copies tensor data into same-named registry parameters; every name
    // and shape must match exactly.
    void load_into(ParameterRegistry& registry) const;

    std::string serialize() const;
    static ModelCheckpoint deserialize(const std::string& bytes);

    void save(const std::filesystem::path& path) const;
    static ModelCheckpoint load(const std::filesystem::path& path);
};

}  // namespace ptum
