#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "strider/tensor.hpp"

namespace strider {

// A checkpoint is a pair of files: `<path>` holds named tensors as raw
// little-endian float32 records, `<path>.json` the manifest (tensor table
// plus whatever metadata the caller supplies, e.g. the resolved config).

std::filesystem::path manifest_path(const std::filesystem::path& path);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const nlohmann::json& meta);

struct LoadReport {
  nlohmann::json meta;
  std::vector<std::string> missing;  // in the set, absent from the file
  std::vector<std::string> unused;   // in the file, absent from the set
};

/// Copies every tensor whose name exists in `params`. A shape disagreement
/// is an error; unmatched names are reported, not fatal.
template <typename T>
LoadReport load_checkpoint(const std::filesystem::path& path, ParameterSet<T>& params);

nlohmann::json read_manifest(const std::filesystem::path& path);

}  // namespace strider
