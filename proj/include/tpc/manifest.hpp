#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tpc/config.hpp"

namespace tpc {

inline constexpr const char* kVersion = "tpcvit 0.1.0";

/// Hex SHA-1 of "blob <size>\0<content>", as `git hash-object` computes it.
std::string git_blob_hash(const std::string& content);

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::vector<std::string> overrides;
  Json config;
  std::uint64_t seed = 0;

  Json to_json() const;
};

void write_manifest(const std::filesystem::path& out_dir, const RunManifest& manifest);

}  // namespace tpc
