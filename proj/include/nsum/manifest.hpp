#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nsum {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// Provenance record written next to every command's outputs.
struct RunManifest {
  std::string command;
  std::string config_hash;  // FNV-1a 64 of the config bytes, hex
  std::uint64_t seed = 0;
  std::string version = kToolkitVersion;
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> outputs;
};

std::string fnv1a_hex(const std::string& bytes);
std::string iso8601_now();
void write_manifest(const RunManifest& m, const std::string& path);

}  // namespace nsum
