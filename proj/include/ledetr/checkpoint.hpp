#pragma once

// Checkpoint directory layout:
//
//   weights.bin   LET4 tensor records back to back, in visiting order
//   manifest.txt  "# key value" header lines, then "name NxCxHxW offset" per
//                 tensor, offset being the record's byte position in weights.bin

#include <filesystem>
#include <string>
#include <vector>

#include "ledetr/config.hpp"

namespace ledetr {

struct ManifestEntry {
  std::string name;
  Shape4 shape;
  std::uint64_t offset = 0;
};

struct Manifest {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<ManifestEntry> entries;

  Index total_params() const;
  /// Header value for key, empty when absent.
  std::string value(const std::string& key) const;
};

inline constexpr const char* kWeightsFile = "weights.bin";
inline constexpr const char* kManifestFile = "manifest.txt";

/// Writes weights.bin and manifest.txt into dir (created when missing).
Manifest write_checkpoint(const LeDetr& model, const ModelConfig& cfg,
                          const std::filesystem::path& dir);

Manifest read_manifest(const std::filesystem::path& path);

/// Overwrites every tensor of model from a checkpoint with matching names and shapes.
void load_checkpoint(LeDetr& model, const std::filesystem::path& dir);

}  // namespace ledetr
