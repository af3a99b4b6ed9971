#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace bfr {

struct ManifestRow {
  std::string id;
  std::string hq;  // paths as written; relative ones resolve against the manifest's directory
  std::string lq;
  std::string setting;
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();
  std::string split;  // "train", "test" or empty (unassigned)
  std::string error;  // non-empty for rows that failed to synthesize
};

/// JSON-lines pairing of HQ/LQ images with their degradation record.
struct Manifest {
  std::vector<ManifestRow> rows;
  std::filesystem::path base_dir;  // directory of the file it was read from

  std::filesystem::path resolve(const std::string& path) const;
};

nlohmann::json to_json(const ManifestRow& row);
ManifestRow row_from_json(const nlohmann::json& j);

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Throws PairingError on duplicate ids, IoError on missing files.
void validate(const Manifest& manifest);

/// Hash-based train/test assignment: a pure function of (id, seed, fraction),
/// so adding rows never moves existing ids.
Manifest split(const Manifest& manifest, double train_fraction, std::uint64_t split_seed);
bool assign_train(const std::string& id, double train_fraction, std::uint64_t split_seed);

}  // namespace bfr
