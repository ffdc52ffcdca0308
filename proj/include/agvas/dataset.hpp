#pragma once

// Synthetic dataset generation and the on-disk manifest.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "agvas/synth.hpp"

namespace agvas {

struct DataConfig {
  std::vector<std::string> seen = {"stripes", "checker", "bottle"};
  std::vector<std::string> unseen = {"mesh"};
  int per_seen = 400;
  int per_unseen = 100;
  double anomalous_fraction = 0.5;
  std::uint64_t seed = 7;
  Index image_size = 64;

  /// Throws std::invalid_argument on unknown or overlapping categories.
  void validate() const;
};

struct ManifestRecord {
  std::string id;
  std::string category;
  Split split = Split::Seen;
  std::string image_path;  // relative to the dataset root
  std::string mask_path;
  std::optional<DefectMeta> defect;
  bool is_anomalous() const { return defect.has_value(); }
};

/// Every sample of the configuration, in (category, index) order.
std::vector<SynthSample> generate_dataset(const DataConfig& cfg);
/// One sample, reproducible from (cfg.seed, category, index).
SynthSample generate_sample(const DataConfig& cfg, const std::string& category, Split split, int index);

/// Writes images/, masks/ and manifest.tsv under `root`; returns the records.
std::vector<ManifestRecord> write_dataset(const std::vector<SynthSample>& samples, const std::filesystem::path& root);

/// Tab-separated: id, category, split, image_path, mask_path, is_anomalous,
/// defect_type, size_class, location ("-" for normal samples).
void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

struct LoadedSample {
  ManifestRecord record;
  Image image;
  Mask mask;
};
LoadedSample load_sample(const ManifestRecord& record, const std::filesystem::path& root);

/// Normal samples of `category` from `records`.
std::vector<const ManifestRecord*> normal_pool(const std::vector<ManifestRecord>& records, const std::string& category);

}  // namespace agvas
