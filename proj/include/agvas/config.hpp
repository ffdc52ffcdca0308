#pragma once

// Human-readable key = value run configuration and its hash.

#include <cstdint>
#include <filesystem>
#include <string>

#include "agvas/dataset.hpp"
#include "agvas/instruct.hpp"
#include "agvas/losses.hpp"
#include "agvas/model.hpp"
#include "agvas/optim.hpp"

namespace agvas {

struct TrainConfig {
  Schedule schedule;
  int batch_size = 8;
  int log_every = 50;
  int hash_check_every = 100;
  std::uint64_t seed = 1;  // model initialisation
};

struct RunConfig {
  DataConfig data;
  MixerConfig mixer;
  RejectionMode rejection = RejectionMode::Templates;
  ModelConfig model;
  LossConfig loss;
  AdamWConfig optimizer;
  TrainConfig train;
  std::string eval_split = "unseen";
  int max_new_tokens = 96;

  void validate() const;
};

/// Sets one key; throws std::invalid_argument for unknown keys or bad values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
/// Applies "key = value" lines ('#' starts a comment).
void apply_config_text(RunConfig& cfg, const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Every key in a fixed order; parse(to_text(c)) == c.
std::string to_text(const RunConfig& cfg);
/// FNV-1a 64 of to_text.
std::uint64_t config_hash(const RunConfig& cfg);
std::string hash_hex(std::uint64_t h);

}  // namespace agvas
