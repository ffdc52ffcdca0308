#pragma once

// End-to-end commands: training loop, evaluation, single-image segmentation
// and the ablation harness.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "agvas/checkpoint.hpp"
#include "agvas/config.hpp"
#include "agvas/metrics.hpp"
#include "agvas/model.hpp"

namespace agvas {

/// Encoded features and decoder-grid masks per dataset-relative path.
class FeatureCache {
 public:
  FeatureCache(const AgVasModel& model, std::filesystem::path root);
  const ImageFeatures& features(const std::string& image_path);
  const Mask& grid_mask(const std::string& mask_path);
  /// Hash of the features of the first `n` cached images, re-encoded from disk.
  std::uint64_t reencode_hash(std::size_t n) const;
  /// Hash of the cached features of the same images.
  std::uint64_t cached_hash(std::size_t n) const;
  std::size_t size() const { return order_.size(); }

 private:
  const AgVasModel& model_;
  std::filesystem::path root_;
  std::map<std::string, ImageFeatures> features_;
  std::vector<std::string> order_;
  std::map<std::string, Mask> masks_;
};

std::uint64_t hash_features(const ImageFeatures& f, std::uint64_t h = 0xcbf29ce484222325ULL);

struct BatchItem {
  const ImageFeatures* features = nullptr;
  EncodedSample sample;
};

struct StepResult {
  double text = 0.0;   // mean over the batch
  double seg = 0.0;    // mean over the batch, zero for samples without masks
  double total = 0.0;  // text + seg
};

class Trainer {
 public:
  Trainer(AgVasModel& model, const RunConfig& cfg);

  /// One optimizer step on the batch mean of L_txt + L_seg at learning rate `lr`.
  StepResult train_step(const std::vector<BatchItem>& batch, double lr);
  /// Gradients of the batch-mean loss without stepping.
  StepResult gradients(const std::vector<BatchItem>& batch, GradStore& grads) const;

  AdamW& optimizer() { return opt_; }
  AgVasModel& model() { return model_; }

 private:
  AgVasModel& model_;
  LossConfig loss_;
  AdamW opt_;
};

/// The vocabulary every run uses (independent of category split).
Vocabulary default_vocabulary(const TemplateLibrary& lib);
/// <root>/templates when present, otherwise the built-in library.
TemplateLibrary templates_for(const std::filesystem::path& data_root);
std::vector<SourceRecord> source_records(const std::vector<ManifestRecord>& records, Split split);

struct TrainLogEntry {
  int iteration = 0;
  double lr = 0.0;
  StepResult loss;
};

struct TrainResult {
  std::filesystem::path run_dir;
  std::vector<TrainLogEntry> log;
  double seconds = 0.0;
  std::size_t unseen_draws = 0;  // always zero; kept as an audited count
};

std::filesystem::path run_dir_for(const RunConfig& cfg, const std::filesystem::path& runs_root);

/// Trains on the seen split of `data_root` and writes config.txt, vocab.txt,
/// checkpoint.bin and train_log.tsv into `run_dir`. Progress goes to `log`.
TrainResult run_training(const RunConfig& cfg, const std::filesystem::path& data_root,
                         const std::filesystem::path& run_dir, std::ostream* log = nullptr);

struct LoadedRun {
  RunConfig config;
  std::unique_ptr<AgVasModel> model;
  std::unique_ptr<AdamW> optimizer;
  CheckpointInfo info;
};
LoadedRun load_run(const std::filesystem::path& run_dir);

struct EvalOutput {
  MetricsReport report;
  std::size_t samples = 0;
  std::size_t anchors_missing = 0;
  std::size_t missing_triple = 0;  // responses lacking the variant's anchors in order
};

/// Runs the default instruction over the records of `cfg.eval_split` and
/// writes report.txt, report.kv, transcripts.jsonl, masks/ and prob/ into `out_dir`.
EvalOutput run_eval(const LoadedRun& run, const std::filesystem::path& data_root, const std::filesystem::path& out_dir,
                    const std::string& split);

struct SegmentOutput {
  std::string response;
  bool anchors_missing = false;
  ProbMaps maps;
};
/// Writes <out>.mask.pgm, <out>.prob.pgm, <out>.prob.f64 and <out>.txt.
SegmentOutput run_segment(const LoadedRun& run, const std::filesystem::path& image_path, const std::string& instruction,
                          const std::filesystem::path& out_prefix);

struct AblationRow {
  Variant variant = Variant::Full;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricsReport> reports;  // per seed
  CategoryMetrics median;              // per-metric median over seeds of the mean row
};

/// Trains and evaluates each variant once per seed; writes ablation.txt.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::filesystem::path& data_root,
                                      const std::filesystem::path& out_dir, const std::vector<Variant>& variants,
                                      const std::vector<std::uint64_t>& seeds, std::ostream* log = nullptr);
std::string format_ablation(const std::vector<AblationRow>& rows);

/// True when `text` contains the anchor tokens of `anchors` consecutively in canonical order.
bool contains_anchor_sequence(std::string_view text, AnchorSet anchors);

}  // namespace agvas
