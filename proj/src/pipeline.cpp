#include "agvas/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "agvas/image.hpp"

namespace agvas {

namespace {

std::uint64_t fnv_bytes(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::uint64_t hash_features(const ImageFeatures& f, std::uint64_t h) {
  h = fnv_bytes(f.semantic.data.data(), static_cast<std::size_t>(f.semantic.data.size()) * sizeof(double), h);
  return fnv_bytes(f.pixel.data.data(), static_cast<std::size_t>(f.pixel.data.size()) * sizeof(double), h);
}

FeatureCache::FeatureCache(const AgVasModel& model, std::filesystem::path root)
    : model_(model), root_(std::move(root)) {}

const ImageFeatures& FeatureCache::features(const std::string& image_path) {
  auto it = features_.find(image_path);
  if (it != features_.end()) return it->second;
  order_.push_back(image_path);
  return features_.emplace(image_path, model_.encode(read_pgm(root_ / image_path))).first->second;
}

const Mask& FeatureCache::grid_mask(const std::string& mask_path) {
  auto it = masks_.find(mask_path);
  if (it != masks_.end()) return it->second;
  const Mask full = read_mask_pgm(root_ / mask_path);
  return masks_.emplace(mask_path, downsample_mask(full, model_.config().decoder.grid)).first->second;
}

std::uint64_t FeatureCache::reencode_hash(std::size_t n) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < std::min(n, order_.size()); ++i) {
    h = hash_features(model_.encode(read_pgm(root_ / order_[i])), h);
  }
  return h;
}

std::uint64_t FeatureCache::cached_hash(std::size_t n) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < std::min(n, order_.size()); ++i) h = hash_features(features_.at(order_[i]), h);
  return h;
}

Trainer::Trainer(AgVasModel& model, const RunConfig& cfg)
    : model_(model), loss_(cfg.loss), opt_(model.parameters(), cfg.optimizer) {
  loss_.validate();
}

StepResult Trainer::gradients(const std::vector<BatchItem>& batch, GradStore& grads) const {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  StepResult r;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const BatchItem& item : batch) {
    Tape tape;
    const auto parts = model_.loss(tape, *item.features, item.sample, loss_);
    tape.backward(parts.total);
    tape.collect_param_grads(grads, scale);
    r.text += scale * parts.text;
    r.seg += scale * parts.seg;
  }
  r.total = total_loss(r.text, r.seg);
  return r;
}

StepResult Trainer::train_step(const std::vector<BatchItem>& batch, double lr) {
  GradStore grads;
  const StepResult r = gradients(batch, grads);
  opt_.step(grads, lr);
  return r;
}

Vocabulary default_vocabulary(const TemplateLibrary& lib) {
  return Vocabulary::build(vocabulary_corpus(lib, category_registry()));
}

TemplateLibrary templates_for(const std::filesystem::path& data_root) {
  const auto dir = data_root / "templates";
  return std::filesystem::is_directory(dir) ? TemplateLibrary::load(dir) : TemplateLibrary::defaults();
}

std::vector<SourceRecord> source_records(const std::vector<ManifestRecord>& records, Split split) {
  std::vector<SourceRecord> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(SourceRecord{r.image_path, r.mask_path, r.category, r.defect});
  }
  return out;
}

std::filesystem::path run_dir_for(const RunConfig& cfg, const std::filesystem::path& runs_root) {
  return runs_root / ("run-" + hash_hex(config_hash(cfg)));
}

TrainResult run_training(const RunConfig& cfg, const std::filesystem::path& data_root,
                         const std::filesystem::path& run_dir, std::ostream* log) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const auto records = read_manifest(data_root / "manifest.tsv");
  const TemplateLibrary lib = templates_for(data_root);
  const Vocabulary vocab = default_vocabulary(lib);
  ModelConfig mc = cfg.model;
  mc.seed = cfg.train.seed;
  AgVasModel model(mc, vocab);
  Trainer trainer(model, cfg);
  FeatureCache cache(model, data_root);

  auto seen = source_records(records, Split::Seen);
  std::set<std::string> unseen_images;
  for (const auto& r : records) {
    if (r.split == Split::Unseen) unseen_images.insert(r.image_path);
  }
  SampleStream stream(std::move(seen), cfg.mixer, lib, cfg.rejection);
  const AnchorSet anchors = model.anchors();

  TrainResult result;
  result.run_dir = run_dir;
  std::uint64_t reference_hash = 0;
  std::size_t hash_images = 16;
  for (int it = 0; it < cfg.train.schedule.total_iters; ++it) {
    std::vector<BatchItem> batch;
    for (int b = 0; b < cfg.train.batch_size; ++b) {
      InstructionSample s = restrict_anchors(stream.next(), anchors);
      result.unseen_draws += unseen_images.count(s.image);
      const Mask* grid = s.has_mask() ? &cache.grid_mask(s.mask) : nullptr;
      batch.push_back(BatchItem{&cache.features(s.image), encode_sample(s, vocab, grid)});
    }
    if (it == 0) {
      hash_images = std::min(hash_images, cache.size());
      reference_hash = cache.reencode_hash(hash_images);
    }
    const double lr = lr_at(it + 1, cfg.train.schedule);
    const StepResult r = trainer.train_step(batch, lr);
    result.log.push_back(TrainLogEntry{it + 1, lr, r});
    if (cfg.train.hash_check_every > 0 && (it + 1) % cfg.train.hash_check_every == 0) {
      if (cache.reencode_hash(hash_images) != reference_hash || cache.cached_hash(hash_images) != reference_hash) {
        throw std::runtime_error("frozen encoder features changed during training");
      }
    }
    if (log != nullptr && cfg.train.log_every > 0 && ((it + 1) % cfg.train.log_every == 0 || it == 0)) {
      char line[160];
      std::snprintf(line, sizeof line, "iter %5d  lr %.2e  L_txt %.4f  L_seg %.4f  L %.4f", it + 1, lr, r.text, r.seg,
                    r.total);
      *log << line << std::endl;
    }
  }
  if (result.unseen_draws != 0) throw std::logic_error("unseen-category image drawn for training");

  std::filesystem::create_directories(run_dir);
  write_text(run_dir / "config.txt", to_text(cfg));
  vocab.save(run_dir / "vocab.txt");
  save_checkpoint(run_dir / "checkpoint.bin", trainer.optimizer(),
                  CheckpointInfo{static_cast<std::uint64_t>(cfg.train.schedule.total_iters), config_hash(cfg)});
  std::ostringstream tl;
  tl << "iteration\tlr\tL_txt\tL_seg\tL\n";
  for (const auto& e : result.log) {
    char line[160];
    std::snprintf(line, sizeof line, "%d\t%.10e\t%.10f\t%.10f\t%.10f\n", e.iteration, e.lr, e.loss.text, e.loss.seg,
                  e.loss.total);
    tl << line;
  }
  write_text(run_dir / "train_log.tsv", tl.str());
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

LoadedRun load_run(const std::filesystem::path& run_dir) {
  LoadedRun run;
  run.config = load_config(run_dir / "config.txt");
  const Vocabulary vocab = Vocabulary::load(run_dir / "vocab.txt");
  ModelConfig mc = run.config.model;
  mc.seed = run.config.train.seed;
  run.model = std::make_unique<AgVasModel>(mc, vocab);
  run.optimizer = std::make_unique<AdamW>(run.model->parameters(), run.config.optimizer);
  run.info = load_checkpoint(run_dir / "checkpoint.bin", *run.optimizer);
  if (run.info.config_hash != config_hash(run.config)) {
    throw std::runtime_error("checkpoint config hash does not match config.txt in " + run_dir.string());
  }
  return run;
}

bool contains_anchor_sequence(std::string_view text, AnchorSet anchors) {
  return text.find(anchors.tokens()) != std::string_view::npos;
}

EvalOutput run_eval(const LoadedRun& run, const std::filesystem::path& data_root, const std::filesystem::path& out_dir,
                    const std::string& split) {
  const auto records = read_manifest(data_root / "manifest.tsv");
  std::filesystem::create_directories(out_dir / "masks");
  std::filesystem::create_directories(out_dir / "prob");
  std::ofstream transcripts(out_dir / "transcripts.jsonl", std::ios::binary);
  EvalOutput out;
  std::vector<EvalRecord> evals;
  const AgVasModel& model = *run.model;
  for (const auto& r : records) {
    if (split != "all" && to_string(r.split) != split) continue;
    const LoadedSample s = load_sample(r, data_root);
    if (s.image.rows() != model.config().encoder.image_size || s.image.cols() != model.config().encoder.image_size) {
      throw std::runtime_error("resolution mismatch for " + r.id);
    }
    const auto inf = model.infer(model.encode(s.image), kDefaultInstruction, run.config.max_new_tokens);
    EvalRecord e{r.id, r.category, r.is_anomalous(), inf.maps.prob, inf.maps.mask, s.mask};
    write_mask_pgm(out_dir / "masks" / (r.id + ".pgm"), inf.maps.mask);
    write_pgm(out_dir / "prob" / (r.id + ".pgm"), inf.maps.prob);
    write_f64(out_dir / "prob" / (r.id + ".f64"), inf.maps.prob);
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["instruction"] = std::string(kDefaultInstruction);
    j["response"] = inf.response;
    j["anchors_missing"] = inf.anchors_missing;
    transcripts << j.dump() << '\n';
    ++out.samples;
    out.anchors_missing += inf.anchors_missing;
    out.missing_triple += !contains_anchor_sequence(inf.response, model.anchors());
    evals.push_back(std::move(e));
  }
  if (evals.empty()) throw std::runtime_error("no records in split '" + split + "'");
  out.report = evaluate_dataset(evals);
  std::string table = format_table(out.report);
  table += "tuple (AP, F1-Max, IoU_ano): " + format_tuple(percent_tuple(out.report.mean)) + "\n";
  table += "responses without anchors: " + std::to_string(out.missing_triple) + " of " + std::to_string(out.samples) +
           "\n";
  write_text(out_dir / "report.txt", table);
  write_text(out_dir / "report.kv", format_key_values(out.report) +
                                        "responses.total = " + std::to_string(out.samples) + "\n" +
                                        "responses.missing_anchors = " + std::to_string(out.missing_triple) + "\n");
  return out;
}

SegmentOutput run_segment(const LoadedRun& run, const std::filesystem::path& image_path, const std::string& instruction,
                          const std::filesystem::path& out_prefix) {
  const Image img = read_pgm(image_path);
  const AgVasModel& model = *run.model;
  if (img.rows() != model.config().encoder.image_size || img.cols() != model.config().encoder.image_size) {
    throw std::runtime_error("image must be " + std::to_string(model.config().encoder.image_size) + " pixels square");
  }
  const auto inf = model.infer(model.encode(img), instruction, run.config.max_new_tokens);
  if (out_prefix.has_parent_path()) std::filesystem::create_directories(out_prefix.parent_path());
  const std::string p = out_prefix.string();
  write_mask_pgm(p + ".mask.pgm", inf.maps.mask);
  write_pgm(p + ".prob.pgm", inf.maps.prob);
  write_f64(p + ".prob.f64", inf.maps.prob);
  std::string transcript = "USER: " + instruction + "\nASSISTANT: " + inf.response + "\n";
  if (inf.anchors_missing) transcript += "NOTE: anchors missing from the response; mask left empty\n";
  write_text(p + ".txt", transcript);
  return SegmentOutput{inf.response, inf.anchors_missing, inf.maps};
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::filesystem::path& data_root,
                                      const std::filesystem::path& out_dir, const std::vector<Variant>& variants,
                                      const std::vector<std::uint64_t>& seeds, std::ostream* log) {
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    AblationRow row;
    row.variant = v;
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.model.variant = v;
      cfg.train.seed = seed;
      cfg.mixer.seed = seed * 1000 + 11;
      const auto dir = out_dir / std::string(to_string(v)) / ("seed-" + std::to_string(seed));
      if (log) *log << "ablation: " << to_string(v) << " seed " << seed << std::endl;
      run_training(cfg, data_root, dir, nullptr);
      const LoadedRun run = load_run(dir);
      row.reports.push_back(run_eval(run, data_root, dir / "eval", cfg.eval_split).report);
      row.seeds.push_back(seed);
    }
    row.median.category = std::string(variant_label(v));
    auto med = [&](auto field) -> std::optional<double> {
      std::vector<double> vals;
      for (const auto& r : row.reports) {
        if (const auto& x = r.mean.*field) vals.push_back(*x);
      }
      if (vals.empty()) return std::nullopt;
      return median(vals);
    };
    row.median.ap = med(&CategoryMetrics::ap);
    row.median.f1_max = med(&CategoryMetrics::f1_max);
    row.median.iou_ano = med(&CategoryMetrics::iou_ano);
    row.median.iou_nor = med(&CategoryMetrics::iou_nor);
    rows.push_back(std::move(row));
  }
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "ablation.txt", format_ablation(rows));
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %7s %7s %8s %8s  %s\n", "variant", "AP", "F1-Max", "IoU_ano", "IoU_nor",
                "IoU_nor per seed");
  os << line;
  auto pct = [](const std::optional<double>& v) {
    char b[16];
    if (!v) return std::string("-");
    std::snprintf(b, sizeof b, "%.1f", 100.0 * *v);
    return std::string(b);
  };
  for (const auto& r : rows) {
    std::string per_seed;
    for (std::size_t i = 0; i < r.reports.size(); ++i) {
      per_seed += (i ? " " : "") + pct(r.reports[i].mean.iou_nor);
    }
    std::snprintf(line, sizeof line, "%-16s %7s %7s %8s %8s  %s\n", r.median.category.c_str(), pct(r.median.ap).c_str(),
                  pct(r.median.f1_max).c_str(), pct(r.median.iou_ano).c_str(), pct(r.median.iou_nor).c_str(),
                  per_seed.c_str());
    os << line;
  }
  os << "(medians over seeds of the unweighted category mean)\n";
  return os.str();
}

}  // namespace agvas
