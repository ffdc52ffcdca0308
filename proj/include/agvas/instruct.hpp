#pragma once

// Instruction corpus construction: structured annotations from defect
// metadata, template libraries, online sample composition, and the
// four-source mixer.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "agvas/synth.hpp"
#include "agvas/vocab.hpp"

namespace agvas {

struct StructuredAnnotation {
  std::string expectation;
  std::string observation;
  std::string diagnosis;
  std::string summary;
  std::string explanation;
};

/// Deterministic grammar over (category, type, size, location).
StructuredAnnotation build_structured_annotation(const DefectMeta& meta);
/// Throws std::invalid_argument for a normal sample (no metadata).
StructuredAnnotation build_structured_annotation(const std::optional<DefectMeta>& meta);

/// One sentence describing the defect-free appearance of a category.
std::string expectation_sentence(std::string_view category);

enum class TaskType { Direct, DescribeThenSegment, DescribeThenSegmentPlus, SegmentThenExplain, Rejection, Vqa, GeneralSeg };
inline constexpr std::array<TaskType, 7> kTaskTypes = {TaskType::Direct,      TaskType::DescribeThenSegment,
                                                      TaskType::DescribeThenSegmentPlus, TaskType::SegmentThenExplain,
                                                      TaskType::Rejection,   TaskType::Vqa,
                                                      TaskType::GeneralSeg};
std::string_view to_string(TaskType t);
TaskType parse_task_type(std::string_view s);
/// Tasks whose responses carry anchors and whose samples carry a mask.
bool is_segmentation_task(TaskType t);

enum class Source { GeneralSeg, Instruct, DirectSeg, Vqa };
inline constexpr std::array<Source, 4> kSources = {Source::GeneralSeg, Source::Instruct, Source::DirectSeg, Source::Vqa};
std::string_view to_string(Source s);

/// How defect-free images are taught to produce empty masks.
enum class RejectionMode {
  Templates,  // dedicated rejection instructions and a fixed no-anomaly answer
  Direct      // ordinary direct-segmentation exchange with an empty mask
};
std::string_view to_string(RejectionMode m);
RejectionMode parse_rejection_mode(std::string_view s);

inline constexpr std::string_view kDefaultInstruction = "Please segment the anomalies in this image.";
inline constexpr std::string_view kDirectResponse = "Sure, it is [NOR][ANO][SEG].";
inline constexpr std::string_view kRejectionResponse =
    "No anomalies are found in this image, so the mask is empty [NOR][ANO][SEG].";

/// Target words substituted for {class_name}.
const std::vector<std::string>& class_name_set();
/// Concrete entity phrase naming a defect ("dark hole"), used by general segmentation.
std::string entity_phrase(DefectType t);

/// Instruction templates per task type. Segmentation templates contain
/// {class_name}; VQA lines are "question => answer" with {category},
/// {expectation} or {verdict} in the answer.
class TemplateLibrary {
 public:
  static TemplateLibrary defaults();
  /// Reads <dir>/<task>.txt for every task that has templates.
  static TemplateLibrary load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  /// The plus variant shares the describe-then-segment templates.
  const std::vector<std::string>& get(TaskType t) const;
  void set(TaskType t, std::vector<std::string> templates);

 private:
  static TaskType storage_key(TaskType t);
  std::map<TaskType, std::vector<std::string>> templates_;
};

/// A manifest entry as seen by the composer.
struct SourceRecord {
  std::string image;  // dataset-relative image path
  std::string mask;   // dataset-relative mask path
  std::string category;
  std::optional<DefectMeta> defect;
};

struct InstructionSample {
  std::string image;
  std::string category;
  std::string instruction;
  std::string response;
  std::string mask;  // empty for samples without mask supervision
  TaskType task = TaskType::Direct;
  /// Anchors whose decoder maps receive segmentation loss.
  AnchorSet supervise;

  bool has_mask() const { return !mask.empty(); }
  friend bool operator==(const InstructionSample&, const InstructionSample&) = default;
};

/// Fills `tmpl` and builds the response for `task`. Throws for tasks that need
/// defect metadata when the record is normal, or for an empty template set.
InstructionSample compose_sample(const SourceRecord& record, TaskType task, const TemplateLibrary& lib,
                                 std::mt19937_64& rng);

/// Rewrites the anchor triple of a response to `anchors` and narrows supervision.
InstructionSample restrict_anchors(InstructionSample s, AnchorSet anchors);

struct MixerConfig {
  std::array<double, 4> weights = {0.4, 0.25, 0.25, 0.1};  // general-seg, instruct, direct-seg, vqa
  std::uint64_t seed = 11;

  /// Weights nonnegative and summing to 1 within 1e-9.
  void validate() const;
};

/// i.i.d. categorical draws.
std::vector<Source> mix_batches(const MixerConfig& cfg, std::size_t n);
Source draw_source(const MixerConfig& cfg, std::mt19937_64& rng);

/// Endless seeded stream of composed samples over a record pool.
class SampleStream {
 public:
  SampleStream(std::vector<SourceRecord> records, MixerConfig mixer, TemplateLibrary lib,
               RejectionMode rejection = RejectionMode::Templates);
  InstructionSample next();
  /// Source of the most recent sample.
  Source last_source() const { return last_; }

 private:
  const SourceRecord& pick(const std::vector<std::size_t>& pool);

  std::vector<SourceRecord> records_;
  std::vector<std::size_t> anomalous_, normal_;
  MixerConfig mixer_;
  TemplateLibrary lib_;
  RejectionMode rejection_;
  std::mt19937_64 rng_;
  Source last_ = Source::GeneralSeg;
};

/// JSON-lines, fields in the order image, category, instruction, response,
/// mask, task, supervise.
void export_corpus(const std::vector<InstructionSample>& samples, const std::filesystem::path& path);
std::vector<InstructionSample> import_corpus(const std::filesystem::path& path);
std::string to_json_line(const InstructionSample& s);

/// Every text the composer can emit for `categories` (used to build the vocabulary).
std::vector<std::string> vocabulary_corpus(const TemplateLibrary& lib, const std::vector<std::string>& categories);

}  // namespace agvas
