#include "agvas/instruct.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace agvas {

namespace {

std::string replace_all(std::string s, std::string_view key, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = s.find(key, pos)) != std::string::npos) {
    s.replace(pos, key.size(), value);
    pos += value.size();
  }
  return s;
}

std::string category_description(std::string_view category) {
  if (category == "stripes") return "evenly spaced parallel stripes with uniform contrast";
  if (category == "checker") return "a regular checkerboard of alternating light and dark tiles";
  if (category == "blobs") return "soft rounded blobs scattered over a smooth background";
  if (category == "bottle") return "the round mouth of a bottle with smooth concentric shading";
  if (category == "mesh") return "a regular grid of thin crossing lines";
  if (category == "speckle") return "fine and uniform speckle noise";
  return "a consistent and regular surface";
}

std::string diagnosis_sentence(DefectType t) {
  switch (t) {
    case DefectType::Hole: return "The dark hole means material is missing, which breaks the continuity of the surface.";
    case DefectType::Scratch: return "The bright scratch cuts across the regular pattern and damages its structure.";
    case DefectType::Spot: return "The bright spot does not match the intensity of the surrounding texture.";
    case DefectType::CrackLine: return "The dark crack splits the surface and breaks its structural consistency.";
    case DefectType::MissingCorner: return "The corner region is missing, so the outline of the object is incomplete.";
  }
  return "";
}

const std::string kTriple = std::string(kAnchorTriple);

template <typename T>
const T& choose(const std::vector<T>& v, std::mt19937_64& rng) {
  if (v.empty()) throw std::invalid_argument("choose: empty set");
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

std::pair<std::string, std::string> split_vqa(const std::string& line) {
  const auto pos = line.find(" => ");
  if (pos == std::string::npos) throw std::invalid_argument("VQA template lacks ' => ': " + line);
  return {line.substr(0, pos), line.substr(pos + 4)};
}

std::string verdict(const std::optional<DefectMeta>& meta) {
  if (!meta) return "Yes, it looks normal.";
  return "No, there is a " + std::string(to_string(meta->size)) + " " + std::string(defect_phrase(meta->type)) +
         " on the " + meta->location + " part.";
}

}  // namespace

std::string expectation_sentence(std::string_view category) {
  return "A normal " + std::string(category) + " image shows " + category_description(category) + ".";
}

StructuredAnnotation build_structured_annotation(const DefectMeta& m) {
  const std::string size(to_string(m.size));
  const std::string phrase(defect_phrase(m.type));
  StructuredAnnotation a;
  a.expectation = expectation_sentence(m.category);
  a.observation = "There is a " + size + " " + phrase + " on the " + m.location + " part of the " + m.category + ".";
  a.diagnosis = diagnosis_sentence(m.type);
  a.summary = "The anomaly is a " + size + " " + phrase + " located on the " + m.location + " part of the " +
              m.category + ", as indicated by " + kTriple + ".";
  a.explanation = "The " + m.category + " should show " + category_description(m.category) + ". Instead, a " + size +
                  " " + phrase + " appears on the " + m.location + " part. " + a.diagnosis +
                  " Therefore this region is segmented as the anomaly.";
  return a;
}

StructuredAnnotation build_structured_annotation(const std::optional<DefectMeta>& meta) {
  if (!meta) throw std::invalid_argument("build_structured_annotation: normal sample has no defect");
  return build_structured_annotation(*meta);
}

std::string_view to_string(TaskType t) {
  switch (t) {
    case TaskType::Direct: return "direct";
    case TaskType::DescribeThenSegment: return "describe_then_segment";
    case TaskType::DescribeThenSegmentPlus: return "describe_then_segment_plus";
    case TaskType::SegmentThenExplain: return "segment_then_explain";
    case TaskType::Rejection: return "rejection";
    case TaskType::Vqa: return "vqa";
    case TaskType::GeneralSeg: return "general_seg";
  }
  return "direct";
}

TaskType parse_task_type(std::string_view s) {
  for (TaskType t : kTaskTypes) {
    if (to_string(t) == s) return t;
  }
  throw std::invalid_argument("unknown task type: " + std::string(s));
}

bool is_segmentation_task(TaskType t) { return t != TaskType::Vqa; }

std::string_view to_string(Source s) {
  switch (s) {
    case Source::GeneralSeg: return "general_seg";
    case Source::Instruct: return "instruct";
    case Source::DirectSeg: return "direct_seg";
    case Source::Vqa: return "vqa";
  }
  return "general_seg";
}

std::string_view to_string(RejectionMode m) { return m == RejectionMode::Templates ? "templates" : "direct"; }

RejectionMode parse_rejection_mode(std::string_view s) {
  if (s == "templates") return RejectionMode::Templates;
  if (s == "direct") return RejectionMode::Direct;
  throw std::invalid_argument("unknown rejection mode: " + std::string(s));
}

const std::vector<std::string>& class_name_set() {
  static const std::vector<std::string> s = {"defects", "anomalies", "flaws", "damaged regions"};
  return s;
}

std::string entity_phrase(DefectType t) {
  switch (t) {
    case DefectType::Hole: return "dark hole";
    case DefectType::Scratch: return "bright scratch";
    case DefectType::Spot: return "bright spot";
    case DefectType::CrackLine: return "dark crack";
    case DefectType::MissingCorner: return "missing corner";
  }
  return "hole";
}

TemplateLibrary TemplateLibrary::defaults() {
  TemplateLibrary lib;
  lib.set(TaskType::Direct, {
                                "Please segment the {class_name} in this image.",
                                "Can you segment the {class_name} in this image?",
                                "Segment any {class_name} you can find in this image.",
                                "Where are the {class_name} in this image? Please output the segmentation mask.",
                                "Please output the segmentation mask of the {class_name} in this image.",
                                "Identify and segment the {class_name} in this picture.",
                                "Could you mark the {class_name} in this image with a mask?",
                                "Show me the {class_name} in this image as a segmentation mask.",
                            });
  lib.set(TaskType::DescribeThenSegment, {
                                             "What {class_name} does this image contain? Describe them, then output the segmentation mask.",
                                             "Describe the {class_name} in this image and then segment them.",
                                             "Please first describe any {class_name} in this image, then provide their mask.",
                                             "Explain what {class_name} appear in this image before segmenting them.",
                                             "Tell me about the {class_name} in this image and output a segmentation mask.",
                                             "Describe the {class_name} you see here, then segment them.",
                                             "Give a short description of the {class_name} in this image followed by the mask.",
                                             "What do the {class_name} in this image look like? Describe and segment them.",
                                         });
  lib.set(TaskType::SegmentThenExplain, {
                                            "Segment the {class_name} in this image and then explain your result.",
                                            "Please output the mask of the {class_name} first, then explain why they are abnormal.",
                                            "Segment any {class_name} here and give the reasoning afterwards.",
                                            "First segment the {class_name} in this image, then explain what you found.",
                                            "Provide the segmentation mask of the {class_name} and then justify it.",
                                            "Mark the {class_name} in this image and explain the decision.",
                                            "Can you segment the {class_name} in this picture and explain why?",
                                            "Output the mask for the {class_name} in this image, followed by an explanation.",
                                        });
  lib.set(TaskType::Rejection, {
                                   "Please segment the {class_name} in this image.",
                                   "Are there any {class_name} in this image? If so, segment them.",
                                   "Check this image for {class_name} and segment them.",
                                   "Segment the {class_name} in this image if there are any.",
                                   "Can you segment the {class_name} in this image?",
                                   "Please output the segmentation mask of the {class_name} in this image.",
                                   "Find and segment any {class_name} in this picture.",
                                   "Does this image contain {class_name}? Please segment them.",
                               });
  lib.set(TaskType::GeneralSeg, {
                                    "Please segment the {class_name} in this image.",
                                    "Segment the {class_name} shown in this picture.",
                                    "Where is the {class_name} in this image? Output its mask.",
                                    "Can you segment the {class_name} in this image?",
                                    "Please output the mask of the {class_name} in this image.",
                                    "Mark the {class_name} in this image with a segmentation mask.",
                                    "Find the {class_name} in this image and segment it.",
                                    "Show me the {class_name} in this picture as a mask.",
                                });
  lib.set(TaskType::Vqa, {
                             "What kind of object is shown in this image? => This image shows a {category} sample.",
                             "What category does this image belong to? => It belongs to the {category} category.",
                             "Describe the pattern in this image. => {expectation}",
                             "What should this object normally look like? => {expectation}",
                             "Does this image look normal? => {verdict}",
                             "Is this surface free of damage? => {verdict}",
                             "Name the category of this image. => The category is {category}.",
                             "Is there anything unusual in this image? => {verdict}",
                         });
  return lib;
}

TaskType TemplateLibrary::storage_key(TaskType t) {
  return t == TaskType::DescribeThenSegmentPlus ? TaskType::DescribeThenSegment : t;
}

const std::vector<std::string>& TemplateLibrary::get(TaskType t) const {
  static const std::vector<std::string> empty;
  auto it = templates_.find(storage_key(t));
  return it == templates_.end() ? empty : it->second;
}

void TemplateLibrary::set(TaskType t, std::vector<std::string> templates) {
  templates_[storage_key(t)] = std::move(templates);
}

TemplateLibrary TemplateLibrary::load(const std::filesystem::path& dir) {
  TemplateLibrary lib;
  for (TaskType t : kTaskTypes) {
    if (storage_key(t) != t) continue;
    const auto path = dir / (std::string(to_string(t)) + ".txt");
    std::ifstream is(path);
    if (!is) continue;
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      lines.push_back(line);
    }
    lib.set(t, std::move(lines));
  }
  return lib;
}

void TemplateLibrary::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [t, lines] : templates_) {
    std::ofstream os(dir / (std::string(to_string(t)) + ".txt"), std::ios::binary);
    for (const auto& l : lines) os << l << '\n';
    if (!os) throw std::runtime_error("cannot write templates for " + std::string(to_string(t)));
  }
}

InstructionSample compose_sample(const SourceRecord& record, TaskType task, const TemplateLibrary& lib,
                                 std::mt19937_64& rng) {
  InstructionSample s;
  s.image = record.image;
  s.category = record.category;
  s.task = task;
  const auto& templates = lib.get(task);
  if (templates.empty()) throw std::invalid_argument("no templates for task " + std::string(to_string(task)));
  const std::string& tmpl = choose(templates, rng);
  auto need_defect = [&] {
    if (!record.defect) {
      throw std::invalid_argument(std::string(to_string(task)) + " needs an anomalous record, got " + record.image);
    }
  };
  switch (task) {
    case TaskType::Direct:
      s.instruction = replace_all(tmpl, "{class_name}", choose(class_name_set(), rng));
      s.response = kDirectResponse;
      break;
    case TaskType::DescribeThenSegment:
    case TaskType::DescribeThenSegmentPlus: {
      need_defect();
      const auto a = build_structured_annotation(*record.defect);
      s.instruction = replace_all(tmpl, "{class_name}", choose(class_name_set(), rng));
      if (task == TaskType::DescribeThenSegmentPlus) s.instruction = a.expectation + " " + s.instruction;
      s.response = a.summary;
      break;
    }
    case TaskType::SegmentThenExplain: {
      need_defect();
      const auto a = build_structured_annotation(*record.defect);
      s.instruction = replace_all(tmpl, "{class_name}", choose(class_name_set(), rng));
      s.response = std::string(kDirectResponse) + " " + a.explanation;
      break;
    }
    case TaskType::Rejection:
      if (record.defect) throw std::invalid_argument("rejection needs a normal record, got " + record.image);
      s.instruction = replace_all(tmpl, "{class_name}", choose(class_name_set(), rng));
      s.response = kRejectionResponse;
      break;
    case TaskType::GeneralSeg:
      need_defect();
      s.instruction = replace_all(tmpl, "{class_name}", entity_phrase(record.defect->type));
      s.response = kDirectResponse;
      break;
    case TaskType::Vqa: {
      auto [q, a] = split_vqa(tmpl);
      a = replace_all(a, "{category}", record.category);
      a = replace_all(a, "{expectation}", expectation_sentence(record.category));
      a = replace_all(a, "{verdict}", verdict(record.defect));
      s.instruction = q;
      s.response = a;
      break;
    }
  }
  if (is_segmentation_task(task)) {
    s.mask = record.mask;
    s.supervise = task == TaskType::GeneralSeg ? AnchorSet::only(Anchor::Seg) : AnchorSet::all();
  }
  return s;
}

InstructionSample restrict_anchors(InstructionSample s, AnchorSet anchors) {
  if (s.response.find(kTriple) != std::string::npos) s.response = replace_all(s.response, kTriple, anchors.tokens());
  s.supervise = s.supervise.intersect(anchors);
  return s;
}

void MixerConfig::validate() const {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("mixer weights must be nonnegative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("mixer weights must sum to 1");
}

Source draw_source(const MixerConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < cfg.weights.size(); ++i) {
    if (cfg.weights[i] <= 0.0) continue;
    last = i;
    acc += cfg.weights[i];
    if (x < acc) return kSources[i];
  }
  return kSources[last];
}

std::vector<Source> mix_batches(const MixerConfig& cfg, std::size_t n) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::vector<Source> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw_source(cfg, rng));
  return out;
}

SampleStream::SampleStream(std::vector<SourceRecord> records, MixerConfig mixer, TemplateLibrary lib,
                           RejectionMode rejection)
    : records_(std::move(records)), mixer_(mixer), lib_(std::move(lib)), rejection_(rejection), rng_(mixer.seed) {
  mixer_.validate();
  for (std::size_t i = 0; i < records_.size(); ++i) (records_[i].defect ? anomalous_ : normal_).push_back(i);
  if (anomalous_.empty()) throw std::invalid_argument("SampleStream: no anomalous records");
}

const SourceRecord& SampleStream::pick(const std::vector<std::size_t>& pool) { return records_[choose(pool, rng_)]; }

InstructionSample SampleStream::next() {
  last_ = draw_source(mixer_, rng_);
  switch (last_) {
    case Source::GeneralSeg:
      return compose_sample(pick(anomalous_), TaskType::GeneralSeg, lib_, rng_);
    case Source::Instruct: {
      static const std::vector<TaskType> tasks = {TaskType::DescribeThenSegment, TaskType::DescribeThenSegmentPlus,
                                                  TaskType::SegmentThenExplain};
      const TaskType t = choose(tasks, rng_);
      return compose_sample(pick(anomalous_), t, lib_, rng_);
    }
    case Source::DirectSeg: {
      std::bernoulli_distribution coin(0.5);
      if (!normal_.empty() && coin(rng_)) {
        const TaskType t = rejection_ == RejectionMode::Templates ? TaskType::Rejection : TaskType::Direct;
        return compose_sample(pick(normal_), t, lib_, rng_);
      }
      return compose_sample(pick(anomalous_), TaskType::Direct, lib_, rng_);
    }
    case Source::Vqa: {
      std::uniform_int_distribution<std::size_t> d(0, records_.size() - 1);
      return compose_sample(records_[d(rng_)], TaskType::Vqa, lib_, rng_);
    }
  }
  throw std::logic_error("unreachable source");
}

std::string to_json_line(const InstructionSample& s) {
  nlohmann::ordered_json j;
  j["image"] = s.image;
  j["category"] = s.category;
  j["instruction"] = s.instruction;
  j["response"] = s.response;
  j["mask"] = s.mask;
  j["task"] = std::string(to_string(s.task));
  j["supervise"] = s.supervise.tokens();
  return j.dump();
}

void export_corpus(const std::vector<InstructionSample>& samples, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write corpus " + path.string());
  for (const auto& s : samples) os << to_json_line(s) << '\n';
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<InstructionSample> import_corpus(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read corpus " + path.string());
  std::vector<InstructionSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      InstructionSample s;
      s.image = j.at("image").get<std::string>();
      s.category = j.at("category").get<std::string>();
      s.instruction = j.at("instruction").get<std::string>();
      s.response = j.at("response").get<std::string>();
      s.mask = j.at("mask").get<std::string>();
      s.task = parse_task_type(j.at("task").get<std::string>());
      s.supervise = AnchorSet::parse(j.at("supervise").get<std::string>());
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::string> vocabulary_corpus(const TemplateLibrary& lib, const std::vector<std::string>& categories) {
  std::vector<std::string> texts = {std::string(kDefaultInstruction), std::string(kDirectResponse),
                                    std::string(kRejectionResponse)};
  for (TaskType t : kTaskTypes) {
    for (const auto& tmpl : lib.get(t)) {
      if (t == TaskType::Vqa) {
        auto [q, a] = split_vqa(tmpl);
        texts.push_back(q);
        for (const auto& cat : categories) {
          texts.push_back(replace_all(replace_all(replace_all(a, "{category}", cat), "{expectation}", ""), "{verdict}", ""));
        }
        continue;
      }
      for (const auto& c : class_name_set()) texts.push_back(replace_all(tmpl, "{class_name}", c));
      for (DefectType d : kDefectTypes) texts.push_back(replace_all(tmpl, "{class_name}", entity_phrase(d)));
    }
  }
  texts.push_back(verdict(std::nullopt));
  for (const auto& cat : categories) {
    texts.push_back(expectation_sentence(cat));
    texts.push_back(cat);
    for (DefectType d : kDefectTypes) {
      for (SizeClass sz : kSizeClasses) {
        for (const auto& loc : location_phrases()) {
          const DefectMeta m{d, loc, sz, cat};
          const auto a = build_structured_annotation(m);
          for (const auto* f : {&a.expectation, &a.observation, &a.diagnosis, &a.summary, &a.explanation}) {
            texts.push_back(*f);
          }
          texts.push_back(verdict(m));
        }
      }
    }
  }
  return texts;
}

}  // namespace agvas
