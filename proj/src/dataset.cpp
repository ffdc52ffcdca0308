#include "agvas/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "agvas/image.hpp"

namespace agvas {

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, '\t')) out.push_back(field);
  return out;
}

}  // namespace

void DataConfig::validate() const {
  std::set<std::string> all;
  for (const auto* list : {&seen, &unseen}) {
    for (const auto& c : *list) {
      if (!is_registered_category(c)) throw std::invalid_argument("unknown category: " + c);
      if (!all.insert(c).second) throw std::invalid_argument("category listed twice: " + c);
    }
  }
  if (per_seen < 0 || per_unseen < 0) throw std::invalid_argument("negative sample count");
  if (anomalous_fraction < 0 || anomalous_fraction > 1) throw std::invalid_argument("anomalous_fraction outside [0,1]");
}

SynthSample generate_sample(const DataConfig& cfg, const std::string& category, Split split, int index) {
  const std::uint64_t base = mix(cfg.seed ^ mix(fnv1a(category) + static_cast<std::uint64_t>(index)));
  SynthSample s;
  char id[96];
  std::snprintf(id, sizeof id, "%s_%04d", category.c_str(), index);
  s.id = id;
  s.category = category;
  s.split = split;
  const Image texture = generate_texture_image(category, mix(base + 1), cfg.image_size);
  std::mt19937_64 rng(mix(base + 2));
  // Spread exactly round(n * fraction) anomalous samples evenly over the indices.
  const long n = split == Split::Seen ? cfg.per_seen : cfg.per_unseen;
  const long k = std::lround(cfg.anomalous_fraction * static_cast<double>(n));
  const long i = index;
  const bool is_ano = n > 0 && ((i + 1) * k) / n != (i * k) / n;
  if (is_ano) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(kDefectTypes.size()) - 1);
    const DefectType type = kDefectTypes[static_cast<std::size_t>(pick(rng))];
    Injection inj = inject_defect(texture, type, mix(base + 3), category);
    s.image = std::move(inj.image);
    s.mask = std::move(inj.mask);
    s.defect = std::move(inj.meta);
  } else {
    s.image = texture;
    s.mask = Mask::Zero(cfg.image_size, cfg.image_size);
  }
  return s;
}

std::vector<SynthSample> generate_dataset(const DataConfig& cfg) {
  cfg.validate();
  std::vector<SynthSample> out;
  for (const auto& c : cfg.seen) {
    for (int i = 0; i < cfg.per_seen; ++i) out.push_back(generate_sample(cfg, c, Split::Seen, i));
  }
  for (const auto& c : cfg.unseen) {
    for (int i = 0; i < cfg.per_unseen; ++i) out.push_back(generate_sample(cfg, c, Split::Unseen, i));
  }
  return out;
}

std::vector<ManifestRecord> write_dataset(const std::vector<SynthSample>& samples, const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  std::vector<ManifestRecord> records;
  for (const auto& s : samples) {
    ManifestRecord r;
    r.id = s.id;
    r.category = s.category;
    r.split = s.split;
    r.image_path = "images/" + s.id + ".pgm";
    r.mask_path = "masks/" + s.id + ".pgm";
    r.defect = s.defect;
    write_pgm(root / r.image_path, s.image);
    write_mask_pgm(root / r.mask_path, s.mask);
    records.push_back(std::move(r));
  }
  write_manifest(records, root / "manifest.tsv");
  return records;
}

void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "id\tcategory\tsplit\timage_path\tmask_path\tis_anomalous\tdefect_type\tsize_class\tlocation\n";
  for (const auto& r : records) {
    os << r.id << '\t' << r.category << '\t' << to_string(r.split) << '\t' << r.image_path << '\t' << r.mask_path
       << '\t' << (r.is_anomalous() ? 1 : 0) << '\t';
    if (r.defect) {
      os << to_string(r.defect->type) << '\t' << to_string(r.defect->size) << '\t' << r.defect->location << '\n';
    } else {
      os << "-\t-\t-\n";
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  std::getline(is, line);  // header
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 9) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 9 fields");
    ManifestRecord r;
    r.id = f[0];
    r.category = f[1];
    r.split = parse_split(f[2]);
    r.image_path = f[3];
    r.mask_path = f[4];
    if (f[5] == "1") {
      DefectMeta m;
      m.type = parse_defect_type(f[6]);
      m.size = parse_size_class(f[7]);
      m.location = f[8];
      m.category = r.category;
      r.defect = std::move(m);
    } else if (f[5] != "0") {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": is_anomalous must be 0 or 1");
    }
    out.push_back(std::move(r));
  }
  return out;
}

LoadedSample load_sample(const ManifestRecord& record, const std::filesystem::path& root) {
  LoadedSample s{record, read_pgm(root / record.image_path), read_mask_pgm(root / record.mask_path)};
  if (s.image.rows() != s.mask.rows() || s.image.cols() != s.mask.cols()) {
    throw std::runtime_error("image and mask sizes differ for " + record.id);
  }
  return s;
}

std::vector<const ManifestRecord*> normal_pool(const std::vector<ManifestRecord>& records, const std::string& category) {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records) {
    if (r.category == category && !r.is_anomalous()) out.push_back(&r);
  }
  return out;
}

}  // namespace agvas
