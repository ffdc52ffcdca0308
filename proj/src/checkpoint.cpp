#include "agvas/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

namespace agvas {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'A', 'G', 'V', 'A', 'S', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint truncated");
  return v;
}

void put_matrix(std::ostream& os, const Matrix& m) {
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

void get_matrix(std::istream& is, Matrix& m) {
  is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint truncated");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const AdamW& opt, const CheckpointInfo& info) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kVersion);
  put<std::uint64_t>(os, info.iteration);
  put<std::uint64_t>(os, info.config_hash);
  put<std::uint64_t>(os, opt.steps());
  put<std::uint32_t>(os, static_cast<std::uint32_t>(opt.params().size()));
  for (std::size_t i = 0; i < opt.params().size(); ++i) {
    const Parameter& p = *opt.params()[i];
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rows()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.cols()));
    put_matrix(os, p.value);
    put_matrix(os, opt.moments()[i].m);
    put_matrix(os, opt.moments()[i].v);
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

CheckpointInfo load_checkpoint(const std::filesystem::path& path, AdamW& opt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw std::runtime_error("not a checkpoint: " + path.string());
  if (get<std::uint32_t>(is) != kVersion) throw std::runtime_error("unsupported checkpoint version");
  CheckpointInfo info;
  info.iteration = get<std::uint64_t>(is);
  info.config_hash = get<std::uint64_t>(is);
  const std::uint64_t steps = get<std::uint64_t>(is);
  const std::uint32_t n = get<std::uint32_t>(is);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < opt.params().size(); ++i) index.emplace(opt.params()[i]->name, i);
  if (n != opt.params().size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(n) + " parameters, model has " +
                             std::to_string(opt.params().size()));
  }
  for (std::uint32_t k = 0; k < n; ++k) {
    const std::uint32_t len = get<std::uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const std::uint32_t rows = get<std::uint32_t>(is);
    const std::uint32_t cols = get<std::uint32_t>(is);
    auto it = index.find(name);
    if (it == index.end()) throw std::runtime_error("checkpoint parameter not in model: " + name);
    Parameter& p = *opt.params()[it->second];
    if (p.value.rows() != rows || p.value.cols() != cols) throw std::runtime_error("shape mismatch for " + name);
    get_matrix(is, p.value);
    get_matrix(is, opt.moments()[it->second].m);
    get_matrix(is, opt.moments()[it->second].v);
  }
  opt.set_steps(steps);
  return info;
}

}  // namespace agvas
