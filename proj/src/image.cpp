#include "agvas/image.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace agvas {

Image quantize_8bit(const Image& img) {
  return img.unaryExpr([](double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; });
}

namespace {

void write_p5(const std::filesystem::path& path, Index rows, Index cols, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << cols << " " << rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string next_token(std::istream& in) {
  std::string tok;
  char ch = 0;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

MatrixT<unsigned char> read_p5(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  if (next_token(in) != "P5") throw std::runtime_error("not a binary PGM: " + path.string());
  const long cols = std::stol(next_token(in));
  const long rows = std::stol(next_token(in));
  const long maxval = std::stol(next_token(in));
  if (maxval != 255) throw std::runtime_error("unsupported PGM maxval in " + path.string());
  MatrixT<unsigned char> m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size()));
  if (in.gcount() != static_cast<std::streamsize>(m.size())) throw std::runtime_error("truncated PGM " + path.string());
  return m;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(img.size()));
  for (Index i = 0; i < img.size(); ++i) {
    bytes[static_cast<std::size_t>(i)] =
        static_cast<unsigned char>(std::lround(std::clamp(img.data()[i], 0.0, 1.0) * 255.0));
  }
  write_p5(path, img.rows(), img.cols(), bytes);
}

void write_mask_pgm(const std::filesystem::path& path, const Mask& mask) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(mask.size()));
  for (Index i = 0; i < mask.size(); ++i) bytes[static_cast<std::size_t>(i)] = mask.data()[i] ? 255 : 0;
  write_p5(path, mask.rows(), mask.cols(), bytes);
}

Image read_pgm(const std::filesystem::path& path) { return read_p5(path).cast<double>() / 255.0; }

Mask read_mask_pgm(const std::filesystem::path& path) {
  const auto raw = read_p5(path);
  return raw.unaryExpr([](unsigned char v) -> std::uint8_t { return v ? 1 : 0; });
}

void write_f64(const std::filesystem::path& path, const Matrix& m) {
  static_assert(std::endian::native == std::endian::little, "sidecar writer assumes a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto rows = static_cast<std::uint32_t>(m.rows());
  const auto cols = static_cast<std::uint32_t>(m.cols());
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * 8));
}

Matrix read_f64(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::uint32_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&cols), 4);
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * 8));
  if (!in) throw std::runtime_error("truncated sidecar " + path.string());
  return m;
}

Mask downsample_mask(const Mask& mask, Index grid) {
  if (mask.rows() % grid != 0 || mask.cols() % grid != 0) {
    throw std::invalid_argument("downsample_mask: size not divisible by grid");
  }
  const Index bh = mask.rows() / grid;
  const Index bw = mask.cols() / grid;
  Mask out(grid, grid);
  for (Index r = 0; r < grid; ++r) {
    for (Index c = 0; c < grid; ++c) {
      const int count = mask.block(r * bh, c * bw, bh, bw).cast<int>().sum();
      out(r, c) = 2 * count >= bh * bw ? 1 : 0;
    }
  }
  return out;
}

Matrix to_grid(const Matrix& flat, Index rows, Index cols) {
  if (flat.size() != rows * cols) throw std::invalid_argument("to_grid: size mismatch");
  Matrix out(rows, cols);
  std::memcpy(out.data(), flat.data(), static_cast<std::size_t>(flat.size()) * sizeof(double));
  return out;
}

}  // namespace agvas
