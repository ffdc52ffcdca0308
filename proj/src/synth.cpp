#include "agvas/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "agvas/image.hpp"

namespace agvas {

namespace {

constexpr double kTextureLo = 0.28;
constexpr double kTextureHi = 0.72;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_name(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

void add_noise(Image& img, Rng& rng, double amplitude) {
  for (Index i = 0; i < img.size(); ++i) img.data()[i] += uniform(rng, -amplitude, amplitude);
}

Image render_stripes(Index n, Rng& rng) {
  const double theta = uniform_int(rng, 0, 7) * std::numbers::pi / 8.0 + uniform(rng, -0.1, 0.1);
  const double period = uniform(rng, 6.0, 14.0);
  const double amp = uniform(rng, 0.08, 0.18);
  const double phase = uniform(rng, 0.0, kTwoPi);
  const double base = uniform(rng, 0.46, 0.54);
  Image img(n, n);
  for (Index y = 0; y < n; ++y) {
    for (Index x = 0; x < n; ++x) {
      const double u = static_cast<double>(x) * std::cos(theta) + static_cast<double>(y) * std::sin(theta);
      img(y, x) = base + amp * std::sin(kTwoPi * u / period + phase);
    }
  }
  add_noise(img, rng, 0.02);
  return img;
}

Image render_checker(Index n, Rng& rng) {
  const int cell = uniform_int(rng, 6, 12);
  const int ox = uniform_int(rng, 0, cell - 1);
  const int oy = uniform_int(rng, 0, cell - 1);
  const double contrast = uniform(rng, 0.08, 0.16);
  const double base = uniform(rng, 0.46, 0.54);
  Image img(n, n);
  for (Index y = 0; y < n; ++y) {
    for (Index x = 0; x < n; ++x) {
      const int parity = ((static_cast<int>(x) + ox) / cell + (static_cast<int>(y) + oy) / cell) % 2;
      img(y, x) = base + (parity ? contrast : -contrast);
    }
  }
  add_noise(img, rng, 0.02);
  return img;
}

Image render_blobs(Index n, Rng& rng) {
  Image img = Image::Constant(n, n, uniform(rng, 0.46, 0.54));
  const int count = uniform_int(rng, 6, 10);
  for (int k = 0; k < count; ++k) {
    const double cx = uniform(rng, 0.0, static_cast<double>(n));
    const double cy = uniform(rng, 0.0, static_cast<double>(n));
    const double sigma = uniform(rng, 4.0, 10.0);
    const double amp = uniform(rng, -0.15, 0.15);
    for (Index y = 0; y < n; ++y) {
      for (Index x = 0; x < n; ++x) {
        const double d2 = std::pow(static_cast<double>(x) - cx, 2) + std::pow(static_cast<double>(y) - cy, 2);
        img(y, x) += amp * std::exp(-d2 / (2.0 * sigma * sigma));
      }
    }
  }
  add_noise(img, rng, 0.015);
  return img;
}

Image render_bottle(Index n, Rng& rng) {
  const double bg = uniform(rng, 0.32, 0.38);
  const double cx = static_cast<double>(n) / 2.0 + uniform(rng, -3.0, 3.0);
  const double cy = static_cast<double>(n) / 2.0 + uniform(rng, -3.0, 3.0);
  const double radius = uniform(rng, 20.0, 28.0);
  const double inner = uniform(rng, 0.62, 0.68);
  const double outer = uniform(rng, 0.44, 0.50);
  Image img(n, n);
  for (Index y = 0; y < n; ++y) {
    for (Index x = 0; x < n; ++x) {
      const double d = std::hypot(static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy);
      img(y, x) = d <= radius ? inner + (outer - inner) * d / radius : bg;
    }
  }
  add_noise(img, rng, 0.015);
  return img;
}

Image render_mesh(Index n, Rng& rng) {
  const int spacing = uniform_int(rng, 8, 12);
  const int thick = uniform_int(rng, 1, 2);
  const int ox = uniform_int(rng, 0, spacing - 1);
  const int oy = uniform_int(rng, 0, spacing - 1);
  const double bg = uniform(rng, 0.40, 0.48);
  const double line = uniform(rng, 0.58, 0.66);
  Image img(n, n);
  for (Index y = 0; y < n; ++y) {
    for (Index x = 0; x < n; ++x) {
      const bool on = (static_cast<int>(x) + ox) % spacing < thick || (static_cast<int>(y) + oy) % spacing < thick;
      img(y, x) = on ? line : bg;
    }
  }
  add_noise(img, rng, 0.02);
  return img;
}

Image render_speckle(Index n, Rng& rng) {
  Image noise(n, n);
  std::normal_distribution<double> dist(0.0, 0.12);
  for (Index i = 0; i < noise.size(); ++i) noise.data()[i] = dist(rng);
  Image img(n, n);
  const double base = uniform(rng, 0.46, 0.54);
  for (Index y = 0; y < n; ++y) {
    for (Index x = 0; x < n; ++x) {
      double acc = 0.0;
      int cnt = 0;
      for (Index dy = -1; dy <= 1; ++dy) {
        for (Index dx = -1; dx <= 1; ++dx) {
          const Index yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= n || xx >= n) continue;
          acc += noise(yy, xx);
          ++cnt;
        }
      }
      img(y, x) = base + acc / cnt;
    }
  }
  return img;
}

// Coverage helpers: pixel centres are at (x + 0.5, y + 0.5).
double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

struct Point {
  double x, y;
};

std::vector<Point> random_polyline(Rng& rng, Index n, double length, int segments, double max_turn) {
  const double margin = 4.0;
  const double lim = static_cast<double>(n) - margin;
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<Point> pts;
    pts.push_back({uniform(rng, margin, lim), uniform(rng, margin, lim)});
    double heading = uniform(rng, 0.0, kTwoPi);
    bool inside = true;
    for (int s = 0; s < segments && inside; ++s) {
      const double step = length / segments;
      const Point& last = pts.back();
      Point next{last.x + step * std::cos(heading), last.y + step * std::sin(heading)};
      inside = next.x >= margin && next.y >= margin && next.x <= lim && next.y <= lim;
      pts.push_back(next);
      heading += uniform(rng, -max_turn, max_turn);
    }
    if (inside) return pts;
  }
  // Fall back to a centred horizontal stroke.
  const double c = static_cast<double>(n) / 2.0;
  return {{c - length / 2.0, c}, {c + length / 2.0, c}};
}

template <typename Covers, typename Value>
void paint(Image& img, Covers&& covers, Value&& value) {
  for (Index y = 0; y < img.rows(); ++y) {
    for (Index x = 0; x < img.cols(); ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      if (covers(px, py)) img(y, x) = value(px, py);
    }
  }
}

void paint_polyline(Image& img, const std::vector<Point>& pts, double half_width, double value) {
  paint(
      img,
      [&](double px, double py) {
        for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
          if (segment_distance(px, py, pts[i].x, pts[i].y, pts[i + 1].x, pts[i + 1].y) <= half_width) return true;
        }
        return false;
      },
      [&](double, double) { return value; });
}

}  // namespace

std::string_view to_string(DefectType t) {
  switch (t) {
    case DefectType::Hole: return "hole";
    case DefectType::Scratch: return "scratch";
    case DefectType::Spot: return "spot";
    case DefectType::CrackLine: return "crack_line";
    case DefectType::MissingCorner: return "missing_corner";
  }
  return "hole";
}

std::string_view defect_phrase(DefectType t) {
  switch (t) {
    case DefectType::Hole: return "hole";
    case DefectType::Scratch: return "scratch";
    case DefectType::Spot: return "spot";
    case DefectType::CrackLine: return "crack";
    case DefectType::MissingCorner: return "missing corner";
  }
  return "hole";
}

std::string_view to_string(SizeClass s) {
  switch (s) {
    case SizeClass::Small: return "small";
    case SizeClass::Medium: return "medium";
    case SizeClass::Large: return "large";
  }
  return "small";
}

std::string_view to_string(Split s) { return s == Split::Seen ? "seen" : "unseen"; }

DefectType parse_defect_type(std::string_view s) {
  for (DefectType t : kDefectTypes) {
    if (to_string(t) == s) return t;
  }
  throw std::invalid_argument("unknown defect type: " + std::string(s));
}

SizeClass parse_size_class(std::string_view s) {
  for (SizeClass c : kSizeClasses) {
    if (to_string(c) == s) return c;
  }
  throw std::invalid_argument("unknown size class: " + std::string(s));
}

Split parse_split(std::string_view s) {
  if (s == "seen") return Split::Seen;
  if (s == "unseen") return Split::Unseen;
  throw std::invalid_argument("unknown split: " + std::string(s));
}

const std::vector<std::string>& category_registry() {
  static const std::vector<std::string> names = {"stripes", "checker", "blobs", "bottle", "mesh", "speckle"};
  return names;
}

bool is_registered_category(std::string_view category) {
  const auto& reg = category_registry();
  return std::find(reg.begin(), reg.end(), category) != reg.end();
}

Image generate_texture_image(std::string_view category, std::uint64_t seed, Index size) {
  Rng rng(splitmix(seed ^ hash_name(category)));
  Image img;
  if (category == "stripes") {
    img = render_stripes(size, rng);
  } else if (category == "checker") {
    img = render_checker(size, rng);
  } else if (category == "blobs") {
    img = render_blobs(size, rng);
  } else if (category == "bottle") {
    img = render_bottle(size, rng);
  } else if (category == "mesh") {
    img = render_mesh(size, rng);
  } else if (category == "speckle") {
    img = render_speckle(size, rng);
  } else {
    throw std::invalid_argument("unknown category: " + std::string(category));
  }
  return quantize_8bit(img.cwiseMax(kTextureLo).cwiseMin(kTextureHi));
}

Injection inject_defect(const Image& img, DefectType type, std::uint64_t seed, std::string_view category) {
  Rng rng(splitmix(seed ^ 0xdefec7ULL ^ (static_cast<std::uint64_t>(type) << 40)));
  const auto size = kSizeClasses[static_cast<std::size_t>(uniform_int(rng, 0, 2))];
  const int si = static_cast<int>(size);
  const Index n = img.rows();
  const double nd = static_cast<double>(n);
  Image out = img;

  switch (type) {
    case DefectType::Hole: {
      static constexpr double lo[] = {3.5, 5.5, 8.0};
      static constexpr double hi[] = {4.5, 7.0, 10.0};
      const double radius = uniform(rng, lo[si], hi[si]);
      const double cx = uniform(rng, radius + 1.0, nd - radius - 1.0);
      const double cy = uniform(rng, radius + 1.0, nd - radius - 1.0);
      const double depth = uniform(rng, 0.02, 0.06);
      paint(
          out, [&](double px, double py) { return std::hypot(px - cx, py - cy) <= radius; },
          [&](double px, double py) { return depth + 0.05 * std::hypot(px - cx, py - cy) / radius; });
      break;
    }
    case DefectType::Scratch: {
      static constexpr double width[] = {3.0, 4.0, 5.0};
      static constexpr double lo[] = {14.0, 20.0, 30.0};
      static constexpr double hi[] = {18.0, 28.0, 38.0};
      const auto pts = random_polyline(rng, n, uniform(rng, lo[si], hi[si]), 2, 0.5);
      paint_polyline(out, pts, width[si] / 2.0, uniform(rng, 0.92, 0.98));
      break;
    }
    case DefectType::Spot: {
      static constexpr double a_lo[] = {4.0, 6.0, 9.0};
      static constexpr double a_hi[] = {5.0, 8.0, 11.0};
      const double a = uniform(rng, a_lo[si], a_hi[si]);
      const double b = a * uniform(rng, 0.65, 0.9);
      const double rot = uniform(rng, 0.0, std::numbers::pi);
      const double cx = uniform(rng, a + 1.0, nd - a - 1.0);
      const double cy = uniform(rng, a + 1.0, nd - a - 1.0);
      const double v = uniform(rng, 0.86, 0.92);
      paint(
          out,
          [&](double px, double py) {
            const double dx = px - cx, dy = py - cy;
            const double u = dx * std::cos(rot) + dy * std::sin(rot);
            const double w = -dx * std::sin(rot) + dy * std::cos(rot);
            return (u * u) / (a * a) + (w * w) / (b * b) <= 1.0;
          },
          [&](double, double) { return v; });
      break;
    }
    case DefectType::CrackLine: {
      static constexpr double width[] = {3.0, 3.5, 4.5};
      static constexpr double length[] = {16.0, 24.0, 34.0};
      const auto pts = random_polyline(rng, n, length[si], 4, 1.0);
      paint_polyline(out, pts, width[si] / 2.0, uniform(rng, 0.04, 0.10));
      break;
    }
    case DefectType::MissingCorner: {
      static constexpr double lo[] = {10.0, 14.0, 19.0};
      static constexpr double hi[] = {12.0, 17.0, 23.0};
      const double leg = uniform(rng, lo[si], hi[si]);
      const int corner = uniform_int(rng, 0, 3);
      paint(
          out,
          [&](double px, double py) {
            const double x = (corner & 1) ? nd - px : px;
            const double y = (corner & 2) ? nd - py : py;
            return x + y <= leg;
          },
          [&](double, double) { return 0.0; });
      break;
    }
  }

  out = quantize_8bit(out);
  Mask mask(n, n);
  for (Index i = 0; i < out.size(); ++i) mask.data()[i] = out.data()[i] != img.data()[i] ? 1 : 0;
  if (mask.cast<int>().sum() == 0) throw std::logic_error("inject_defect: defect left the image unchanged");
  return Injection{std::move(out), mask, DefectMeta{type, location_from_mask(mask), size, std::string(category)}};
}

const std::array<std::string, 9>& location_phrases() {
  static const std::array<std::string, 9> names = {"upper left", "upper",      "upper right",
                                                   "left",       "center",     "right",
                                                   "lower left", "lower",      "lower right"};
  return names;
}

std::string location_phrase(int cell_row, int cell_col) {
  if (cell_row < 0 || cell_row > 2 || cell_col < 0 || cell_col > 2) {
    throw std::invalid_argument("location_phrase: cell out of range");
  }
  return location_phrases()[static_cast<std::size_t>(cell_row * 3 + cell_col)];
}

std::string location_from_mask(const Mask& mask) {
  double sx = 0.0, sy = 0.0;
  long count = 0;
  for (Index y = 0; y < mask.rows(); ++y) {
    for (Index x = 0; x < mask.cols(); ++x) {
      if (!mask(y, x)) continue;
      sx += static_cast<double>(x) + 0.5;
      sy += static_cast<double>(y) + 0.5;
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("location_from_mask: empty mask");
  const double cx = sx / static_cast<double>(count);
  const double cy = sy / static_cast<double>(count);
  const int col = std::min(2, static_cast<int>(cx * 3.0 / static_cast<double>(mask.cols())));
  const int row = std::min(2, static_cast<int>(cy * 3.0 / static_cast<double>(mask.rows())));
  return location_phrase(row, col);
}

}  // namespace agvas
