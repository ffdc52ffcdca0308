#pragma once

// Procedural defect imagery: textures per category, injected defects with
// exact masks, and the metadata the annotation grammar consumes.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "agvas/types.hpp"

namespace agvas {

enum class DefectType { Hole, Scratch, Spot, CrackLine, MissingCorner };
enum class SizeClass { Small, Medium, Large };
enum class Split { Seen, Unseen };

inline constexpr std::array<DefectType, 5> kDefectTypes = {DefectType::Hole, DefectType::Scratch, DefectType::Spot,
                                                          DefectType::CrackLine, DefectType::MissingCorner};
inline constexpr std::array<SizeClass, 3> kSizeClasses = {SizeClass::Small, SizeClass::Medium, SizeClass::Large};

/// Identifier form, e.g. "crack_line".
std::string_view to_string(DefectType t);
/// Prose form, e.g. "crack".
std::string_view defect_phrase(DefectType t);
std::string_view to_string(SizeClass s);
std::string_view to_string(Split s);
DefectType parse_defect_type(std::string_view s);
SizeClass parse_size_class(std::string_view s);
Split parse_split(std::string_view s);

struct DefectMeta {
  DefectType type = DefectType::Hole;
  std::string location;  // 3x3 cell phrase
  SizeClass size = SizeClass::Small;
  std::string category;
};

struct SynthSample {
  std::string id;
  std::string category;
  Split split = Split::Seen;
  Image image;
  Mask mask;
  std::optional<DefectMeta> defect;  // empty for normal samples

  bool is_anomalous() const { return defect.has_value(); }
};

/// Texture families available for rendering.
const std::vector<std::string>& category_registry();
bool is_registered_category(std::string_view category);

/// Deterministic per (category, seed); values in [0, 1], quantised to k/255.
/// Throws std::invalid_argument for unknown categories.
Image generate_texture_image(std::string_view category, std::uint64_t seed, Index size = 64);

struct Injection {
  Image image;
  Mask mask;  // exactly the pixels that changed
  DefectMeta meta;
};

Injection inject_defect(const Image& img, DefectType type, std::uint64_t seed, std::string_view category = "");

/// "upper left", "upper", ..., "lower right" for a 3x3 cell.
std::string location_phrase(int cell_row, int cell_col);
const std::array<std::string, 9>& location_phrases();
/// Phrase of the 3x3 cell containing the mask centroid. Mask must be nonempty.
std::string location_from_mask(const Mask& mask);

}  // namespace agvas
