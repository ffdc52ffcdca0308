#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace agvas {

enum class Anchor : int { Nor = 0, Ano = 1, Seg = 2 };

inline constexpr std::array<Anchor, 3> kAllAnchors = {Anchor::Nor, Anchor::Ano, Anchor::Seg};
inline constexpr std::array<std::string_view, 3> kAnchorTokens = {"[NOR]", "[ANO]", "[SEG]"};
inline constexpr std::string_view kAnchorTriple = "[NOR][ANO][SEG]";

inline std::string_view anchor_token(Anchor a) { return kAnchorTokens[static_cast<std::size_t>(a)]; }

/// Small set of anchors, e.g. which anchors a sample supervises.
class AnchorSet {
 public:
  constexpr AnchorSet() = default;
  static constexpr AnchorSet all() { return AnchorSet(0b111); }
  static constexpr AnchorSet none() { return AnchorSet(0); }
  static constexpr AnchorSet only(Anchor a) { return AnchorSet(static_cast<std::uint8_t>(1u << static_cast<int>(a))); }

  constexpr bool contains(Anchor a) const { return (bits_ >> static_cast<int>(a)) & 1u; }
  constexpr AnchorSet with(Anchor a) const { return AnchorSet(bits_ | static_cast<std::uint8_t>(1u << static_cast<int>(a))); }
  constexpr AnchorSet intersect(AnchorSet o) const { return AnchorSet(bits_ & o.bits_); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint8_t bits() const { return bits_; }
  /// Members in canonical order [NOR], [ANO], [SEG].
  std::vector<Anchor> members() const;
  /// Concatenated anchor tokens in canonical order, e.g. "[NOR][ANO][SEG]".
  std::string tokens() const;
  /// Inverse of tokens(); throws std::invalid_argument on junk.
  static AnchorSet parse(std::string_view s);

  friend constexpr bool operator==(AnchorSet, AnchorSet) = default;

 private:
  explicit constexpr AnchorSet(std::uint8_t bits) : bits_(bits) {}
  std::uint8_t bits_ = 0;
};

/// Word-level pieces: whitespace split, punctuation and anchor tokens split off.
std::vector<std::string> split_words(std::string_view text);
/// Inverse of split_words for canonical text (no space before punctuation or
/// between adjacent anchors).
std::string join_words(std::span<const std::string> words);

/// Word-level vocabulary. Ids: specials first, then sorted base words, then
/// [NOR], [ANO], [SEG] as the three highest ids.
class Vocabulary {
 public:
  static constexpr std::array<std::string_view, 6> kSpecials = {"<pad>", "<unk>", "<bos>", "<eos>", "<img>", "<sep>"};

  Vocabulary() = default;
  /// Collects every word of `corpus` (anchors excluded) into a fresh vocabulary.
  static Vocabulary build(std::span<const std::string> corpus);
  /// Base vocabulary without anchors (used to test vocabulary extension).
  static Vocabulary build_base(std::span<const std::string> corpus);
  /// One token per line, UTF-8, zero-based line index = id.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Appends the three anchor tokens.
  Vocabulary with_anchors() const;

  int size() const { return static_cast<int>(tokens_.size()); }
  bool has_anchors() const { return has_anchors_; }
  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool contains(std::string_view token) const;

  int pad_id() const { return 0; }
  int unk_id() const { return 1; }
  int bos_id() const { return 2; }
  int eos_id() const { return 3; }
  int img_id() const { return 4; }
  int sep_id() const { return 5; }
  int anchor_id(Anchor a) const;
  bool is_anchor(int id) const { return has_anchors_ && id >= size() - 3; }

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  explicit Vocabulary(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  bool has_anchors_ = false;
};

}  // namespace agvas
