#pragma once

// The composed segmentation assistant: stub encoders -> projections -> SPAM
// -> micro-LM -> anchor extraction -> token refiner -> decoder -> maps.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agvas/agmd.hpp"
#include "agvas/encoders.hpp"
#include "agvas/instruct.hpp"
#include "agvas/losses.hpp"
#include "agvas/micro_lm.hpp"
#include "agvas/spam.hpp"

namespace agvas {

enum class Variant { Full, NoSegAnchor, NoRelativeAnchors, NoSpam };
inline constexpr std::array<Variant, 4> kVariants = {Variant::Full, Variant::NoSegAnchor, Variant::NoRelativeAnchors,
                                                     Variant::NoSpam};
std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);
/// Row label used in ablation tables.
std::string_view variant_label(Variant v);
AnchorSet variant_anchors(Variant v);

struct ModelConfig {
  EncoderConfig encoder;
  LmConfig lm;
  DecoderConfig decoder;
  Index refiner_hidden = 64;
  Index spam_heads = 4;
  Variant variant = Variant::Full;
  bool adapters = false;
  Index adapter_rank = 4;
  double adapter_alpha = 8.0;
  std::uint64_t seed = 1;
};

struct ImageFeatures {
  FeatureMap semantic;
  FeatureMap pixel;
};

/// Token layout of one exchange: [<bos>] instruction [<sep>] response [<eos>].
struct EncodedSample {
  std::vector<int> text_ids;
  Index response_begin = 0;  // index of the first response token in text_ids
  Index response_end = 0;    // one past the last response token (the <eos> index)
  AnchorSet supervise;
  std::optional<SupervisionTriple> gt;
};

/// `grid_mask` is the decoder-grid mask; pass nullptr when the sample has none.
EncodedSample encode_sample(const InstructionSample& s, const Vocabulary& vocab, const Mask* grid_mask);
/// Prompt part only: [<bos>] instruction [<sep>].
std::vector<int> encode_prompt(std::string_view instruction, const Vocabulary& vocab);

class AgVasModel {
 public:
  struct Forward {
    MicroLM::Output lm;
    Var prefix;
    std::optional<AnchorHidden> anchors;
    Var refined;
    AnchorGuidedDecoder::Decoded decoded;
    AnchorGuidedDecoder::Heads heads;
  };

  struct LossParts {
    Var total;
    double text = 0.0;
    double seg = 0.0;
    bool has_seg = false;
  };

  struct Inference {
    std::vector<int> response_ids;
    std::string response;
    bool anchors_missing = false;
    ProbMaps maps;
  };

  AgVasModel(const ModelConfig& cfg, const Vocabulary& vocab);

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  const StubEncoders& encoders() const { return encoders_; }
  AnchorSet anchors() const { return variant_anchors(cfg_.variant); }

  ImageFeatures encode(const Image& img) const;

  /// Projected f_s, plus f_align unless the variant drops SPAM.
  Var image_prefix(Tape& tape, const ImageFeatures& f) const;
  /// Runs the LM on `text_ids`; when `decode` is set, anchors are taken from
  /// text_ids[response_begin..] and the decoder runs on them.
  Forward forward(Tape& tape, const ImageFeatures& f, std::span<const int> text_ids, Index response_begin,
                  bool decode) const;
  LossParts loss(Tape& tape, const ImageFeatures& f, const EncodedSample& s, const LossConfig& cfg) const;

  /// Greedy response, then decoding from the anchors in it. Missing anchors
  /// give an all-zero map and an empty mask.
  Inference infer(const ImageFeatures& f, std::string_view instruction, int max_new = 96) const;

  /// Every parameter in a fixed order.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  template <typename F>
  void visit(F&& f) {
    proj_semantic_.visit(f);
    proj_pixel_.visit(f);
    spam_.visit(f);
    lm_.visit(f);
    refiner_.visit(f);
    decoder_.visit(f);
  }

  FeatureProjection& projection_semantic() { return proj_semantic_; }
  FeatureProjection& projection_pixel() { return proj_pixel_; }
  SemanticPixelAlignment& spam() { return spam_; }
  MicroLM& lm() { return lm_; }
  TokenRefiner& refiner() { return refiner_; }
  AnchorGuidedDecoder& decoder() { return decoder_; }

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  StubEncoders encoders_;
  FeatureProjection proj_semantic_, proj_pixel_;
  SemanticPixelAlignment spam_;
  MicroLM lm_;
  TokenRefiner refiner_;
  AnchorGuidedDecoder decoder_;
};

}  // namespace agvas
