#pragma once

// Anchor-guided mask decoder: learnable queries and refined anchor embeddings
// exchange information with pixel tokens through two-way attention blocks,
// then an absolute (sigmoid) head and a relative (two-way softmax) head turn
// the decoded tokens into per-pixel probabilities.

#include <optional>
#include <vector>

#include "agvas/nn.hpp"
#include "agvas/vocab.hpp"

namespace agvas {

struct DecoderConfig {
  Index dim = 32;
  Index blocks = 2;
  Index heads = 4;
  Index mlp_hidden = 64;
  Index neck_hidden = 64;
  Index grid = 16;
  Index image_size = 64;
  double alpha = 0.5;
  double threshold = 0.5;
};

class AnchorGuidedDecoder {
 public:
  struct Decoded {
    Var tokens;  // Z_L
    Var pixels;  // f_p' after the output neck
  };
  /// Grid probabilities as pixel-token columns (grid*grid x 1); invalid when
  /// the corresponding head is disabled.
  struct Heads {
    Var seg;
    Var nor;
    Var ano;
  };

  AnchorGuidedDecoder() = default;
  AnchorGuidedDecoder(const DecoderConfig& cfg, Rng& rng);

  const DecoderConfig& config() const { return cfg_; }

  /// Query rows for `anchors` (canonical order) followed by `refined` rows.
  Var build_input(Tape& tape, Var refined, AnchorSet anchors) const;
  /// `position` is added to pixel tokens wherever they act as keys or queries.
  Decoded decode(Tape& tape, Var z0, Var pixels, Var position) const;
  Decoded decode(Tape& tape, Var z0, Var pixels) const { return decode(tape, z0, pixels, tape.param(position_)); }
  /// `anchors` names which query rows Z_L holds (rows 0..k-1 in canonical order).
  Heads heads(Var z_l, Var pixels, AnchorSet anchors) const;

  Parameter& queries() { return queries_; }
  Parameter& position() { return position_; }

  template <typename F>
  void visit(F&& f) {
    f(queries_);
    f(position_);
    for (auto& b : blocks_) {
      b.self_attn.visit(f);
      b.ln_self.visit(f);
      b.token_to_pixel.visit(f);
      b.ln_cross.visit(f);
      b.mlp.visit(f);
      b.ln_mlp.visit(f);
      b.pixel_to_token.visit(f);
      b.ln_pixel.visit(f);
    }
    neck_norm_.visit(f);
    neck_.visit(f);
  }

 private:
  struct Block {
    MultiHeadAttention self_attn;
    LayerNorm ln_self;
    MultiHeadAttention token_to_pixel;
    LayerNorm ln_cross;
    FeedForward mlp;
    LayerNorm ln_mlp;
    MultiHeadAttention pixel_to_token;
    LayerNorm ln_pixel;
  };

  DecoderConfig cfg_;
  Parameter queries_;   // 3 x dim, rows in anchor order
  Parameter position_;  // grid*grid x dim
  std::vector<Block> blocks_;
  // Residual per-pixel MLP after the last block, in place of the GELU
  // upsampling convolutions of the original two-way decoder. Without it the
  // heads are linear in the pixel stream and cannot be polarity-blind.
  LayerNorm neck_norm_;
  FeedForward neck_;
};

struct ProbMaps {
  // Decoder-grid maps (grid x grid); empty when the head is absent.
  Matrix seg;
  Matrix nor;
  Matrix ano;
  Matrix fused;
  // Image-resolution fused map and its binarization.
  Matrix prob;
  Mask mask;
};

/// P = alpha*P_seg + (1-alpha)*P_ano on the grid; when one map is empty the
/// other is used alone. Upsampled bilinearly to `image_size`, then M = P > threshold.
ProbMaps fuse_and_binarize(Matrix seg, Matrix ano, const DecoderConfig& cfg);

/// Converts head outputs to maps (grid reshaping, then fusion).
ProbMaps to_prob_maps(const AnchorGuidedDecoder::Heads& heads, const DecoderConfig& cfg);

}  // namespace agvas
