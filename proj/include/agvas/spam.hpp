#pragma once

// Semantic patches query pixel patches; the result is appended to the
// semantic tokens as the image prefix of the language model.

#include <vector>

#include "agvas/nn.hpp"

namespace agvas {

class SemanticPixelAlignment {
 public:
  struct Output {
    Var aligned;               // LN(f_s + attended)
    Var attended;              // cross-attention output before the residual
    std::vector<Var> weights;  // per head, semantic tokens x pixel tokens
  };

  SemanticPixelAlignment() = default;
  SemanticPixelAlignment(Index dim, Index heads, Rng& rng);

  Output align(Tape& tape, Var semantic, Var pixel) const;

  MultiHeadAttention& attention() { return attn_; }
  template <typename F>
  void visit(F&& f) {
    attn_.visit(f);
    norm_.visit(f);
  }

 private:
  MultiHeadAttention attn_;
  LayerNorm norm_;
};

/// [f_s | f_align], or f_s alone when `aligned` is invalid.
Var assemble_prefix(Var semantic, Var aligned);

}  // namespace agvas
