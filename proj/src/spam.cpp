#include "agvas/spam.hpp"

#include <array>

namespace agvas {

SemanticPixelAlignment::SemanticPixelAlignment(Index dim, Index heads, Rng& rng)
    : attn_("spam.attn", dim, heads, rng), norm_("spam.norm", dim) {}

SemanticPixelAlignment::Output SemanticPixelAlignment::align(Tape& tape, Var semantic, Var pixel) const {
  if (semantic.cols() != pixel.cols()) throw ShapeError("align: semantic and pixel widths differ");
  auto a = attn_.forward(tape, semantic, pixel, pixel);
  Var aligned = norm_.forward(tape, semantic + a.out);
  return Output{aligned, a.out, std::move(a.weights)};
}

Var assemble_prefix(Var semantic, Var aligned) {
  if (!aligned.valid()) return semantic;
  const std::array<Var, 2> parts = {semantic, aligned};
  return ad::concat_rows(parts);
}

}  // namespace agvas
