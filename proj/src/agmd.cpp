#include "agvas/agmd.hpp"

#include <array>
#include <string>

#include "agvas/image.hpp"
#include "agvas/kernels.hpp"

namespace agvas {

AnchorGuidedDecoder::AnchorGuidedDecoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  queries_ = Parameter{"agmd.queries", normal_matrix(3, cfg.dim, 0.02, rng), true, false};
  position_ = Parameter{"agmd.position", normal_matrix(cfg.grid * cfg.grid, cfg.dim, 0.1, rng), true, false};
  for (Index i = 0; i < cfg.blocks; ++i) {
    const std::string p = "agmd.block" + std::to_string(i);
    Block b{MultiHeadAttention(p + ".self_attn", cfg.dim, cfg.heads, rng),
            LayerNorm(p + ".ln_self", cfg.dim),
            MultiHeadAttention(p + ".token_to_pixel", cfg.dim, cfg.heads, rng),
            LayerNorm(p + ".ln_cross", cfg.dim),
            FeedForward(p + ".mlp", cfg.dim, cfg.mlp_hidden, rng),
            LayerNorm(p + ".ln_mlp", cfg.dim),
            MultiHeadAttention(p + ".pixel_to_token", cfg.dim, cfg.heads, rng),
            LayerNorm(p + ".ln_pixel", cfg.dim)};
    blocks_.push_back(std::move(b));
  }
  neck_norm_ = LayerNorm("agmd.neck.norm", cfg.dim);
  neck_ = FeedForward("agmd.neck.mlp", cfg.dim, cfg.neck_hidden, rng);
}

Var AnchorGuidedDecoder::build_input(Tape& tape, Var refined, AnchorSet anchors) const {
  const auto members = anchors.members();
  if (static_cast<Index>(members.size()) != refined.rows()) {
    throw ShapeError("build_input: refined rows do not match anchor count");
  }
  Var q = tape.param(queries_);
  std::vector<Var> rows;
  if (members.size() == 3) {
    rows.push_back(q);
  } else {
    for (Anchor a : members) rows.push_back(ad::slice_rows(q, static_cast<Index>(a), 1));
  }
  rows.push_back(refined);
  return ad::concat_rows(rows);
}

AnchorGuidedDecoder::Decoded AnchorGuidedDecoder::decode(Tape& tape, Var z0, Var pixels, Var position) const {
  if (pixels.rows() != position.rows() || pixels.cols() != cfg_.dim || z0.cols() != cfg_.dim) {
    throw ShapeError("decode: pixel tokens, positions and tokens must share the decoder width");
  }
  Var z = z0;
  Var f = pixels;
  // Post-norm, as in the two-way blocks of SAM: each sublayer adds to its
  // stream and the sum is normalised.
  for (const Block& b : blocks_) {
    z = b.ln_self.forward(tape, z + b.self_attn(tape, z, z, z));
    z = b.ln_cross.forward(tape, z + b.token_to_pixel(tape, z, f + position, f));
    z = b.ln_mlp.forward(tape, z + b.mlp.forward(tape, z));
    f = b.ln_pixel.forward(tape, f + b.pixel_to_token(tape, f + position, z, z));
  }
  f = f + neck_.forward(tape, neck_norm_.forward(tape, f));
  return Decoded{z, f};
}

AnchorGuidedDecoder::Heads AnchorGuidedDecoder::heads(Var z_l, Var pixels, AnchorSet anchors) const {
  Heads h;
  Index row = 0;
  Var t_nor, t_ano;
  for (Anchor a : anchors.members()) {
    Var t = ad::slice_rows(z_l, row++, 1);
    if (a == Anchor::Seg) h.seg = ad::sigmoid(ad::matmul_nt(pixels, t));
    if (a == Anchor::Nor) t_nor = t;
    if (a == Anchor::Ano) t_ano = t;
  }
  if (t_nor.valid() != t_ano.valid()) throw std::invalid_argument("heads: relative anchors come in pairs");
  if (t_nor.valid()) {
    const std::array<Var, 2> pair = {t_nor, t_ano};
    Var rel = ad::softmax_rows(ad::matmul_nt(pixels, ad::concat_rows(pair)));
    h.nor = ad::slice_cols(rel, 0, 1);
    h.ano = ad::slice_cols(rel, 1, 1);
  }
  return h;
}

ProbMaps fuse_and_binarize(Matrix seg, Matrix ano, const DecoderConfig& cfg) {
  ProbMaps out;
  if (seg.size() == 0 && ano.size() == 0) throw std::invalid_argument("fuse_and_binarize: no maps");
  if (seg.size() != 0 && ano.size() != 0) {
    if (seg.rows() != ano.rows() || seg.cols() != ano.cols()) throw ShapeError("fuse_and_binarize: grid mismatch");
    out.fused = cfg.alpha * seg + (1.0 - cfg.alpha) * ano;
  } else {
    out.fused = seg.size() != 0 ? seg : ano;
  }
  out.seg = std::move(seg);
  out.ano = std::move(ano);
  out.prob = kernels::bilinear_resize(out.fused, cfg.image_size, cfg.image_size);
  out.mask = threshold_strict(out.prob, cfg.threshold);
  return out;
}

ProbMaps to_prob_maps(const AnchorGuidedDecoder::Heads& heads, const DecoderConfig& cfg) {
  auto grid = [&](Var v) { return v.valid() ? to_grid(v.value(), cfg.grid, cfg.grid) : Matrix(); };
  ProbMaps p = fuse_and_binarize(grid(heads.seg), grid(heads.ano), cfg);
  p.nor = grid(heads.nor);
  return p;
}

}  // namespace agvas
