#include "agvas/micro_lm.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>

namespace agvas {

Matrix prefix_causal_mask(Index prefix, Index total) {
  constexpr double kBlocked = -std::numeric_limits<double>::infinity();
  Matrix mask = Matrix::Zero(total, total);
  for (Index i = 0; i < total; ++i) {
    for (Index j = i + 1; j < total; ++j) {
      if (!(i < prefix && j < prefix)) mask(i, j) = kBlocked;
    }
  }
  return mask;
}

MicroLM::MicroLM(const LmConfig& cfg, Index vocab_size, Rng& rng) : cfg_(cfg) {
  token_embedding_ = Parameter{"lm.token_embedding", normal_matrix(vocab_size, cfg.dim, 0.1, rng), true, true};
  position_embedding_ = Parameter{"lm.position_embedding", normal_matrix(cfg.context, cfg.dim, 0.02, rng), true, false};
  for (Index l = 0; l < cfg.layers; ++l) {
    const std::string p = "lm.block" + std::to_string(l);
    blocks_.push_back(Block{LayerNorm(p + ".ln1", cfg.dim), MultiHeadAttention(p + ".attn", cfg.dim, cfg.heads, rng),
                            LayerNorm(p + ".ln2", cfg.dim), FeedForward(p + ".ffn", cfg.dim, cfg.ffn_hidden, rng)});
  }
  final_norm_ = LayerNorm("lm.final_norm", cfg.dim);
  head_ = Parameter{"lm.head", normal_matrix(vocab_size, cfg.dim, 1.0 / std::sqrt(static_cast<double>(cfg.dim)), rng),
                    true, true};
}

MicroLM::Output MicroLM::forward(Tape& tape, Var prefix, std::span<const int> text_ids) const {
  const Index p = prefix.rows();
  const Index n = static_cast<Index>(text_ids.size());
  const Index total = p + n;
  if (p < 1) throw std::invalid_argument("MicroLM::forward: empty image prefix");
  if (prefix.cols() != cfg_.dim) throw ShapeError("MicroLM::forward: prefix width differs from model width");
  if (total > cfg_.context) {
    throw ContextOverflow("sequence of " + std::to_string(total) + " exceeds context " + std::to_string(cfg_.context));
  }
  Var x = prefix;
  if (n > 0) {
    const std::array<Var, 2> parts = {prefix, ad::gather_rows(tape.param(token_embedding_), text_ids)};
    x = ad::concat_rows(parts);
  }
  x = x + ad::slice_rows(tape.param(position_embedding_), 0, total);
  const Matrix mask = prefix_causal_mask(p, total);
  for (const Block& b : blocks_) {
    Var h = b.ln1.forward(tape, x);
    x = x + b.attn(tape, h, h, h, &mask);
    x = x + b.ffn.forward(tape, b.ln2.forward(tape, x));
  }
  Var hidden = final_norm_.forward(tape, x);
  Var gen_rows = ad::slice_rows(hidden, p - 1, n + 1);
  Var logits = ad::matmul_nt(gen_rows, tape.param(head_));
  return Output{logits, hidden, p};
}

std::vector<int> MicroLM::generate(const Matrix& prefix, std::span<const int> prompt_ids, int max_new,
                                   int eos_id) const {
  std::vector<int> text(prompt_ids.begin(), prompt_ids.end());
  std::vector<int> out;
  for (int step = 0; step < max_new; ++step) {
    if (prefix.rows() + static_cast<Index>(text.size()) + 1 > cfg_.context) break;
    Tape tape(false);
    const Output o = forward(tape, tape.constant(prefix), text);
    const Matrix& lg = o.logits.value();
    Index best = 0;
    lg.row(lg.rows() - 1).maxCoeff(&best);
    const int next = static_cast<int>(best);
    if (next == eos_id) break;
    out.push_back(next);
    text.push_back(next);
  }
  return out;
}

void MicroLM::extend_vocabulary(Index extra, Rng& rng) {
  auto grow = [&](Parameter& p, double std_dev) {
    Matrix m(p.value.rows() + extra, p.value.cols());
    m.topRows(p.value.rows()) = p.value;
    m.bottomRows(extra) = normal_matrix(extra, p.value.cols(), std_dev, rng);
    p.value = std::move(m);
  };
  grow(token_embedding_, 0.1);
  grow(head_, 1.0 / std::sqrt(static_cast<double>(cfg_.dim)));
}

void MicroLM::enable_adapters(Index rank, Rng& rng, double alpha) {
  for (auto& b : blocks_) {
    for (Linear* l : {&b.attn.q(), &b.attn.k(), &b.attn.v(), &b.attn.o(), &b.ffn.up(), &b.ffn.down()}) {
      l->attach_adapter(rank, rng, alpha);
      l->set_base_trainable(false);
    }
    for (LayerNorm* ln : {&b.ln1, &b.ln2}) {
      ln->gain().trainable = false;
      ln->bias().trainable = false;
    }
  }
  final_norm_.gain().trainable = false;
  final_norm_.bias().trainable = false;
  position_embedding_.trainable = false;
  adapters_ = true;
}

AnchorHidden extract_anchor_hidden(Var hidden, Index prefix_len, std::span<const int> text_ids,
                                   const Vocabulary& vocab, AnchorSet required) {
  AnchorHidden out;
  std::vector<Var> rows;
  for (Anchor a : required.members()) {
    const int id = vocab.anchor_id(a);
    Index pos = -1;
    for (std::size_t i = 0; i < text_ids.size(); ++i) {
      if (text_ids[i] == id) {
        pos = static_cast<Index>(i);
        break;
      }
    }
    if (pos < 0) throw AnchorsMissing("response lacks " + std::string(anchor_token(a)));
    out.anchors.push_back(a);
    out.text_positions.push_back(pos);
    rows.push_back(ad::slice_rows(hidden, prefix_len + pos, 1));
  }
  if (rows.empty()) throw AnchorsMissing("no anchors requested");
  out.rows = rows.size() == 1 ? rows.front() : ad::concat_rows(rows);
  return out;
}

TokenRefiner::TokenRefiner(Index in, Index hidden, Index out, Rng& rng)
    : first_("refiner.fc1", in, hidden, rng), second_("refiner.fc2", hidden, out, rng) {}

Var TokenRefiner::forward(Tape& tape, Var anchors) const {
  return second_.forward(tape, ad::gelu(first_.forward(tape, anchors)));
}

}  // namespace agvas
