#pragma once

// Small causal transformer over [image prefix | text] sequences, anchor
// hidden-state extraction, and the shared token refiner.

#include <span>
#include <stdexcept>
#include <vector>

#include "agvas/nn.hpp"
#include "agvas/vocab.hpp"

namespace agvas {

struct LmConfig {
  Index dim = 64;
  Index layers = 2;
  Index heads = 4;
  Index ffn_hidden = 256;
  Index context = 320;
};

class ContextOverflow : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Additive attention mask: the first `prefix` positions see each other freely,
/// every later position sees itself and everything before it.
Matrix prefix_causal_mask(Index prefix, Index total);

class MicroLM {
 public:
  struct Output {
    /// Row k predicts text token k; there are text_len + 1 rows.
    Var logits;
    /// Final-layer state for every position (prefix and text), after the final norm.
    Var hidden;
    Index prefix_len = 0;
  };

  MicroLM() = default;
  MicroLM(const LmConfig& cfg, Index vocab_size, Rng& rng);

  const LmConfig& config() const { return cfg_; }
  Index vocab_size() const { return token_embedding_.value.rows(); }

  /// `prefix` is the image part of the sequence (P x dim, P >= 1).
  Output forward(Tape& tape, Var prefix, std::span<const int> text_ids) const;

  /// Greedy decoding after `prompt_ids`; stops at `eos_id` (not returned) or
  /// after `max_new` tokens.
  std::vector<int> generate(const Matrix& prefix, std::span<const int> prompt_ids, int max_new, int eos_id) const;

  /// Appends `extra` rows to the token embedding and output head.
  void extend_vocabulary(Index extra, Rng& rng);

  /// Rank-r adapters on every attention and feed-forward weight; base weights
  /// of the transformer become frozen.
  void enable_adapters(Index rank, Rng& rng, double alpha);
  bool adapters_enabled() const { return adapters_; }

  template <typename F>
  void visit(F&& f) {
    f(token_embedding_);
    f(position_embedding_);
    for (auto& b : blocks_) {
      b.ln1.visit(f);
      b.attn.visit(f);
      b.ln2.visit(f);
      b.ffn.visit(f);
    }
    final_norm_.visit(f);
    f(head_);
  }

 private:
  struct Block {
    LayerNorm ln1;
    MultiHeadAttention attn;
    LayerNorm ln2;
    FeedForward ffn;
  };

  LmConfig cfg_;
  Parameter token_embedding_;     // vocab x dim
  Parameter position_embedding_;  // context x dim
  std::vector<Block> blocks_;
  LayerNorm final_norm_;
  Parameter head_;  // vocab x dim
  bool adapters_ = false;
};

class AnchorsMissing : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AnchorHidden {
  std::vector<Anchor> anchors;      // canonical order
  std::vector<Index> text_positions;  // first occurrence of each anchor
  Var rows;                         // anchors.size() x dim
};

/// Picks the hidden rows at the first occurrence of each required anchor in
/// `text_ids`. Throws AnchorsMissing if any required anchor is absent.
AnchorHidden extract_anchor_hidden(Var hidden, Index prefix_len, std::span<const int> text_ids,
                                   const Vocabulary& vocab, AnchorSet required);

/// Shared two-layer map from LM width to decoder width.
class TokenRefiner {
 public:
  TokenRefiner() = default;
  TokenRefiner(Index in, Index hidden, Index out, Rng& rng);
  /// Applies the same map to every row.
  Var forward(Tape& tape, Var anchors) const;

  Linear& first() { return first_; }
  Linear& second() { return second_; }
  template <typename F>
  void visit(F&& f) {
    first_.visit(f);
    second_.visit(f);
  }

 private:
  Linear first_, second_;
};

}  // namespace agvas
