#include "agvas/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace agvas {

Matrix normal_matrix(Index rows, Index cols, double std_dev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std_dev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear::Linear(std::string name, Index in, Index out, Rng& rng, double init_std) {
  const double s = init_std > 0 ? init_std : 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = Parameter{name + ".weight", normal_matrix(in, out, s, rng), true, true};
  bias_ = Parameter{name + ".bias", Matrix::Zero(1, out), true, false};
}

Var Linear::forward(Tape& tape, Var x) const {
  Var y = ad::add_row(ad::matmul(x, tape.param(weight_)), tape.param(bias_));
  if (adapter_) {
    Var low = ad::matmul(ad::matmul(x, tape.param(adapter_->down)), tape.param(adapter_->up));
    y = y + ad::scale(low, adapter_->scale);
  }
  return y;
}

void Linear::attach_adapter(Index rank, Rng& rng, double alpha) {
  const Index in = in_features();
  const Index out = out_features();
  if (rank <= 0 || rank >= std::min(in, out)) {
    throw std::invalid_argument("attach_adapter: rank " + std::to_string(rank) + " must be in [1, min(in,out))");
  }
  const std::string base = weight_.name.substr(0, weight_.name.rfind('.'));
  LowRankAdapter a;
  a.down = Parameter{base + ".lora_down", normal_matrix(in, rank, 1.0 / std::sqrt(static_cast<double>(in)), rng),
                     true, false};
  a.up = Parameter{base + ".lora_up", Matrix::Zero(rank, out), true, false};
  a.scale = alpha / static_cast<double>(rank);
  adapter_ = std::move(a);
}

void Linear::set_base_trainable(bool trainable) {
  weight_.trainable = trainable;
  bias_.trainable = trainable;
}

LayerNorm::LayerNorm(std::string name, Index dim) {
  gain_ = Parameter{name + ".gain", Matrix::Ones(1, dim), true, false};
  bias_ = Parameter{name + ".bias", Matrix::Zero(1, dim), true, false};
}

Var LayerNorm::forward(Tape& tape, Var x) const {
  return ad::layer_norm(x, tape.param(gain_), tape.param(bias_));
}

MultiHeadAttention::MultiHeadAttention(const std::string& name, Index dim, Index heads, Rng& rng)
    : heads_(heads),
      q_(name + ".q", dim, dim, rng),
      k_(name + ".k", dim, dim, rng),
      v_(name + ".v", dim, dim, rng),
      o_(name + ".o", dim, dim, rng) {
  if (heads <= 0 || dim % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
}

MultiHeadAttention::Output MultiHeadAttention::forward(Tape& tape, Var query, Var key, Var value,
                                                       const Matrix* mask) const {
  const Var qp = q_.forward(tape, query);
  const Var kp = k_.forward(tape, key);
  const Var vp = v_.forward(tape, value);
  const Index dim = qp.cols();
  const Index hd = dim / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  Output out;
  std::vector<Var> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads_));
  for (Index h = 0; h < heads_; ++h) {
    Var qh = heads_ == 1 ? qp : ad::slice_cols(qp, h * hd, hd);
    Var kh = heads_ == 1 ? kp : ad::slice_cols(kp, h * hd, hd);
    Var vh = heads_ == 1 ? vp : ad::slice_cols(vp, h * hd, hd);
    Var scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt);
    Var w = ad::softmax_rows(scores, mask);
    out.weights.push_back(w);
    head_outputs.push_back(ad::matmul(w, vh));
  }
  Var merged = heads_ == 1 ? head_outputs.front() : ad::concat_cols(head_outputs);
  out.out = o_.forward(tape, merged);
  return out;
}

FeedForward::FeedForward(const std::string& name, Index dim, Index hidden, Rng& rng)
    : up_(name + ".up", dim, hidden, rng), down_(name + ".down", hidden, dim, rng) {}

Var FeedForward::forward(Tape& tape, Var x) const {
  return down_.forward(tape, ad::gelu(up_.forward(tape, x)));
}

}  // namespace agvas
