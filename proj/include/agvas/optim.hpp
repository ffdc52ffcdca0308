#pragma once

// Warmup/decay learning-rate schedule and Adam with decoupled weight decay.

#include <cstdint>
#include <vector>

#include "agvas/autodiff.hpp"

namespace agvas {

struct Schedule {
  double lr = 3e-4;
  int warmup_iters = 100;
  int total_iters = 2000;

  void validate() const;
};

/// Linear 0 -> lr over the warmup, then linear to 0 at total_iters.
double lr_at(int iter, const Schedule& s);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

class AdamW {
 public:
  struct Moments {
    Matrix m;
    Matrix v;
  };

  AdamW() = default;
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg = {});

  /// Updates every trainable parameter that has a gradient in `grads`.
  /// Throws NumericError on a non-finite gradient before touching any weight.
  void step(const GradStore& grads, double lr);

  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  const std::vector<Parameter*>& params() const { return params_; }
  std::vector<Moments>& moments() { return moments_; }
  const std::vector<Moments>& moments() const { return moments_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Moments> moments_;
  AdamWConfig cfg_;
  std::uint64_t t_ = 0;
};

}  // namespace agvas
