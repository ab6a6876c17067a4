#pragma once

#include <cmath>
#include <map>
#include <string>

#include "autornn/matrix.hpp"

namespace autornn {

using ParamMap = std::map<std::string, Matrix>;
using GradMap = std::map<std::string, Matrix>;

struct OptimizerConfig {
  enum class Kind { kAdam, kSgd };
  Kind kind = Kind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global-norm clip; <= 0 disables.
  double clip_norm = 5.0;
};

// Per-parameter moment buffers keyed by name; buffers are created lazily on
// the first step that touches a parameter, so sparse updates (shared bank)
// only allocate what they use.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  // Applies one update to the entries of params named in grads. Gradients
  // are first scaled to the configured global norm. A NaN/Inf gradient is an
  // error naming the offending parameter. lr_override > 0 replaces cfg.lr
  // for this step (Noam schedule).
  void step(ParamMap& params, const GradMap& grads, double lr_override = -1.0);

  int64_t step_count() const { return step_count_; }
  const OptimizerConfig& config() const { return cfg_; }

  // Moment buffers, exposed for checkpointing.
  ParamMap& first_moments() { return m_; }
  ParamMap& second_moments() { return v_; }
  void set_step_count(int64_t t) { step_count_ = t; }

 private:
  OptimizerConfig cfg_;
  ParamMap m_, v_;
  int64_t step_count_ = 0;
};

// Scales grads in place so their global L2 norm is at most max_norm.
// Returns the pre-clip norm. max_norm <= 0 is a no-op.
double clip_global_norm(GradMap& grads, double max_norm);

// lr = model_dim^-0.5 * min(step^-0.5, step * warmup^-1.5)
double noam_lr(int64_t step, int model_dim, int64_t warmup);

}  // namespace autornn
