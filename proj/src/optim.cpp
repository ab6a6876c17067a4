#include "autornn/optim.hpp"

#include <stdexcept>

namespace autornn {

double clip_global_norm(GradMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.data) {
      if (!std::isfinite(v)) throw std::runtime_error("non-finite gradient for parameter " + name);
      sq += v * v;
    }
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& v : g.data) v *= s;
  }
  return norm;
}

void Optimizer::step(ParamMap& params, const GradMap& grads, double lr_override) {
  const double lr = lr_override > 0.0 ? lr_override : cfg_.lr;
  if (lr <= 0.0) throw std::invalid_argument("Optimizer::step: lr must be positive");

  GradMap clipped = grads;
  clip_global_norm(clipped, cfg_.clip_norm);

  ++step_count_;
  const double t = static_cast<double>(step_count_);

  for (const auto& [name, g] : clipped) {
    auto pit = params.find(name);
    if (pit == params.end()) throw std::invalid_argument("Optimizer::step: unknown parameter " + name);
    Matrix& p = pit->second;
    if (!p.same_shape(g))
      throw std::invalid_argument("Optimizer::step: shape mismatch for parameter " + name);

    if (cfg_.kind == OptimizerConfig::Kind::kSgd) {
      for (size_t i = 0; i < p.size(); ++i) p.data[i] -= lr * g.data[i];
      continue;
    }

    Matrix& m = m_.try_emplace(name, Matrix(p.rows, p.cols)).first->second;
    Matrix& v = v_.try_emplace(name, Matrix(p.rows, p.cols)).first->second;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (size_t i = 0; i < p.size(); ++i) {
      m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g.data[i];
      v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g.data[i] * g.data[i];
      const double mh = m.data[i] / bc1;
      const double vh = v.data[i] / bc2;
      p.data[i] -= lr * mh / (std::sqrt(vh) + cfg_.epsilon);
    }
  }
}

double noam_lr(int64_t step, int model_dim, int64_t warmup) {
  if (step < 1) throw std::invalid_argument("noam_lr: step must be >= 1");
  if (warmup < 1) throw std::invalid_argument("noam_lr: warmup must be >= 1");
  if (model_dim < 1) throw std::invalid_argument("noam_lr: model_dim must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(model_dim), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

}  // namespace autornn
