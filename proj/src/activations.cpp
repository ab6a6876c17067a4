#include "autornn/activations.hpp"

#include <cmath>
#include <stdexcept>

namespace autornn {

namespace {
const std::array<std::string, kNumActivations> kNames = {
    "relu", "tanh", "sigmoid", "elu", "celu", "gelu", "leaky_relu", "silu"};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

const std::string& activation_name(ActivationKind kind) {
  return kNames[static_cast<int>(kind)];
}

std::optional<ActivationKind> activation_from_name(const std::string& name) {
  for (int i = 0; i < kNumActivations; ++i)
    if (kNames[i] == name) return static_cast<ActivationKind>(i);
  return std::nullopt;
}

double activation_apply(ActivationKind kind, double x, double alpha) {
  switch (kind) {
    case ActivationKind::kRelu:
      return x > 0.0 ? x : 0.0;
    case ActivationKind::kTanh:
      return std::tanh(x);
    case ActivationKind::kSigmoid:
      return sigmoid(x);
    case ActivationKind::kElu:
      return x >= 0.0 ? x : std::expm1(x);
    case ActivationKind::kCelu:
      return std::fmax(0.0, x) + std::fmin(0.0, alpha * std::expm1(x / alpha));
    case ActivationKind::kGelu:
      return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    case ActivationKind::kLeakyRelu:
      return x >= 0.0 ? x : 1e-2 * x;
    case ActivationKind::kSilu:
      return x * sigmoid(x);
  }
  throw std::logic_error("activation_apply: bad kind");
}

double activation_derivative(ActivationKind kind, double x, double alpha) {
  switch (kind) {
    case ActivationKind::kRelu:
      return x >= 0.0 ? 1.0 : 0.0;
    case ActivationKind::kTanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case ActivationKind::kSigmoid: {
      const double s = sigmoid(x);
      return s * (1.0 - s);
    }
    case ActivationKind::kElu:
      return x >= 0.0 ? 1.0 : std::exp(x);
    case ActivationKind::kCelu:
      return x >= 0.0 ? 1.0 : std::exp(x / alpha);
    case ActivationKind::kGelu: {
      // d/dx [0.5 x (1 + erf(x/sqrt 2))] = Phi(x) + x phi(x)
      const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
      return cdf + x * pdf;
    }
    case ActivationKind::kLeakyRelu:
      return x >= 0.0 ? 1.0 : 1e-2;
    case ActivationKind::kSilu: {
      const double s = sigmoid(x);
      return s * (1.0 + x * (1.0 - s));
    }
  }
  throw std::logic_error("activation_derivative: bad kind");
}

Matrix activation_apply(ActivationKind kind, const Matrix& x, double alpha) {
  Matrix out(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) out.data[i] = activation_apply(kind, x.data[i], alpha);
  return out;
}

Matrix activation_derivative(ActivationKind kind, const Matrix& x, double alpha) {
  Matrix out(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) out.data[i] = activation_derivative(kind, x.data[i], alpha);
  return out;
}

}  // namespace autornn
