#pragma once

#include <array>
#include <optional>
#include <string>

#include "autornn/matrix.hpp"

namespace autornn {

// The eight candidate activations. The integer encoding is load-bearing:
// controller heads index into this order.
enum class ActivationKind : int {
  kRelu = 0,
  kTanh = 1,
  kSigmoid = 2,
  kElu = 3,
  kCelu = 4,
  kGelu = 5,
  kLeakyRelu = 6,
  kSilu = 7,
};

inline constexpr int kNumActivations = 8;
inline constexpr double kDefaultCeluAlpha = 1.0;

const std::string& activation_name(ActivationKind kind);
std::optional<ActivationKind> activation_from_name(const std::string& name);

double activation_apply(ActivationKind kind, double x, double celu_alpha = kDefaultCeluAlpha);
// Analytic derivative; right-derivative at kinks (relu'(0) = 1, etc.).
double activation_derivative(ActivationKind kind, double x, double celu_alpha = kDefaultCeluAlpha);

Matrix activation_apply(ActivationKind kind, const Matrix& x, double celu_alpha = kDefaultCeluAlpha);
Matrix activation_derivative(ActivationKind kind, const Matrix& x,
                             double celu_alpha = kDefaultCeluAlpha);

}  // namespace autornn
