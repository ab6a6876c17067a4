#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "autornn/activations.hpp"
#include "autornn/matrix.hpp"

namespace autornn {

using ValueId = int;

// Define-by-run reverse-mode tape over rank-2 float64 values. Nodes are
// recorded in construction order, which is a topological order by
// construction; backward walks it once in reverse.
//
// Parameters are registered by pointer and deduplicated, so a weight used at
// every time step of an unrolled sequence owns a single node whose adjoint
// accumulates the full gradient.
class Tape {
 public:
  // Leaf that does not require a gradient.
  ValueId input(Matrix v);
  // Leaf backed by external storage; repeated registration of the same
  // pointer returns the same node.
  ValueId param(const Matrix* p, const std::string& name);

  ValueId matmul(ValueId a, ValueId b);
  // a * b^T (tied-embedding logits).
  ValueId matmul_nt(ValueId a, ValueId b);
  ValueId add(ValueId a, ValueId b);
  // Adds a 1 x C row vector to every row of a R x C value.
  ValueId add_row(ValueId a, ValueId row);
  ValueId hadamard(ValueId a, ValueId b);
  ValueId one_minus(ValueId a);
  ValueId scale(ValueId a, double s);
  ValueId activation(ValueId a, ActivationKind kind, double celu_alpha = kDefaultCeluAlpha);
  ValueId softmax(ValueId a);      // rowwise
  ValueId log_softmax(ValueId a);  // rowwise
  ValueId slice_cols(ValueId a, int c0, int c1);
  ValueId concat_cols(ValueId a, ValueId b);
  // Gathers rows of a table by index (embedding lookup); grad scatter-adds.
  ValueId rows(ValueId table, std::vector<int> ids);
  ValueId sum_all(ValueId a);
  ValueId mean_all(ValueId a);
  // Fused softmax + cross-entropy with optional label smoothing, mean over
  // rows with weight > 0. targets.size() == logits.rows; returns a scalar.
  ValueId softmax_xent(ValueId logits, std::vector<int> targets, std::vector<double> weights,
                       double smoothing);

  const Matrix& value(ValueId id) const { return nodes_[id].value; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  // Seeds the loss adjoint with 1 and propagates. loss must be 1x1.
  void backward(ValueId loss);
  // Adjoint of any node after backward (zeros if unreachable).
  const Matrix& grad(ValueId id) const { return nodes_[id].adjoint; }

  // name -> gradient for every registered parameter (zero matrix when the
  // parameter was unreachable from the loss).
  std::map<std::string, Matrix> param_grads() const;

 private:
  enum class Op {
    kInput,
    kParam,
    kMatMul,
    kMatMulNT,
    kAdd,
    kAddRow,
    kHadamard,
    kOneMinus,
    kScale,
    kActivation,
    kSoftmax,
    kLogSoftmax,
    kSliceCols,
    kConcatCols,
    kRows,
    kSumAll,
    kMeanAll,
    kSoftmaxXent,
  };

  struct Node {
    Op op;
    std::vector<ValueId> inputs;
    Matrix value;
    Matrix adjoint;
    // Op-specific payload.
    ActivationKind act_kind = ActivationKind::kTanh;
    double scalar = 0.0;  // scale factor / smoothing / celu alpha
    double scalar2 = 0.0;
    std::vector<int> ints;        // slice bounds, gather ids, targets
    std::vector<double> doubles;  // xent weights
    Matrix aux;                   // cached probs for xent
    std::string name;             // param name
  };

  ValueId push(Node n);
  void accumulate(ValueId id, const Matrix& g);
  void backprop_node(int i);

  std::vector<Node> nodes_;
  std::unordered_map<const Matrix*, ValueId> param_ids_;
  bool backward_done_ = false;
};

}  // namespace autornn
