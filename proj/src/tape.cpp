#include "autornn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "autornn/kernels.hpp"

namespace autornn {

ValueId Tape::push(Node n) {
  if (backward_done_) throw std::logic_error("Tape: cannot record after backward");
  nodes_.push_back(std::move(n));
  return static_cast<ValueId>(nodes_.size()) - 1;
}

ValueId Tape::input(Matrix v) {
  Node n;
  n.op = Op::kInput;
  n.value = std::move(v);
  return push(std::move(n));
}

ValueId Tape::param(const Matrix* p, const std::string& name) {
  auto it = param_ids_.find(p);
  if (it != param_ids_.end()) return it->second;
  Node n;
  n.op = Op::kParam;
  n.value = *p;
  n.name = name;
  ValueId id = push(std::move(n));
  param_ids_[p] = id;
  return id;
}

ValueId Tape::matmul(ValueId a, ValueId b) {
  Node n;
  n.op = Op::kMatMul;
  n.inputs = {a, b};
  autornn::matmul(nodes_[a].value, nodes_[b].value, n.value);
  return push(std::move(n));
}

ValueId Tape::matmul_nt(ValueId a, ValueId b) {
  Node n;
  n.op = Op::kMatMulNT;
  n.inputs = {a, b};
  autornn::matmul_nt(nodes_[a].value, nodes_[b].value, n.value);
  return push(std::move(n));
}

ValueId Tape::add(ValueId a, ValueId b) {
  const Matrix& va = nodes_[a].value;
  const Matrix& vb = nodes_[b].value;
  if (!va.same_shape(vb)) throw std::invalid_argument("Tape::add: shape mismatch");
  Node n;
  n.op = Op::kAdd;
  n.inputs = {a, b};
  n.value = va;
  for (size_t i = 0; i < vb.size(); ++i) n.value.data[i] += vb.data[i];
  return push(std::move(n));
}

ValueId Tape::add_row(ValueId a, ValueId row) {
  const Matrix& va = nodes_[a].value;
  const Matrix& vr = nodes_[row].value;
  if (vr.rows != 1 || vr.cols != va.cols) throw std::invalid_argument("Tape::add_row: shape mismatch");
  Node n;
  n.op = Op::kAddRow;
  n.inputs = {a, row};
  n.value = va;
  for (int r = 0; r < va.rows; ++r)
    for (int c = 0; c < va.cols; ++c) n.value.at(r, c) += vr.at(0, c);
  return push(std::move(n));
}

ValueId Tape::hadamard(ValueId a, ValueId b) {
  const Matrix& va = nodes_[a].value;
  const Matrix& vb = nodes_[b].value;
  if (!va.same_shape(vb)) throw std::invalid_argument("Tape::hadamard: shape mismatch");
  Node n;
  n.op = Op::kHadamard;
  n.inputs = {a, b};
  n.value = va;
  for (size_t i = 0; i < vb.size(); ++i) n.value.data[i] *= vb.data[i];
  return push(std::move(n));
}

ValueId Tape::one_minus(ValueId a) {
  Node n;
  n.op = Op::kOneMinus;
  n.inputs = {a};
  n.value = nodes_[a].value;
  for (auto& v : n.value.data) v = 1.0 - v;
  return push(std::move(n));
}

ValueId Tape::scale(ValueId a, double s) {
  Node n;
  n.op = Op::kScale;
  n.inputs = {a};
  n.scalar = s;
  n.value = nodes_[a].value;
  for (auto& v : n.value.data) v *= s;
  return push(std::move(n));
}

ValueId Tape::activation(ValueId a, ActivationKind kind, double celu_alpha) {
  Node n;
  n.op = Op::kActivation;
  n.inputs = {a};
  n.act_kind = kind;
  n.scalar = celu_alpha;
  n.value = activation_apply(kind, nodes_[a].value, celu_alpha);
  return push(std::move(n));
}

namespace {

// Rowwise stable softmax.
Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows, x.cols);
  for (int r = 0; r < x.rows; ++r) {
    double mx = x.at(r, 0);
    for (int c = 1; c < x.cols; ++c) mx = std::max(mx, x.at(r, c));
    double z = 0.0;
    for (int c = 0; c < x.cols; ++c) {
      out.at(r, c) = std::exp(x.at(r, c) - mx);
      z += out.at(r, c);
    }
    for (int c = 0; c < x.cols; ++c) out.at(r, c) /= z;
  }
  return out;
}

}  // namespace

ValueId Tape::softmax(ValueId a) {
  Node n;
  n.op = Op::kSoftmax;
  n.inputs = {a};
  n.value = softmax_rows(nodes_[a].value);
  return push(std::move(n));
}

ValueId Tape::log_softmax(ValueId a) {
  const Matrix& x = nodes_[a].value;
  Node n;
  n.op = Op::kLogSoftmax;
  n.inputs = {a};
  n.value = Matrix(x.rows, x.cols);
  for (int r = 0; r < x.rows; ++r) {
    double mx = x.at(r, 0);
    for (int c = 1; c < x.cols; ++c) mx = std::max(mx, x.at(r, c));
    double z = 0.0;
    for (int c = 0; c < x.cols; ++c) z += std::exp(x.at(r, c) - mx);
    const double lz = mx + std::log(z);
    for (int c = 0; c < x.cols; ++c) n.value.at(r, c) = x.at(r, c) - lz;
  }
  return push(std::move(n));
}

ValueId Tape::slice_cols(ValueId a, int c0, int c1) {
  const Matrix& x = nodes_[a].value;
  if (c0 < 0 || c1 > x.cols || c0 >= c1) throw std::invalid_argument("Tape::slice_cols: bad range");
  Node n;
  n.op = Op::kSliceCols;
  n.inputs = {a};
  n.ints = {c0, c1};
  n.value = Matrix(x.rows, c1 - c0);
  for (int r = 0; r < x.rows; ++r)
    for (int c = c0; c < c1; ++c) n.value.at(r, c - c0) = x.at(r, c);
  return push(std::move(n));
}

ValueId Tape::concat_cols(ValueId a, ValueId b) {
  const Matrix& va = nodes_[a].value;
  const Matrix& vb = nodes_[b].value;
  if (va.rows != vb.rows) throw std::invalid_argument("Tape::concat_cols: row mismatch");
  Node n;
  n.op = Op::kConcatCols;
  n.inputs = {a, b};
  n.value = Matrix(va.rows, va.cols + vb.cols);
  for (int r = 0; r < va.rows; ++r) {
    for (int c = 0; c < va.cols; ++c) n.value.at(r, c) = va.at(r, c);
    for (int c = 0; c < vb.cols; ++c) n.value.at(r, va.cols + c) = vb.at(r, c);
  }
  return push(std::move(n));
}

ValueId Tape::rows(ValueId table, std::vector<int> ids) {
  const Matrix& t = nodes_[table].value;
  for (int id : ids)
    if (id < 0 || id >= t.rows) throw std::out_of_range("Tape::rows: index out of range");
  Node n;
  n.op = Op::kRows;
  n.inputs = {table};
  n.value = Matrix(static_cast<int>(ids.size()), t.cols);
  for (size_t r = 0; r < ids.size(); ++r)
    for (int c = 0; c < t.cols; ++c) n.value.at(static_cast<int>(r), c) = t.at(ids[r], c);
  n.ints = std::move(ids);
  return push(std::move(n));
}

ValueId Tape::sum_all(ValueId a) {
  Node n;
  n.op = Op::kSumAll;
  n.inputs = {a};
  n.value = Matrix(1, 1);
  for (double v : nodes_[a].value.data) n.value.data[0] += v;
  return push(std::move(n));
}

ValueId Tape::mean_all(ValueId a) {
  const Matrix& x = nodes_[a].value;
  if (x.size() == 0) throw std::invalid_argument("Tape::mean_all: empty input");
  Node n;
  n.op = Op::kMeanAll;
  n.inputs = {a};
  n.value = Matrix(1, 1);
  for (double v : x.data) n.value.data[0] += v;
  n.value.data[0] /= static_cast<double>(x.size());
  return push(std::move(n));
}

ValueId Tape::softmax_xent(ValueId logits, std::vector<int> targets, std::vector<double> weights,
                           double smoothing) {
  const Matrix& x = nodes_[logits].value;
  if (static_cast<int>(targets.size()) != x.rows || weights.size() != targets.size())
    throw std::invalid_argument("Tape::softmax_xent: row count mismatch");
  if (x.cols < 2) throw std::invalid_argument("Tape::softmax_xent: need >= 2 classes");
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (wsum <= 0.0) throw std::invalid_argument("Tape::softmax_xent: all weights zero");

  Node n;
  n.op = Op::kSoftmaxXent;
  n.inputs = {logits};
  n.scalar = smoothing;
  n.scalar2 = wsum;
  n.aux = softmax_rows(x);
  n.value = Matrix(1, 1);
  const double off = smoothing / static_cast<double>(x.cols - 1);
  double loss = 0.0;
  for (int r = 0; r < x.rows; ++r) {
    if (weights[r] == 0.0) continue;
    const int y = targets[r];
    if (y < 0 || y >= x.cols) throw std::out_of_range("Tape::softmax_xent: target out of range");
    // log p_k from the cached probs' normalizer, recomputed stably.
    double mx = x.at(r, 0);
    for (int c = 1; c < x.cols; ++c) mx = std::max(mx, x.at(r, c));
    double z = 0.0;
    for (int c = 0; c < x.cols; ++c) z += std::exp(x.at(r, c) - mx);
    const double lz = mx + std::log(z);
    double row_loss = 0.0;
    for (int c = 0; c < x.cols; ++c) {
      const double t = (c == y) ? (1.0 - smoothing) : off;
      if (t != 0.0) row_loss -= t * (x.at(r, c) - lz);
    }
    loss += weights[r] * row_loss;
  }
  n.value.data[0] = loss / wsum;
  n.ints = std::move(targets);
  n.doubles = std::move(weights);
  return push(std::move(n));
}

void Tape::accumulate(ValueId id, const Matrix& g) {
  Node& n = nodes_[id];
  if (n.adjoint.size() == 0) n.adjoint = Matrix(n.value.rows, n.value.cols);
  for (size_t i = 0; i < g.size(); ++i) n.adjoint.data[i] += g.data[i];
}

void Tape::backprop_node(int i) {
  Node& n = nodes_[i];
  if (n.adjoint.size() == 0) return;  // unreachable from loss
  const Matrix& dy = n.adjoint;
  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
      break;
    case Op::kMatMul: {
      Matrix da, db;
      autornn::matmul_nt(dy, nodes_[n.inputs[1]].value, da);
      autornn::matmul_tn(nodes_[n.inputs[0]].value, dy, db);
      accumulate(n.inputs[0], da);
      accumulate(n.inputs[1], db);
      break;
    }
    case Op::kMatMulNT: {
      Matrix da, db;
      autornn::matmul(dy, nodes_[n.inputs[1]].value, da);
      autornn::matmul_tn(dy, nodes_[n.inputs[0]].value, db);
      accumulate(n.inputs[0], da);
      accumulate(n.inputs[1], db);
      break;
    }
    case Op::kAdd:
      accumulate(n.inputs[0], dy);
      accumulate(n.inputs[1], dy);
      break;
    case Op::kAddRow: {
      accumulate(n.inputs[0], dy);
      Matrix dr(1, dy.cols);
      for (int r = 0; r < dy.rows; ++r)
        for (int c = 0; c < dy.cols; ++c) dr.at(0, c) += dy.at(r, c);
      accumulate(n.inputs[1], dr);
      break;
    }
    case Op::kHadamard: {
      Matrix da = dy, db = dy;
      const Matrix& va = nodes_[n.inputs[0]].value;
      const Matrix& vb = nodes_[n.inputs[1]].value;
      for (size_t k = 0; k < dy.size(); ++k) {
        da.data[k] *= vb.data[k];
        db.data[k] *= va.data[k];
      }
      accumulate(n.inputs[0], da);
      accumulate(n.inputs[1], db);
      break;
    }
    case Op::kOneMinus: {
      Matrix da = dy;
      for (auto& v : da.data) v = -v;
      accumulate(n.inputs[0], da);
      break;
    }
    case Op::kScale: {
      Matrix da = dy;
      for (auto& v : da.data) v *= n.scalar;
      accumulate(n.inputs[0], da);
      break;
    }
    case Op::kActivation: {
      Matrix da = activation_derivative(n.act_kind, nodes_[n.inputs[0]].value, n.scalar);
      for (size_t k = 0; k < da.size(); ++k) da.data[k] *= dy.data[k];
      accumulate(n.inputs[0], da);
      break;
    }
    case Op::kSoftmax: {
      const Matrix& p = n.value;
      Matrix da(p.rows, p.cols);
      for (int r = 0; r < p.rows; ++r) {
        double dot = 0.0;
        for (int c = 0; c < p.cols; ++c) dot += dy.at(r, c) * p.at(r, c);
        for (int c = 0; c < p.cols; ++c) da.at(r, c) = p.at(r, c) * (dy.at(r, c) - dot);
      }
      accumulate(n.inputs[0], da);
      break;
    }
    case Op::kLogSoftmax: {
      Matrix da(n.value.rows, n.value.cols);
      for (int r = 0; r < n.value.rows; ++r) {
        double s = 0.0;
        for (int c = 0; c < n.value.cols; ++c) s += dy.at(r, c);
        for (int c = 0; c < n.value.cols; ++c)
          da.at(r, c) = dy.at(r, c) - std::exp(n.value.at(r, c)) * s;
      }
      accumulate(n.inputs[0], da);
      break;
    }
    case Op::kSliceCols: {
      const Matrix& src = nodes_[n.inputs[0]].value;
      Matrix da(src.rows, src.cols);
      const int c0 = n.ints[0];
      for (int r = 0; r < dy.rows; ++r)
        for (int c = 0; c < dy.cols; ++c) da.at(r, c0 + c) = dy.at(r, c);
      accumulate(n.inputs[0], da);
      break;
    }
    case Op::kConcatCols: {
      const Matrix& va = nodes_[n.inputs[0]].value;
      const Matrix& vb = nodes_[n.inputs[1]].value;
      Matrix da(va.rows, va.cols), db(vb.rows, vb.cols);
      for (int r = 0; r < dy.rows; ++r) {
        for (int c = 0; c < va.cols; ++c) da.at(r, c) = dy.at(r, c);
        for (int c = 0; c < vb.cols; ++c) db.at(r, c) = dy.at(r, va.cols + c);
      }
      accumulate(n.inputs[0], da);
      accumulate(n.inputs[1], db);
      break;
    }
    case Op::kRows: {
      const Matrix& t = nodes_[n.inputs[0]].value;
      Matrix da(t.rows, t.cols);
      for (size_t r = 0; r < n.ints.size(); ++r)
        for (int c = 0; c < t.cols; ++c)
          da.at(n.ints[r], c) += dy.at(static_cast<int>(r), c);
      accumulate(n.inputs[0], da);
      break;
    }
    case Op::kSumAll: {
      Matrix da = Matrix::filled(nodes_[n.inputs[0]].value.rows, nodes_[n.inputs[0]].value.cols,
                                 dy.data[0]);
      accumulate(n.inputs[0], da);
      break;
    }
    case Op::kMeanAll: {
      const Matrix& src = nodes_[n.inputs[0]].value;
      Matrix da = Matrix::filled(src.rows, src.cols, dy.data[0] / static_cast<double>(src.size()));
      accumulate(n.inputs[0], da);
      break;
    }
    case Op::kSoftmaxXent: {
      const Matrix& p = n.aux;
      Matrix da(p.rows, p.cols);
      const double off = n.scalar / static_cast<double>(p.cols - 1);
      const double g = dy.data[0] / n.scalar2;
      for (int r = 0; r < p.rows; ++r) {
        const double w = n.doubles[r];
        if (w == 0.0) continue;
        const int y = n.ints[r];
        for (int c = 0; c < p.cols; ++c) {
          const double t = (c == y) ? (1.0 - n.scalar) : off;
          da.at(r, c) = g * w * (p.at(r, c) - t);
        }
      }
      accumulate(n.inputs[0], da);
      break;
    }
  }
}

void Tape::backward(ValueId loss) {
  const Matrix& lv = nodes_[loss].value;
  if (lv.rows != 1 || lv.cols != 1) throw std::invalid_argument("backward: loss must be scalar");
  accumulate(loss, Matrix::filled(1, 1, 1.0));
  for (int i = loss; i >= 0; --i) backprop_node(i);
  backward_done_ = true;
}

std::map<std::string, Matrix> Tape::param_grads() const {
  std::map<std::string, Matrix> out;
  for (const auto& [ptr, id] : param_ids_) {
    const Node& n = nodes_[id];
    Matrix g = n.adjoint.size() ? n.adjoint : Matrix(n.value.rows, n.value.cols);
    auto [it, inserted] = out.emplace(n.name, std::move(g));
    if (!inserted) throw std::logic_error("param_grads: duplicate parameter name " + n.name);
  }
  return out;
}

}  // namespace autornn
