#include "autornn/supernet.hpp"

#include <stdexcept>

namespace autornn {

namespace {

std::string conn_key(int i, int j) {
  return "cell.w_h." + std::to_string(i) + "." + std::to_string(j);
}

}  // namespace

SharedParamBank init_bank(int n_max, const MacroConfig& macro, NodeSemantics semantics,
                          int vocab_size, int feature_dim, Rng& rng) {
  if (n_max < 1) throw std::invalid_argument("init_bank: n_max must be >= 1");
  if (macro.embed_size < 1 || macro.hidden_size < 1 || vocab_size < 1 || feature_dim < 1)
    throw std::invalid_argument("init_bank: dimensions must be positive");

  const int e = macro.embed_size, h = macro.hidden_size;
  const bool gated = semantics == NodeSemantics::kGated;

  SharedParamBank bank;
  bank.n_max = n_max;
  bank.macro = macro;
  bank.semantics = semantics;
  bank.vocab_size = vocab_size;
  bank.feature_dim = feature_dim;

  // Fixed creation order keeps banks seed-deterministic.
  auto fresh = [&](const std::string& key, int r, int c) {
    bank.tensors.emplace(key, rng.uniform_matrix(r, c, -0.04, 0.04));
  };
  fresh("cell.w_x", e, h);
  if (gated) fresh("cell.w_x.gate", e, h);
  fresh("cell.w_h.1", h, h);
  if (gated) fresh("cell.w_h.1.gate", h, h);
  for (int i = 2; i <= n_max; ++i)
    for (int j = 1; j < i; ++j) {
      fresh(conn_key(i, j), h, h);
      if (gated) fresh(conn_key(i, j) + ".gate", h, h);
    }
  fresh("embed", vocab_size, e);
  fresh("feat_proj", feature_dim, e);
  if (macro.tie_embeddings) {
    if (h != e) fresh("tie_adapter", h, e);
  } else {
    fresh("proj", h, vocab_size);
  }
  return bank;
}

ChildModel::ChildModel(CellGenotype genotype, ParamMap* params, MacroConfig macro,
                       NodeSemantics semantics, int vocab_size, int feature_dim)
    : genotype_(std::move(genotype)),
      params_(params),
      macro_(macro),
      semantics_(semantics),
      vocab_size_(vocab_size),
      feature_dim_(feature_dim) {
  auto violations = validate(genotype_);
  if (!violations.empty()) throw std::invalid_argument("ChildModel: " + violations.front());
  leaves_ = leaf_set(genotype_);
}

const Matrix& ChildModel::tensor(const std::string& key) const {
  auto it = params_->find(key);
  if (it == params_->end()) throw std::runtime_error("missing parameter " + key);
  return it->second;
}

ValueId ChildModel::cell_step(Tape& tape, ValueId x, ValueId h_prev) const {
  const bool gated = semantics_ == NodeSemantics::kGated;
  std::vector<ValueId> node_out(static_cast<size_t>(genotype_.n_blocks) + 1);

  {
    ValueId pre = tape.add(tape.matmul(x, tape.param(&tensor("cell.w_x"), "cell.w_x")),
                           tape.matmul(h_prev, tape.param(&tensor("cell.w_h.1"), "cell.w_h.1")));
    ValueId act = tape.activation(pre, genotype_.nodes[0].act);
    if (gated) {
      ValueId gpre =
          tape.add(tape.matmul(x, tape.param(&tensor("cell.w_x.gate"), "cell.w_x.gate")),
                   tape.matmul(h_prev, tape.param(&tensor("cell.w_h.1.gate"), "cell.w_h.1.gate")));
      ValueId gate = tape.activation(gpre, ActivationKind::kSigmoid);
      node_out[1] = tape.add(tape.hadamard(gate, act), tape.hadamard(tape.one_minus(gate), h_prev));
    } else {
      node_out[1] = act;
    }
  }

  for (int i = 2; i <= genotype_.n_blocks; ++i) {
    const int j = *genotype_.nodes[static_cast<size_t>(i) - 1].prev;
    const std::string key = conn_key(i, j);
    ValueId src = node_out[static_cast<size_t>(j)];
    ValueId act = tape.activation(tape.matmul(src, tape.param(&tensor(key), key)),
                                  genotype_.nodes[static_cast<size_t>(i) - 1].act);
    if (gated) {
      const std::string gkey = key + ".gate";
      ValueId gate = tape.activation(tape.matmul(src, tape.param(&tensor(gkey), gkey)),
                                     ActivationKind::kSigmoid);
      node_out[static_cast<size_t>(i)] =
          tape.add(tape.hadamard(gate, act), tape.hadamard(tape.one_minus(gate), src));
    } else {
      node_out[static_cast<size_t>(i)] = act;
    }
  }

  ValueId sum = node_out[static_cast<size_t>(leaves_[0])];
  for (size_t k = 1; k < leaves_.size(); ++k)
    sum = tape.add(sum, node_out[static_cast<size_t>(leaves_[k])]);
  return tape.scale(sum, 1.0 / static_cast<double>(leaves_.size()));
}

ValueId ChildModel::feature_input(Tape& tape, ValueId features) const {
  return tape.matmul(features, tape.param(&tensor("feat_proj"), "feat_proj"));
}

ValueId ChildModel::embed_rows(Tape& tape, const std::vector<int>& ids) const {
  for (int id : ids)
    if (id < 0 || id >= vocab_size_)
      throw std::out_of_range("token id " + std::to_string(id) + " out of vocab range");
  return tape.rows(tape.param(&tensor("embed"), "embed"), ids);
}

ValueId ChildModel::output_logits(Tape& tape, ValueId h) const {
  if (!macro_.tie_embeddings)
    return tape.matmul(h, tape.param(&tensor("proj"), "proj"));
  ValueId he = h;
  if (macro_.hidden_size != macro_.embed_size)
    he = tape.matmul(h, tape.param(&tensor("tie_adapter"), "tie_adapter"));
  return tape.matmul_nt(he, tape.param(&tensor("embed"), "embed"));
}

SequenceResult ChildModel::sequence_forward(Tape& tape, const Batch& batch, double smoothing) const {
  const int B = static_cast<int>(batch.ids.size());
  if (B == 0) throw std::invalid_argument("sequence_forward: empty batch");
  const int T = static_cast<int>(batch.ids[0].size());
  if (T < 2) throw std::invalid_argument("sequence_forward: need at least BOS+EOS");

  ValueId h = tape.input(Matrix(B, macro_.hidden_size));
  // Show-tell conditioning: the projected feature is the step-0 input token.
  ValueId x = feature_input(tape, tape.input(batch.features));
  h = cell_step(tape, x, h);

  SequenceResult result;
  std::vector<std::pair<ValueId, double>> step_losses;
  for (int t = 1; t < T; ++t) {
    std::vector<int> prev_ids(static_cast<size_t>(B));
    std::vector<int> targets(static_cast<size_t>(B));
    std::vector<double> weights(static_cast<size_t>(B));
    double wsum = 0.0;
    for (int b = 0; b < B; ++b) {
      prev_ids[static_cast<size_t>(b)] = batch.ids[static_cast<size_t>(b)][static_cast<size_t>(t) - 1];
      targets[static_cast<size_t>(b)] = batch.ids[static_cast<size_t>(b)][static_cast<size_t>(t)];
      weights[static_cast<size_t>(b)] = batch.mask.at(b, t);
      wsum += batch.mask.at(b, t);
    }
    h = cell_step(tape, embed_rows(tape, prev_ids), h);
    ValueId logits = output_logits(tape, h);
    result.logits.push_back(logits);
    if (wsum > 0.0) {
      step_losses.emplace_back(tape.softmax_xent(logits, targets, weights, smoothing), wsum);
      result.total_weight += wsum;
    }
  }
  if (step_losses.empty()) throw std::invalid_argument("sequence_forward: no scored positions");

  // Weighted recombination of per-step means = mean over all scored positions.
  ValueId acc = tape.scale(step_losses[0].first, step_losses[0].second);
  for (size_t k = 1; k < step_losses.size(); ++k)
    acc = tape.add(acc, tape.scale(step_losses[k].first, step_losses[k].second));
  result.loss = tape.scale(acc, 1.0 / result.total_weight);
  return result;
}

std::vector<std::string> ChildModel::touched_keys() const {
  const bool gated = semantics_ == NodeSemantics::kGated;
  std::vector<std::string> keys = {"cell.w_x", "cell.w_h.1"};
  if (gated) {
    keys.push_back("cell.w_x.gate");
    keys.push_back("cell.w_h.1.gate");
  }
  for (int i = 2; i <= genotype_.n_blocks; ++i) {
    const std::string key = conn_key(i, *genotype_.nodes[static_cast<size_t>(i) - 1].prev);
    keys.push_back(key);
    if (gated) keys.push_back(key + ".gate");
  }
  keys.push_back("embed");
  keys.push_back("feat_proj");
  if (macro_.tie_embeddings) {
    if (macro_.hidden_size != macro_.embed_size) keys.push_back("tie_adapter");
  } else {
    keys.push_back("proj");
  }
  return keys;
}

ParamMap ChildModel::extract() const {
  ParamMap out;
  for (const auto& key : touched_keys()) out.emplace(key, tensor(key));
  return out;
}

}  // namespace autornn
