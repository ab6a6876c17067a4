#include "autornn/controller.hpp"

#include <cmath>
#include <stdexcept>

namespace autornn {

MacroConfig MacroChoices::apply(MacroConfig base, const MacroOptionTables& tables) const {
  if (!present) return base;
  base.n_blocks = tables.n_blocks.at(static_cast<size_t>(n_blocks));
  base.embed_size = tables.embed_size.at(static_cast<size_t>(embed_size));
  base.hidden_size = tables.hidden_size.at(static_cast<size_t>(hidden_size));
  base.label_smoothing = tables.label_smoothing.at(static_cast<size_t>(label_smoothing));
  base.init_hidden_each_epoch = init_hidden != 0;
  base.tie_embeddings = tie_embeddings != 0;
  base.controller_hidden = tables.controller_hidden.at(static_cast<size_t>(controller_hidden));
  return base;
}

namespace {
const char* kMacroHeadNames[] = {"n_blocks",    "embed_size", "hidden_size",     "label_smoothing",
                                 "init_hidden", "tie",        "controller_hidden"};
}

Controller::Controller(ControllerConfig cfg, Rng& rng) : cfg_(cfg) {
  if (cfg_.n_max < 1) throw std::invalid_argument("Controller: n_max must be >= 1");
  const int H = cfg_.hidden, E = cfg_.embed;
  auto fresh = [&](const std::string& key, int r, int c) {
    params_.emplace(key, rng.uniform_matrix(r, c, -0.04, 0.04));
  };
  fresh("ctrl.lstm.w_ih", E, 4 * H);
  fresh("ctrl.lstm.w_hh", H, 4 * H);
  params_.emplace("ctrl.lstm.bias", Matrix(1, 4 * H));
  fresh("ctrl.start", 1, E);
  fresh("ctrl.embed.act", kNumActivations, E);
  if (cfg_.n_max > 1) fresh("ctrl.embed.conn", cfg_.n_max - 1, E);
  fresh("ctrl.head.act.w", H, kNumActivations);
  params_.emplace("ctrl.head.act.b", Matrix(1, kNumActivations));
  for (int i = 2; i <= cfg_.n_max; ++i) {
    fresh("ctrl.head.conn." + std::to_string(i) + ".w", H, i - 1);
    params_.emplace("ctrl.head.conn." + std::to_string(i) + ".b", Matrix(1, i - 1));
  }
  if (cfg_.search_macro) {
    const int arities[] = {4, 4, 4, 2, 2, 2, 4};
    for (int k = 0; k < 7; ++k) {
      fresh(std::string("ctrl.head.macro.") + kMacroHeadNames[k] + ".w", H, arities[k]);
      params_.emplace(std::string("ctrl.head.macro.") + kMacroHeadNames[k] + ".b",
                      Matrix(1, arities[k]));
      fresh(std::string("ctrl.embed.macro.") + kMacroHeadNames[k], arities[k], E);
    }
  }
}

Controller::StepOut Controller::decision_step(Tape& tape, ValueId input, ValueId& h, ValueId& c,
                                              const std::string& head_key, int arity, Rng* rng,
                                              std::optional<int> forced, bool greedy) const {
  const int H = cfg_.hidden;
  ValueId gates =
      tape.add_row(tape.add(tape.matmul(input, tape.param(&params_.at("ctrl.lstm.w_ih"), "ctrl.lstm.w_ih")),
                            tape.matmul(h, tape.param(&params_.at("ctrl.lstm.w_hh"), "ctrl.lstm.w_hh"))),
                   tape.param(&params_.at("ctrl.lstm.bias"), "ctrl.lstm.bias"));
  ValueId ig = tape.activation(tape.slice_cols(gates, 0, H), ActivationKind::kSigmoid);
  ValueId fg = tape.activation(tape.slice_cols(gates, H, 2 * H), ActivationKind::kSigmoid);
  ValueId og = tape.activation(tape.slice_cols(gates, 2 * H, 3 * H), ActivationKind::kSigmoid);
  ValueId gg = tape.activation(tape.slice_cols(gates, 3 * H, 4 * H), ActivationKind::kTanh);
  c = tape.add(tape.hadamard(fg, c), tape.hadamard(ig, gg));
  h = tape.hadamard(og, tape.activation(c, ActivationKind::kTanh));

  ValueId logits = tape.add_row(tape.matmul(h, tape.param(&params_.at(head_key + ".w"), head_key + ".w")),
                                tape.param(&params_.at(head_key + ".b"), head_key + ".b"));
  ValueId logp = tape.log_softmax(logits);  // untempered: what we record/train
  ValueId probs = tape.softmax(logits);
  ValueId entropy = tape.scale(tape.sum_all(tape.hadamard(probs, logp)), -1.0);

  StepOut out{};
  if (forced) {
    if (*forced < 0 || *forced >= arity)
      throw std::invalid_argument("controller decision out of arity range for head " + head_key);
    out.choice = *forced;
  } else {
    // Sampling distribution: logits / T, optionally squashed to
    // tanh_constant * tanh(.). Values only; gradients never flow here.
    const Matrix& lv = tape.value(logits);
    std::vector<double> w(static_cast<size_t>(arity));
    double mx = -1e300;
    for (int k = 0; k < arity; ++k) {
      double z = lv.at(0, k) / cfg_.temperature;
      if (cfg_.tanh_constant > 0.0) z = cfg_.tanh_constant * std::tanh(z);
      w[static_cast<size_t>(k)] = z;
      mx = std::max(mx, z);
    }
    if (greedy) {
      int best = 0;
      for (int k = 1; k < arity; ++k)
        if (w[static_cast<size_t>(k)] > w[static_cast<size_t>(best)]) best = k;
      out.choice = best;
    } else {
      for (auto& z : w) z = std::exp(z - mx);
      out.choice = rng->categorical(w);
    }
  }
  out.log_prob = tape.slice_cols(logp, out.choice, out.choice + 1);
  out.entropy = entropy;
  return out;
}

Controller::Rollout Controller::rollout(Tape& tape, Rng* rng, const CellGenotype* forced,
                                        const MacroChoices* forced_macro, int n_blocks,
                                        bool greedy) const {
  if (n_blocks < 1 || n_blocks > cfg_.n_max)
    throw std::invalid_argument("controller rollout: n_blocks out of 1..n_max");
  if (forced && forced->n_blocks != n_blocks)
    throw std::invalid_argument("controller rollout: genotype arity mismatch");

  Rollout out;
  ValueId h = tape.input(Matrix(1, cfg_.hidden));
  ValueId c = tape.input(Matrix(1, cfg_.hidden));
  ValueId input = tape.param(&params_.at("ctrl.start"), "ctrl.start");
  ValueId logp_sum = tape.input(Matrix(1, 1));
  ValueId ent_sum = tape.input(Matrix(1, 1));

  auto take = [&](const std::string& head, int arity, std::optional<int> force,
                  const std::string& embed_key) {
    StepOut s = decision_step(tape, input, h, c, head, arity, rng, force, greedy);
    logp_sum = tape.add(logp_sum, s.log_prob);
    ent_sum = tape.add(ent_sum, s.entropy);
    input = tape.rows(tape.param(&params_.at(embed_key), embed_key), {s.choice});
    out.trace.decisions.push_back(s.choice);
    return s.choice;
  };

  if (cfg_.search_macro && (!forced || forced_macro)) {
    const int arities[] = {4, 4, 4, 2, 2, 2, 4};
    int* slots[] = {&out.trace.macro.n_blocks,        &out.trace.macro.embed_size,
                    &out.trace.macro.hidden_size,     &out.trace.macro.label_smoothing,
                    &out.trace.macro.init_hidden,     &out.trace.macro.tie_embeddings,
                    &out.trace.macro.controller_hidden};
    const int forced_vals[] = {forced_macro ? forced_macro->n_blocks : 0,
                               forced_macro ? forced_macro->embed_size : 0,
                               forced_macro ? forced_macro->hidden_size : 0,
                               forced_macro ? forced_macro->label_smoothing : 0,
                               forced_macro ? forced_macro->init_hidden : 0,
                               forced_macro ? forced_macro->tie_embeddings : 0,
                               forced_macro ? forced_macro->controller_hidden : 0};
    for (int k = 0; k < 7; ++k) {
      std::optional<int> force;
      if (forced_macro) force = forced_vals[k];
      *slots[k] = take(std::string("ctrl.head.macro.") + kMacroHeadNames[k], arities[k], force,
                       std::string("ctrl.embed.macro.") + kMacroHeadNames[k]);
    }
    out.trace.macro.present = true;
  }

  out.trace.genotype.n_blocks = n_blocks;
  for (int i = 1; i <= n_blocks; ++i) {
    NodeDecision nd;
    if (i >= 2) {
      std::optional<int> force;
      if (forced) force = *forced->nodes[static_cast<size_t>(i) - 1].prev - 1;
      const int j =
          take("ctrl.head.conn." + std::to_string(i), i - 1, force, "ctrl.embed.conn");
      nd.prev = j + 1;
    }
    std::optional<int> force;
    if (forced) force = static_cast<int>(forced->nodes[static_cast<size_t>(i) - 1].act);
    nd.act = static_cast<ActivationKind>(take("ctrl.head.act", kNumActivations, force, "ctrl.embed.act"));
    out.trace.genotype.nodes.push_back(nd);
  }

  out.log_prob = logp_sum;
  out.entropy = ent_sum;
  out.trace.log_prob_sum = tape.value(logp_sum).data[0];
  out.trace.entropy_sum = tape.value(ent_sum).data[0];
  return out;
}

SampleTrace Controller::sample(Rng& rng, int n_blocks, bool greedy) const {
  Tape tape;
  return rollout(tape, &rng, nullptr, nullptr, n_blocks, greedy).trace;
}

double Controller::log_prob(const CellGenotype& g) const {
  auto violations = validate(g);
  if (!violations.empty()) throw std::invalid_argument("log_prob: " + violations.front());
  Tape tape;
  // Teacher-forced pass; macro heads are not part of a genotype-only query.
  Controller plain = *this;
  plain.cfg_.search_macro = false;
  return tape.value(plain.rollout(tape, nullptr, &g, nullptr, g.n_blocks, false).log_prob).data[0];
}

ReinforceStats Controller::reinforce_update(const std::vector<SampleTrace>& traces,
                                            const std::vector<double>& rewards, double baseline,
                                            double entropy_weight, Optimizer& opt) {
  if (traces.size() != rewards.size())
    throw std::invalid_argument("reinforce_update: traces/rewards size mismatch");
  if (traces.empty()) throw std::invalid_argument("reinforce_update: empty batch");
  for (double r : rewards)
    if (!std::isfinite(r)) throw std::invalid_argument("reinforce_update: non-finite reward");

  Tape tape;
  ValueId objective = tape.input(Matrix(1, 1));
  double total_entropy = 0.0;
  int total_decisions = 0;
  for (size_t i = 0; i < traces.size(); ++i) {
    auto ro = rollout(tape, nullptr, &traces[i].genotype,
                      traces[i].macro.present ? &traces[i].macro : nullptr,
                      traces[i].genotype.n_blocks, false);
    const double advantage = rewards[i] - baseline;
    ValueId term = tape.scale(ro.log_prob, advantage);
    if (entropy_weight != 0.0) term = tape.add(term, tape.scale(ro.entropy, entropy_weight));
    objective = tape.add(objective, term);
    total_entropy += tape.value(ro.entropy).data[0];
    total_decisions += static_cast<int>(ro.trace.decisions.size());
  }
  ValueId loss = tape.scale(objective, -1.0);
  tape.backward(loss);
  auto grads = tape.param_grads();

  ReinforceStats stats;
  stats.policy_loss = tape.value(loss).data[0];
  stats.mean_entropy_per_decision = total_entropy / std::max(1, total_decisions);
  double sq = 0.0;
  for (const auto& [k, g] : grads)
    for (double v : g.data) sq += v * v;
  stats.grad_norm = std::sqrt(sq);
  opt.step(params_, grads);
  return stats;
}

}  // namespace autornn
