#include "autornn/search.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "autornn/checkpoint.hpp"

namespace autornn {

std::string reward_mode_name(RewardMode m) {
  switch (m) {
    case RewardMode::kMetricCider: return "metric_cider";
    case RewardMode::kMetricBleu4: return "metric_bleu4";
    case RewardMode::kNegLoss: return "neg_loss";
  }
  return "?";
}

std::optional<RewardMode> reward_mode_from_name(const std::string& name) {
  if (name == "metric_cider") return RewardMode::kMetricCider;
  if (name == "metric_bleu4") return RewardMode::kMetricBleu4;
  if (name == "neg_loss") return RewardMode::kNegLoss;
  return std::nullopt;
}

std::vector<std::string> validate(const SearchConfig& cfg) {
  std::vector<std::string> out;
  auto positive = [&](int v, const char* name) {
    if (v < 1) out.push_back(std::string(name) + " must be positive");
  };
  positive(cfg.n_blocks, "n_blocks");
  positive(cfg.epochs, "epochs");
  positive(cfg.batch_size, "batch_size");
  positive(cfg.traces_per_update, "traces_per_update");
  positive(cfg.reward_subsample, "reward_subsample");
  positive(cfg.derive_samples, "derive_samples");
  if (cfg.theta_batches_per_phase < 0) out.push_back("theta_batches_per_phase must be >= 0");
  if (cfg.baseline_decay <= 0.0 || cfg.baseline_decay >= 1.0)
    out.push_back("baseline_decay must lie in (0, 1)");
  return out;
}

namespace {

nlohmann::json genotype_json_obj(const CellGenotype& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& nd : g.nodes) {
    nlohmann::json node;
    node["prev"] = nd.prev ? nlohmann::json(*nd.prev) : nlohmann::json(nullptr);
    node["act"] = activation_name(nd.act);
    nodes.push_back(node);
  }
  return nlohmann::json{{"n_blocks", g.n_blocks}, {"nodes", nodes}};
}

void emit(std::ostream& log, nlohmann::json record) { log << record.dump() << "\n"; }

double reward_of(const CandidateReport& report, RewardMode mode) {
  switch (mode) {
    case RewardMode::kMetricCider: return report.metrics.cider;
    case RewardMode::kMetricBleu4: return report.metrics.bleu4;
    case RewardMode::kNegLoss: return std::exp(-report.loss);
  }
  return 0.0;
}

}  // namespace

CandidateReport evaluate_child(const CellGenotype& genotype, const SharedParamBank& bank,
                               const std::vector<EncodedExample>& subsample,
                               const std::map<std::string, RefGroup>& refs,
                               const Vocabulary& vocab, RewardMode mode) {
  if (subsample.empty()) throw std::invalid_argument("evaluate_child: empty subsample");
  const auto t0 = std::chrono::steady_clock::now();

  // Read-only pass over the shared tensors; nothing below mutates them.
  auto& tensors = const_cast<ParamMap&>(bank.tensors);
  ChildModel child(genotype, &tensors, bank.macro, bank.semantics, bank.vocab_size,
                   bank.feature_dim);

  CandidateReport report;
  report.genotype = genotype;

  double loss_weighted = 0.0, weight = 0.0;
  for (const Batch& batch : batch_iter(subsample, 32, /*seed=*/0, /*epoch=*/0)) {
    Tape tape;
    SequenceResult res = child.sequence_forward(tape, batch, bank.macro.label_smoothing);
    loss_weighted += tape.value(res.loss).data[0] * res.total_weight;
    weight += res.total_weight;
  }
  report.loss = loss_weighted / weight;

  ChildSequenceModel decoder(child);
  std::vector<TokenSeq> candidates;
  std::vector<RefGroup> groups;
  std::map<std::string, bool> seen;
  for (const EncodedExample& ex : subsample) {
    if (seen[ex.image_id]) continue;
    seen[ex.image_id] = true;
    auto rit = refs.find(ex.image_id);
    if (rit == refs.end())
      throw std::runtime_error("evaluate_child: no references for image " + ex.image_id);
    candidates.push_back(ids_to_tokens(greedy_decode(decoder, ex.feature), vocab));
    groups.push_back(rit->second);
  }
  report.metrics = evaluate_all(candidates, groups);

  for (const std::string& key : child.touched_keys()) {
    const Matrix& m = tensors.at(key);
    report.params_touched += static_cast<int64_t>(m.rows) * m.cols;
  }
  report.reward = reward_of(report, mode);
  report.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

SearchResult run_search(const SearchConfig& cfg, SharedParamBank& bank, Controller& controller,
                        const SearchData& data, std::ostream& log,
                        const std::string& checkpoint_prefix) {
  {
    auto violations = validate(cfg);
    if (!violations.empty()) throw std::invalid_argument("run_search: " + violations.front());
  }
  if (!data.train || !data.val || !data.val_refs || !data.vocab)
    throw std::invalid_argument("run_search: incomplete data wiring");
  if (data.train->empty() || data.val->empty())
    throw std::invalid_argument("run_search: empty train or validation split");

  Rng rng(cfg.seed);
  OptimizerConfig ocfg;
  ocfg.lr = cfg.omega_lr;
  ocfg.clip_norm = cfg.omega_clip;
  Optimizer omega_opt(ocfg);
  OptimizerConfig tcfg;
  tcfg.lr = cfg.controller_lr;
  tcfg.clip_norm = cfg.controller_clip;
  Optimizer theta_opt(tcfg);

  auto save_checkpoint = [&] {
    if (checkpoint_prefix.empty()) return;
    save_params(checkpoint_prefix + ".omega", bank.tensors);
    save_params(checkpoint_prefix + ".theta", controller.params());
  };

  SearchResult result;
  double baseline = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Phase 1: one shared-weight step per training batch, fresh genotype each.
    int step = 0;
    for (const Batch& batch : batch_iter(*data.train, cfg.batch_size, cfg.seed, epoch)) {
      SampleTrace trace = controller.sample(rng, cfg.n_blocks);
      ChildModel child(trace.genotype, &bank.tensors, bank.macro, bank.semantics, bank.vocab_size,
                       bank.feature_dim);
      Tape tape;
      SequenceResult res = child.sequence_forward(tape, batch, bank.macro.label_smoothing);
      const double loss = tape.value(res.loss).data[0];
      if (!std::isfinite(loss))
        throw std::runtime_error("run_search: training loss diverged at epoch " +
                                 std::to_string(epoch) + " step " + std::to_string(step) +
                                 (checkpoint_prefix.empty()
                                      ? std::string()
                                      : "; last good checkpoint at " + checkpoint_prefix));
      tape.backward(res.loss);
      omega_opt.step(bank.tensors, tape.param_grads());
      emit(log, {{"epoch", epoch},
                 {"phase", 1},
                 {"step", step},
                 {"genotype", genotype_json_obj(trace.genotype)},
                 {"loss", loss}});
      ++step;
      ++result.phase1_steps;
    }

    // Phase 2: policy updates from zero-shot rewards on a validation subsample.
    std::vector<size_t> order(data.val->size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<EncodedExample> subsample;
    for (size_t i = 0; i < order.size() && static_cast<int>(i) < cfg.reward_subsample; ++i)
      subsample.push_back((*data.val)[order[i]]);

    for (int update = 0; update < cfg.theta_batches_per_phase; ++update) {
      std::vector<SampleTrace> traces;
      std::vector<double> rewards;
      for (int t = 0; t < cfg.traces_per_update; ++t) {
        SampleTrace trace = controller.sample(rng, cfg.n_blocks);
        CandidateReport rep = evaluate_child(trace.genotype, bank, subsample, *data.val_refs,
                                             *data.vocab, cfg.reward_mode);
        emit(log, {{"epoch", epoch},
                   {"phase", 2},
                   {"step", update},
                   {"genotype", genotype_json_obj(trace.genotype)},
                   {"reward", rep.reward}});
        traces.push_back(std::move(trace));
        rewards.push_back(rep.reward);
      }
      double mean_r = 0.0;
      for (double r : rewards) mean_r += r / rewards.size();
      baseline = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * mean_r;
      ReinforceStats stats =
          controller.reinforce_update(traces, rewards, baseline, cfg.entropy_weight, theta_opt);
      emit(log, {{"epoch", epoch},
                 {"phase", 2},
                 {"step", update},
                 {"loss", stats.policy_loss},
                 {"baseline", baseline}});
      ++result.phase2_updates;
    }
    save_checkpoint();
  }
  result.baseline = baseline;
  return result;
}

DeriveResult derive(const Controller& controller, const SharedParamBank& bank, int k,
                    const std::vector<EncodedExample>& validation,
                    const std::map<std::string, RefGroup>& refs, const Vocabulary& vocab,
                    RewardMode mode, Rng& rng) {
  if (k < 1) throw std::invalid_argument("derive: need at least one sample");
  DeriveResult out;
  for (int i = 0; i < k; ++i) {
    SampleTrace trace = controller.sample(rng, bank.n_max);
    out.candidates.push_back(
        evaluate_child(trace.genotype, bank, validation, refs, vocab, mode));
  }
  out.best_index = 0;
  for (int i = 1; i < k; ++i) {
    const CandidateReport& a = out.candidates[static_cast<size_t>(i)];
    const CandidateReport& b = out.candidates[static_cast<size_t>(out.best_index)];
    if (a.reward > b.reward ||
        (a.reward == b.reward && a.params_touched < b.params_touched))
      out.best_index = i;
  }
  out.best = out.candidates[static_cast<size_t>(out.best_index)];
  return out;
}

}  // namespace autornn
