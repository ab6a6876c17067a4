#pragma once

#include <optional>
#include <string>
#include <vector>

#include "autornn/genotype.hpp"
#include "autornn/optim.hpp"
#include "autornn/rng.hpp"
#include "autornn/tape.hpp"

namespace autornn {

// Option tables for the optional macro decision heads, in sampling order.
struct MacroOptionTables {
  std::vector<int> n_blocks = {6, 8, 10, 12};
  std::vector<int> embed_size = {200, 512, 1000, 2048};
  std::vector<int> hidden_size = {200, 512, 1000, 2048};
  std::vector<double> label_smoothing = {0.0, 0.1};
  // init_hidden_each_epoch and tie_embeddings are boolean heads (arity 2).
  std::vector<int> controller_hidden = {100, 200, 512, 1024};
};

struct ControllerConfig {
  int n_max = 6;        // largest genotype the heads can express
  int hidden = 100;     // LSTM width
  int embed = 32;       // decision-embedding width
  double temperature = 5.0;     // sampling only
  double tanh_constant = 2.5;   // logit squash during sampling; <= 0 disables
  bool search_macro = false;
};

// Macro decisions of one trace, as option-table indices.
struct MacroChoices {
  bool present = false;
  int n_blocks = 0, embed_size = 0, hidden_size = 0;
  int label_smoothing = 0, init_hidden = 0, tie_embeddings = 0, controller_hidden = 0;

  MacroConfig apply(MacroConfig base, const MacroOptionTables& tables) const;
};

struct SampleTrace {
  CellGenotype genotype;
  MacroChoices macro;
  double log_prob_sum = 0.0;  // under the untempered policy
  double entropy_sum = 0.0;
  std::vector<int> decisions;  // chosen indices in decision order (macro first)
};

struct ReinforceStats {
  double policy_loss = 0.0;
  double mean_entropy_per_decision = 0.0;
  double grad_norm = 0.0;
};

// The policy network: an LSTM consuming the embedding of the previous chosen
// index, with a shared 8-way activation head and per-node connection heads of
// exact arity i-1. Sampling tempers and optionally tanh-squashes the logits;
// recorded log-probs and entropies always come from the plain softmax, so
// log_prob() teacher-forcing reproduces a trace's sum exactly.
class Controller {
 public:
  Controller(ControllerConfig cfg, Rng& init_rng);

  SampleTrace sample(Rng& rng, int n_blocks, bool greedy = false) const;
  double log_prob(const CellGenotype& g) const;

  // Gradient ascent on sum_i (reward_i - baseline) * log_prob_i
  // + entropy_weight * entropy_i, through the provided Adam state.
  ReinforceStats reinforce_update(const std::vector<SampleTrace>& traces,
                                  const std::vector<double>& rewards, double baseline,
                                  double entropy_weight, Optimizer& opt);

  ParamMap& params() { return params_; }
  const ParamMap& params() const { return params_; }
  const ControllerConfig& config() const { return cfg_; }
  const MacroOptionTables& macro_tables() const { return tables_; }

 private:
  struct Rollout {
    SampleTrace trace;
    ValueId log_prob = -1;
    ValueId entropy = -1;
  };
  // One pass. forced != nullptr teacher-forces that genotype (and macro when
  // forced_macro is set); otherwise rng drives sampling.
  Rollout rollout(Tape& tape, Rng* rng, const CellGenotype* forced,
                  const MacroChoices* forced_macro, int n_blocks, bool greedy) const;

  struct StepOut {
    int choice;
    ValueId log_prob;  // 1x1
    ValueId entropy;   // 1x1
  };
  StepOut decision_step(Tape& tape, ValueId input, ValueId& h, ValueId& c,
                        const std::string& head_key, int arity, Rng* rng,
                        std::optional<int> forced, bool greedy) const;

  ControllerConfig cfg_;
  MacroOptionTables tables_;
  ParamMap params_;
};

}  // namespace autornn
