#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "autornn/controller.hpp"
#include "autornn/evalgen.hpp"
#include "autornn/supernet.hpp"

namespace autornn {

enum class RewardMode { kMetricCider, kMetricBleu4, kNegLoss };

std::string reward_mode_name(RewardMode m);
std::optional<RewardMode> reward_mode_from_name(const std::string& name);

struct SearchConfig {
  int n_blocks = 6;
  int epochs = 3;
  int batch_size = 32;                 // phase-1 training batches
  int theta_batches_per_phase = 20;    // REINFORCE updates per phase 2
  int traces_per_update = 10;
  RewardMode reward_mode = RewardMode::kMetricCider;
  int reward_subsample = 64;           // validation items per child reward
  double baseline_decay = 0.95;
  int derive_samples = 16;
  uint64_t seed = 0;
  double omega_lr = 1e-3;
  double omega_clip = 5.0;
  double controller_lr = 3.5e-4;
  double controller_clip = 0.25;
  double entropy_weight = 1e-4;
};

// Empty list means valid.
std::vector<std::string> validate(const SearchConfig& cfg);

struct CandidateReport {
  CellGenotype genotype;
  double reward = 0.0;       // under the requested mode
  MetricReport metrics;      // all diagnostics, regardless of mode
  double loss = 0.0;         // validation cross-entropy
  int64_t params_touched = 0;
  double wall_time_sec = 0.0;
};

struct SearchData {
  const std::vector<EncodedExample>* train = nullptr;
  const std::vector<EncodedExample>* val = nullptr;
  const std::map<std::string, RefGroup>* val_refs = nullptr;
  const Vocabulary* vocab = nullptr;
};

struct SearchResult {
  double baseline = 0.0;
  int phase1_steps = 0;
  int phase2_updates = 0;
};

// Zero-shot child evaluation against a read-only bank: greedy decodes per
// unique image scored with the caption metrics, plus teacher-forced
// cross-entropy. neg_loss reward is exp(-CE), bounded in (0, 1].
CandidateReport evaluate_child(const CellGenotype& genotype, const SharedParamBank& bank,
                               const std::vector<EncodedExample>& subsample,
                               const std::map<std::string, RefGroup>& refs,
                               const Vocabulary& vocab, RewardMode mode);

// The two-phase interleaved loop. Each epoch first takes one shared-weight
// gradient step per training batch, each under a freshly sampled genotype,
// then runs policy-gradient updates on rewards from a validation subsample
// with an EMA baseline. Events go to `log` as JSON lines
// {epoch, phase, step, genotype?, reward?, loss?, baseline}. A non-finite
// training loss aborts with the last epoch's checkpoint intact.
SearchResult run_search(const SearchConfig& cfg, SharedParamBank& bank, Controller& controller,
                        const SearchData& data, std::ostream& log,
                        const std::string& checkpoint_prefix = "");

struct DeriveResult {
  CandidateReport best;
  int best_index = 0;
  std::vector<CandidateReport> candidates;
};

// Samples K genotypes from the trained policy, evaluates each on the full
// validation set, returns the argmax under the chosen metric; ties broken by
// fewer parameters, then earlier sample index.
DeriveResult derive(const Controller& controller, const SharedParamBank& bank, int k,
                    const std::vector<EncodedExample>& validation,
                    const std::map<std::string, RefGroup>& refs, const Vocabulary& vocab,
                    RewardMode mode, Rng& rng);

}  // namespace autornn
