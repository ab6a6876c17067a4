#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "autornn/datapipe.hpp"
#include "autornn/supernet.hpp"

namespace autornn {

using TokenSeq = std::vector<std::string>;
using RefGroup = std::vector<TokenSeq>;

struct MetricReport {
  double bleu1 = 0.0, bleu2 = 0.0, bleu3 = 0.0, bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;

  // Table convention: percentages at one decimal. Raw values internally.
  std::string to_json_percent() const;
  std::string to_csv_percent() const;
};

// Corpus BLEU: clipped modified n-gram precision, geometric mean over orders
// 1..n, brevity penalty with closest-reference length matching.
std::vector<double> bleu(const std::vector<TokenSeq>& candidates,
                         const std::vector<RefGroup>& references, int max_n = 4);

// LCS F-measure with beta = 1.2, max over references, mean over corpus.
double rouge_l(const std::vector<TokenSeq>& candidates, const std::vector<RefGroup>& references);

enum class CiderVariant { kCiderD, kCider };

// Consensus metric: per n in 1..4, tf-idf n-gram cosine against each
// reference (idf from the reference corpus only), averaged over references
// and orders, scaled x10. CIDEr-D multiplies each reference similarity by a
// length-difference Gaussian penalty.
class CiderScorer {
 public:
  CiderScorer(const std::vector<RefGroup>& reference_corpus, CiderVariant variant = CiderVariant::kCiderD,
              double sigma = 6.0);

  double score(const TokenSeq& candidate, const RefGroup& refs) const;
  bool degenerate() const { return num_groups_ < 2; }
  int num_groups() const { return num_groups_; }

 private:
  double idf_of(const std::string& key) const;

  CiderVariant variant_;
  double sigma_;
  int num_groups_;
  std::map<std::string, int> doc_freq_;  // n-gram key -> groups containing it
};

double cider(const std::vector<TokenSeq>& candidates, const std::vector<RefGroup>& references,
             CiderVariant variant = CiderVariant::kCiderD, double sigma = 6.0);

MetricReport evaluate_all(const std::vector<TokenSeq>& candidates,
                          const std::vector<RefGroup>& references,
                          CiderVariant variant = CiderVariant::kCiderD);

// Stepwise decoding interface: a state plus log-probabilities over the
// vocabulary. Lets the decoders run against rigged test models as well as
// real child models.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  virtual Matrix init_state(const std::vector<double>& feature) const = 0;
  // Consumes one token, returns (next state, log-probs over vocab).
  virtual std::pair<Matrix, std::vector<double>> step(const Matrix& state, int token) const = 0;
  virtual int vocab_size() const = 0;
};

// ChildModel adapter; the feature is consumed at step 0 per the show-tell
// conditioning, then tokens from BOS.
class ChildSequenceModel : public SequenceModel {
 public:
  explicit ChildSequenceModel(const ChildModel& child) : child_(child) {}
  Matrix init_state(const std::vector<double>& feature) const override;
  std::pair<Matrix, std::vector<double>> step(const Matrix& state, int token) const override;
  int vocab_size() const override { return child_.vocab_size(); }

 private:
  const ChildModel& child_;
};

inline constexpr int kDecodeMaxLen = kMaxCaptionTokens + 2;

// Argmax decoding from BOS until EOS or max_len; returns interior ids.
std::vector<int> greedy_decode(const SequenceModel& model, const std::vector<double>& feature,
                               int max_len = kDecodeMaxLen);

struct BeamHypothesis {
  std::vector<int> tokens;  // interior ids
  double log_prob = 0.0;
  bool finished = false;    // ended on EOS or hit max length
  int scored_steps = 0;
};

struct BeamConfig {
  int beam = 3;
  int max_len = kDecodeMaxLen;
  bool length_normalize = true;
};

// All retired hypotheses (for the enumeration oracle) ordered best-first by
// the configured score; ties by shorter length then lexicographic ids.
std::vector<BeamHypothesis> beam_decode_all(const SequenceModel& model,
                                            const std::vector<double>& feature,
                                            const BeamConfig& cfg);
std::vector<int> beam_decode(const SequenceModel& model, const std::vector<double>& feature,
                             const BeamConfig& cfg = {});

TokenSeq ids_to_tokens(const std::vector<int>& ids, const Vocabulary& vocab);

struct ScstConfig {
  double lr = 1e-5;
  int steps = 100;  // number of minibatch updates
  int batch_size = 16;
  uint64_t seed = 0;
  double clip_norm = 5.0;
  CiderVariant variant = CiderVariant::kCiderD;
  int max_len = kDecodeMaxLen;
};

struct ScstStats {
  double mean_advantage = 0.0;
  double mean_sampled_reward = 0.0;
  double mean_greedy_reward = 0.0;
};

// Self-critical fine-tuning: per image, sample a caption and greedy-decode a
// baseline; advantage = reward(sampled) - reward(greedy); ascend
// advantage * log p(sampled) with Adam at the configured lr.
ScstStats scst_finetune(ChildModel& model, const std::vector<EncodedExample>& examples,
                        const std::map<std::string, RefGroup>& refs_by_image,
                        const Vocabulary& vocab, const ScstConfig& cfg);

}  // namespace autornn
