#include "autornn/evalgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace autornn {

namespace {

std::string metric_line(const char* fmt, const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), fmt, r.bleu1 * 100.0, r.bleu2 * 100.0, r.bleu3 * 100.0,
                r.bleu4 * 100.0, r.rouge_l * 100.0, r.cider * 100.0);
  return buf;
}

// n-gram multiset of a sentence, keys joined with an unprintable separator.
std::map<std::string, int> ngram_counts(const TokenSeq& s, int n) {
  std::map<std::string, int> counts;
  if (static_cast<int>(s.size()) < n) return counts;
  for (size_t i = 0; i + n <= s.size(); ++i) {
    std::string key = s[i];
    for (int k = 1; k < n; ++k) key += '\x1f' + s[i + static_cast<size_t>(k)];
    ++counts[key];
  }
  return counts;
}

int lcs_length(const TokenSeq& a, const TokenSeq& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[m];
}

void check_corpus(const std::vector<TokenSeq>& candidates, const std::vector<RefGroup>& references) {
  if (candidates.empty()) throw std::invalid_argument("metric: empty candidate corpus");
  if (candidates.size() != references.size())
    throw std::invalid_argument("metric: candidate/reference corpus size mismatch");
  for (const auto& g : references)
    if (g.empty()) throw std::invalid_argument("metric: empty reference group");
}

}  // namespace

std::string MetricReport::to_json_percent() const {
  return metric_line(
      "{\"bleu1\": %.1f, \"bleu2\": %.1f, \"bleu3\": %.1f, \"bleu4\": %.1f, "
      "\"rouge_l\": %.1f, \"cider\": %.1f}",
      *this);
}

std::string MetricReport::to_csv_percent() const {
  return "bleu1,bleu2,bleu3,bleu4,rouge_l,cider\n" +
         metric_line("%.1f,%.1f,%.1f,%.1f,%.1f,%.1f", *this);
}

std::vector<double> bleu(const std::vector<TokenSeq>& candidates,
                         const std::vector<RefGroup>& references, int max_n) {
  check_corpus(candidates, references);
  std::vector<double> clipped(static_cast<size_t>(max_n), 0.0), total(static_cast<size_t>(max_n), 0.0);
  double c_len = 0.0, r_len = 0.0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    const TokenSeq& cand = candidates[i];
    for (int n = 1; n <= max_n; ++n) {
      auto cc = ngram_counts(cand, n);
      std::map<std::string, int> ref_max;
      for (const auto& ref : references[i])
        for (const auto& [key, cnt] : ngram_counts(ref, n))
          ref_max[key] = std::max(ref_max[key], cnt);
      for (const auto& [key, cnt] : cc) {
        total[static_cast<size_t>(n) - 1] += cnt;
        auto it = ref_max.find(key);
        if (it != ref_max.end())
          clipped[static_cast<size_t>(n) - 1] += std::min(cnt, it->second);
      }
    }
    c_len += static_cast<double>(cand.size());
    // Closest reference length; ties go to the shorter reference.
    int best = static_cast<int>(references[i][0].size());
    for (const auto& ref : references[i]) {
      const int rl = static_cast<int>(ref.size());
      const auto dist = [&](int L) { return std::abs(L - static_cast<int>(cand.size())); };
      if (dist(rl) < dist(best) || (dist(rl) == dist(best) && rl < best)) best = rl;
    }
    r_len += static_cast<double>(best);
  }
  const double bp = (c_len == 0.0) ? 0.0 : (c_len > r_len ? 1.0 : std::exp(1.0 - r_len / c_len));
  std::vector<double> scores(static_cast<size_t>(max_n), 0.0);
  for (int k = 1; k <= max_n; ++k) {
    double log_sum = 0.0;
    bool zero = false;
    for (int n = 1; n <= k; ++n) {
      const size_t j = static_cast<size_t>(n) - 1;
      if (clipped[j] == 0.0 || total[j] == 0.0) { zero = true; break; }
      log_sum += std::log(clipped[j] / total[j]);
    }
    scores[static_cast<size_t>(k) - 1] = zero ? 0.0 : bp * std::exp(log_sum / k);
  }
  return scores;
}

double rouge_l(const std::vector<TokenSeq>& candidates, const std::vector<RefGroup>& references) {
  check_corpus(candidates, references);
  const double beta = 1.2;
  double sum = 0.0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    double best = 0.0;
    for (const auto& ref : references[i]) {
      if (candidates[i].empty() || ref.empty()) continue;
      const double lcs = lcs_length(candidates[i], ref);
      if (lcs == 0.0) continue;
      const double p = lcs / static_cast<double>(candidates[i].size());
      const double r = lcs / static_cast<double>(ref.size());
      best = std::max(best, (1.0 + beta * beta) * r * p / (r + beta * beta * p));
    }
    sum += best;
  }
  return sum / static_cast<double>(candidates.size());
}

CiderScorer::CiderScorer(const std::vector<RefGroup>& reference_corpus, CiderVariant variant,
                         double sigma)
    : variant_(variant), sigma_(sigma), num_groups_(static_cast<int>(reference_corpus.size())) {
  if (num_groups_ == 0) throw std::invalid_argument("CiderScorer: empty reference corpus");
  for (const auto& group : reference_corpus) {
    std::map<std::string, int> seen;
    for (const auto& ref : group)
      for (int n = 1; n <= 4; ++n)
        for (const auto& [key, cnt] : ngram_counts(ref, n)) seen[key] = 1;
    for (const auto& [key, one] : seen) doc_freq_[key] += one;
  }
}

double CiderScorer::idf_of(const std::string& key) const {
  auto it = doc_freq_.find(key);
  const int df = it == doc_freq_.end() ? 0 : it->second;
  if (df == 0) return std::log(static_cast<double>(num_groups_));
  return std::log(static_cast<double>(num_groups_) / static_cast<double>(df));
}

double CiderScorer::score(const TokenSeq& candidate, const RefGroup& refs) const {
  if (refs.empty()) throw std::invalid_argument("CiderScorer: empty reference group");
  auto tfidf = [&](const TokenSeq& s, int n) {
    std::map<std::string, double> v;
    for (const auto& [key, cnt] : ngram_counts(s, n)) v[key] = cnt * idf_of(key);
    return v;
  };
  auto norm = [](const std::map<std::string, double>& v) {
    double sq = 0.0;
    for (const auto& [k, x] : v) sq += x * x;
    return std::sqrt(sq);
  };
  double order_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    auto vc = tfidf(candidate, n);
    const double nc = norm(vc);
    double ref_sum = 0.0;
    for (const auto& ref : refs) {
      auto vr = tfidf(ref, n);
      const double nr = norm(vr);
      double sim = 0.0;
      if (nc > 0.0 && nr > 0.0) {
        double dot = 0.0;
        for (const auto& [key, x] : vc) {
          auto it = vr.find(key);
          if (it != vr.end()) dot += x * it->second;
        }
        sim = dot / (nc * nr);
      }
      if (variant_ == CiderVariant::kCiderD) {
        const double dl = static_cast<double>(candidate.size()) - static_cast<double>(ref.size());
        sim *= std::exp(-dl * dl / (2.0 * sigma_ * sigma_));
      }
      ref_sum += sim;
    }
    order_sum += ref_sum / static_cast<double>(refs.size());
  }
  return 10.0 * order_sum / 4.0;
}

double cider(const std::vector<TokenSeq>& candidates, const std::vector<RefGroup>& references,
             CiderVariant variant, double sigma) {
  check_corpus(candidates, references);
  CiderScorer scorer(references, variant, sigma);
  double sum = 0.0;
  for (size_t i = 0; i < candidates.size(); ++i) sum += scorer.score(candidates[i], references[i]);
  return sum / static_cast<double>(candidates.size());
}

MetricReport evaluate_all(const std::vector<TokenSeq>& candidates,
                          const std::vector<RefGroup>& references, CiderVariant variant) {
  MetricReport r;
  auto b = bleu(candidates, references);
  r.bleu1 = b[0];
  r.bleu2 = b[1];
  r.bleu3 = b[2];
  r.bleu4 = b[3];
  r.rouge_l = rouge_l(candidates, references);
  r.cider = cider(candidates, references, variant);
  return r;
}

Matrix ChildSequenceModel::init_state(const std::vector<double>& feature) const {
  Tape tape;
  Matrix f(1, static_cast<int>(feature.size()));
  f.data = feature;
  ValueId h0 = tape.input(Matrix(1, child_.macro().hidden_size));
  ValueId h = child_.cell_step(tape, child_.feature_input(tape, tape.input(f)), h0);
  return tape.value(h);
}

std::pair<Matrix, std::vector<double>> ChildSequenceModel::step(const Matrix& state,
                                                               int token) const {
  Tape tape;
  ValueId h = child_.cell_step(tape, child_.embed_rows(tape, {token}), tape.input(state));
  ValueId logp = tape.log_softmax(child_.output_logits(tape, h));
  return {tape.value(h), tape.value(logp).data};
}

std::vector<int> greedy_decode(const SequenceModel& model, const std::vector<double>& feature,
                               int max_len) {
  std::vector<int> out;
  Matrix state = model.init_state(feature);
  int token = kBosId;
  for (int t = 0; t < max_len; ++t) {
    auto [next, logp] = model.step(state, token);
    int best = 0;
    for (int v = 1; v < static_cast<int>(logp.size()); ++v)
      if (logp[static_cast<size_t>(v)] > logp[static_cast<size_t>(best)]) best = v;
    state = std::move(next);
    if (best == kEosId) break;
    out.push_back(best);
    token = best;
  }
  return out;
}

namespace {

struct LiveHyp {
  std::vector<int> tokens;
  double log_prob = 0.0;
  bool finished = false;  // hit EOS; carried through ranking unexpanded
  int scored_steps = 0;
  Matrix state;
  int last = kBosId;
};

// Ranking inside the search: raw log-prob desc, then shorter, then
// lexicographic ids, so beam = 1 reproduces greedy argmax exactly.
bool rank_before(const LiveHyp& a, const LiveHyp& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<BeamHypothesis> beam_decode_all(const SequenceModel& model,
                                            const std::vector<double>& feature,
                                            const BeamConfig& cfg) {
  if (cfg.beam < 1) throw std::invalid_argument("beam_decode: beam must be >= 1");
  const int V = model.vocab_size();
  std::vector<LiveHyp> beam(1);
  beam[0].state = model.init_state(feature);

  for (int t = 0; t < cfg.max_len; ++t) {
    bool any_live = false;
    std::vector<LiveHyp> cands;
    for (auto& hyp : beam) {
      if (hyp.finished) {
        cands.push_back(hyp);
        continue;
      }
      any_live = true;
      auto [next, logp] = model.step(hyp.state, hyp.last);
      for (int v = 0; v < V; ++v) {
        LiveHyp c = hyp;
        c.log_prob += logp[static_cast<size_t>(v)];
        c.scored_steps += 1;
        c.state = next;
        if (v == kEosId) {
          c.finished = true;
        } else {
          c.tokens.push_back(v);
          c.last = v;
        }
        cands.push_back(std::move(c));
      }
    }
    if (!any_live) break;
    std::sort(cands.begin(), cands.end(), rank_before);
    if (static_cast<int>(cands.size()) > cfg.beam) cands.resize(static_cast<size_t>(cfg.beam));
    beam = std::move(cands);
  }

  std::vector<BeamHypothesis> pool;
  for (const auto& hyp : beam) {
    BeamHypothesis h;
    h.tokens = hyp.tokens;
    h.log_prob = hyp.log_prob;
    h.finished = true;  // EOS or length cap
    h.scored_steps = hyp.scored_steps;
    pool.push_back(std::move(h));
  }
  auto final_score = [&](const BeamHypothesis& h) {
    return cfg.length_normalize ? h.log_prob / std::max(1, h.scored_steps) : h.log_prob;
  };
  std::sort(pool.begin(), pool.end(), [&](const BeamHypothesis& a, const BeamHypothesis& b) {
    const double sa = final_score(a), sb = final_score(b);
    if (sa != sb) return sa > sb;
    if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
    return a.tokens < b.tokens;
  });
  return pool;
}

std::vector<int> beam_decode(const SequenceModel& model, const std::vector<double>& feature,
                             const BeamConfig& cfg) {
  auto pool = beam_decode_all(model, feature, cfg);
  if (pool.empty()) throw std::runtime_error("beam_decode: empty hypothesis pool");
  return pool.front().tokens;
}

TokenSeq ids_to_tokens(const std::vector<int>& ids, const Vocabulary& vocab) {
  TokenSeq out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(vocab.token_of(id));
  return out;
}

ScstStats scst_finetune(ChildModel& model, const std::vector<EncodedExample>& examples,
                        const std::map<std::string, RefGroup>& refs_by_image,
                        const Vocabulary& vocab, const ScstConfig& cfg) {
  if (examples.empty()) throw std::invalid_argument("scst_finetune: no examples");
  std::vector<RefGroup> corpus;
  corpus.reserve(refs_by_image.size());
  for (const auto& [id, group] : refs_by_image) corpus.push_back(group);
  CiderScorer scorer(corpus, cfg.variant);
  if (scorer.degenerate())
    throw std::runtime_error(
        "scst_finetune: reward is degenerate with fewer than two reference groups "
        "(all idf weights are zero); provide a larger evaluation corpus");

  OptimizerConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.clip_norm = cfg.clip_norm;
  Optimizer opt(ocfg);
  Rng rng(cfg.seed);
  ChildSequenceModel decoder(model);

  ScstStats stats;
  int processed = 0;
  std::vector<size_t> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int step = 0; step < cfg.steps; ++step) {
    rng.shuffle(order);
    const int B = std::min<int>(cfg.batch_size, static_cast<int>(order.size()));
    Tape tape;
    ValueId batch_loss = tape.input(Matrix(1, 1));
    for (int b = 0; b < B; ++b) {
      const EncodedExample& ex = examples[order[static_cast<size_t>(b)]];
      auto rit = refs_by_image.find(ex.image_id);
      if (rit == refs_by_image.end())
        throw std::runtime_error("scst_finetune: no references for image " + ex.image_id);

      // Sampled rollout on the training tape; choices come from tape values.
      Matrix f(1, static_cast<int>(ex.feature.size()));
      f.data = ex.feature;
      ValueId h = tape.input(Matrix(1, model.macro().hidden_size));
      h = model.cell_step(tape, model.feature_input(tape, tape.input(f)), h);
      ValueId logp_sum = tape.input(Matrix(1, 1));
      std::vector<int> sampled;
      int prev = kBosId;
      for (int t = 0; t < cfg.max_len; ++t) {
        if (t > 0) h = model.cell_step(tape, model.embed_rows(tape, {prev}), h);
        ValueId logp = tape.log_softmax(model.output_logits(tape, h));
        const Matrix& lv = tape.value(logp);
        std::vector<double> w(lv.data.size());
        for (size_t k = 0; k < w.size(); ++k) w[k] = std::exp(lv.data[k]);
        const int choice = rng.categorical(w);
        logp_sum = tape.add(logp_sum, tape.slice_cols(logp, choice, choice + 1));
        if (choice == kEosId) break;
        sampled.push_back(choice);
        prev = choice;
      }

      const std::vector<int> baseline_ids = greedy_decode(decoder, ex.feature, cfg.max_len);
      const double r_sample = scorer.score(ids_to_tokens(sampled, vocab), rit->second);
      const double r_greedy = scorer.score(ids_to_tokens(baseline_ids, vocab), rit->second);
      const double advantage = r_sample - r_greedy;
      batch_loss = tape.add(batch_loss, tape.scale(logp_sum, -advantage / B));

      stats.mean_advantage += advantage;
      stats.mean_sampled_reward += r_sample;
      stats.mean_greedy_reward += r_greedy;
      ++processed;
    }
    tape.backward(batch_loss);
    opt.step(model.params(), tape.param_grads());
  }
  if (processed > 0) {
    stats.mean_advantage /= processed;
    stats.mean_sampled_reward /= processed;
    stats.mean_greedy_reward /= processed;
  }
  return stats;
}

}  // namespace autornn
