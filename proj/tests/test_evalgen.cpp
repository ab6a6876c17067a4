#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "autornn/evalgen.hpp"
#include "testutil.hpp"

using namespace autornn;

namespace {

TokenSeq words(std::initializer_list<const char*> ws) {
  TokenSeq s;
  for (const char* w : ws) s.push_back(w);
  return s;
}

// A fixed log-prob table indexed by (timestep, previous token); the state is
// a 1x1 matrix carrying the timestep. Lets decoding be checked against
// enumeration without any trained weights.
class TableModel : public SequenceModel {
 public:
  TableModel(int vocab, int horizon, uint64_t seed) : vocab_(vocab) {
    Rng rng(seed);
    table_.resize(static_cast<size_t>(horizon));
    for (auto& per_prev : table_) {
      per_prev.resize(static_cast<size_t>(vocab));
      for (auto& row : per_prev) {
        row.resize(static_cast<size_t>(vocab));
        double mx = -1e300;
        for (auto& v : row) {
          v = rng.uniform(-3.0, 3.0);
          mx = std::max(mx, v);
        }
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        const double lse = mx + std::log(z);
        for (auto& v : row) v -= lse;
      }
    }
  }

  Matrix init_state(const std::vector<double>&) const override { return Matrix(1, 1); }

  std::pair<Matrix, std::vector<double>> step(const Matrix& state, int token) const override {
    const int t = static_cast<int>(state.data[0]);
    Matrix next(1, 1);
    next.data[0] = t + 1;
    const size_t ti = std::min<size_t>(static_cast<size_t>(t), table_.size() - 1);
    return {next, table_[ti][static_cast<size_t>(token)]};
  }

  int vocab_size() const override { return vocab_; }

  std::vector<std::vector<std::vector<double>>> table_;
  int vocab_;
};

}  // namespace

TEST_CASE("bleu: brevity penalty fixture exp(-2)") {
  auto scores = bleu({words({"the", "cat"})},
                     {{words({"the", "cat", "is", "on", "the", "mat"})}});
  CHECK(scores[0] == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
}

TEST_CASE("bleu: perfect match scores 1 at every order") {
  auto cand = words({"a", "red", "ball", "on", "a", "blue", "box"});
  auto scores = bleu({cand}, {{cand}});
  for (double s : scores) CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("bleu: modified precision clips repeated candidate n-grams") {
  // p1 = min(4, 1) / 4 with one 'the' in the reference; c=4 > r=2 so BP=1.
  auto scores = bleu({words({"the", "the", "the", "the"})}, {{words({"the", "cat"})}});
  CHECK(scores[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(scores[3] == 0.0);  // no 4-gram overlap
}

TEST_CASE("bleu: closest reference length, ties to the shorter") {
  TokenSeq cand(6, "a"), r4(4, "a"), r8(8, "a");
  auto scores = bleu({cand}, {{r4, r8}});
  // r = 4 (tie between |6-4| and |6-8| goes short), c = 6 > r so BP = 1.
  CHECK(scores[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("bleu: corpus-level pooling differs from sentence mean") {
  // Pooled p1 = (1+3)/(1+3); both candidates fully matched, lengths pooled.
  auto s = bleu({words({"x"}), words({"y", "z", "w"})},
                {{words({"x"})}, {words({"y", "z", "w"})}});
  CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS(bleu({}, {}));
  CHECK_THROWS(bleu({words({"x"})}, {}));
}

TEST_CASE("rouge_l: lcs fixture 0.75") {
  CHECK(rouge_l({words({"a", "b", "c", "d"})}, {{words({"a", "c", "d", "e"})}}) ==
        doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("rouge_l: max over references, zero on empty candidate") {
  auto cand = words({"a", "b", "c"});
  double r = rouge_l({cand}, {{words({"z", "z", "z"}), cand}});
  CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rouge_l({TokenSeq{}}, {{cand}}) == 0.0);
}

TEST_CASE("cider: disjoint two-image corpus with exact candidates scores 10") {
  auto c1 = words({"a", "red", "ball", "on", "a", "box"});
  auto c2 = words({"the", "small", "dog", "under", "the", "tree"});
  for (CiderVariant v : {CiderVariant::kCider, CiderVariant::kCiderD}) {
    CHECK(cider({c1, c2}, {{c1}, {c2}}, v) == doctest::Approx(10.0).epsilon(1e-9));
  }
}

TEST_CASE("cider-d: length mismatch is penalized relative to plain cider") {
  auto ref1 = words({"a", "red", "ball", "on", "a", "box"});
  auto cand1 = words({"a", "red", "ball", "on"});
  auto c2 = words({"the", "small", "dog", "under", "the", "tree"});
  const double plain = cider({cand1, c2}, {{ref1}, {c2}}, CiderVariant::kCider);
  const double d = cider({cand1, c2}, {{ref1}, {c2}}, CiderVariant::kCiderD);
  CHECK(d < plain);
  CHECK(d > 0.0);
  // Gaussian penalty with sigma=6 over a length gap of 2 on image 1 only.
  CHECK(plain > 0.0);
}

TEST_CASE("cider: single reference group degenerates to zero idf") {
  auto c = words({"a", "red", "ball", "on", "a", "box"});
  CiderScorer scorer({{c}});
  CHECK(scorer.degenerate());
  CHECK(cider({c}, {{c}}) == 0.0);
}

TEST_CASE("metric report emits one-decimal percentages") {
  MetricReport r;
  r.bleu1 = std::exp(-2.0);  // 13.533528...% -> 13.5
  r.bleu4 = 0.256;
  r.rouge_l = 0.75;
  r.cider = 1.0;  // cider reported on the same x100 scale
  const std::string j = r.to_json_percent();
  CHECK(j.find("\"bleu1\": 13.5") != std::string::npos);
  CHECK(j.find("\"bleu4\": 25.6") != std::string::npos);
  CHECK(j.find("\"rouge_l\": 75.0") != std::string::npos);
  CHECK(j.find("\"cider\": 100.0") != std::string::npos);
  const std::string c = r.to_csv_percent();
  CHECK(c.find("bleu1,bleu2,bleu3,bleu4,rouge_l,cider\n13.5,") != std::string::npos);
}

TEST_CASE("greedy decode follows the argmax table and stops on EOS") {
  TableModel m(5, 6, 3);
  // Rig: step 0 argmax -> 4, step 1 (prev 4) argmax -> EOS.
  for (auto& per_prev : m.table_)
    for (auto& row : per_prev)
      for (auto& v : row) v = -10.0;
  m.table_[0][kBosId][4] = -0.1;
  m.table_[1][4][kEosId] = -0.1;
  auto ids = greedy_decode(m, {}, 6);
  CHECK(ids == std::vector<int>{4});

  m.table_[0][kBosId][4] = -10.0;
  m.table_[0][kBosId][kEosId] = -0.1;
  CHECK(greedy_decode(m, {}, 6).empty());
}

TEST_CASE("greedy decode respects the length cap") {
  TableModel m(5, 8, 9);
  for (auto& per_prev : m.table_)
    for (auto& row : per_prev) {
      for (auto& v : row) v = -10.0;
      row[3] = -0.1;  // never EOS
    }
  CHECK(greedy_decode(m, {}, 4).size() == 4);
}

TEST_CASE("beam=1 equals greedy over 100 random models") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    TableModel m(6, kDecodeMaxLen, 1000 + seed);
    BeamConfig cfg;
    cfg.beam = 1;
    auto g = greedy_decode(m, {});
    CHECK(beam_decode(m, {}, cfg) == g);
    cfg.length_normalize = false;
    CHECK(beam_decode(m, {}, cfg) == g);
  }
}

TEST_CASE("wider beams never find a worse raw log-prob") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    TableModel m(6, kDecodeMaxLen, 2000 + seed);
    BeamConfig one, three;
    one.beam = 1;
    three.beam = 3;
    const double b1 = beam_decode_all(m, {}, one)[0].log_prob;
    double best3 = -1e300;
    for (const auto& h : beam_decode_all(m, {}, three)) best3 = std::max(best3, h.log_prob);
    CHECK(best3 >= b1 - 1e-12);
  }
}

TEST_CASE("exhaustive beam matches brute-force enumeration on a tiny instance") {
  // Vocab of 4 ids (two usable word ids besides BOS/EOS wiring), horizon 3.
  const int V = 4, H = 3;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    TableModel m(V, H, 3000 + seed);

    // Enumerate every decodable hypothesis and its normalized score.
    double best_score = -1e300;
    std::vector<int> best_tokens;
    std::function<void(std::vector<int>&, int, double, int)> rec = [&](std::vector<int>& toks,
                                                                       int prev, double lp, int t) {
      Matrix st(1, 1);
      st.data[0] = t;
      if (t == H) {
        const double score = lp / std::max(1, t);
        if (score > best_score + 1e-15 ||
            (std::fabs(score - best_score) <= 1e-15 && toks < best_tokens)) {
          best_score = score;
          best_tokens = toks;
        }
        return;
      }
      auto [next, logp] = m.step(st, prev);
      for (int v = 0; v < V; ++v) {
        if (v == kEosId) {
          const double score = (lp + logp[static_cast<size_t>(v)]) / (t + 1);
          if (score > best_score + 1e-15 ||
              (std::fabs(score - best_score) <= 1e-15 && toks < best_tokens)) {
            best_score = score;
            best_tokens = toks;
          }
        } else {
          toks.push_back(v);
          rec(toks, v, lp + logp[static_cast<size_t>(v)], t + 1);
          toks.pop_back();
        }
      }
    };
    std::vector<int> toks;
    rec(toks, kBosId, 0.0, 0);

    BeamConfig cfg;
    cfg.beam = 64;  // wide enough to be exhaustive at this scale
    cfg.max_len = H;
    auto pool = beam_decode_all(m, {}, cfg);
    REQUIRE(!pool.empty());
    const auto& top = pool.front();
    CHECK(top.log_prob / std::max(1, top.scored_steps) == doctest::Approx(best_score).epsilon(1e-12));
    CHECK(top.tokens == best_tokens);
  }
}

TEST_CASE("child model adapter emits normalized log-probs and decodes") {
  MacroConfig macro;
  macro.embed_size = 8;
  macro.hidden_size = 8;
  SyntheticSceneSpec spec;
  Rng rng(5);
  SharedParamBank bank = init_bank(2, macro, NodeSemantics::kGated, 12, spec.feature_dim(), rng);
  CellGenotype g = random_genotype(rng, 2);
  ChildModel child(g, &bank.tensors, macro, NodeSemantics::kGated, 12, spec.feature_dim());
  ChildSequenceModel adapter(child);

  std::vector<double> feat(static_cast<size_t>(spec.feature_dim()), 0.5);
  Matrix st = adapter.init_state(feat);
  auto [st2, logp] = adapter.step(st, kBosId);
  REQUIRE(static_cast<int>(logp.size()) == 12);
  double total = 0.0;
  for (double lp : logp) total += std::exp(lp);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

  auto ids = greedy_decode(adapter, feat);
  CHECK(static_cast<int>(ids.size()) <= kDecodeMaxLen);
  auto beam = beam_decode(adapter, feat);
  CHECK(static_cast<int>(beam.size()) <= kDecodeMaxLen);
}

TEST_CASE("scst: runs on a synthetic corpus, moves parameters, rejects degenerate rewards") {
  SyntheticSceneSpec spec;
  auto records = synth_generate(spec, 40, 11);
  for (auto& r : records) r.split = Split::kTrain;
  std::vector<std::vector<std::string>> corpus;
  for (const auto& r : records) corpus.push_back(preprocess_caption(r.captions[0]));
  Vocabulary vocab = build_vocab(corpus, 1);
  auto examples = encode_records(records, Split::kTrain, vocab);
  auto refs = reference_groups(records, Split::kTrain);

  MacroConfig macro;
  macro.embed_size = 8;
  macro.hidden_size = 8;
  Rng rng(13);
  SharedParamBank bank = init_bank(2, macro, NodeSemantics::kGated, vocab.size(), spec.feature_dim(), rng);
  CellGenotype g = random_genotype(rng, 2);
  ChildModel child(g, &bank.tensors, macro, NodeSemantics::kGated, vocab.size(), spec.feature_dim());
  ParamMap before = child.extract();

  ScstConfig cfg;
  cfg.steps = 3;
  cfg.batch_size = 4;
  cfg.seed = 17;
  cfg.lr = 1e-3;  // large enough that a nonzero advantage must move weights
  ScstStats stats = scst_finetune(child, examples, refs, vocab, cfg);
  CHECK(std::isfinite(stats.mean_advantage));
  CHECK(std::isfinite(stats.mean_sampled_reward));
  CHECK(stats.mean_greedy_reward >= 0.0);
  bool moved = false;
  for (const auto& [k, m] : before)
    if (child.params().at(k).data != m.data) moved = true;
  CHECK(moved);

  std::map<std::string, RefGroup> one_group;
  one_group[examples[0].image_id] = refs.begin()->second;
  CHECK_THROWS_WITH_AS(scst_finetune(child, examples, one_group, vocab, cfg),
                       doctest::Contains("degenerate"), std::runtime_error);
}
