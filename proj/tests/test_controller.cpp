#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "autornn/controller.hpp"
#include "testutil.hpp"

using namespace autornn;

namespace {

Controller zero_controller(ControllerConfig cfg) {
  Rng rng(1);
  Controller c(cfg, rng);
  for (auto& [k, m] : c.params())
    for (auto& v : m.data) v = 0.0;
  return c;
}

double uniform_logprob(int n_blocks) {
  double lp = -static_cast<double>(n_blocks) * std::log(8.0);
  for (int i = 2; i <= n_blocks; ++i) lp -= std::log(static_cast<double>(i - 1));
  return lp;
}

}  // namespace

TEST_CASE("zero-weight controller: closed-form uniform log-prob") {
  ControllerConfig cfg;
  cfg.n_max = 6;
  Controller ctrl = zero_controller(cfg);
  Rng rng(7);
  for (int i = 0; i < 10; ++i) {
    SampleTrace trace = ctrl.sample(rng, 6);
    CHECK(validate(trace.genotype).empty());
    CHECK(trace.log_prob_sum == doctest::Approx(uniform_logprob(6)).epsilon(1e-12));
    CHECK(trace.log_prob_sum == doctest::Approx(-17.264).epsilon(1e-3));
  }
}

TEST_CASE("greedy mode is deterministic argmax") {
  ControllerConfig cfg;
  cfg.n_max = 4;
  Rng init(3);
  Controller ctrl(cfg, init);
  Rng ra(1), rb(2);
  SampleTrace a = ctrl.sample(ra, 4, /*greedy=*/true);
  SampleTrace b = ctrl.sample(rb, 4, /*greedy=*/true);
  CHECK(a.genotype == b.genotype);
  CHECK(a.decisions == b.decisions);
}

TEST_CASE("uniform controller: per-head empirical frequencies pass chi^2") {
  ControllerConfig cfg;
  cfg.n_max = 6;
  Controller ctrl = zero_controller(cfg);
  Rng rng(1234);
  std::vector<int> act_counts(8, 0), conn6_counts(5, 0);
  const int n_draws = 10000;
  for (int i = 0; i < n_draws; ++i) {
    SampleTrace t = ctrl.sample(rng, 6);
    ++act_counts[static_cast<size_t>(t.genotype.nodes[0].act)];
    ++conn6_counts[static_cast<size_t>(*t.genotype.nodes[5].prev) - 1];
  }
  auto chi2 = [](const std::vector<int>& counts, int n) {
    const double expected = static_cast<double>(n) / counts.size();
    double s = 0.0;
    for (int c : counts) s += (c - expected) * (c - expected) / expected;
    return s;
  };
  CHECK(chi2(act_counts, n_draws) < 24.32);   // df=7, alpha=0.001
  CHECK(chi2(conn6_counts, n_draws) < 18.47); // df=4, alpha=0.001
}

TEST_CASE("log_prob teacher-forcing reproduces sampled traces exactly") {
  ControllerConfig cfg;
  cfg.n_max = 5;
  Rng init(9);
  Controller ctrl(cfg, init);
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    SampleTrace t = ctrl.sample(rng, 5);
    CHECK(std::fabs(ctrl.log_prob(t.genotype) - t.log_prob_sum) < 1e-12);
  }
  CellGenotype wrong;
  wrong.n_blocks = 9;
  CHECK_THROWS(ctrl.log_prob(wrong));
}

TEST_CASE("exhaustive N=2 normalization: probabilities sum to 1") {
  ControllerConfig cfg;
  cfg.n_max = 2;
  Rng init(17);
  Controller ctrl(cfg, init);
  double total = 0.0;
  for (int a1 = 0; a1 < 8; ++a1)
    for (int a2 = 0; a2 < 8; ++a2) {
      CellGenotype g;
      g.n_blocks = 2;
      g.nodes = {{std::nullopt, static_cast<ActivationKind>(a1)},
                 {1, static_cast<ActivationKind>(a2)}};
      total += std::exp(ctrl.log_prob(g));
    }
  CHECK(std::fabs(total - 1.0) < 1e-9);
}

TEST_CASE("entropy is maximal at zero weights") {
  ControllerConfig cfg;
  cfg.n_max = 4;
  Controller ctrl = zero_controller(cfg);
  Rng rng(5);
  SampleTrace t = ctrl.sample(rng, 4);
  double want = 4.0 * std::log(8.0);  // four activation heads
  for (int i = 2; i <= 4; ++i) want += std::log(static_cast<double>(i - 1));
  CHECK(t.entropy_sum == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("reinforce: centered advantage and zero entropy weight is a no-op") {
  ControllerConfig cfg;
  cfg.n_max = 3;
  Rng init(21);
  Controller ctrl(cfg, init);
  ParamMap before = ctrl.params();
  Rng rng(22);
  std::vector<SampleTrace> traces;
  std::vector<double> rewards;
  for (int i = 0; i < 5; ++i) {
    traces.push_back(ctrl.sample(rng, 3));
    rewards.push_back(0.7);
  }
  OptimizerConfig ocfg;
  ocfg.lr = 3.5e-4;
  ocfg.clip_norm = 0.25;
  Optimizer opt(ocfg);
  ctrl.reinforce_update(traces, rewards, /*baseline=*/0.7, /*entropy_weight=*/0.0, opt);
  for (const auto& [k, m] : before) REQUIRE(ctrl.params().at(k).data == m.data);

  CHECK_THROWS(ctrl.reinforce_update(traces, {std::nan("")}, 0.0, 0.0, opt));
}

TEST_CASE("reinforce: positive advantage raises chosen-decision probabilities") {
  ControllerConfig cfg;
  cfg.n_max = 3;
  Rng init(31);
  Controller ctrl(cfg, init);
  Rng rng(32);
  SampleTrace t = ctrl.sample(rng, 3);
  const double before = ctrl.log_prob(t.genotype);
  OptimizerConfig ocfg;
  ocfg.lr = 1e-3;
  ocfg.clip_norm = 0.25;
  Optimizer opt(ocfg);
  ctrl.reinforce_update({t}, {1.0}, /*baseline=*/0.0, /*entropy_weight=*/0.0, opt);
  CHECK(ctrl.log_prob(t.genotype) > before);
}

TEST_CASE("rigged reward drives the activation head to tanh") {
  ControllerConfig cfg;
  cfg.n_max = 6;
  cfg.temperature = 1.0;
  cfg.tanh_constant = 0.0;  // sample straight from the policy for this check
  Rng init(41);
  Controller ctrl(cfg, init);
  OptimizerConfig ocfg;
  ocfg.lr = 0.02;
  ocfg.clip_norm = 0.25;
  Optimizer opt(ocfg);
  Rng rng(42);
  double baseline = 0.0;
  for (int update = 0; update < 500; ++update) {
    std::vector<SampleTrace> traces;
    std::vector<double> rewards;
    for (int b = 0; b < 10; ++b) {
      SampleTrace t = ctrl.sample(rng, 6);
      int tanh_count = 0;
      for (const auto& nd : t.genotype.nodes)
        if (nd.act == ActivationKind::kTanh) ++tanh_count;
      traces.push_back(std::move(t));
      rewards.push_back(static_cast<double>(tanh_count) / 6.0);
    }
    double mean_r = 0.0;
    for (double r : rewards) mean_r += r / rewards.size();
    baseline = 0.95 * baseline + 0.05 * mean_r;
    ctrl.reinforce_update(traces, rewards, baseline, 1e-4, opt);
  }
  int tanh_decisions = 0, total = 0;
  for (int i = 0; i < 500; ++i) {
    SampleTrace t = ctrl.sample(rng, 6);
    for (const auto& nd : t.genotype.nodes) {
      ++total;
      if (nd.act == ActivationKind::kTanh) ++tanh_decisions;
    }
  }
  CHECK(static_cast<double>(tanh_decisions) / total > 0.9);
}

TEST_CASE("macro heads sample valid option indices and are teacher-forceable") {
  ControllerConfig cfg;
  cfg.n_max = 3;
  cfg.search_macro = true;
  Rng init(51);
  Controller ctrl(cfg, init);
  Rng rng(52);
  SampleTrace t = ctrl.sample(rng, 3);
  REQUIRE(t.macro.present);
  CHECK(t.macro.n_blocks >= 0);
  CHECK(t.macro.n_blocks < 4);
  CHECK(t.macro.label_smoothing < 2);
  MacroConfig applied = t.macro.apply(MacroConfig{}, ctrl.macro_tables());
  CHECK(validate(applied).empty());

  // Update path accepts macro-bearing traces.
  OptimizerConfig ocfg;
  ocfg.clip_norm = 0.25;
  Optimizer opt(ocfg);
  ctrl.reinforce_update({t}, {1.0}, 0.0, 1e-4, opt);
}
