#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <set>

#include "autornn/genotype.hpp"
#include "testutil.hpp"

using namespace autornn;

namespace {

CellGenotype chain(int n, ActivationKind act = ActivationKind::kTanh) {
  CellGenotype g;
  g.n_blocks = n;
  for (int i = 1; i <= n; ++i) {
    NodeDecision nd;
    if (i >= 2) nd.prev = i - 1;
    nd.act = act;
    g.nodes.push_back(nd);
  }
  return g;
}

MacroConfig macro(int n, int dim) {
  MacroConfig m;
  m.n_blocks = n;
  m.embed_size = dim;
  m.hidden_size = dim;
  return m;
}

}  // namespace

TEST_CASE("validate accepts chains and rejects cycles/ranges") {
  CHECK(validate(chain(3)).empty());

  CellGenotype self_loop = chain(3);
  self_loop.nodes[2].prev = 3;
  auto v = validate(self_loop);
  REQUIRE(!v.empty());
  CHECK(v.front().find("prev must be < node index") != std::string::npos);

  CellGenotype out_of_range = chain(6);
  out_of_range.nodes[4].prev = 7;
  v = validate(out_of_range);
  REQUIRE(!v.empty());
}

TEST_CASE("leaf_set") {
  CHECK(leaf_set(chain(4)) == std::vector<int>{4});

  CellGenotype star;
  star.n_blocks = 4;
  star.nodes.push_back({std::nullopt, ActivationKind::kTanh});
  for (int i = 2; i <= 4; ++i) star.nodes.push_back({1, ActivationKind::kRelu});
  CHECK(leaf_set(star) == std::vector<int>{2, 3, 4});

  // Three-node walk-through: node2<-1, node3<-2 leaves only node 3.
  CHECK(leaf_set(chain(3)) == std::vector<int>{3});
}

TEST_CASE("leaf/referenced partition of 1..N") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    CellGenotype g = random_genotype(rng, 1 + rng.uniform_int(10));
    std::set<int> referenced;
    for (const auto& nd : g.nodes)
      if (nd.prev) referenced.insert(*nd.prev);
    auto leaves = leaf_set(g);
    REQUIRE(!leaves.empty());
    std::set<int> all(leaves.begin(), leaves.end());
    for (int r : referenced) {
      CHECK(!all.count(r));
      all.insert(r);
    }
    CHECK(static_cast<int>(all.size()) == g.n_blocks);
  }
}

TEST_CASE("param_count matches the reported table rows") {
  // LSTM at 512: 4*(512^2 + 512^2)
  CHECK(lstm_param_count(macro(6, 512)) == 2097152);

  // Gated 6-block cell at 512.
  auto pc = param_count(chain(6), macro(6, 512), NodeSemantics::kGated);
  CHECK(pc.cell == 3670016);
  CHECK(testutil::rel_err(static_cast<double>(pc.cell), 3.5e6) < 0.05);
  CHECK(pc.cell_bytes == pc.cell * 4);

  // Plain variant documents the one-matrix-per-node gap.
  auto plain = param_count(chain(6), macro(6, 512), NodeSemantics::kPlain);
  CHECK(plain.cell == 1835008);
}

TEST_CASE("param_count additivity per extra node") {
  const auto m = macro(6, 512);
  for (int n = 2; n <= 8; ++n) {
    auto a = param_count(chain(n), m, NodeSemantics::kPlain);
    auto b = param_count(chain(n - 1), m, NodeSemantics::kPlain);
    CHECK(a.cell - b.cell == 512 * 512);
    auto ga = param_count(chain(n), m, NodeSemantics::kGated);
    auto gb = param_count(chain(n - 1), m, NodeSemantics::kGated);
    CHECK(ga.cell - gb.cell == 2 * 512 * 512);
  }
}

TEST_CASE("lstm reference cell: zero weights give zero output, gradcheck passes") {
  MacroConfig m = macro(6, 4);
  m.unrestricted_dims = true;
  m.embed_size = 3;
  m.hidden_size = 4;
  Rng rng(77);
  LstmCell cell(m, rng);

  {
    LstmCell zero(m, rng);
    for (auto& [k, p] : zero.params())
      for (auto& v : p.data) v = 0.0;
    Tape t;
    ValueId x = t.input(Matrix::filled(2, 3, 0.7));
    ValueId h = t.input(Matrix(2, 4));
    ValueId c = t.input(Matrix(2, 4));
    auto [hn, cn] = zero.step(t, x, h, c);
    for (double v : t.value(hn).data) CHECK(v == 0.0);
  }

  Matrix xv = rng.normal_matrix(2, 3), hv = rng.normal_matrix(2, 4), cv = rng.normal_matrix(2, 4);
  auto forward = [&]() {
    Tape t;
    auto [hn, cn] = cell.step(t, t.input(xv), t.input(hv), t.input(cv));
    return t.value(t.mean_all(hn)).data[0];
  };
  Tape t;
  auto [hn, cn] = cell.step(t, t.input(xv), t.input(hv), t.input(cv));
  t.backward(t.mean_all(hn));
  auto fd = testutil::finite_difference(cell.params(), forward);
  CHECK(testutil::max_grad_rel_err(t.param_grads(), fd, 1e-5) < 1e-4);
}

TEST_CASE("random_genotype always validates; n=1 degenerate") {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) CHECK(validate(random_genotype(rng, 1 + rng.uniform_int(12))).empty());
  CellGenotype g1 = random_genotype(rng, 1);
  CHECK(g1.nodes.size() == 1);
  CHECK(!g1.nodes[0].prev.has_value());
}

TEST_CASE("random_genotype: prev[3] uniform over {1,2}") {
  Rng rng(12345);
  int count1 = 0;
  const int n_draws = 10000;
  for (int i = 0; i < n_draws; ++i)
    if (*random_genotype(rng, 3).nodes[2].prev == 1) ++count1;
  // chi^2 with 1 dof at alpha=0.001 is 10.83.
  const double expected = n_draws / 2.0;
  const double chi2 = 2.0 * (count1 - expected) * (count1 - expected) / expected;
  CHECK(chi2 < 10.83);
}

TEST_CASE("json round trip on random genotypes") {
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    CellGenotype g = random_genotype(rng, 1 + rng.uniform_int(10));
    MacroConfig m = macro(g.n_blocks, 512);
    m.unrestricted_dims = (i % 2 == 1);
    auto sem = (i % 2) ? NodeSemantics::kGated : NodeSemantics::kPlain;
    ParsedGenotype back = genotype_from_json(genotype_to_json(g, m, sem));
    REQUIRE(back.genotype == g);
    REQUIRE(back.macro == m);
    REQUIRE(back.semantics == sem);
  }
}

TEST_CASE("parse rejects bad inputs with named violations") {
  CHECK_THROWS_WITH_AS(
      genotype_from_json(R"({"n_blocks":1,"nodes":[{"prev":null,"act":"relu6"}]})"),
      doctest::Contains("relu6"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      genotype_from_json(
          R"({"n_blocks":4,"nodes":[{"prev":null,"act":"tanh"},{"prev":1,"act":"tanh"},{"prev":2,"act":"tanh"},{"act":"tanh"}]})"),
      doctest::Contains("node 4"), std::runtime_error);
  CHECK_THROWS(genotype_from_json("{not json"));
  // Self-loop reported through the validation list.
  CHECK_THROWS_WITH_AS(
      genotype_from_json(
          R"({"n_blocks":3,"nodes":[{"prev":null,"act":"tanh"},{"prev":1,"act":"tanh"},{"prev":3,"act":"tanh"}]})"),
      doctest::Contains("prev must be < node index"), std::runtime_error);
}

TEST_CASE("macro config option sets") {
  MacroConfig m = macro(6, 512);
  CHECK(validate(m).empty());
  m.hidden_size = 300;
  CHECK(!validate(m).empty());
  m.unrestricted_dims = true;
  CHECK(validate(m).empty());
  m.label_smoothing = 0.5;
  CHECK(!validate(m).empty());
}
