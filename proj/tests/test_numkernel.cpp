#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "autornn/checkpoint.hpp"
#include "autornn/kernels.hpp"
#include "autornn/optim.hpp"
#include "autornn/rng.hpp"
#include "autornn/tape.hpp"
#include "testutil.hpp"

#include <cstdio>
#include <filesystem>

using namespace autornn;

TEST_CASE("omp matmul kernels are bitwise identical to the serial reference") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + rng.uniform_int(40), k = 1 + rng.uniform_int(40), n = 1 + rng.uniform_int(40);
    Matrix a = rng.normal_matrix(m, k), b = rng.normal_matrix(k, n);
    Matrix c1, c2;
    matmul(a, b, c1);
    matmul_serial(a, b, c2);
    REQUIRE(c1.data == c2.data);

    Matrix bt = rng.normal_matrix(n, k);
    matmul_nt(a, bt, c1);
    matmul_nt_serial(a, bt, c2);
    REQUIRE(c1.data == c2.data);

    Matrix at = rng.normal_matrix(k, m);
    matmul_tn(at, rng.normal_matrix(k, n), c2);  // shape check only below
    Matrix x = rng.normal_matrix(k, m), y = rng.normal_matrix(k, n);
    matmul_tn(x, y, c1);
    matmul_tn_serial(x, y, c2);
    REQUIRE(c1.data == c2.data);
  }
}

TEST_CASE("backward: loss = sum(x) gives all-ones gradient") {
  Tape t;
  ParamMap params;
  params.emplace("x", Matrix(1, 3));
  params.at("x").data = {1, 2, 3};
  ValueId x = t.param(&params.at("x"), "x");
  t.backward(t.sum_all(x));
  auto grads = t.param_grads();
  REQUIRE(grads.at("x").data == std::vector<double>{1, 1, 1});
}

TEST_CASE("backward: sum(x*W) matches finite differences") {
  Rng rng(7);
  ParamMap params;
  params.emplace("x", rng.normal_matrix(3, 3));
  params.emplace("w", rng.normal_matrix(3, 3));
  auto forward = [&]() {
    Tape t;
    ValueId x = t.param(&params.at("x"), "x");
    ValueId w = t.param(&params.at("w"), "w");
    return t.value(t.sum_all(t.matmul(x, w))).data[0];
  };
  Tape t;
  ValueId x = t.param(&params.at("x"), "x");
  ValueId w = t.param(&params.at("w"), "w");
  t.backward(t.sum_all(t.matmul(x, w)));
  auto fd = testutil::finite_difference(params, forward);
  CHECK(testutil::max_grad_rel_err(t.param_grads(), fd) < 1e-6);
}

TEST_CASE("backward: mean(tanh(xW)) matches finite differences") {
  Rng rng(8);
  ParamMap params;
  params.emplace("x", rng.normal_matrix(2, 4));
  params.emplace("w", rng.normal_matrix(4, 4));
  auto forward = [&]() {
    Tape t;
    ValueId x = t.param(&params.at("x"), "x");
    ValueId w = t.param(&params.at("w"), "w");
    return t.value(t.mean_all(t.activation(t.matmul(x, w), ActivationKind::kTanh))).data[0];
  };
  Tape t;
  ValueId x = t.param(&params.at("x"), "x");
  ValueId w = t.param(&params.at("w"), "w");
  t.backward(t.mean_all(t.activation(t.matmul(x, w), ActivationKind::kTanh)));
  auto fd = testutil::finite_difference(params, forward);
  CHECK(testutil::max_grad_rel_err(t.param_grads(), fd) < 1e-6);
}

TEST_CASE("every differentiable primitive passes finite differences over random instances") {
  Rng rng(99);
  int instances = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const int r = 1 + rng.uniform_int(4), c = 2 + rng.uniform_int(4);
    ParamMap params;
    params.emplace("a", rng.normal_matrix(r, c));
    params.emplace("b", rng.normal_matrix(r, c));
    params.emplace("w", rng.normal_matrix(c, c));
    params.emplace("bias", rng.normal_matrix(1, c));
    params.emplace("table", rng.normal_matrix(5, c));
    std::vector<int> ids = {rng.uniform_int(5), rng.uniform_int(5)};
    std::vector<int> targets(static_cast<size_t>(r));
    std::vector<double> weights(static_cast<size_t>(r), 1.0);
    for (auto& v : targets) v = rng.uniform_int(c);
    if (r > 1) weights[0] = 0.0;
    const double eps = (trial % 2 == 0) ? 0.0 : 0.1;
    const auto kind = static_cast<ActivationKind>(trial % kNumActivations);

    auto build = [&](Tape& t) {
      ValueId a = t.param(&params.at("a"), "a");
      ValueId b = t.param(&params.at("b"), "b");
      ValueId w = t.param(&params.at("w"), "w");
      ValueId bias = t.param(&params.at("bias"), "bias");
      ValueId table = t.param(&params.at("table"), "table");
      ValueId mm = t.matmul(a, w);
      ValueId h = t.activation(t.add_row(t.add(mm, b), bias), kind);
      ValueId gate = t.activation(h, ActivationKind::kSigmoid);
      ValueId mix = t.add(t.hadamard(gate, h), t.hadamard(t.one_minus(gate), b));
      ValueId nt = t.matmul_nt(mix, t.rows(table, ids));
      ValueId sl = t.slice_cols(t.concat_cols(mix, t.scale(mix, 0.5)), 1, c + 1);
      ValueId lsm = t.log_softmax(sl);
      ValueId sm = t.softmax(sl);
      ValueId ent = t.sum_all(t.hadamard(sm, lsm));
      ValueId xent = t.softmax_xent(t.matmul(mix, w), targets, weights, eps);
      return t.add(t.add(t.scale(t.mean_all(nt), 0.3), t.scale(ent, 0.1)), xent);
    };
    auto forward = [&]() {
      Tape t;
      return t.value(build(t)).data[0];
    };
    Tape t;
    t.backward(build(t));
    auto fd = testutil::finite_difference(params, forward);
    REQUIRE(testutil::max_grad_rel_err(t.param_grads(), fd, 1e-4) < 1e-4);
    ++instances;
  }
  CHECK(instances >= 100);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(5);
  ParamMap params;
  params.emplace("w", rng.normal_matrix(3, 3));
  Matrix xv = rng.normal_matrix(2, 3);

  auto grads_of = [&](double ca, double cb) {
    Tape t;
    ValueId w = t.param(&params.at("w"), "w");
    ValueId x = t.input(xv);
    ValueId l1 = t.mean_all(t.activation(t.matmul(x, w), ActivationKind::kTanh));
    ValueId l2 = t.sum_all(t.activation(t.matmul(x, w), ActivationKind::kSilu));
    t.backward(t.add(t.scale(l1, ca), t.scale(l2, cb)));
    return t.param_grads();
  };
  auto g1 = grads_of(1.0, 0.0);
  auto g2 = grads_of(0.0, 1.0);
  auto gc = grads_of(2.0, -3.0);
  for (size_t i = 0; i < gc.at("w").size(); ++i) {
    const double want = 2.0 * g1.at("w").data[i] - 3.0 * g2.at("w").data[i];
    CHECK(testutil::rel_err(gc.at("w").data[i], want) < 1e-9);
  }
}

TEST_CASE("no NaN/Inf for inputs up to |x| = 50") {
  Matrix x(1, 5);
  x.data = {-50, -1, 0, 1, 50};
  for (int k = 0; k < kNumActivations; ++k) {
    Matrix y = activation_apply(static_cast<ActivationKind>(k), x);
    CHECK(y.all_finite());
    CHECK(activation_derivative(static_cast<ActivationKind>(k), x).all_finite());
  }
  Tape t;
  ValueId logits = t.input(Matrix::filled(1, 4, 50.0));
  ValueId loss = t.softmax_xent(logits, {2}, {1.0}, 0.1);
  CHECK(t.value(loss).all_finite());
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape t;
  ValueId x = t.input(Matrix::filled(2, 2, 1.0));
  CHECK_THROWS(t.backward(x));
}

TEST_CASE("adam: zero gradient leaves params unchanged") {
  ParamMap params;
  params.emplace("p", Matrix::filled(2, 2, 3.0));
  GradMap grads;
  grads.emplace("p", Matrix(2, 2));
  Optimizer opt({});
  opt.step(params, grads);
  for (double v : params.at("p").data) CHECK(v == 3.0);
}

TEST_CASE("adam: first step on scalar moves by about -lr") {
  ParamMap params;
  params.emplace("p", Matrix(1, 1));
  GradMap grads;
  grads.emplace("p", Matrix::filled(1, 1, 1.0));
  OptimizerConfig cfg;
  cfg.lr = 0.1;
  cfg.clip_norm = 0.0;
  Optimizer opt(cfg);
  opt.step(params, grads);
  CHECK(testutil::rel_err(params.at("p").data[0], -0.1) < 1e-6);
}

TEST_CASE("global-norm clip scales a norm-10 gradient by 0.1") {
  GradMap grads;
  grads.emplace("g", Matrix::filled(1, 4, 5.0));  // norm 10
  const double pre = clip_global_norm(grads, 1.0);
  CHECK(testutil::rel_err(pre, 10.0) < 1e-12);
  for (double v : grads.at("g").data) CHECK(testutil::rel_err(v, 0.5) < 1e-12);
}

TEST_CASE("adam: NaN gradient is an error naming the parameter") {
  ParamMap params;
  params.emplace("theta", Matrix(1, 1));
  GradMap grads;
  grads.emplace("theta", Matrix::filled(1, 1, std::nan("")));
  Optimizer opt({});
  CHECK_THROWS_WITH_AS(opt.step(params, grads), doctest::Contains("theta"), std::runtime_error);
}

TEST_CASE("noam schedule") {
  CHECK(testutil::rel_err(noam_lr(10000, 512, 10000),
                          std::pow(512.0, -0.5) * std::pow(10000.0, -0.5)) < 1e-12);
  CHECK(testutil::rel_err(noam_lr(100, 512, 10000),
                          std::pow(512.0, -0.5) * 100.0 * std::pow(10000.0, -1.5)) < 1e-12);
  CHECK(noam_lr(100, 512, 10000) == doctest::Approx(4.42e-6).epsilon(1e-2));
  const int64_t w = 10000;
  CHECK(noam_lr(w - 1, 512, w) < noam_lr(w, 512, w));
  CHECK(noam_lr(w, 512, w) > noam_lr(4 * w, 512, w));
  CHECK_THROWS(noam_lr(0, 512, w));
}

TEST_CASE("seeded rng: determinism and stream separation") {
  Rng a(42), b(42), c(43);
  bool identical = true;
  for (int i = 0; i < 1000; ++i)
    if (a.next_u64() != b.next_u64()) identical = false;
  CHECK(identical);
  bool differs = false;
  Rng a2(42);
  for (int i = 0; i < 10; ++i)
    if (a2.next_u64() != c.next_u64()) differs = true;
  CHECK(differs);

  std::vector<double> degenerate = {1, 0, 0, 0};
  Rng d(1);
  for (int i = 0; i < 50; ++i) CHECK(d.categorical(degenerate) == 0);
}

TEST_CASE("checkpoint blob+manifest round trip") {
  Rng rng(3);
  ParamMap params;
  params.emplace("cell.w_x", rng.normal_matrix(4, 6));
  params.emplace("embed", rng.normal_matrix(10, 4));
  const auto dir = std::filesystem::temp_directory_path() / "autornn_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string prefix = (dir / "params").string();
  save_params(prefix, params);
  ParamMap back = load_params(prefix);
  REQUIRE(back.size() == params.size());
  for (const auto& [name, m] : params) {
    REQUIRE(back.at(name).rows == m.rows);
    REQUIRE(back.at(name).data == m.data);
  }
  std::filesystem::remove_all(dir);
}
