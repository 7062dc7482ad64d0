#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "nbfrec/adam.hpp"
#include "nbfrec/grad_check.hpp"
#include "nbfrec/nn.hpp"
#include "nbfrec/param_store.hpp"
#include "nbfrec/tape.hpp"
#include "nbfrec/tensor.hpp"

using namespace nbfrec;

using Td = Tensor<double>;

namespace {

Td random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Td t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("mlp_apply identity layer maps x to x") {
  ParamStore<double> store;
  MlpSpec spec({2, 2});
  store.add("f.w0", Td::from_rows({{1, 0}, {0, 1}}));
  store.add("f.b0", Td({2}));
  Tape<double> tape;
  Var x = tape.constant(Td::from_rows({{1, 2}}));
  Var y = mlp_apply(tape, spec, store, "f", x);
  CHECK(tape.value(y)(0, 0) == 1.0);
  CHECK(tape.value(y)(0, 1) == 2.0);
}

TEST_CASE("mlp_apply zero weights returns bias rows") {
  ParamStore<double> store;
  MlpSpec spec({3, 2});
  store.add("f.w0", Td({3, 2}));
  store.add("f.b0", Td::vector1d({0.5, -1.5}));
  Tape<double> tape;
  Var x = tape.constant(Td::from_rows({{1, 2, 3}, {-4, 0, 9}}));
  Var y = mlp_apply(tape, spec, store, "f", x);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(tape.value(y)(i, 0) == 0.5);
    CHECK(tape.value(y)(i, 1) == -1.5);
  }
}

TEST_CASE("mlp_apply two relu layers matches hand-computed affine chain") {
  // x = [1,-1]; layer 1: x@W1+b1 = [-1, 2] -> relu [0, 2]
  // layer 2: [0,2]@W2+b2 = [1, 0.5] + [-1, 1] = [0, 1.5]
  ParamStore<double> store;
  MlpSpec spec({2, 2, 2});
  store.add("f.w0", Td::from_rows({{1, 2}, {3, -1}}));
  store.add("f.b0", Td::vector1d({1, -1}));
  store.add("f.w1", Td::from_rows({{1, -1}, {0.5, 0.25}}));
  store.add("f.b1", Td::vector1d({-1, 1}));
  Tape<double> tape;
  Var y = mlp_apply(tape, spec, store, "f", tape.constant(Td::from_rows({{1, -1}})));
  CHECK_THAT(tape.value(y)(0, 0), Catch::Matchers::WithinAbs(0.0, 1e-12));
  CHECK_THAT(tape.value(y)(0, 1), Catch::Matchers::WithinAbs(1.5, 1e-12));
}

TEST_CASE("mlp_apply rejects input width mismatch") {
  ParamStore<double> store;
  MlpSpec spec({3, 2});
  Rng rng = make_rng(1);
  init_mlp(store, spec, "f", rng);
  Tape<double> tape;
  Var x = tape.constant(Td::from_rows({{1, 2}}));
  CHECK_THROWS_AS(mlp_apply(tape, spec, store, "f", x), std::invalid_argument);
}

TEST_CASE("mlp_apply with identity activation is linear in x") {
  Rng rng = make_rng(7);
  ParamStore<double> store;
  MlpSpec spec({{4, 3, 2}, Activation::kIdentity});
  init_mlp(store, spec, "f", rng);  // biases start at zero

  for (int trial = 0; trial < 20; ++trial) {
    Td x = random_tensor({1, 4}, rng);
    Td y = random_tensor({1, 4}, rng);
    std::uniform_real_distribution<double> coeff(-2, 2);
    const double a = coeff(rng), b = coeff(rng);
    Td mix({1, 4});
    for (std::size_t i = 0; i < 4; ++i) mix[i] = a * x[i] + b * y[i];

    Tape<double> tape;
    Var fx = mlp_apply(tape, spec, store, "f", tape.constant(x));
    Var fy = mlp_apply(tape, spec, store, "f", tape.constant(y));
    Var fmix = mlp_apply(tape, spec, store, "f", tape.constant(mix));
    for (std::size_t j = 0; j < 2; ++j) {
      const double lhs = tape.value(fmix)(0, j);
      const double rhs = a * tape.value(fx)(0, j) + b * tape.value(fy)(0, j);
      CHECK_THAT(lhs, Catch::Matchers::WithinAbs(rhs, 1e-9));
    }
  }
}

TEST_CASE("forward pass is deterministic") {
  Rng rng = make_rng(3);
  ParamStore<double> store;
  MlpSpec spec({5, 4, 3});
  init_mlp(store, spec, "f", rng);
  Td x = random_tensor({2, 5}, rng);
  Tape<double> t1, t2;
  Var y1 = mlp_apply(t1, spec, store, "f", t1.constant(x));
  Var y2 = mlp_apply(t2, spec, store, "f", t2.constant(x));
  CHECK(t1.value(y1) == t2.value(y2));
}

TEST_CASE("layer_norm constant row collapses to zero") {
  Tape<double> tape;
  Var x = tape.constant(Td::from_rows({{3.7, 3.7, 3.7, 3.7}}));
  Var gamma = tape.constant(Td::vector1d({1, 1, 1, 1}));
  Var beta = tape.constant(Td({4}));
  Var y = tape.layer_norm(x, gamma, beta, 1e-5);
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(tape.value(y)(0, j)) <= 1e-6);
}

TEST_CASE("layer_norm of [1,-1] is its own normalization") {
  Tape<double> tape;
  Var x = tape.constant(Td::from_rows({{1, -1}}));
  Var gamma = tape.constant(Td::vector1d({1, 1}));
  Var beta = tape.constant(Td({2}));
  Var y = tape.layer_norm(x, gamma, beta, 1e-10);
  CHECK_THAT(tape.value(y)(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-9));
  CHECK_THAT(tape.value(y)(0, 1), Catch::Matchers::WithinAbs(-1.0, 1e-9));
}

TEST_CASE("layer_norm with zero gamma broadcasts beta") {
  Rng rng = make_rng(11);
  Tape<double> tape;
  Var x = tape.constant(random_tensor({3, 5}, rng, 4.0));
  Var gamma = tape.constant(Td({5}));
  Var beta = tape.constant(Td::vector1d({1, 2, 3, 4, 5}));
  Var y = tape.layer_norm(x, gamma, beta, 1e-5);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(tape.value(y)(i, j) == double(j + 1));
}

TEST_CASE("backward of w.w gives 2w") {
  ParamStore<double> store;
  store.add("w", Td::vector1d({3}));
  Tape<double> tape;
  Var w = tape.param(store, "w");
  Var loss = tape.sum_all(tape.mul(w, w));
  tape.backward(loss);
  CHECK(store.grad("w")[0] == 6.0);
}

TEST_CASE("backward leaves unreachable parameter gradient at zero") {
  ParamStore<double> store;
  store.add("w", Td::vector1d({3}));
  store.add("p", Td::vector1d({5}));
  Tape<double> tape;
  Var w = tape.param(store, "w");
  tape.param(store, "p");  // taped but never used downstream
  Var loss = tape.sum_all(tape.mul(w, w));
  tape.backward(loss);
  CHECK(store.grad("p")[0] == 0.0);
}

TEST_CASE("backward twice without re-taping throws") {
  ParamStore<double> store;
  store.add("w", Td::vector1d({2}));
  Tape<double> tape;
  Var w = tape.param(store, "w");
  Var loss = tape.sum_all(tape.mul(w, w));
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
}

TEST_CASE("two-layer MLP with sigmoid NLL matches finite differences") {
  Rng rng = make_rng(21);
  ParamStore<double> store;
  MlpSpec spec({4, 6, 1});
  init_mlp(store, spec, "f", rng);
  // Nonzero biases so every path is exercised.
  for (std::size_t i = 0; i < 6; ++i) store.value("f.b0")[i] = 0.1 * double(i) - 0.2;
  store.value("f.b1")[0] = 0.05;

  Td x = random_tensor({8, 4}, rng);
  std::vector<int> targets = {1, 0, 1, 1, 0, 0, 1, 0};
  const double cap = -std::log(1e-12);

  auto loss_on_tape = [&](Tape<double>& tape) {
    Var scores = mlp_apply(tape, spec, store, "f", tape.constant(x));
    // -log p for positives, -log(1-p) for negatives, via stable softplus.
    Td sign({8, 1});
    for (std::size_t i = 0; i < 8; ++i) sign[i] = targets[i] ? -1.0 : 1.0;
    Var flipped = tape.mul(scores, tape.constant(sign));
    return tape.mean_all(tape.softplus_capped(flipped, cap));
  };

  auto value_fn = [&]() {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    return tape.scalar_value(loss_on_tape(tape));
  };
  auto grad_fn = [&]() {
    Tape<double> tape;
    tape.backward(loss_on_tape(tape));
  };

  GradCheckReport report = grad_check<double>(value_fn, grad_fn, {&store}, 1e-5);
  INFO("worst: " << report.worst_param << "[" << report.worst_index
                 << "] analytic=" << report.worst_analytic
                 << " numeric=" << report.worst_numeric);
  CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("every tape op agrees with finite differences on random shapes") {
  Rng rng = make_rng(33);
  std::uniform_int_distribution<std::size_t> dim(1, 16);

  // Each case wires a couple of parameters through one op into mean_all.
  struct OpCase {
    const char* name;
    std::function<Var(Tape<double>&, ParamStore<double>&)> build;
  };

  auto nudge_from_zero = [](Td& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
      if (std::abs(t[i]) < 1e-3) t[i] += 2e-3;  // keep relu kinks off the FD path
  };

  std::vector<std::uint32_t> gather_idx;
  std::vector<std::uint32_t> bcast_rows;
  std::vector<std::uint32_t> arc_src, arc_dst;

  std::vector<OpCase> cases = {
      {"add", [](Tape<double>& t, ParamStore<double>& s) {
         return t.add(t.param(s, "a"), t.param(s, "b"));
       }},
      {"scale_add", [](Tape<double>& t, ParamStore<double>& s) {
         return t.scale_add(t.param(s, "a"), 0.75, t.param(s, "b"), -1.5);
       }},
      {"mul", [](Tape<double>& t, ParamStore<double>& s) {
         return t.mul(t.param(s, "a"), t.param(s, "b"));
       }},
      {"relu", [](Tape<double>& t, ParamStore<double>& s) { return t.relu(t.param(s, "a")); }},
      {"sigmoid", [](Tape<double>& t, ParamStore<double>& s) { return t.sigmoid(t.param(s, "a")); }},
      {"softplus", [](Tape<double>& t, ParamStore<double>& s) {
         return t.softplus_capped(t.param(s, "a"), 30.0);
       }},
      {"matmul", [](Tape<double>& t, ParamStore<double>& s) {
         return t.matmul(t.param(s, "a"), t.param(s, "w"));
       }},
      {"add_rowwise", [](Tape<double>& t, ParamStore<double>& s) {
         return t.add_rowwise(t.param(s, "a"), t.param(s, "bias"));
       }},
      {"layer_norm", [](Tape<double>& t, ParamStore<double>& s) {
         return t.layer_norm(t.param(s, "a"), t.param(s, "gamma"), t.param(s, "beta"), 1e-5);
       }},
      {"concat_cols", [](Tape<double>& t, ParamStore<double>& s) {
         return t.concat_cols(t.param(s, "a"), t.param(s, "b2"));
       }},
      {"gather_rows", [&gather_idx](Tape<double>& t, ParamStore<double>& s) {
         return t.gather_rows(t.param(s, "a"), gather_idx);
       }},
      {"broadcast_to_rows", [&bcast_rows](Tape<double>& t, ParamStore<double>& s) {
         return t.broadcast_to_rows(t.param(s, "vec"), bcast_rows, 9);
       }},
      {"broadcast_rows", [](Tape<double>& t, ParamStore<double>& s) {
         return t.broadcast_rows(t.param(s, "vec"), 7);
       }},
      {"edge_mul_scatter", [&arc_src, &arc_dst](Tape<double>& t, ParamStore<double>& s) {
         return t.edge_mul_scatter(t.param(s, "states"), t.param(s, "weights"), &arc_src,
                                   &arc_dst, 2);
       }},
  };

  for (const auto& op : cases) {
    DYNAMIC_SECTION("op " << op.name) {
      const std::size_t n = dim(rng), m = dim(rng), k = dim(rng);
      ParamStore<double> store;
      Td a = random_tensor({n, m}, rng);
      nudge_from_zero(a);
      store.add("a", a);
      store.add("b", random_tensor({n, m}, rng));
      store.add("b2", random_tensor({n, k}, rng));
      store.add("w", random_tensor({m, k}, rng));
      store.add("bias", random_tensor({m}, rng));
      Td gamma = random_tensor({m}, rng);
      nudge_from_zero(gamma);
      store.add("gamma", gamma);
      store.add("beta", random_tensor({m}, rng));
      store.add("vec", random_tensor({k}, rng));

      gather_idx.clear();
      std::uniform_int_distribution<std::uint32_t> row(0, std::uint32_t(n - 1));
      for (int i = 0; i < 5; ++i) gather_idx.push_back(row(rng));
      bcast_rows = {0, 3, 3, 8};

      // small arc set over 4 nodes with 2 interleaved slices
      store.add("states", random_tensor({4 * 2, m}, rng));
      store.add("weights", random_tensor({5, m}, rng));
      arc_src = {0, 1, 2, 3, 0};
      arc_dst = {1, 2, 3, 0, 2};

      auto value_fn = [&]() {
        Tape<double> tape;
        tape.set_grad_enabled(false);
        return tape.scalar_value(tape.mean_all(op.build(tape, store)));
      };
      auto grad_fn = [&]() {
        Tape<double> tape;
        tape.backward(tape.mean_all(op.build(tape, store)));
      };
      GradCheckReport report = grad_check<double>(value_fn, grad_fn, {&store}, 1e-5);
      INFO("worst: " << report.worst_param << "[" << report.worst_index << "]");
      CHECK(report.max_rel_err <= 1e-4);
    }
  }
}

TEST_CASE("adam first step with unit gradient moves by -lr") {
  ParamStore<double> store;
  store.add("w", Td::vector1d({2.0}));
  store.grad("w")[0] = 1.0;
  Adam<double> adam(AdamConfig<double>{0.1, 0.9, 0.999, 1e-8});
  adam.step(store);
  CHECK(std::abs(store.value("w")[0] - 2.0 + 0.1) <= 1e-6);
}

TEST_CASE("adam zero gradient with zero state does not move") {
  ParamStore<double> store;
  store.add("w", Td::vector1d({1.25}));
  Adam<double> adam;
  adam.step(store);
  CHECK(store.value("w")[0] == 1.25);
}

TEST_CASE("adam moves only parameters with nonzero gradients") {
  ParamStore<double> store;
  store.add("moving", Td::vector1d({1.0}));
  store.add("still", Td::vector1d({1.0}));
  store.grad("moving")[0] = 0.5;
  Adam<double> adam;
  adam.step(store);
  CHECK(store.value("moving")[0] != 1.0);
  CHECK(store.value("still")[0] == 1.0);
}

TEST_CASE("grad_check on a quadratic is exact to round-off") {
  ParamStore<double> store;
  store.add("w", Td::vector1d({3.0, -2.0, 0.5}));
  auto value_fn = [&]() {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    Var w = tape.param(store, "w");
    return tape.scalar_value(tape.sum_all(tape.mul(w, w)));
  };
  auto grad_fn = [&]() {
    Tape<double> tape;
    Var w = tape.param(store, "w");
    tape.backward(tape.sum_all(tape.mul(w, w)));
  };
  GradCheckReport report = grad_check<double>(value_fn, grad_fn, {&store}, 1e-5);
  CHECK(report.max_rel_err <= 1e-10);
}

TEST_CASE("grad_check passes for relu with inputs nudged off the kink") {
  ParamStore<double> store;
  store.add("w", Td::vector1d({0.002, -0.003, 1.0, -2.0}));
  auto value_fn = [&]() {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    Var w = tape.param(store, "w");
    return tape.scalar_value(tape.sum_all(tape.relu(w)));
  };
  auto grad_fn = [&]() {
    Tape<double> tape;
    Var w = tape.param(store, "w");
    tape.backward(tape.sum_all(tape.relu(w)));
  };
  // eps 1e-5 < 2e-3 keeps the finite differences on one side of the kink
  GradCheckReport report = grad_check<double>(value_fn, grad_fn, {&store}, 1e-5);
  CHECK(report.max_rel_err <= 1e-8);
}

TEST_CASE("probability is the logistic link") {
  CHECK(probability(0.0) == 0.5);
  CHECK_THAT(probability(2.0), Catch::Matchers::WithinAbs(0.8808, 1e-4));
  CHECK(probability(800.0) == 1.0);  // saturation at the +inf limit
  CHECK(probability(-30.0) > 0.0);
  CHECK(probability(-30.0) < 1e-12);
}
