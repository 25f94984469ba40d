#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "evtrack/gradcheck.hpp"
#include "evtrack/ops.hpp"
#include "evtrack/params.hpp"
#include "evtrack/rnn.hpp"

using namespace evtrack;
using namespace evtrack::ad;

namespace {

TensorPtr random_tensor(std::vector<int64_t> shape, std::mt19937_64& rng,
                        bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
  auto t = make_tensor(std::move(shape), 0.0, requires_grad);
  std::uniform_real_distribution<double> uni(lo, hi);
  for (auto& v : t->values) v = uni(rng);
  return t;
}

}  // namespace

TEST_CASE("conv2d with a 1x1 identity kernel reproduces its input") {
  Tape tape;
  std::mt19937_64 rng(1);
  auto x = random_tensor({2, 1, 4, 4}, rng);
  auto w = make_tensor({1, 1, 1, 1}, std::vector<double>{1.0});
  auto b = make_tensor({1}, std::vector<double>{0.0});
  auto y = conv2d(tape, x, w, b, 1, 0);
  CHECK(y->values == x->values);
}

TEST_CASE("conv2d 3x3 ones kernel on constant input sums the window") {
  Tape tape;
  auto x = make_tensor({1, 1, 5, 5}, 1.0);
  auto w = make_tensor({1, 1, 3, 3}, 1.0);
  auto b = make_tensor({1});
  auto y = conv2d(tape, x, w, b, 1, 0);
  REQUIRE(y->shape == std::vector<int64_t>{1, 1, 3, 3});
  for (double v : y->values) CHECK(v == doctest::Approx(9.0));
}

TEST_CASE("conv2d shape mismatch names both shapes") {
  Tape tape;
  auto x = make_tensor({1, 2, 4, 4});
  auto w = make_tensor({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(tape, x, w, nullptr, 1, 1), ShapeError);
}

TEST_CASE("conv2d gradients match central finite differences") {
  std::mt19937_64 rng(42);
  auto x = random_tensor({2, 3, 8, 8}, rng);
  auto w = random_tensor({4, 3, 3, 3}, rng);
  auto b = random_tensor({4}, rng);
  auto f = [&](Tape& tape) {
    auto y = conv2d(tape, x, w, b, 1, 1);
    // squared sum keeps the loss nonlinear in every activation
    return sum(tape, mul(tape, y, y));
  };
  CHECK(grad_check(f, {x, w, b}, 1e-5) <= 1e-6);
}

TEST_CASE("avg_pool2d is the mean over each window") {
  Tape tape;
  auto x = make_tensor({1, 1, 2, 2}, std::vector<double>{1.0, 2.0, 3.0, 4.0});
  auto y = avg_pool2d(tape, x, 2);
  CHECK(y->values[0] == doctest::Approx(2.5));

  auto same = avg_pool2d(tape, x, 1);
  CHECK(same->values == x->values);

  auto odd = make_tensor({1, 1, 3, 3});
  CHECK_THROWS_AS(avg_pool2d(tape, odd, 2), ShapeError);
}

TEST_CASE("avg_pool2d distributes upstream gradient as g over k squared") {
  auto x = make_tensor({1, 1, 2, 2}, std::vector<double>{1.0, 2.0, 3.0, 4.0}, true);
  Tape tape;
  auto y = avg_pool2d(tape, x, 2);
  auto loss = sum(tape, affine(tape, y, 3.0, 0.0));
  x->zero_grad();
  tape.backward(loss);
  for (double g : x->grad) CHECK(g == doctest::Approx(3.0 / 4.0));
}

TEST_CASE("linear computes x w^T + b") {
  Tape tape;
  auto x = make_tensor({1, 2}, std::vector<double>{1.0, 1.0});
  auto w = make_tensor({1, 2}, std::vector<double>{2.0, 1.0});
  auto b = make_tensor({1}, std::vector<double>{0.0});
  auto y = linear(tape, x, w, b);
  CHECK(y->values[0] == doctest::Approx(3.0));

  auto eye = make_tensor({2, 2}, std::vector<double>{1.0, 0.0, 0.0, 1.0});
  auto x2 = make_tensor({3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6});
  auto same = linear(tape, x2, eye, nullptr);
  CHECK(same->values == x2->values);
}

TEST_CASE("linear gradient is exact to finite differences") {
  std::mt19937_64 rng(3);
  auto x = random_tensor({4, 6}, rng);
  auto w = random_tensor({5, 6}, rng);
  auto b = random_tensor({5}, rng);
  auto f = [&](Tape& tape) { return sum(tape, linear(tape, x, w, b)); };
  CHECK(grad_check(f, {x, w, b}, 1e-4) <= 1e-9);
}

TEST_CASE("activations match their closed forms") {
  Tape tape;
  auto x = make_tensor({1, 3}, std::vector<double>{-1.0, 0.0, 2.0});
  auto r = activation(tape, x, Activation::relu);
  CHECK(r->values == std::vector<double>{0.0, 0.0, 2.0});
  auto s = activation(tape, x, Activation::sigmoid);
  CHECK(s->values[1] == doctest::Approx(0.5));
  auto t = activation(tape, x, Activation::tanh);
  CHECK(t->values[1] == doctest::Approx(0.0));
}

TEST_CASE("batch_norm train mode normalizes by batch statistics") {
  Tape tape;
  // batch with per-channel mean 0 and variance 1 passes through (eps-corrected)
  auto x = make_tensor({2, 1}, std::vector<double>{1.0, -1.0});
  auto gamma = make_tensor({1}, std::vector<double>{1.0});
  auto beta = make_tensor({1}, std::vector<double>{0.0});
  BatchNormState state(1);
  auto y = batch_norm(tape, x, gamma, beta, state, Mode::train, 0.1, 1e-5);
  CHECK(y->values[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(y->values[1] == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("batch_norm eval mode with unit running stats is the identity") {
  Tape tape;
  auto x = make_tensor({1, 2}, std::vector<double>{0.3, -0.7});
  auto gamma = make_tensor({2}, std::vector<double>{1.0, 1.0});
  auto beta = make_tensor({2}, std::vector<double>{0.0, 0.0});
  BatchNormState state(2);
  auto y = batch_norm(tape, x, gamma, beta, state, Mode::eval, 0.1, 1e-5);
  CHECK(y->values[0] == doctest::Approx(0.3).epsilon(1e-5));
  CHECK(y->values[1] == doctest::Approx(-0.7).epsilon(1e-5));
}

TEST_CASE("batch_norm rejects a single-sample batch in train mode") {
  Tape tape;
  auto x = make_tensor({1, 2});
  auto gamma = make_tensor({2}, 1.0);
  auto beta = make_tensor({2});
  BatchNormState state(2);
  CHECK_THROWS_AS(batch_norm(tape, x, gamma, beta, state, Mode::train, 0.1, 1e-5),
                  ContractError);
}

TEST_CASE("batch_norm train-mode gradient passes finite differences") {
  std::mt19937_64 rng(5);
  auto x = random_tensor({4, 3, 2, 2}, rng);
  auto gamma = random_tensor({3}, rng, true, 0.5, 1.5);
  auto beta = random_tensor({3}, rng);
  // offset target keeps every residual O(1) so the quotient stays conditioned
  auto c = random_tensor({4, 3, 2, 2}, rng, false, 2.0, 3.0);
  auto f = [&](Tape& tape) {
    BatchNormState state(3);  // fresh state per call keeps f pure
    auto y = batch_norm(tape, x, gamma, beta, state, Mode::train, 0.1, 1e-5);
    auto r = sub(tape, y, c);
    return sum(tape, mul(tape, r, r));
  };
  CHECK(grad_check(f, {x, gamma, beta}, 1e-5) <= 1e-5);
}

TEST_CASE("dropout is the identity when p = 0 or in eval mode") {
  std::mt19937_64 rng(9);
  Tape tape;
  auto x = make_tensor({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK(dropout(tape, x, 0.0, Mode::train, rng).get() == x.get());
  CHECK(dropout(tape, x, 0.7, Mode::eval, rng).get() == x.get());
}

TEST_CASE("dropout keeps the expectation at p = 0.5") {
  std::mt19937_64 rng(123);
  Tape tape;
  auto x = make_tensor({100000}, 1.0);
  auto y = dropout(tape, x, 0.5, Mode::train, rng);
  double mean = 0.0;
  for (double v : y->values) mean += v;
  mean /= static_cast<double>(y->size());
  CHECK(mean >= 0.98);
  CHECK(mean <= 1.02);
}

TEST_CASE("dropout masks repeat for identical seeds") {
  auto x = make_tensor({64}, 1.0);
  std::mt19937_64 rng_a(77), rng_b(77);
  Tape tape;
  auto a = dropout(tape, x, 0.3, Mode::train, rng_a);
  auto b = dropout(tape, x, 0.3, Mode::train, rng_b);
  CHECK(a->values == b->values);
}

namespace {

CellParams zero_lstm_params(int64_t n, int64_t hidden) {
  CellParams p;
  p.w_in = make_tensor({4 * hidden, n});
  p.w_rec = make_tensor({4 * hidden, hidden});
  p.bias = make_tensor({4 * hidden});
  return p;
}

CellParams zero_gru_params(int64_t n, int64_t hidden) {
  CellParams p;
  p.w_in = make_tensor({3 * hidden, n});
  p.w_rec = make_tensor({3 * hidden, hidden});
  p.bias = make_tensor({3 * hidden});
  return p;
}

CellParams random_cell_params(int64_t gates, int64_t n, int64_t hidden,
                              std::mt19937_64& rng) {
  CellParams p;
  p.w_in = random_tensor({gates * hidden, n}, rng, true, -0.5, 0.5);
  p.w_rec = random_tensor({gates * hidden, hidden}, rng, true, -0.5, 0.5);
  p.bias = random_tensor({gates * hidden}, rng, true, -0.2, 0.2);
  return p;
}

}  // namespace

TEST_CASE("lstm_cell closed forms with all-zero parameters") {
  Tape tape;
  const int64_t hidden = 3;
  auto p = zero_lstm_params(2, hidden);
  auto x = make_tensor({1, 2}, std::vector<double>{0.4, -0.2});

  RecurrentState zero{make_tensor({1, hidden}), make_tensor({1, hidden})};
  auto [h1, s1] = lstm_cell(tape, x, zero, p);
  for (double v : h1->values) CHECK(v == doctest::Approx(0.0));
  for (double v : s1.c->values) CHECK(v == doctest::Approx(0.0));

  // gates all 0.5, g = 0: c' = 0.5 c, h' = 0.5 tanh(c')
  RecurrentState loaded{make_tensor({1, hidden}),
                        make_tensor({1, hidden}, std::vector<double>{2.0, 2.0, 2.0})};
  auto [h2, s2] = lstm_cell(tape, x, loaded, p);
  for (double v : s2.c->values) CHECK(v == doctest::Approx(1.0));
  for (double v : h2->values) CHECK(v == doctest::Approx(0.5 * std::tanh(1.0)));
}

TEST_CASE("gru_cell closed forms with all-zero parameters") {
  Tape tape;
  const int64_t hidden = 2;
  auto p = zero_gru_params(2, hidden);
  auto x = make_tensor({1, 2});

  auto h0 = make_tensor({1, hidden});
  auto h1 = gru_cell(tape, x, h0, p);
  for (double v : h1->values) CHECK(v == doctest::Approx(0.0));

  auto hv = make_tensor({1, hidden}, std::vector<double>{0.8, -0.6});
  auto h2 = gru_cell(tape, x, hv, p);
  CHECK(h2->values[0] == doctest::Approx(0.4));
  CHECK(h2->values[1] == doctest::Approx(-0.3));
}

TEST_CASE("lstm 3-step unroll gradient passes finite differences") {
  std::mt19937_64 rng(17);
  const int64_t hidden = 4, n = 3, batch = 2;
  auto p = random_cell_params(4, n, hidden, rng);
  auto seq = random_tensor({3, batch, n}, rng);
  auto f = [&](Tape& tape) {
    RecurrentState st{make_tensor({batch, hidden}), make_tensor({batch, hidden})};
    TensorPtr h;
    for (int64_t t = 0; t < 3; ++t) {
      auto x = select_row(tape, seq, t);
      auto [ht, next] = lstm_cell(tape, x, st, p);
      st = next;
      h = ht;
    }
    return sum(tape, mul(tape, h, h));
  };
  CHECK(grad_check(f, {p.w_in, p.w_rec, p.bias, seq}, 1e-5) <= 1e-5);
}

TEST_CASE("gru 3-step unroll gradient passes finite differences") {
  std::mt19937_64 rng(19);
  const int64_t hidden = 4, n = 3, batch = 2;
  auto p = random_cell_params(3, n, hidden, rng);
  auto seq = random_tensor({3, batch, n}, rng);
  auto f = [&](Tape& tape) {
    auto h = make_tensor({batch, hidden});
    for (int64_t t = 0; t < 3; ++t) {
      h = gru_cell(tape, select_row(tape, seq, t), h, p);
    }
    return sum(tape, mul(tape, h, h));
  };
  CHECK(grad_check(f, {p.w_in, p.w_rec, p.bias, seq}, 1e-5) <= 1e-5);
}

TEST_CASE("run_recurrent with one layer reproduces a hand-unrolled loop exactly") {
  std::mt19937_64 rng(23);
  const int64_t hidden = 3, n = 2, batch = 2, len = 4;
  auto p = random_cell_params(4, n, hidden, rng);
  auto seq = random_tensor({len, batch, n}, rng);

  RecurrentStack stack{CellKind::lstm, 1, false, hidden, {p}};
  Tape tape;
  auto out = run_recurrent(tape, seq, stack);

  RecurrentState st{make_tensor({batch, hidden}), make_tensor({batch, hidden})};
  for (int64_t t = 0; t < len; ++t) {
    auto [h, next] = lstm_cell(tape, select_row(tape, seq, t), st, p);
    st = next;
    for (int64_t i = 0; i < batch * hidden; ++i) {
      CHECK(out->values[t * batch * hidden + i] == h->values[i]);
    }
  }
}

TEST_CASE("bidirectional output is symmetric on a time-symmetric input") {
  std::mt19937_64 rng(29);
  const int64_t hidden = 3, n = 2, batch = 1, len = 5;
  auto p = random_cell_params(4, n, hidden, rng);
  auto seq = make_tensor({len, batch, n});
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (int64_t t = 0; t <= len / 2; ++t) {
    for (int64_t j = 0; j < n; ++j) {
      const double v = uni(rng);
      seq->values[t * n + j] = v;
      seq->values[(len - 1 - t) * n + j] = v;
    }
  }
  RecurrentStack stack{CellKind::lstm, 1, true, hidden, {p, p}};
  Tape tape;
  auto out = run_recurrent(tape, seq, stack);
  // forward half at step t == reversed backward half at step len-1-t
  for (int64_t t = 0; t < len; ++t) {
    for (int64_t j = 0; j < hidden; ++j) {
      CHECK(out->values[t * 2 * hidden + j] ==
            doctest::Approx(out->values[(len - 1 - t) * 2 * hidden + hidden + j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("two-layer lstm stack gradient passes finite differences") {
  std::mt19937_64 rng(31);
  const int64_t hidden = 3, n = 2, batch = 2, len = 3;
  auto p0 = random_cell_params(4, n, hidden, rng);
  auto p1 = random_cell_params(4, hidden, hidden, rng);
  auto seq = random_tensor({len, batch, n}, rng);
  RecurrentStack stack{CellKind::lstm, 2, false, hidden, {p0, p1}};
  auto f = [&](Tape& tape) {
    auto out = run_recurrent(tape, seq, stack);
    return sum(tape, mul(tape, out, out));
  };
  CHECK(grad_check(f, {p0.w_in, p1.w_rec, p1.bias, seq}, 1e-5) <= 1e-5);
}

TEST_CASE("backward seeds the identity and accumulates linearly") {
  auto x = make_tensor({1}, std::vector<double>{5.0}, true);
  Tape tape;
  auto y = affine(tape, x, 1.0, 0.0);
  x->zero_grad();
  tape.backward(y);
  CHECK(x->grad[0] == doctest::Approx(1.0));

  // a second sweep without zeroing doubles the gradient exactly
  tape.backward(y);
  CHECK(x->grad[0] == doctest::Approx(2.0));
}

TEST_CASE("backward of sum(w * x) gives grad w = x") {
  auto w = make_tensor({4}, std::vector<double>{1, 2, 3, 4}, true);
  auto x = make_tensor({4}, std::vector<double>{5, 6, 7, 8});
  Tape tape;
  auto loss = sum(tape, mul(tape, w, x));
  w->zero_grad();
  tape.backward(loss);
  CHECK(w->grad == x->values);
}

TEST_CASE("backward rejects a non-scalar loss") {
  auto x = make_tensor({2}, std::vector<double>{1.0, 2.0}, true);
  Tape tape;
  auto y = affine(tape, x, 2.0, 0.0);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("grad_check itself: f(x) = x^2 at x = 3") {
  auto x = make_tensor({1}, std::vector<double>{3.0}, true);
  auto f = [&](Tape& tape) { return mul(tape, x, x); };
  CHECK(grad_check(f, {x}, 1e-5) <= 1e-8);
  CHECK(x->grad[0] == doctest::Approx(6.0));
}

TEST_CASE("every primitive passes grad_check at seeded random points") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor({2, 2, 4, 4}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    auto b = random_tensor({3}, rng);
    auto f_conv = [&](Tape& tape) {
      auto y = conv2d(tape, x, w, b, 1, 1);
      y = activation(tape, y, Activation::tanh);
      y = avg_pool2d(tape, y, 2);
      return sum(tape, mul(tape, y, y));
    };
    CHECK(grad_check(f_conv, {x, w, b}, 1e-5) <= 1e-5);

    auto lx = random_tensor({3, 5}, rng);
    auto lw = random_tensor({4, 5}, rng);
    auto lb = random_tensor({4}, rng);
    auto f_lin = [&](Tape& tape) {
      auto y = linear(tape, lx, lw, lb);
      y = activation(tape, y, Activation::sigmoid);
      return sum(tape, mul(tape, y, y));
    };
    CHECK(grad_check(f_lin, {lx, lw, lb}, 1e-5) <= 1e-5);
  }
}

TEST_CASE("identical seeds give identical glorot initialization") {
  auto a = make_tensor({16, 8});
  auto b = make_tensor({16, 8});
  std::mt19937_64 rng_a(99), rng_b(99);
  glorot_uniform(*a, 8, 16, rng_a);
  glorot_uniform(*b, 8, 16, rng_b);
  CHECK(a->values == b->values);
}

TEST_CASE("parameter store keeps creation order and rejects duplicates") {
  ParameterStore store(7);
  auto w = store.create("w", {2, 2});
  store.create("b", {2});
  CHECK(store.names() == std::vector<std::string>{"w", "b"});
  CHECK(store.total_size() == 6);
  CHECK(store.get("w").get() == w.get());
  CHECK(w->requires_grad);
  CHECK_THROWS_AS(store.create("w", {1}), ContractError);
  CHECK_THROWS_AS(store.get("missing"), ContractError);
}
