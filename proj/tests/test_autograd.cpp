#include <doctest.h>

#include <cmath>

#include "eadnet/autograd.hpp"
#include "eadnet/gradcheck.hpp"
#include "eadnet/random.hpp"

using namespace eadnet;

namespace {

Tensor random_tensor(RandomStream& rng, Dims4 d, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(d);
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST_CASE("backward: sum of a 1x1 identity conv gives all-ones input gradient") {
  RandomStream rng(41);
  Tape tape;
  const VarId x = op_input(tape, random_tensor(rng, {1, 2, 3, 3}), true);
  Tensor w(Dims4{2, 2, 1, 1});
  w.at(0, 0, 0, 0) = 1.0f;
  w.at(1, 1, 0, 0) = 1.0f;
  const VarId wv = op_input(tape, w, false);
  const VarId y = op_conv2d(tape, x, wv, kNoVar, ConvParams{});
  const VarId loss = op_inner(tape, y, Tensor(tape.value(y).dims, 1.0f));
  tape.backward(loss);
  for (float g : tape.grad(x).data) CHECK(g == doctest::Approx(1.0f));
}

TEST_CASE("backward: prelu slope gradient at x=-2 with unit upstream is -2") {
  Tape tape;
  const VarId x = op_input(tape, Tensor(Dims4{1, 1, 1, 1}, -2.0f), false);
  const VarId slope = op_input(tape, Tensor(Dims4{1, 1, 1, 1}, 0.25f), true);
  const VarId y = op_prelu(tape, x, slope);
  tape.backward(y, Tensor(Dims4{1, 1, 1, 1}, 1.0f));
  CHECK(tape.grad(slope).data[0] == doctest::Approx(-2.0f));
}

TEST_CASE("backward: gradient of a sum of outputs equals the sum of gradients") {
  RandomStream rng(43);
  const Tensor x0 = random_tensor(rng, {1, 2, 4, 4});
  const Tensor w0 = random_tensor(rng, {2, 2, 3, 3});
  ConvParams p;
  p.kh = p.kw = 3;
  p.ph = p.pw = 1;
  const Tensor seed_a = random_tensor(rng, {1, 2, 4, 4});
  const Tensor seed_b = random_tensor(rng, {1, 2, 4, 4});

  auto grad_for = [&](const Tensor& seed) {
    Tape tape;
    const VarId x = op_input(tape, x0, true);
    const VarId w = op_input(tape, w0, false);
    const VarId y = op_conv2d(tape, x, w, kNoVar, p);
    tape.backward(y, seed);
    return tape.grad(x);
  };
  Tensor seed_sum(seed_a.dims);
  for (std::size_t i = 0; i < seed_sum.data.size(); ++i)
    seed_sum.data[i] = seed_a.data[i] + seed_b.data[i];
  const Tensor ga = grad_for(seed_a);
  const Tensor gb = grad_for(seed_b);
  const Tensor gsum = grad_for(seed_sum);
  for (std::size_t i = 0; i < gsum.data.size(); ++i)
    CHECK(gsum.data[i] == doctest::Approx(ga.data[i] + gb.data[i]).epsilon(1e-4));
}

TEST_CASE("backward error paths") {
  Tape tape;
  CHECK_THROWS_AS(tape.backward(0), std::invalid_argument);  // before any forward
  const VarId x = op_input(tape, Tensor(Dims4{1, 1, 2, 2}, 1.0f), true);
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);  // non-scalar root, no seed
  CHECK_THROWS_AS(tape.backward(5), std::invalid_argument);  // invalid id
  CHECK_THROWS_AS(tape.accumulate_grad(x, Tensor(Dims4{1, 1, 1, 1}, 1.0f)),
                  std::invalid_argument);  // shape mismatch
}

TEST_CASE("cross_entropy_loss") {
  SUBCASE("perfectly peaked logits drive the loss toward zero") {
    Tensor logits(Dims4{1, 3, 2, 2});
    LabelMap labels(1, 2, 2);
    for (int i = 0; i < 4; ++i) {
      const int cls = i % 3;
      labels.data[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(cls);
      logits.plane(0, cls)[i] = 50.0f;
    }
    const auto res = cross_entropy_loss(logits, labels, kIgnoreLabel, Reduction::Sum);
    CHECK(res.loss < 1e-6);
  }
  SUBCASE("uniform logits: sum reduction gives P*ln(K)") {
    const int K = 7;
    Tensor logits(Dims4{2, K, 3, 3}, 0.42f);
    LabelMap labels(2, 3, 3, 2);
    labels.data[0] = kIgnoreLabel;  // 17 counted pixels
    const auto res = cross_entropy_loss(logits, labels, kIgnoreLabel, Reduction::Sum);
    CHECK(res.pixels == 17);
    CHECK(res.loss == doctest::Approx(17.0 * std::log(static_cast<double>(K))).epsilon(1e-6));
  }
  SUBCASE("single pixel, logits (1,2,3), label 2") {
    Tensor logits(Dims4{1, 3, 1, 1});
    logits.data = {1.0f, 2.0f, 3.0f};
    LabelMap labels(1, 1, 1, 2);
    const auto res = cross_entropy_loss(logits, labels, kIgnoreLabel, Reduction::Sum);
    CHECK(std::fabs(res.loss - 0.40761) < 1e-4);
  }
  SUBCASE("gradient is softmax minus one-hot, zero at ignored pixels, zero-sum per pixel") {
    RandomStream rng(47);
    Tensor logits = random_tensor(rng, {2, 4, 3, 3}, -2.0f, 2.0f);
    LabelMap labels(2, 3, 3);
    for (auto& l : labels.data)
      l = rng.uniform() < 0.3 ? kIgnoreLabel : static_cast<std::uint8_t>(rng.uniform_int(4));
    const auto res = cross_entropy_loss(logits, labels, kIgnoreLabel, Reduction::Sum);
    const std::size_t plane = 9;
    for (int n = 0; n < 2; ++n) {
      for (std::size_t i = 0; i < plane; ++i) {
        float sum = 0.0f;
        for (int c = 0; c < 4; ++c) sum += res.grad_logits.plane(n, c)[i];
        if (labels.data[static_cast<std::size_t>(n) * plane + i] == kIgnoreLabel) {
          for (int c = 0; c < 4; ++c) CHECK(res.grad_logits.plane(n, c)[i] == 0.0f);
        } else {
          CHECK(std::fabs(sum) < 1e-6f);
        }
      }
    }
  }
  SUBCASE("mean reduction divides by the non-ignored count") {
    Tensor logits(Dims4{1, 2, 2, 2}, 0.0f);
    LabelMap labels(1, 2, 2, 1);
    labels.data[3] = kIgnoreLabel;
    const auto sum = cross_entropy_loss(logits, labels, kIgnoreLabel, Reduction::Sum);
    const auto mean = cross_entropy_loss(logits, labels, kIgnoreLabel, Reduction::Mean);
    CHECK(mean.loss == doctest::Approx(sum.loss / 3.0));
  }
  SUBCASE("out-of-range label rejected") {
    Tensor logits(Dims4{1, 2, 1, 1}, 0.0f);
    LabelMap labels(1, 1, 1, 5);
    CHECK_THROWS_AS(cross_entropy_loss(logits, labels, kIgnoreLabel, Reduction::Sum),
                    std::invalid_argument);
  }
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradients leave parameters unchanged") {
    ParamStore store;
    RandomStream rng(53);
    store.add("p", random_tensor(rng, {1, 4, 1, 1}));
    const Tensor before = store.at("p").value;
    AdamState adam;
    adam_step(store, adam, 1e-3f);
    for (std::size_t i = 0; i < before.data.size(); ++i)
      CHECK(store.at("p").value.data[i] == before.data[i]);
  }
  SUBCASE("unit gradient at step 1 moves the parameter by about lr") {
    ParamStore store;
    store.add("p", Tensor(Dims4{1, 1, 1, 1}, 2.0f));
    store.at("p").grad.fill(1.0f);
    AdamState adam;
    adam_step(store, adam, 1e-3f);
    CHECK(store.at("p").value.data[0] == doctest::Approx(2.0f - 1e-3f).epsilon(1e-5));
    CHECK(adam.step() == 1);
  }
  SUBCASE("identical parameters with identical gradients update identically") {
    ParamStore store;
    store.add("a", Tensor(Dims4{1, 1, 1, 1}, 0.5f));
    store.add("b", Tensor(Dims4{1, 1, 1, 1}, 0.5f));
    store.at("a").grad.fill(0.3f);
    store.at("b").grad.fill(0.3f);
    AdamState adam;
    adam_step(store, adam, 1e-3f);
    CHECK(store.at("a").value.data[0] == store.at("b").value.data[0]);
  }
  SUBCASE("lr 0 is a no-op") {
    ParamStore store;
    store.add("p", Tensor(Dims4{1, 1, 1, 1}, 0.5f));
    store.at("p").grad.fill(1.0f);
    AdamState adam;
    adam_step(store, adam, 0.0f);
    CHECK(store.at("p").value.data[0] == 0.5f);
  }
  SUBCASE("non-trainable entries are skipped") {
    ParamStore store;
    store.add("stat", Tensor(Dims4{1, 1, 1, 1}, 0.5f), /*trainable=*/false);
    store.at("stat").grad.fill(1.0f);
    AdamState adam;
    adam_step(store, adam, 1e-2f);
    CHECK(store.at("stat").value.data[0] == 0.5f);
  }
  SUBCASE("bad betas rejected") {
    CHECK_THROWS_AS(AdamState(1.0f, 0.999f, 1e-8f, 1e-3f), std::invalid_argument);
    CHECK_THROWS_AS(AdamState(0.9f, -0.1f, 1e-8f, 1e-3f), std::invalid_argument);
  }
}

TEST_CASE("poly_lr") {
  PolySchedule s{5e-4, 1000, 0.9};
  CHECK(poly_lr(s, 0) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(poly_lr(s, 1000) == 0.0);
  CHECK(std::fabs(poly_lr(s, 500) - 2.679433656340733e-4) < 1e-8);
  SUBCASE("matches the closed form at the quartiles within 1e-12") {
    for (std::int64_t iter : {std::int64_t(0), std::int64_t(250), std::int64_t(500),
                              std::int64_t(750), std::int64_t(1000)}) {
      const double expect = 5e-4 * std::pow(1.0 - iter / 1000.0, 0.9);
      CHECK(std::fabs(poly_lr(s, iter) - expect) < 1e-12);
    }
  }
  SUBCASE("monotonically non-increasing") {
    double prev = poly_lr(s, 0);
    for (std::int64_t iter = 1; iter <= 1000; iter += 7) {
      const double cur = poly_lr(s, iter);
      CHECK(cur <= prev);
      prev = cur;
    }
  }
  SUBCASE("iter outside [0, max] rejected") {
    CHECK_THROWS_AS(poly_lr(s, -1), std::invalid_argument);
    CHECK_THROWS_AS(poly_lr(s, 1001), std::invalid_argument);
  }
}

TEST_CASE("param store invariants") {
  ParamStore store;
  RandomStream rng(59);
  store.add("w", random_tensor(rng, {2, 3, 3, 3}));
  CHECK(store.at("w").grad.dims == store.at("w").value.dims);
  CHECK_THROWS_AS(store.add("w", Tensor(Dims4{1, 1, 1, 1})), std::invalid_argument);
  CHECK_THROWS_AS(store.at("missing"), std::invalid_argument);
  CHECK(param_scalar_count(store, {"w"}) == 54);
}

TEST_CASE("store binding exports gradients for trainable entries only") {
  ParamStore store;
  store.add("w", Tensor(Dims4{1, 2, 1, 1}, 1.0f));
  store.add("stat", Tensor(Dims4{1, 2, 1, 1}, 0.0f), /*trainable=*/false);
  Tape tape;
  StoreBinding binding(tape, store, true);
  const VarId w = binding["w"];
  const VarId stat = binding["stat"];
  CHECK(tape.needs_grad(w));
  CHECK_FALSE(tape.needs_grad(stat));
  const VarId y = op_concat(tape, std::vector<VarId>{w, stat});
  const VarId loss = op_inner(tape, y, Tensor(tape.value(y).dims, 2.0f));
  tape.backward(loss);
  binding.export_grads();
  CHECK(store.at("w").grad.data[0] == doctest::Approx(2.0f));
  CHECK(store.at("stat").grad.data[0] == 0.0f);
}

TEST_CASE("batchnorm train op updates running statistics") {
  RandomStream rng(61);
  Tape tape;
  const VarId x = op_input(tape, random_tensor(rng, {2, 1, 4, 4}, 1.0f, 3.0f), false);
  const VarId gamma = op_input(tape, Tensor(Dims4{1, 1, 1, 1}, 1.0f), false);
  const VarId beta = op_input(tape, Tensor(Dims4{1, 1, 1, 1}, 0.0f), false);
  std::vector<float> rm{0.0f}, rv{1.0f};
  op_batchnorm_train(tape, x, gamma, beta, 1e-5f, 0.1f, &rm, &rv);
  CHECK(rm[0] > 0.1f);  // pulled toward the batch mean (~2)
  CHECK(rv[0] < 1.0f);  // pulled toward the batch variance (<1)
}

TEST_CASE("finite-difference suite on the 64-bit shadow path") {
  // Smoke-level instance count here; the acceptance suite runs the full 20.
  const auto results = run_gradcheck(123, 4);
  CHECK(results.size() == gradcheck_ops().size());
  for (const auto& r : results) {
    INFO(r.op);
    CHECK(r.max_rel_err < kGradCheckTolerance);
    CHECK(r.pass);
  }
}

TEST_CASE("gradcheck negative control: corrupted gradient is caught") {
  const auto results = run_gradcheck(123, 2, "conv2d", "conv2d");
  REQUIRE(results.size() == 1);
  CHECK_FALSE(results[0].pass);
}

TEST_CASE("gradcheck rejects unknown op names") {
  CHECK_THROWS_AS(run_gradcheck(1, 1, "no-such-op"), std::invalid_argument);
}
