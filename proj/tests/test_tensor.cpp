#include <doctest.h>

#include <cmath>

#include "eadnet/random.hpp"
#include "eadnet/tensor.hpp"

using namespace eadnet;

namespace {

Tensor random_tensor(RandomStream& rng, Dims4 d, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(d);
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.dims == b.dims);
  float worst = 0.0f;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    worst = std::max(worst, std::fabs(a.data[i] - b.data[i]));
  return worst;
}

}  // namespace

TEST_CASE("conv2d: 1x1 identity weight reproduces the input") {
  RandomStream rng(3);
  const Tensor x = random_tensor(rng, {2, 3, 5, 4});
  Tensor w(Dims4{3, 3, 1, 1});
  for (int o = 0; o < 3; ++o) w.at(o, o, 0, 0) = 1.0f;
  std::vector<float> bias(3, 0.0f);
  const Tensor y = conv2d(x, w, &bias, ConvParams{});
  CHECK(max_abs_diff(x, y) == 0.0f);
  const Tensor yn = conv2d_naive(x, w, &bias, ConvParams{});
  CHECK(max_abs_diff(x, yn) == 0.0f);
}

TEST_CASE("conv2d: dilated 3x1 depthwise impulse response") {
  // 1-channel 5x5 unit impulse at (2,2); all-ones 3x1 kernel, dilation
  // (2,1), padding (2,0): taps land on rows {0,2,4} of column 2.
  Tensor x(Dims4{1, 1, 5, 5});
  x.at(0, 0, 2, 2) = 1.0f;
  Tensor w(Dims4{1, 1, 3, 1}, 1.0f);
  ConvParams p;
  p.kh = 3;
  p.dh = 2;
  p.ph = 2;
  const Tensor y = conv2d<float>(x, w, nullptr, p);
  REQUIRE(y.dims == Dims4{1, 1, 5, 5});
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      const float expect = (c == 2 && r % 2 == 0) ? 1.0f : 0.0f;
      CHECK(y.at(0, 0, r, c) == expect);
    }
}

TEST_CASE("conv2d: output shape formula") {
  RandomStream rng(4);
  const Tensor x = random_tensor(rng, {1, 2, 4, 4});
  const Tensor w = random_tensor(rng, {3, 2, 3, 3});
  ConvParams p;
  p.kh = p.kw = 3;
  p.sh = p.sw = 2;
  p.ph = p.pw = 1;
  CHECK(conv_output_dims(x.dims, w.dims, p) == Dims4{1, 3, 2, 2});
}

TEST_CASE("conv2d: error paths") {
  RandomStream rng(5);
  const Tensor x = random_tensor(rng, {1, 4, 6, 6});
  ConvParams p;
  SUBCASE("groups not dividing channels") {
    p.groups = 3;
    const Tensor w = random_tensor(rng, {3, 1, 1, 1});
    CHECK_THROWS_AS(conv2d<float>(x, w, nullptr, p), std::invalid_argument);
  }
  SUBCASE("weight channel mismatch") {
    const Tensor w = random_tensor(rng, {2, 3, 1, 1});
    CHECK_THROWS_AS(conv2d<float>(x, w, nullptr, p), std::invalid_argument);
  }
  SUBCASE("kernel extent beyond padded input") {
    p.kh = 3;
    p.dh = 4;  // extent 9 > 6
    const Tensor w = random_tensor(rng, {4, 4, 3, 1});
    CHECK_THROWS_AS(conv2d<float>(x, w, nullptr, p), std::invalid_argument);
  }
  SUBCASE("bias length mismatch") {
    const Tensor w = random_tensor(rng, {2, 4, 1, 1});
    std::vector<float> bias(3, 0.0f);
    CHECK_THROWS_AS(conv2d(x, w, &bias, p), std::invalid_argument);
  }
}

TEST_CASE("conv2d_naive: frozen golden fixture (2ch 6x6 input, 3x3 kernel)") {
  // Generated once from RandomStream(7) with the naive reference loop.
  RandomStream rng(7);
  Tensor x(Dims4{1, 2, 6, 6});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  Tensor w(Dims4{2, 2, 3, 3});
  for (auto& v : w.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  std::vector<float> bias{static_cast<float>(rng.uniform(-1.0, 1.0)),
                          static_cast<float>(rng.uniform(-1.0, 1.0))};
  ConvParams p;
  p.kh = p.kw = 3;
  static const float golden[32] = {
      -0.132565662f, 3.23209667f,   -1.15807974f,  0.0275701154f,
      0.593680739f,  1.83535826f,   0.235551178f,  -0.915085614f,
      -0.688030303f, -0.860990644f, -0.691262186f, -0.100936301f,
      -0.287795395f, -0.120354027f, 1.82295752f,   0.309200436f,
      0.466467261f,  0.94721365f,   1.16346276f,   -1.17976284f,
      -1.75533056f,  -2.02098799f,  -0.60214597f,  -1.81111896f,
      -0.548909903f, 0.573185503f,  1.3063519f,    0.588246703f,
      -2.07659817f,  -1.05168593f,  -1.1311363f,   1.26921546f,
  };
  const Tensor out = conv2d_naive(x, w, &bias, p);
  REQUIRE(out.dims == Dims4{1, 2, 4, 4});
  for (std::size_t i = 0; i < 32; ++i)
    CHECK(out.data[i] == doctest::Approx(golden[i]).epsilon(1e-6));
  CHECK(max_abs_diff(out, conv2d(x, w, &bias, p)) < 1e-5f);
}

TEST_CASE("conv2d equals conv2d_naive across the kernel/dilation/groups/stride grid") {
  static constexpr int kernels[4][2] = {{1, 1}, {3, 1}, {1, 3}, {3, 3}};
  static constexpr int dilations[5] = {1, 2, 6, 12, 24};
  int cases = 0;
  for (int ki = 0; ki < 4; ++ki) {
    for (int di = 0; di < 5; ++di) {
      for (int depthwise = 0; depthwise < 2; ++depthwise) {
        for (int stride = 1; stride <= 2; ++stride) {
          for (int rep = 0; rep < 2; ++rep) {
            RandomStream rng(static_cast<unsigned>(1000 + 100 * ki + 10 * di + 5 * depthwise +
                                                   2 * stride + rep));
            ConvParams p;
            p.kh = kernels[ki][0];
            p.kw = kernels[ki][1];
            p.dh = p.kh > 1 ? dilations[di] : 1;
            p.dw = p.kw > 1 ? dilations[di] : 1;
            p.sh = p.sw = stride;
            const int ext_h = (p.kh - 1) * p.dh + 1;
            const int ext_w = (p.kw - 1) * p.dw + 1;
            p.ph = ext_h / 2;
            p.pw = ext_w / 2;
            const int h = std::max(1, ext_h - 2 * p.ph) + rng.uniform_int(5);
            const int w = std::max(1, ext_w - 2 * p.pw) + rng.uniform_int(5);
            int cin, cout;
            if (depthwise) {
              cin = cout = 1 + rng.uniform_int(4);
              p.groups = cin;
            } else {
              cin = 1 + rng.uniform_int(4);
              cout = 1 + rng.uniform_int(4);
              p.groups = 1;
            }
            const Tensor x = random_tensor(rng, {1 + rng.uniform_int(2), cin, h, w});
            const Tensor wt = random_tensor(rng, {cout, cin / p.groups, p.kh, p.kw});
            std::vector<float> bias(static_cast<std::size_t>(cout));
            for (auto& b : bias) b = static_cast<float>(rng.uniform(-1.0, 1.0));
            const Tensor a = conv2d(x, wt, &bias, p);
            const Tensor b = conv2d_naive(x, wt, &bias, p);
            CHECK(max_abs_diff(a, b) < 1e-5f);
            ++cases;
          }
        }
      }
    }
  }
  CHECK(cases >= 100);
}

TEST_CASE("depthwise conv2d never mixes channels") {
  RandomStream rng(11);
  ConvParams p;
  p.kh = p.kw = 3;
  p.ph = p.pw = 1;
  p.groups = 4;
  const Tensor w = random_tensor(rng, {4, 1, 3, 3});
  std::vector<float> bias(4);
  for (auto& b : bias) b = static_cast<float>(rng.uniform(-1.0, 1.0));
  Tensor x = random_tensor(rng, {1, 4, 6, 6});
  const Tensor base = conv2d(x, w, &bias, p);
  for (int j = 0; j < 4; ++j) {
    Tensor xp = x;
    for (int y = 0; y < 6; ++y)
      for (int c = 0; c < 6; ++c) xp.at(0, j, y, c) += 0.5f;
    const Tensor out = conv2d(xp, w, &bias, p);
    for (int c = 0; c < 4; ++c) {
      const float diff = max_abs_diff(slice_channels(out, c, c + 1), slice_channels(base, c, c + 1));
      if (c == j) {
        CHECK(diff > 0.0f);
      } else {
        CHECK(diff == 0.0f);
      }
    }
  }
}

TEST_CASE("conv2d is linear in its input") {
  RandomStream rng(13);
  ConvParams p;
  p.kh = 3;
  p.kw = 1;
  p.dh = 2;
  p.ph = 2;
  const Tensor w = random_tensor(rng, {3, 2, 3, 1});
  const Tensor x = random_tensor(rng, {1, 2, 6, 5});
  const Tensor y = random_tensor(rng, {1, 2, 6, 5});
  const float a = 0.7f, b = -1.3f;
  Tensor mix(x.dims);
  for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x.data[i] + b * y.data[i];
  const Tensor lhs = conv2d<float>(mix, w, nullptr, p);
  const Tensor cx = conv2d<float>(x, w, nullptr, p);
  const Tensor cy = conv2d<float>(y, w, nullptr, p);
  Tensor rhs(lhs.dims);
  for (std::size_t i = 0; i < rhs.data.size(); ++i) rhs.data[i] = a * cx.data[i] + b * cy.data[i];
  CHECK(max_abs_diff(lhs, rhs) < 1e-4f);
}

TEST_CASE("prelu") {
  PReluParams params{{0.25f, 0.0f}};
  Tensor x(Dims4{1, 2, 1, 2});
  x.data = {1.5f, -2.0f, -4.0f, 0.0f};
  const Tensor y = prelu(x, params);
  CHECK(y.data[0] == 1.5f);   // non-negative passes through
  CHECK(y.data[1] == -0.5f);  // slope 0.25
  CHECK(y.data[2] == 0.0f);   // slope 0 degenerates to relu
  CHECK(y.data[3] == 0.0f);
  SUBCASE("all-non-negative input is unchanged") {
    RandomStream rng(17);
    const Tensor pos = random_tensor(rng, {1, 2, 3, 3}, 0.0f, 1.0f);
    CHECK(max_abs_diff(pos, prelu(pos, params)) == 0.0f);
  }
  SUBCASE("channel mismatch") {
    PReluParams bad{{0.25f}};
    CHECK_THROWS_AS(prelu(x, bad), std::invalid_argument);
  }
}

TEST_CASE("batchnorm_infer") {
  SUBCASE("standard stats pass input through (up to epsilon)") {
    RandomStream rng(19);
    const Tensor x = random_tensor(rng, {1, 2, 4, 4});
    BatchNormParams p{{1.0f, 1.0f}, {0.0f, 0.0f}, {0.0f, 0.0f}, {1.0f, 1.0f}, 1e-12f};
    CHECK(max_abs_diff(x, batchnorm_infer(x, p)) < 1e-6f);
  }
  SUBCASE("constant input equal to the mean maps to beta") {
    Tensor x(Dims4{1, 1, 3, 3}, 0.7f);
    BatchNormParams p{{2.0f}, {0.3f}, {0.7f}, {0.5f}, 1e-5f};
    for (float v : batchnorm_infer(x, p).data) CHECK(v == doctest::Approx(0.3f));
  }
  SUBCASE("hand-evaluated normalization: 2*(3-1)/2+1 = 3") {
    Tensor x(Dims4{1, 1, 1, 1}, 3.0f);
    BatchNormParams p{{2.0f}, {1.0f}, {1.0f}, {4.0f}, 0.0f};
    CHECK(batchnorm_infer(x, p).data[0] == doctest::Approx(3.0f));
  }
  SUBCASE("negative variance rejected") {
    Tensor x(Dims4{1, 1, 1, 1}, 0.0f);
    BatchNormParams p{{1.0f}, {0.0f}, {0.0f}, {-0.5f}, 1e-5f};
    CHECK_THROWS_AS(batchnorm_infer(x, p), std::invalid_argument);
  }
}

TEST_CASE("concat_channels and slice_channels") {
  RandomStream rng(23);
  SUBCASE("four 16-channel tensors concatenate to 64 channels") {
    std::vector<Tensor> parts;
    for (int i = 0; i < 4; ++i) parts.push_back(random_tensor(rng, {1, 16, 3, 2}));
    std::vector<const Tensor*> ptrs;
    for (const auto& t : parts) ptrs.push_back(&t);
    const Tensor out = concat_channels(ptrs);
    CHECK(out.dims == Dims4{1, 64, 3, 2});
    int c0 = 0;
    for (const auto& part : parts) {
      CHECK(max_abs_diff(slice_channels(out, c0, c0 + part.dims.c), part) == 0.0f);
      c0 += part.dims.c;
    }
  }
  SUBCASE("single input is passed through") {
    const Tensor x = random_tensor(rng, {2, 5, 2, 2});
    CHECK(max_abs_diff(concat_channels<float>({&x}), x) == 0.0f);
  }
  SUBCASE("channel counts add up like the network head") {
    const Tensor a = random_tensor(rng, {1, 16, 2, 2});
    const Tensor b = random_tensor(rng, {1, 64, 2, 2});
    const Tensor c = random_tensor(rng, {1, 128, 2, 2});
    CHECK(concat_channels<float>({&a, &b, &c}).dims.c == 208);
  }
  SUBCASE("spatial mismatch rejected") {
    const Tensor a = random_tensor(rng, {1, 2, 2, 2});
    const Tensor b = random_tensor(rng, {1, 2, 3, 2});
    CHECK_THROWS_AS(concat_channels<float>({&a, &b}), std::invalid_argument);
  }
  SUBCASE("empty list rejected") {
    CHECK_THROWS_AS(concat_channels<float>({}), std::invalid_argument);
  }
}

TEST_CASE("maxpool2x2") {
  SUBCASE("constant tensor stays constant at half resolution") {
    Tensor x(Dims4{1, 2, 6, 4}, 0.4f);
    const Tensor y = maxpool2x2(x);
    CHECK(y.dims == Dims4{1, 2, 3, 2});
    for (float v : y.data) CHECK(v == 0.4f);
  }
  SUBCASE("single window picks the max") {
    Tensor x(Dims4{1, 1, 2, 2});
    x.data = {1, 2, 3, 4};
    CHECK(maxpool2x2(x).data[0] == 4.0f);
  }
  SUBCASE("4x4 ramp") {
    Tensor x(Dims4{1, 1, 4, 4});
    for (int i = 0; i < 16; ++i) x.data[static_cast<std::size_t>(i)] = static_cast<float>(i);
    CHECK(maxpool2x2(x).data == std::vector<float>{5, 7, 13, 15});
  }
  SUBCASE("degenerate spatial dims rejected") {
    Tensor x(Dims4{1, 1, 1, 4}, 0.0f);
    CHECK_THROWS_AS(maxpool2x2(x), std::invalid_argument);
  }
}

TEST_CASE("bilinear_resize") {
  RandomStream rng(29);
  SUBCASE("constant input stays constant at any size") {
    Tensor x(Dims4{1, 2, 3, 5}, 0.77f);
    for (float v : bilinear_resize(x, 8, 2).data) CHECK(v == doctest::Approx(0.77f));
  }
  SUBCASE("identity at matching size") {
    const Tensor x = random_tensor(rng, {1, 3, 4, 6});
    CHECK(max_abs_diff(x, bilinear_resize(x, 4, 6)) == 0.0f);
  }
  SUBCASE("2x2 to 4x4 half-pixel-centers fixture") {
    Tensor x(Dims4{1, 1, 2, 2});
    x.data = {0, 1, 0, 1};
    const Tensor y = bilinear_resize(x, 4, 4);
    for (int r = 0; r < 4; ++r) {
      CHECK(y.at(0, 0, r, 0) == doctest::Approx(0.0f));
      CHECK(y.at(0, 0, r, 1) == doctest::Approx(0.25f));
      CHECK(y.at(0, 0, r, 2) == doctest::Approx(0.75f));
      CHECK(y.at(0, 0, r, 3) == doctest::Approx(1.0f));
    }
  }
  SUBCASE("output bounded by input range") {
    const Tensor x = random_tensor(rng, {1, 2, 5, 7});
    float lo = x.data[0], hi = x.data[0];
    for (float v : x.data) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (const auto& [oh, ow] : {std::pair{11, 13}, std::pair{2, 3}, std::pair{5, 7}}) {
      for (float v : bilinear_resize(x, oh, ow).data) {
        CHECK(v >= lo - 1e-6f);
        CHECK(v <= hi + 1e-6f);
      }
    }
  }
  SUBCASE("zero target dims rejected") {
    Tensor x(Dims4{1, 1, 2, 2}, 0.0f);
    CHECK_THROWS_AS(bilinear_resize(x, 0, 4), std::invalid_argument);
  }
}

TEST_CASE("softmax_channels") {
  SUBCASE("uniform logits give 1/K") {
    Tensor x(Dims4{1, 5, 2, 2}, 0.3f);
    for (float v : softmax_channels(x).data) CHECK(v == doctest::Approx(0.2f));
  }
  SUBCASE("large logits stay finite") {
    Tensor x(Dims4{1, 2, 1, 1});
    x.data = {1000.0f, 0.0f};
    const Tensor y = softmax_channels(x);
    CHECK(y.data[0] == doctest::Approx(1.0f));
    CHECK(y.data[1] == doctest::Approx(0.0f));
  }
  SUBCASE("hand-evaluated (1,2,3)") {
    Tensor x(Dims4{1, 3, 1, 1});
    x.data = {1.0f, 2.0f, 3.0f};
    const Tensor y = softmax_channels(x);
    CHECK(std::fabs(y.data[0] - 0.09003f) < 1e-4f);
    CHECK(std::fabs(y.data[1] - 0.24473f) < 1e-4f);
    CHECK(std::fabs(y.data[2] - 0.66524f) < 1e-4f);
  }
  SUBCASE("probabilities in [0,1], per-pixel sums within 1e-6 of 1") {
    RandomStream rng(31);
    const Tensor x = random_tensor(rng, {2, 4, 3, 5}, -4.0f, 4.0f);
    const Tensor y = softmax_channels(x);
    const std::size_t plane = 15;
    for (int n = 0; n < 2; ++n) {
      for (std::size_t i = 0; i < plane; ++i) {
        float sum = 0.0f;
        for (int c = 0; c < 4; ++c) {
          const float v = y.plane(n, c)[i];
          CHECK(v >= 0.0f);
          CHECK(v <= 1.0f);
          sum += v;
        }
        CHECK(std::fabs(sum - 1.0f) < 1e-6f);
      }
    }
  }
}

TEST_CASE("argmax_channels breaks ties toward the lowest class") {
  Tensor x(Dims4{1, 3, 1, 2});
  x.at(0, 2, 0, 1) = 1.0f;
  const LabelMap m = argmax_channels(x);
  CHECK(m.at(0, 0, 0) == 0);
  CHECK(m.at(0, 0, 1) == 2);
}
