#include "eadnet/rf_verify.hpp"

#include <cmath>

namespace eadnet {

namespace {

std::pair<int, int> bounding_box(const Tensor& t) {
  int y0 = t.dims.h, y1 = -1, x0 = t.dims.w, x1 = -1;
  for (int n = 0; n < t.dims.n; ++n) {
    for (int c = 0; c < t.dims.c; ++c) {
      for (int y = 0; y < t.dims.h; ++y) {
        for (int x = 0; x < t.dims.w; ++x) {
          if (std::fabs(t.at(n, c, y, x)) > 1e-12f) {
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
          }
        }
      }
    }
  }
  if (y1 < 0) return {0, 0};
  return {y1 - y0 + 1, x1 - x0 + 1};
}

Tensor impulse_input(int channels, int h, int w) {
  Tensor x(Dims4{1, channels, h, w});
  for (int c = 0; c < channels; ++c) x.at(0, c, h / 2, w / 2) = 1.0f;
  return x;
}

}  // namespace

std::pair<int, int> empirical_branch_footprint(const BranchSpec& spec) {
  const int d1 = spec.d_vertical, d2 = spec.d_horizontal;
  const int h = 2 * d1 + 5, w = 2 * d2 + 5;
  const Tensor x = impulse_input(8, h, w);

  Tensor w_reduce(Dims4{1, 8, 1, 1}, 1.0f);
  Tensor r = conv2d<float>(x, w_reduce, nullptr, ConvParams{});

  ConvParams vert;
  vert.kh = 3;
  vert.dh = d1;
  vert.ph = d1;
  Tensor w_vert(Dims4{1, 1, 3, 1}, 1.0f);
  r = conv2d<float>(r, w_vert, nullptr, vert);

  ConvParams horz;
  horz.kw = 3;
  horz.dw = d2;
  horz.pw = d2;
  Tensor w_horz(Dims4{1, 1, 1, 3}, 1.0f);
  r = conv2d<float>(r, w_horz, nullptr, horz);
  return bounding_box(r);
}

std::pair<int, int> empirical_mmrfc_footprint(int channels, int base_dilation) {
  ParamStore store;
  RandomStream rng(1);
  const MmrfcBlock block =
      MmrfcBlock::build({channels, base_dilation}, store, "probe", rng);
  for (const auto& name : block.conv_param_names()) {
    Tensor& t = store.at(name).value;
    t.fill(name.ends_with(".w") ? 1.0f : 0.0f);
  }
  const int extent = 8 * base_dilation + 3;
  const Tensor out = mmrfc_forward(block, store, impulse_input(channels, extent + 4, extent + 4));
  return bounding_box(out);
}

}  // namespace eadnet
