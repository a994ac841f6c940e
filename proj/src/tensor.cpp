#include "eadnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace eadnet {

namespace {

// Valid output range [lo, hi) along one axis for a kernel tap at offset
// `off` (= k*dilation - padding): input index o*stride + off must lie in
// [0, in_extent).
void tap_range(int out_extent, int in_extent, int stride, int off, int* lo, int* hi) {
  int l = off >= 0 ? 0 : (-off + stride - 1) / stride;
  int last = in_extent - 1 - off;
  int h = last < 0 ? 0 : last / stride + 1;
  l = std::min(l, out_extent);
  h = std::min(h, out_extent);
  *lo = l;
  *hi = std::max(h, l);
}

int out_extent(int in, int pad, int k, int d, int s) {
  return (in + 2 * pad - (k - 1) * d - 1) / s + 1;
}

}  // namespace

Dims4 conv_output_dims(const Dims4& input, const Dims4& weight, const ConvParams& p) {
  if (input.n < 1 || input.c < 1 || input.h < 1 || input.w < 1)
    fail_invalid("conv2d: input dims must all be >= 1, got ", input.str());
  if (p.kh < 1 || p.kw < 1 || p.sh < 1 || p.sw < 1 || p.dh < 1 || p.dw < 1 || p.ph < 0 || p.pw < 0)
    fail_invalid("conv2d: bad kernel/stride/dilation/padding");
  if (p.groups < 1 || input.c % p.groups != 0)
    fail_invalid("conv2d: groups=", p.groups, " does not divide input channels ", input.c);
  if (weight.n < 1 || weight.n % p.groups != 0)
    fail_invalid("conv2d: groups=", p.groups, " does not divide output channels ", weight.n);
  if (weight.c != input.c / p.groups)
    fail_invalid("conv2d: weight dims ", weight.str(), " expect in_c/groups=", input.c / p.groups);
  if (weight.h != p.kh || weight.w != p.kw)
    fail_invalid("conv2d: weight spatial dims ", weight.str(), " disagree with kernel (", p.kh, ",",
                 p.kw, ")");
  const int ext_h = (p.kh - 1) * p.dh + 1;
  const int ext_w = (p.kw - 1) * p.dw + 1;
  if (ext_h > input.h + 2 * p.ph || ext_w > input.w + 2 * p.pw)
    fail_invalid("conv2d: effective kernel extent (", ext_h, ",", ext_w,
                 ") exceeds padded input ", input.str());
  const int oh = out_extent(input.h, p.ph, p.kh, p.dh, p.sh);
  const int ow = out_extent(input.w, p.pw, p.kw, p.dw, p.sw);
  if (oh < 1 || ow < 1) fail_invalid("conv2d: zero-size output for input ", input.str());
  return Dims4{input.n, weight.n, oh, ow};
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const std::vector<T>* bias, const ConvParams& p) {
  const Dims4 od = conv_output_dims(input.dims, weight.dims, p);
  if (bias && static_cast<int>(bias->size()) != weight.dims.n)
    fail_invalid("conv2d: bias length ", bias->size(), " != out channels ", weight.dims.n);
  BasicTensor<T> out(od);
  const int icpg = weight.dims.c;
  const int ocpg = od.c / p.groups;
  const int in_w = input.dims.w;
  const std::size_t plane = static_cast<std::size_t>(od.h) * od.w;

  for (int n = 0; n < input.dims.n; ++n) {
    for (int g = 0; g < p.groups; ++g) {
      for (int o = 0; o < ocpg; ++o) {
        const int oc = g * ocpg + o;
        T* op = out.plane(n, oc);
        if (bias) std::fill(op, op + plane, (*bias)[oc]);
        for (int ic = 0; ic < icpg; ++ic) {
          const T* xp = input.plane(n, g * icpg + ic);
          const T* wp = &weight.data[((static_cast<std::size_t>(oc) * icpg + ic) * p.kh) * p.kw];
          for (int kh = 0; kh < p.kh; ++kh) {
            const int offh = kh * p.dh - p.ph;
            int hlo, hhi;
            tap_range(od.h, input.dims.h, p.sh, offh, &hlo, &hhi);
            for (int kw = 0; kw < p.kw; ++kw) {
              const T wv = wp[kh * p.kw + kw];
              const int offw = kw * p.dw - p.pw;
              int wlo, whi;
              tap_range(od.w, in_w, p.sw, offw, &wlo, &whi);
              for (int oh = hlo; oh < hhi; ++oh) {
                const T* xr = xp + static_cast<std::size_t>(oh * p.sh + offh) * in_w + offw;
                T* orow = op + static_cast<std::size_t>(oh) * od.w;
                if (p.sw == 1) {
                  for (int ow = wlo; ow < whi; ++ow) orow[ow] += wv * xr[ow];
                } else {
                  for (int ow = wlo; ow < whi; ++ow) orow[ow] += wv * xr[ow * p.sw];
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> conv2d_naive(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                            const std::vector<T>* bias, const ConvParams& p) {
  const Dims4 od = conv_output_dims(input.dims, weight.dims, p);
  if (bias && static_cast<int>(bias->size()) != weight.dims.n)
    fail_invalid("conv2d: bias length ", bias->size(), " != out channels ", weight.dims.n);
  BasicTensor<T> out(od);
  const int icpg = weight.dims.c;
  const int ocpg = od.c / p.groups;
  for (int n = 0; n < od.n; ++n) {
    for (int oc = 0; oc < od.c; ++oc) {
      const int g = oc / ocpg;
      for (int oh = 0; oh < od.h; ++oh) {
        for (int ow = 0; ow < od.w; ++ow) {
          double acc = bias ? static_cast<double>((*bias)[oc]) : 0.0;
          for (int ic = 0; ic < icpg; ++ic) {
            for (int kh = 0; kh < p.kh; ++kh) {
              for (int kw = 0; kw < p.kw; ++kw) {
                const int ih = oh * p.sh - p.ph + kh * p.dh;
                const int iw = ow * p.sw - p.pw + kw * p.dw;
                if (ih < 0 || ih >= input.dims.h || iw < 0 || iw >= input.dims.w) continue;
                acc += static_cast<double>(weight.at(oc, ic, kh, kw)) *
                       static_cast<double>(input.at(n, g * icpg + ic, ih, iw));
              }
            }
          }
          out.at(n, oc, oh, ow) = static_cast<T>(acc);
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& weight,
                                     const ConvParams& p, const Dims4& input_dims) {
  const Dims4 od = conv_output_dims(input_dims, weight.dims, p);
  if (!(od == grad_out.dims))
    fail_invalid("conv2d backward: grad dims ", grad_out.dims.str(), " != forward output ",
                 od.str());
  BasicTensor<T> gin(input_dims);
  const int icpg = weight.dims.c;
  const int ocpg = od.c / p.groups;
  const int in_w = input_dims.w;
  for (int n = 0; n < od.n; ++n) {
    for (int g = 0; g < p.groups; ++g) {
      for (int o = 0; o < ocpg; ++o) {
        const int oc = g * ocpg + o;
        const T* gop = grad_out.plane(n, oc);
        for (int ic = 0; ic < icpg; ++ic) {
          T* gxp = gin.plane(n, g * icpg + ic);
          const T* wp = &weight.data[((static_cast<std::size_t>(oc) * icpg + ic) * p.kh) * p.kw];
          for (int kh = 0; kh < p.kh; ++kh) {
            const int offh = kh * p.dh - p.ph;
            int hlo, hhi;
            tap_range(od.h, input_dims.h, p.sh, offh, &hlo, &hhi);
            for (int kw = 0; kw < p.kw; ++kw) {
              const T wv = wp[kh * p.kw + kw];
              const int offw = kw * p.dw - p.pw;
              int wlo, whi;
              tap_range(od.w, in_w, p.sw, offw, &wlo, &whi);
              for (int oh = hlo; oh < hhi; ++oh) {
                const T* grow = gop + static_cast<std::size_t>(oh) * od.w;
                T* xrow = gxp + static_cast<std::size_t>(oh * p.sh + offh) * in_w + offw;
                if (p.sw == 1) {
                  for (int ow = wlo; ow < whi; ++ow) xrow[ow] += wv * grow[ow];
                } else {
                  for (int ow = wlo; ow < whi; ++ow) xrow[ow * p.sw] += wv * grow[ow];
                }
              }
            }
          }
        }
      }
    }
  }
  return gin;
}

template <typename T>
BasicTensor<T> conv2d_backward_weight(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                                      const ConvParams& p, const Dims4& weight_dims) {
  const Dims4 od = conv_output_dims(input.dims, weight_dims, p);
  if (!(od == grad_out.dims))
    fail_invalid("conv2d backward: grad dims ", grad_out.dims.str(), " != forward output ",
                 od.str());
  BasicTensor<T> gw(weight_dims);
  const int icpg = weight_dims.c;
  const int ocpg = od.c / p.groups;
  const int in_w = input.dims.w;
  for (int n = 0; n < od.n; ++n) {
    for (int g = 0; g < p.groups; ++g) {
      for (int o = 0; o < ocpg; ++o) {
        const int oc = g * ocpg + o;
        const T* gop = grad_out.plane(n, oc);
        for (int ic = 0; ic < icpg; ++ic) {
          const T* xp = input.plane(n, g * icpg + ic);
          for (int kh = 0; kh < p.kh; ++kh) {
            const int offh = kh * p.dh - p.ph;
            int hlo, hhi;
            tap_range(od.h, input.dims.h, p.sh, offh, &hlo, &hhi);
            for (int kw = 0; kw < p.kw; ++kw) {
              const int offw = kw * p.dw - p.pw;
              int wlo, whi;
              tap_range(od.w, in_w, p.sw, offw, &wlo, &whi);
              T acc = T(0);
              for (int oh = hlo; oh < hhi; ++oh) {
                const T* grow = gop + static_cast<std::size_t>(oh) * od.w;
                const T* xrow = xp + static_cast<std::size_t>(oh * p.sh + offh) * in_w + offw;
                if (p.sw == 1) {
                  for (int ow = wlo; ow < whi; ++ow) acc += grow[ow] * xrow[ow];
                } else {
                  for (int ow = wlo; ow < whi; ++ow) acc += grow[ow] * xrow[ow * p.sw];
                }
              }
              gw.at(oc, ic, kh, kw) += acc;
            }
          }
        }
      }
    }
  }
  return gw;
}

template <typename T>
std::vector<T> conv2d_backward_bias(const BasicTensor<T>& grad_out) {
  std::vector<T> gb(grad_out.dims.c, T(0));
  for (int n = 0; n < grad_out.dims.n; ++n) {
    for (int c = 0; c < grad_out.dims.c; ++c) {
      const T* gp = grad_out.plane(n, c);
      T acc = T(0);
      const std::size_t plane = static_cast<std::size_t>(grad_out.dims.h) * grad_out.dims.w;
      for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
      gb[c] += acc;
    }
  }
  return gb;
}

template <typename T>
BasicTensor<T> prelu(const BasicTensor<T>& input, const PReluParamsT<T>& params) {
  if (static_cast<int>(params.slope.size()) != input.dims.c)
    fail_invalid("prelu: slope length ", params.slope.size(), " != channels ", input.dims.c);
  BasicTensor<T> out(input.dims);
  const std::size_t plane = static_cast<std::size_t>(input.dims.h) * input.dims.w;
  for (int n = 0; n < input.dims.n; ++n) {
    for (int c = 0; c < input.dims.c; ++c) {
      const T* xp = input.plane(n, c);
      T* op = out.plane(n, c);
      const T s = params.slope[c];
      for (std::size_t i = 0; i < plane; ++i) op[i] = xp[i] >= T(0) ? xp[i] : s * xp[i];
    }
  }
  return out;
}

template <typename T>
void prelu_backward(const BasicTensor<T>& input, const std::vector<T>& slope,
                    const BasicTensor<T>& grad_out, BasicTensor<T>* grad_input,
                    std::vector<T>* grad_slope) {
  if (!(input.dims == grad_out.dims)) fail_invalid("prelu backward: dim mismatch");
  if (grad_input) *grad_input = BasicTensor<T>(input.dims);
  if (grad_slope) grad_slope->assign(input.dims.c, T(0));
  const std::size_t plane = static_cast<std::size_t>(input.dims.h) * input.dims.w;
  for (int n = 0; n < input.dims.n; ++n) {
    for (int c = 0; c < input.dims.c; ++c) {
      const T* xp = input.plane(n, c);
      const T* gp = grad_out.plane(n, c);
      const T s = slope[c];
      T* gxp = grad_input ? grad_input->plane(n, c) : nullptr;
      T sacc = T(0);
      for (std::size_t i = 0; i < plane; ++i) {
        if (xp[i] >= T(0)) {
          if (gxp) gxp[i] += gp[i];
        } else {
          if (gxp) gxp[i] += s * gp[i];
          sacc += gp[i] * xp[i];
        }
      }
      if (grad_slope) (*grad_slope)[c] += sacc;
    }
  }
}

template <typename T>
static void check_bn_params(const BatchNormParamsT<T>& p, int channels) {
  if (static_cast<int>(p.gamma.size()) != channels ||
      static_cast<int>(p.beta.size()) != channels ||
      static_cast<int>(p.running_mean.size()) != channels ||
      static_cast<int>(p.running_var.size()) != channels)
    fail_invalid("batchnorm: parameter vectors disagree with channel count ", channels);
  for (T v : p.running_var)
    if (v < T(0)) fail_invalid("batchnorm: negative running variance");
}

template <typename T>
BasicTensor<T> batchnorm_infer(const BasicTensor<T>& input, const BatchNormParamsT<T>& params) {
  check_bn_params(params, input.dims.c);
  BasicTensor<T> out(input.dims);
  const std::size_t plane = static_cast<std::size_t>(input.dims.h) * input.dims.w;
  for (int n = 0; n < input.dims.n; ++n) {
    for (int c = 0; c < input.dims.c; ++c) {
      const T scale = params.gamma[c] / std::sqrt(params.running_var[c] + params.epsilon);
      const T shift = params.beta[c] - params.running_mean[c] * scale;
      const T* xp = input.plane(n, c);
      T* op = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) op[i] = xp[i] * scale + shift;
    }
  }
  return out;
}

template <typename T>
void batchnorm_infer_backward(const BasicTensor<T>& input, const BatchNormParamsT<T>& params,
                              const BasicTensor<T>& grad_out, BasicTensor<T>* grad_input,
                              std::vector<T>* grad_gamma, std::vector<T>* grad_beta) {
  check_bn_params(params, input.dims.c);
  if (!(input.dims == grad_out.dims)) fail_invalid("batchnorm backward: dim mismatch");
  if (grad_input) *grad_input = BasicTensor<T>(input.dims);
  if (grad_gamma) grad_gamma->assign(input.dims.c, T(0));
  if (grad_beta) grad_beta->assign(input.dims.c, T(0));
  const std::size_t plane = static_cast<std::size_t>(input.dims.h) * input.dims.w;
  for (int n = 0; n < input.dims.n; ++n) {
    for (int c = 0; c < input.dims.c; ++c) {
      const T invstd = T(1) / std::sqrt(params.running_var[c] + params.epsilon);
      const T scale = params.gamma[c] * invstd;
      const T* xp = input.plane(n, c);
      const T* gp = grad_out.plane(n, c);
      T* gxp = grad_input ? grad_input->plane(n, c) : nullptr;
      T gg = T(0), gb = T(0);
      for (std::size_t i = 0; i < plane; ++i) {
        if (gxp) gxp[i] += gp[i] * scale;
        gg += gp[i] * (xp[i] - params.running_mean[c]) * invstd;
        gb += gp[i];
      }
      if (grad_gamma) (*grad_gamma)[c] += gg;
      if (grad_beta) (*grad_beta)[c] += gb;
    }
  }
}

template <typename T>
BasicTensor<T> batchnorm_train(const BasicTensor<T>& input, const std::vector<T>& gamma,
                               const std::vector<T>& beta, T epsilon, std::vector<T>* saved_mean,
                               std::vector<T>* saved_invstd) {
  const int C = input.dims.c;
  if (static_cast<int>(gamma.size()) != C || static_cast<int>(beta.size()) != C)
    fail_invalid("batchnorm: parameter vectors disagree with channel count ", C);
  const std::size_t plane = static_cast<std::size_t>(input.dims.h) * input.dims.w;
  const double m = static_cast<double>(input.dims.n) * plane;
  std::vector<T> mean(C), invstd(C);
  for (int c = 0; c < C; ++c) {
    double sum = 0.0;
    for (int n = 0; n < input.dims.n; ++n) {
      const T* xp = input.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) sum += xp[i];
    }
    const double mu = sum / m;
    double var = 0.0;
    for (int n = 0; n < input.dims.n; ++n) {
      const T* xp = input.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = xp[i] - mu;
        var += d * d;
      }
    }
    var /= m;
    mean[c] = static_cast<T>(mu);
    invstd[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(epsilon)));
  }
  BasicTensor<T> out(input.dims);
  for (int n = 0; n < input.dims.n; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* xp = input.plane(n, c);
      T* op = out.plane(n, c);
      const T mu = mean[c], is = invstd[c], g = gamma[c], b = beta[c];
      for (std::size_t i = 0; i < plane; ++i) op[i] = g * (xp[i] - mu) * is + b;
    }
  }
  if (saved_mean) *saved_mean = std::move(mean);
  if (saved_invstd) *saved_invstd = std::move(invstd);
  return out;
}

template <typename T>
void batchnorm_train_backward(const BasicTensor<T>& input, const std::vector<T>& gamma,
                              const std::vector<T>& saved_mean, const std::vector<T>& saved_invstd,
                              const BasicTensor<T>& grad_out, BasicTensor<T>* grad_input,
                              std::vector<T>* grad_gamma, std::vector<T>* grad_beta) {
  if (!(input.dims == grad_out.dims)) fail_invalid("batchnorm backward: dim mismatch");
  const int C = input.dims.c;
  if (grad_input) *grad_input = BasicTensor<T>(input.dims);
  if (grad_gamma) grad_gamma->assign(C, T(0));
  if (grad_beta) grad_beta->assign(C, T(0));
  const std::size_t plane = static_cast<std::size_t>(input.dims.h) * input.dims.w;
  const T m = static_cast<T>(static_cast<double>(input.dims.n) * plane);
  for (int c = 0; c < C; ++c) {
    const T mu = saved_mean[c], is = saved_invstd[c];
    T s1 = T(0), s2 = T(0);  // sum g, sum g*xhat
    for (int n = 0; n < input.dims.n; ++n) {
      const T* xp = input.plane(n, c);
      const T* gp = grad_out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        s1 += gp[i];
        s2 += gp[i] * (xp[i] - mu) * is;
      }
    }
    if (grad_gamma) (*grad_gamma)[c] += s2;
    if (grad_beta) (*grad_beta)[c] += s1;
    if (grad_input) {
      const T k = gamma[c] * is;
      for (int n = 0; n < input.dims.n; ++n) {
        const T* xp = input.plane(n, c);
        const T* gp = grad_out.plane(n, c);
        T* gxp = grad_input->plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          const T xhat = (xp[i] - mu) * is;
          gxp[i] += k * (gp[i] - s1 / m - xhat * s2 / m);
        }
      }
    }
  }
}

template <typename T>
BasicTensor<T> concat_channels(const std::vector<const BasicTensor<T>*>& inputs) {
  if (inputs.empty()) fail_invalid("concat_channels: empty input list");
  const Dims4 d0 = inputs[0]->dims;
  int total_c = 0;
  for (const auto* t : inputs) {
    if (t->dims.n != d0.n || t->dims.h != d0.h || t->dims.w != d0.w)
      fail_invalid("concat_channels: batch/spatial mismatch ", t->dims.str(), " vs ", d0.str());
    total_c += t->dims.c;
  }
  BasicTensor<T> out(Dims4{d0.n, total_c, d0.h, d0.w});
  const std::size_t plane = static_cast<std::size_t>(d0.h) * d0.w;
  for (int n = 0; n < d0.n; ++n) {
    int oc = 0;
    for (const auto* t : inputs) {
      for (int c = 0; c < t->dims.c; ++c, ++oc)
        std::memcpy(out.plane(n, oc), t->plane(n, c), plane * sizeof(T));
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& input, int c0, int c1) {
  if (c0 < 0 || c1 > input.dims.c || c0 >= c1)
    fail_invalid("slice_channels: bad range [", c0, ",", c1, ") for ", input.dims.c, " channels");
  BasicTensor<T> out(Dims4{input.dims.n, c1 - c0, input.dims.h, input.dims.w});
  const std::size_t plane = static_cast<std::size_t>(input.dims.h) * input.dims.w;
  for (int n = 0; n < input.dims.n; ++n)
    for (int c = c0; c < c1; ++c)
      std::memcpy(out.plane(n, c - c0), input.plane(n, c), plane * sizeof(T));
  return out;
}

template <typename T>
BasicTensor<T> maxpool2x2(const BasicTensor<T>& input, std::vector<std::int32_t>* argmax) {
  if (input.dims.h < 2 || input.dims.w < 2)
    fail_invalid("maxpool2x2: spatial dims must be >= 2, got ", input.dims.str());
  const int oh = input.dims.h / 2, ow = input.dims.w / 2;
  BasicTensor<T> out(Dims4{input.dims.n, input.dims.c, oh, ow});
  if (argmax) argmax->assign(out.data.size(), 0);
  std::size_t oi = 0;
  for (int n = 0; n < input.dims.n; ++n) {
    for (int c = 0; c < input.dims.c; ++c) {
      const T* xp = input.plane(n, c);
      const std::size_t base = input.index(n, c, 0, 0);
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x, ++oi) {
          const int iy = 2 * y, ix = 2 * x;
          std::size_t best = static_cast<std::size_t>(iy) * input.dims.w + ix;
          T bv = xp[best];
          const std::size_t cands[3] = {best + 1, best + input.dims.w, best + input.dims.w + 1};
          for (std::size_t cand : cands) {
            if (xp[cand] > bv) {
              bv = xp[cand];
              best = cand;
            }
          }
          out.data[oi] = bv;
          if (argmax) (*argmax)[oi] = static_cast<std::int32_t>(base + best);
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& grad_out,
                                   const std::vector<std::int32_t>& argmax,
                                   const Dims4& input_dims) {
  if (argmax.size() != grad_out.data.size()) fail_invalid("maxpool backward: argmax size mismatch");
  BasicTensor<T> gin(input_dims);
  for (std::size_t i = 0; i < grad_out.data.size(); ++i)
    gin.data[static_cast<std::size_t>(argmax[i])] += grad_out.data[i];
  return gin;
}

namespace {

struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<double> frac;
};

LerpAxis make_lerp_axis(int out, int in) {
  LerpAxis a;
  a.i0.resize(out);
  a.i1.resize(out);
  a.frac.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > in - 1) src = in - 1;
    const int lo = static_cast<int>(src);
    a.i0[i] = lo;
    a.i1[i] = std::min(lo + 1, in - 1);
    a.frac[i] = src - lo;
  }
  return a;
}

}  // namespace

template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& input, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) fail_invalid("bilinear_resize: target dims must be >= 1");
  const LerpAxis ay = make_lerp_axis(out_h, input.dims.h);
  const LerpAxis ax = make_lerp_axis(out_w, input.dims.w);
  BasicTensor<T> out(Dims4{input.dims.n, input.dims.c, out_h, out_w});
  for (int n = 0; n < input.dims.n; ++n) {
    for (int c = 0; c < input.dims.c; ++c) {
      const T* xp = input.plane(n, c);
      T* op = out.plane(n, c);
      for (int y = 0; y < out_h; ++y) {
        const T fy = static_cast<T>(ay.frac[y]);
        const T* r0 = xp + static_cast<std::size_t>(ay.i0[y]) * input.dims.w;
        const T* r1 = xp + static_cast<std::size_t>(ay.i1[y]) * input.dims.w;
        for (int x = 0; x < out_w; ++x) {
          const T fx = static_cast<T>(ax.frac[x]);
          const T top = r0[ax.i0[x]] + fx * (r0[ax.i1[x]] - r0[ax.i0[x]]);
          const T bot = r1[ax.i0[x]] + fx * (r1[ax.i1[x]] - r1[ax.i0[x]]);
          op[static_cast<std::size_t>(y) * out_w + x] = top + fy * (bot - top);
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> bilinear_resize_backward(const BasicTensor<T>& grad_out, int in_h, int in_w) {
  const LerpAxis ay = make_lerp_axis(grad_out.dims.h, in_h);
  const LerpAxis ax = make_lerp_axis(grad_out.dims.w, in_w);
  BasicTensor<T> gin(Dims4{grad_out.dims.n, grad_out.dims.c, in_h, in_w});
  for (int n = 0; n < grad_out.dims.n; ++n) {
    for (int c = 0; c < grad_out.dims.c; ++c) {
      const T* gp = grad_out.plane(n, c);
      T* xp = gin.plane(n, c);
      for (int y = 0; y < grad_out.dims.h; ++y) {
        const T fy = static_cast<T>(ay.frac[y]);
        T* r0 = xp + static_cast<std::size_t>(ay.i0[y]) * in_w;
        T* r1 = xp + static_cast<std::size_t>(ay.i1[y]) * in_w;
        for (int x = 0; x < grad_out.dims.w; ++x) {
          const T fx = static_cast<T>(ax.frac[x]);
          const T g = gp[static_cast<std::size_t>(y) * grad_out.dims.w + x];
          r0[ax.i0[x]] += (T(1) - fy) * (T(1) - fx) * g;
          r0[ax.i1[x]] += (T(1) - fy) * fx * g;
          r1[ax.i0[x]] += fy * (T(1) - fx) * g;
          r1[ax.i1[x]] += fy * fx * g;
        }
      }
    }
  }
  return gin;
}

template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& input) {
  if (input.dims.c < 1) fail_invalid("softmax_channels: need at least one channel");
  BasicTensor<T> out(input.dims);
  const std::size_t plane = static_cast<std::size_t>(input.dims.h) * input.dims.w;
  const int C = input.dims.c;
  for (int n = 0; n < input.dims.n; ++n) {
    const T* xp = input.plane(n, 0);
    T* op = out.plane(n, 0);
    for (std::size_t i = 0; i < plane; ++i) {
      T mx = xp[i];
      for (int c = 1; c < C; ++c) mx = std::max(mx, xp[c * plane + i]);
      double sum = 0.0;
      for (int c = 0; c < C; ++c) {
        const double e = std::exp(static_cast<double>(xp[c * plane + i] - mx));
        op[c * plane + i] = static_cast<T>(e);
        sum += e;
      }
      const T inv = static_cast<T>(1.0 / sum);
      for (int c = 0; c < C; ++c) op[c * plane + i] *= inv;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_channels_backward(const BasicTensor<T>& softmax_out,
                                         const BasicTensor<T>& grad_out) {
  if (!(softmax_out.dims == grad_out.dims)) fail_invalid("softmax backward: dim mismatch");
  BasicTensor<T> gin(softmax_out.dims);
  const std::size_t plane = static_cast<std::size_t>(softmax_out.dims.h) * softmax_out.dims.w;
  const int C = softmax_out.dims.c;
  for (int n = 0; n < softmax_out.dims.n; ++n) {
    const T* yp = softmax_out.plane(n, 0);
    const T* gp = grad_out.plane(n, 0);
    T* op = gin.plane(n, 0);
    for (std::size_t i = 0; i < plane; ++i) {
      T dot = T(0);
      for (int c = 0; c < C; ++c) dot += yp[c * plane + i] * gp[c * plane + i];
      for (int c = 0; c < C; ++c)
        op[c * plane + i] = yp[c * plane + i] * (gp[c * plane + i] - dot);
    }
  }
  return gin;
}

template <typename T>
CrossEntropyResult<T> cross_entropy_loss(const BasicTensor<T>& logits, const LabelMap& labels,
                                         int ignore_index, Reduction reduction) {
  if (labels.n != logits.dims.n || labels.h != logits.dims.h || labels.w != logits.dims.w)
    fail_invalid("cross_entropy: label map ", labels.n, "x", labels.h, "x", labels.w,
                 " does not match logits ", logits.dims.str());
  const int C = logits.dims.c;
  const std::size_t plane = static_cast<std::size_t>(logits.dims.h) * logits.dims.w;
  CrossEntropyResult<T> res;
  res.grad_logits = BasicTensor<T>(logits.dims);
  double loss = 0.0;
  std::int64_t count = 0;
  for (int n = 0; n < logits.dims.n; ++n) {
    const T* xp = logits.plane(n, 0);
    T* gp = res.grad_logits.plane(n, 0);
    const std::uint8_t* lp = &labels.data[static_cast<std::size_t>(n) * plane];
    for (std::size_t i = 0; i < plane; ++i) {
      const int label = lp[i];
      if (label == ignore_index) continue;
      if (label >= C)
        fail_invalid("cross_entropy: label ", label, " out of range for ", C, " classes");
      T mx = xp[i];
      for (int c = 1; c < C; ++c) mx = std::max(mx, xp[c * plane + i]);
      double sum = 0.0;
      for (int c = 0; c < C; ++c) sum += std::exp(static_cast<double>(xp[c * plane + i] - mx));
      const double logz = std::log(sum);
      loss += logz - static_cast<double>(xp[label * plane + i] - mx);
      for (int c = 0; c < C; ++c) {
        const double p = std::exp(static_cast<double>(xp[c * plane + i] - mx)) / sum;
        gp[c * plane + i] = static_cast<T>(p - (c == label ? 1.0 : 0.0));
      }
      ++count;
    }
  }
  res.pixels = count;
  if (reduction == Reduction::Mean && count > 0) {
    loss /= static_cast<double>(count);
    const T inv = static_cast<T>(1.0 / static_cast<double>(count));
    for (auto& g : res.grad_logits.data) g *= inv;
  }
  res.loss = loss;
  return res;
}

template <typename T>
LabelMap argmax_channels(const BasicTensor<T>& logits) {
  LabelMap out(logits.dims.n, logits.dims.h, logits.dims.w);
  const std::size_t plane = static_cast<std::size_t>(logits.dims.h) * logits.dims.w;
  for (int n = 0; n < logits.dims.n; ++n) {
    const T* xp = logits.plane(n, 0);
    std::uint8_t* lp = &out.data[static_cast<std::size_t>(n) * plane];
    for (std::size_t i = 0; i < plane; ++i) {
      int best = 0;
      T bv = xp[i];
      for (int c = 1; c < logits.dims.c; ++c) {
        if (xp[c * plane + i] > bv) {
          bv = xp[c * plane + i];
          best = c;
        }
      }
      lp[i] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

#define EADNET_INSTANTIATE_TENSOR_OPS(T)                                                        \
  template struct BasicTensor<T>;                                                               \
  template BasicTensor<T> conv2d<T>(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                    const std::vector<T>*, const ConvParams&);                  \
  template BasicTensor<T> conv2d_naive<T>(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                          const std::vector<T>*, const ConvParams&);            \
  template BasicTensor<T> conv2d_backward_input<T>(const BasicTensor<T>&, const BasicTensor<T>&,\
                                                   const ConvParams&, const Dims4&);            \
  template BasicTensor<T> conv2d_backward_weight<T>(const BasicTensor<T>&,                      \
                                                    const BasicTensor<T>&, const ConvParams&,   \
                                                    const Dims4&);                              \
  template std::vector<T> conv2d_backward_bias<T>(const BasicTensor<T>&);                       \
  template BasicTensor<T> prelu<T>(const BasicTensor<T>&, const PReluParamsT<T>&);              \
  template void prelu_backward<T>(const BasicTensor<T>&, const std::vector<T>&,                 \
                                  const BasicTensor<T>&, BasicTensor<T>*, std::vector<T>*);     \
  template BasicTensor<T> batchnorm_infer<T>(const BasicTensor<T>&,                             \
                                             const BatchNormParamsT<T>&);                       \
  template void batchnorm_infer_backward<T>(const BasicTensor<T>&, const BatchNormParamsT<T>&,  \
                                            const BasicTensor<T>&, BasicTensor<T>*,             \
                                            std::vector<T>*, std::vector<T>*);                  \
  template BasicTensor<T> batchnorm_train<T>(const BasicTensor<T>&, const std::vector<T>&,      \
                                             const std::vector<T>&, T, std::vector<T>*,         \
                                             std::vector<T>*);                                  \
  template void batchnorm_train_backward<T>(const BasicTensor<T>&, const std::vector<T>&,       \
                                            const std::vector<T>&, const std::vector<T>&,       \
                                            const BasicTensor<T>&, BasicTensor<T>*,             \
                                            std::vector<T>*, std::vector<T>*);                  \
  template BasicTensor<T> concat_channels<T>(const std::vector<const BasicTensor<T>*>&);        \
  template BasicTensor<T> slice_channels<T>(const BasicTensor<T>&, int, int);                   \
  template BasicTensor<T> maxpool2x2<T>(const BasicTensor<T>&, std::vector<std::int32_t>*);     \
  template BasicTensor<T> maxpool2x2_backward<T>(const BasicTensor<T>&,                         \
                                                 const std::vector<std::int32_t>&,              \
                                                 const Dims4&);                                 \
  template BasicTensor<T> bilinear_resize<T>(const BasicTensor<T>&, int, int);                  \
  template BasicTensor<T> bilinear_resize_backward<T>(const BasicTensor<T>&, int, int);         \
  template BasicTensor<T> softmax_channels<T>(const BasicTensor<T>&);                           \
  template BasicTensor<T> softmax_channels_backward<T>(const BasicTensor<T>&,                   \
                                                       const BasicTensor<T>&);                  \
  template CrossEntropyResult<T> cross_entropy_loss<T>(const BasicTensor<T>&, const LabelMap&,  \
                                                       int, Reduction);                         \
  template LabelMap argmax_channels<T>(const BasicTensor<T>&);

EADNET_INSTANTIATE_TENSOR_OPS(float)
EADNET_INSTANTIATE_TENSOR_OPS(double)

#undef EADNET_INSTANTIATE_TENSOR_OPS

}  // namespace eadnet
