#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eadnet/error.hpp"

namespace eadnet {

struct Dims4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  bool operator==(const Dims4&) const = default;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }

  std::string str() const {
    return detail::cat("(", n, ",", c, ",", h, ",", w, ")");
  }
};

// Dense rank-4 array, row-major in (n, c, h, w) order.
template <typename T>
struct BasicTensor {
  Dims4 dims;
  std::vector<T> data;

  BasicTensor() = default;
  explicit BasicTensor(Dims4 d, T fill = T(0))
      : dims(d), data(static_cast<std::size_t>(d.numel()), fill) {}

  static BasicTensor zeros(int n, int c, int h, int w) {
    return BasicTensor(Dims4{n, c, h, w});
  }
  static BasicTensor full(int n, int c, int h, int w, T v) {
    return BasicTensor(Dims4{n, c, h, w}, v);
  }

  std::int64_t numel() const { return dims.numel(); }
  bool empty() const { return data.empty(); }

  std::size_t index(int in, int ic, int ih, int iw) const {
    return ((static_cast<std::size_t>(in) * dims.c + ic) * dims.h + ih) * dims.w + iw;
  }
  T& at(int in, int ic, int ih, int iw) { return data[index(in, ic, ih, iw)]; }
  T at(int in, int ic, int ih, int iw) const { return data[index(in, ic, ih, iw)]; }

  T* plane(int in, int ic) { return data.data() + (static_cast<std::size_t>(in) * dims.c + ic) * dims.h * dims.w; }
  const T* plane(int in, int ic) const {
    return data.data() + (static_cast<std::size_t>(in) * dims.c + ic) * dims.h * dims.w;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(dims);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Per-pixel class indices; 255 marks ignored pixels.
struct LabelMap {
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(int n_, int h_, int w_, std::uint8_t fill = 0)
      : n(n_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * h_ * w_, fill) {}

  std::size_t index(int in, int ih, int iw) const {
    return (static_cast<std::size_t>(in) * h + ih) * w + iw;
  }
  std::uint8_t& at(int in, int ih, int iw) { return data[index(in, ih, iw)]; }
  std::uint8_t at(int in, int ih, int iw) const { return data[index(in, ih, iw)]; }
};

constexpr std::uint8_t kIgnoreLabel = 255;

struct ConvParams {
  int kh = 1, kw = 1;
  int sh = 1, sw = 1;
  int dh = 1, dw = 1;
  int ph = 0, pw = 0;
  int groups = 1;
  bool bias = true;
};

template <typename T>
struct PReluParamsT {
  std::vector<T> slope;
};
using PReluParams = PReluParamsT<float>;

template <typename T>
struct BatchNormParamsT {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T epsilon = T(1e-5);
};
using BatchNormParams = BatchNormParamsT<float>;

// Output dims for a convolution; validates the whole contract
// (weight layout, group divisibility, kernel extent vs padded input).
Dims4 conv_output_dims(const Dims4& input, const Dims4& weight, const ConvParams& p);

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const std::vector<T>* bias, const ConvParams& p);

// Literal nested-loop reference with 64-bit accumulation. Equivalence
// oracle for conv2d; not used on any production path.
template <typename T>
BasicTensor<T> conv2d_naive(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                            const std::vector<T>* bias, const ConvParams& p);

template <typename T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& weight,
                                     const ConvParams& p, const Dims4& input_dims);
template <typename T>
BasicTensor<T> conv2d_backward_weight(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                                      const ConvParams& p, const Dims4& weight_dims);
template <typename T>
std::vector<T> conv2d_backward_bias(const BasicTensor<T>& grad_out);

template <typename T>
BasicTensor<T> prelu(const BasicTensor<T>& input, const PReluParamsT<T>& params);
template <typename T>
void prelu_backward(const BasicTensor<T>& input, const std::vector<T>& slope,
                    const BasicTensor<T>& grad_out, BasicTensor<T>* grad_input,
                    std::vector<T>* grad_slope);

template <typename T>
BasicTensor<T> batchnorm_infer(const BasicTensor<T>& input, const BatchNormParamsT<T>& params);
template <typename T>
void batchnorm_infer_backward(const BasicTensor<T>& input, const BatchNormParamsT<T>& params,
                              const BasicTensor<T>& grad_out, BasicTensor<T>* grad_input,
                              std::vector<T>* grad_gamma, std::vector<T>* grad_beta);

// Training-mode batch normalization over (n, h, w) per channel with biased
// batch statistics. Saved mean/invstd feed the backward pass.
template <typename T>
BasicTensor<T> batchnorm_train(const BasicTensor<T>& input, const std::vector<T>& gamma,
                               const std::vector<T>& beta, T epsilon, std::vector<T>* saved_mean,
                               std::vector<T>* saved_invstd);
template <typename T>
void batchnorm_train_backward(const BasicTensor<T>& input, const std::vector<T>& gamma,
                              const std::vector<T>& saved_mean, const std::vector<T>& saved_invstd,
                              const BasicTensor<T>& grad_out, BasicTensor<T>* grad_input,
                              std::vector<T>* grad_gamma, std::vector<T>* grad_beta);

template <typename T>
BasicTensor<T> concat_channels(const std::vector<const BasicTensor<T>*>& inputs);

// Channel slice [c0, c1), the inverse of concat_channels.
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& input, int c0, int c1);

template <typename T>
BasicTensor<T> maxpool2x2(const BasicTensor<T>& input, std::vector<std::int32_t>* argmax = nullptr);
template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& grad_out,
                                   const std::vector<std::int32_t>& argmax, const Dims4& input_dims);

// Bilinear interpolation, half-pixel-centers convention:
// source = (i + 0.5) * in/out - 0.5, clamped to the valid range.
template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& input, int out_h, int out_w);
template <typename T>
BasicTensor<T> bilinear_resize_backward(const BasicTensor<T>& grad_out, int in_h, int in_w);

template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> softmax_channels_backward(const BasicTensor<T>& softmax_out,
                                         const BasicTensor<T>& grad_out);

enum class Reduction { Sum, Mean };

template <typename T>
struct CrossEntropyResult {
  double loss = 0.0;
  BasicTensor<T> grad_logits;
  std::int64_t pixels = 0;  // non-ignored pixels counted
};

// Per-pixel softmax cross-entropy. Mean reduction divides loss and
// gradient by the non-ignored pixel count.
template <typename T>
CrossEntropyResult<T> cross_entropy_loss(const BasicTensor<T>& logits, const LabelMap& labels,
                                         int ignore_index = kIgnoreLabel,
                                         Reduction reduction = Reduction::Mean);

template <typename T>
LabelMap argmax_channels(const BasicTensor<T>& logits);

}  // namespace eadnet
