#pragma once

#include <string>

#include "eadnet/autograd.hpp"
#include "eadnet/random.hpp"

namespace eadnet {

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.1;
inline constexpr double kPReluInitSlope = 0.25;

// Registration helpers. A conv layer owns "<name>.w" and "<name>.b", a
// batchnorm "<name>.gamma/.beta/.mean/.var" (stats non-trainable), a
// prelu "<name>.slope". Weights get He-normal init, biases zero.
void register_conv(ParamStore& store, const std::string& name, int out_c, int in_per_group,
                   int kh, int kw, RandomStream& rng);
void register_bn(ParamStore& store, const std::string& name, int channels);
void register_prelu(ParamStore& store, const std::string& name, int channels);

template <typename T>
VarId conv_layer(StoreBindingT<T>& binding, const std::string& name, VarId x,
                 const ConvParams& p);

template <typename T>
VarId bn_layer(StoreBindingT<T>& binding, const std::string& name, VarId x, bool training);

template <typename T>
VarId prelu_layer(StoreBindingT<T>& binding, const std::string& name, VarId x);

}  // namespace eadnet
