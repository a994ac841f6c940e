#include "eadnet/layers.hpp"

#include <cmath>

namespace eadnet {

void register_conv(ParamStore& store, const std::string& name, int out_c, int in_per_group,
                   int kh, int kw, RandomStream& rng) {
  Tensor w(Dims4{out_c, in_per_group, kh, kw});
  const double fan_in = static_cast<double>(in_per_group) * kh * kw;
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& v : w.data) v = static_cast<float>(rng.normal(0.0, stddev));
  store.add(name + ".w", std::move(w));
  store.add(name + ".b", Tensor(Dims4{1, out_c, 1, 1}));
}

void register_bn(ParamStore& store, const std::string& name, int channels) {
  store.add(name + ".gamma", Tensor(Dims4{1, channels, 1, 1}, 1.0f));
  store.add(name + ".beta", Tensor(Dims4{1, channels, 1, 1}));
  store.add(name + ".mean", Tensor(Dims4{1, channels, 1, 1}), /*trainable=*/false);
  store.add(name + ".var", Tensor(Dims4{1, channels, 1, 1}, 1.0f), /*trainable=*/false);
}

void register_prelu(ParamStore& store, const std::string& name, int channels) {
  store.add(name + ".slope",
            Tensor(Dims4{1, channels, 1, 1}, static_cast<float>(kPReluInitSlope)));
}

template <typename T>
VarId conv_layer(StoreBindingT<T>& binding, const std::string& name, VarId x,
                 const ConvParams& p) {
  return op_conv2d(binding.tape(), x, binding[name + ".w"], binding[name + ".b"], p);
}

template <typename T>
VarId bn_layer(StoreBindingT<T>& binding, const std::string& name, VarId x, bool training) {
  const VarId gamma = binding[name + ".gamma"];
  const VarId beta = binding[name + ".beta"];
  if (training) {
    ParamStoreT<T>* store = binding.mutable_store();
    if (!store) fail_invalid("bn layer: training mode requires a mutable store");
    return op_batchnorm_train(binding.tape(), x, gamma, beta, static_cast<T>(kBnEpsilon),
                              static_cast<T>(kBnMomentum), &store->at(name + ".mean").value.data,
                              &store->at(name + ".var").value.data);
  }
  return op_batchnorm_infer(binding.tape(), x, gamma, beta,
                            binding.store().at(name + ".mean").value.data,
                            binding.store().at(name + ".var").value.data,
                            static_cast<T>(kBnEpsilon));
}

template <typename T>
VarId prelu_layer(StoreBindingT<T>& binding, const std::string& name, VarId x) {
  return op_prelu(binding.tape(), x, binding[name + ".slope"]);
}

#define EADNET_INSTANTIATE_LAYERS(T)                                                      \
  template VarId conv_layer<T>(StoreBindingT<T>&, const std::string&, VarId,              \
                               const ConvParams&);                                        \
  template VarId bn_layer<T>(StoreBindingT<T>&, const std::string&, VarId, bool);         \
  template VarId prelu_layer<T>(StoreBindingT<T>&, const std::string&, VarId);

EADNET_INSTANTIATE_LAYERS(float)
EADNET_INSTANTIATE_LAYERS(double)

#undef EADNET_INSTANTIATE_LAYERS

}  // namespace eadnet
