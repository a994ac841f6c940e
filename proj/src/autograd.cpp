#include "eadnet/autograd.hpp"

#include <cmath>

namespace eadnet {

namespace {

template <typename T>
BasicTensor<T> channel_tensor(std::vector<T> v) {
  BasicTensor<T> t(Dims4{1, static_cast<int>(v.size()), 1, 1});
  t.data = std::move(v);
  return t;
}

}  // namespace

// --- TapeT ------------------------------------------------------------------

template <typename T>
typename TapeT<T>::Node& TapeT<T>::node(VarId id) {
  if (id < 0 || id >= static_cast<VarId>(nodes_.size()))
    fail_invalid("tape: invalid var id ", id, " (tape holds ", nodes_.size(), " nodes)");
  return nodes_[static_cast<std::size_t>(id)];
}

template <typename T>
const typename TapeT<T>::Node& TapeT<T>::node(VarId id) const {
  return const_cast<TapeT*>(this)->node(id);
}

template <typename T>
VarId TapeT<T>::push(BasicTensor<T> value, bool needs_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return static_cast<VarId>(nodes_.size()) - 1;
}

template <typename T>
void TapeT<T>::set_backward(VarId id, std::function<void(TapeT&)> backward) {
  node(id).backward = std::move(backward);
}

template <typename T>
const BasicTensor<T>& TapeT<T>::value(VarId id) const {
  return node(id).value;
}

template <typename T>
const BasicTensor<T>& TapeT<T>::grad(VarId id) {
  Node& n = node(id);
  if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.dims);
  return n.grad;
}

template <typename T>
bool TapeT<T>::needs_grad(VarId id) const {
  return node(id).needs_grad;
}

template <typename T>
void TapeT<T>::accumulate_grad(VarId id, const BasicTensor<T>& g) {
  Node& n = node(id);
  if (!(g.dims == n.value.dims))
    fail_invalid("tape: gradient dims ", g.dims.str(), " != value dims ", n.value.dims.str());
  if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.dims);
  for (std::size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
}

template <typename T>
void TapeT<T>::backward(VarId root) {
  if (node(root).value.numel() != 1)
    fail_invalid("tape: backward without seed requires a scalar root");
  BasicTensor<T> seed(node(root).value.dims, T(1));
  backward(root, seed);
}

template <typename T>
void TapeT<T>::backward(VarId root, const BasicTensor<T>& seed) {
  if (nodes_.empty()) fail_invalid("tape: backward called before any forward computation");
  accumulate_grad(root, seed);
  for (VarId id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && !n.grad.empty()) n.backward(*this);
  }
}

// --- tape ops ---------------------------------------------------------------

template <typename T>
VarId op_input(TapeT<T>& tape, BasicTensor<T> value, bool needs_grad) {
  return tape.push(std::move(value), needs_grad);
}

template <typename T>
VarId op_conv2d(TapeT<T>& tape, VarId x, VarId weight, VarId bias, const ConvParams& p) {
  const std::vector<T>* bias_vec = bias == kNoVar ? nullptr : &tape.value(bias).data;
  BasicTensor<T> out = conv2d(tape.value(x), tape.value(weight), bias_vec, p);
  const bool ng = tape.needs_grad(x) || tape.needs_grad(weight) ||
                  (bias != kNoVar && tape.needs_grad(bias));
  const VarId out_id = tape.push(std::move(out), ng);
  if (ng) {
    tape.set_backward(out_id, [x, weight, bias, p, out_id](TapeT<T>& t) {
      const BasicTensor<T>& g = t.grad(out_id);
      if (t.needs_grad(x))
        t.accumulate_grad(x, conv2d_backward_input(g, t.value(weight), p, t.value(x).dims));
      if (t.needs_grad(weight))
        t.accumulate_grad(weight, conv2d_backward_weight(g, t.value(x), p, t.value(weight).dims));
      if (bias != kNoVar && t.needs_grad(bias))
        t.accumulate_grad(bias, channel_tensor(conv2d_backward_bias(g)));
    });
  }
  return out_id;
}

template <typename T>
VarId op_prelu(TapeT<T>& tape, VarId x, VarId slope) {
  PReluParamsT<T> params{tape.value(slope).data};
  BasicTensor<T> out = prelu(tape.value(x), params);
  const bool ng = tape.needs_grad(x) || tape.needs_grad(slope);
  const VarId out_id = tape.push(std::move(out), ng);
  if (ng) {
    tape.set_backward(out_id, [x, slope, out_id](TapeT<T>& t) {
      BasicTensor<T> gx;
      std::vector<T> gs;
      prelu_backward(t.value(x), t.value(slope).data, t.grad(out_id),
                     t.needs_grad(x) ? &gx : nullptr, t.needs_grad(slope) ? &gs : nullptr);
      if (t.needs_grad(x)) t.accumulate_grad(x, gx);
      if (t.needs_grad(slope)) t.accumulate_grad(slope, channel_tensor(std::move(gs)));
    });
  }
  return out_id;
}

template <typename T>
VarId op_batchnorm_infer(TapeT<T>& tape, VarId x, VarId gamma, VarId beta,
                         const std::vector<T>& running_mean, const std::vector<T>& running_var,
                         T epsilon) {
  BatchNormParamsT<T> params{tape.value(gamma).data, tape.value(beta).data, running_mean,
                             running_var, epsilon};
  BasicTensor<T> out = batchnorm_infer(tape.value(x), params);
  const bool ng = tape.needs_grad(x) || tape.needs_grad(gamma) || tape.needs_grad(beta);
  const VarId out_id = tape.push(std::move(out), ng);
  if (ng) {
    tape.set_backward(out_id, [x, gamma, beta, running_mean, running_var, epsilon,
                               out_id](TapeT<T>& t) {
      BatchNormParamsT<T> p{t.value(gamma).data, t.value(beta).data, running_mean, running_var,
                            epsilon};
      BasicTensor<T> gx;
      std::vector<T> gg, gb;
      batchnorm_infer_backward(t.value(x), p, t.grad(out_id), t.needs_grad(x) ? &gx : nullptr,
                               t.needs_grad(gamma) ? &gg : nullptr,
                               t.needs_grad(beta) ? &gb : nullptr);
      if (t.needs_grad(x)) t.accumulate_grad(x, gx);
      if (t.needs_grad(gamma)) t.accumulate_grad(gamma, channel_tensor(std::move(gg)));
      if (t.needs_grad(beta)) t.accumulate_grad(beta, channel_tensor(std::move(gb)));
    });
  }
  return out_id;
}

template <typename T>
VarId op_batchnorm_train(TapeT<T>& tape, VarId x, VarId gamma, VarId beta, T epsilon, T momentum,
                         std::vector<T>* running_mean, std::vector<T>* running_var) {
  std::vector<T> mean, invstd;
  BasicTensor<T> out = batchnorm_train(tape.value(x), tape.value(gamma).data,
                                       tape.value(beta).data, epsilon, &mean, &invstd);
  if (running_mean && running_var) {
    for (std::size_t c = 0; c < mean.size(); ++c) {
      const T var = T(1) / (invstd[c] * invstd[c]) - epsilon;
      (*running_mean)[c] = (T(1) - momentum) * (*running_mean)[c] + momentum * mean[c];
      (*running_var)[c] = (T(1) - momentum) * (*running_var)[c] + momentum * var;
    }
  }
  const bool ng = tape.needs_grad(x) || tape.needs_grad(gamma) || tape.needs_grad(beta);
  const VarId out_id = tape.push(std::move(out), ng);
  if (ng) {
    tape.set_backward(out_id, [x, gamma, beta, mean, invstd, out_id](TapeT<T>& t) {
      BasicTensor<T> gx;
      std::vector<T> gg, gb;
      batchnorm_train_backward(t.value(x), t.value(gamma).data, mean, invstd, t.grad(out_id),
                               t.needs_grad(x) ? &gx : nullptr,
                               t.needs_grad(gamma) ? &gg : nullptr,
                               t.needs_grad(beta) ? &gb : nullptr);
      if (t.needs_grad(x)) t.accumulate_grad(x, gx);
      if (t.needs_grad(gamma)) t.accumulate_grad(gamma, channel_tensor(std::move(gg)));
      if (t.needs_grad(beta)) t.accumulate_grad(beta, channel_tensor(std::move(gb)));
    });
  }
  return out_id;
}

template <typename T>
VarId op_concat(TapeT<T>& tape, const std::vector<VarId>& inputs) {
  std::vector<const BasicTensor<T>*> tensors;
  tensors.reserve(inputs.size());
  bool ng = false;
  for (VarId id : inputs) {
    tensors.push_back(&tape.value(id));
    ng = ng || tape.needs_grad(id);
  }
  BasicTensor<T> out = concat_channels(tensors);
  const VarId out_id = tape.push(std::move(out), ng);
  if (ng) {
    tape.set_backward(out_id, [inputs, out_id](TapeT<T>& t) {
      const BasicTensor<T>& g = t.grad(out_id);
      int c0 = 0;
      for (VarId id : inputs) {
        const int c = t.value(id).dims.c;
        if (t.needs_grad(id)) t.accumulate_grad(id, slice_channels(g, c0, c0 + c));
        c0 += c;
      }
    });
  }
  return out_id;
}

template <typename T>
VarId op_maxpool2x2(TapeT<T>& tape, VarId x) {
  std::vector<std::int32_t> argmax;
  BasicTensor<T> out = maxpool2x2(tape.value(x), &argmax);
  const bool ng = tape.needs_grad(x);
  const VarId out_id = tape.push(std::move(out), ng);
  if (ng) {
    tape.set_backward(out_id, [x, argmax = std::move(argmax), out_id](TapeT<T>& t) {
      t.accumulate_grad(x, maxpool2x2_backward(t.grad(out_id), argmax, t.value(x).dims));
    });
  }
  return out_id;
}

template <typename T>
VarId op_bilinear(TapeT<T>& tape, VarId x, int out_h, int out_w) {
  BasicTensor<T> out = bilinear_resize(tape.value(x), out_h, out_w);
  const bool ng = tape.needs_grad(x);
  const VarId out_id = tape.push(std::move(out), ng);
  if (ng) {
    tape.set_backward(out_id, [x, out_id](TapeT<T>& t) {
      const Dims4& in = t.value(x).dims;
      t.accumulate_grad(x, bilinear_resize_backward(t.grad(out_id), in.h, in.w));
    });
  }
  return out_id;
}

template <typename T>
VarId op_softmax(TapeT<T>& tape, VarId x) {
  BasicTensor<T> out = softmax_channels(tape.value(x));
  const bool ng = tape.needs_grad(x);
  const VarId out_id = tape.push(std::move(out), ng);
  if (ng) {
    tape.set_backward(out_id, [x, out_id](TapeT<T>& t) {
      t.accumulate_grad(x, softmax_channels_backward(t.value(out_id), t.grad(out_id)));
    });
  }
  return out_id;
}

template <typename T>
VarId op_cross_entropy(TapeT<T>& tape, VarId logits, const LabelMap& labels, int ignore_index,
                       Reduction reduction) {
  CrossEntropyResult<T> res = cross_entropy_loss(tape.value(logits), labels, ignore_index,
                                                 reduction);
  BasicTensor<T> loss(Dims4{1, 1, 1, 1}, static_cast<T>(res.loss));
  const bool ng = tape.needs_grad(logits);
  const VarId out_id = tape.push(std::move(loss), ng);
  if (ng) {
    tape.set_backward(out_id, [logits, grad = std::move(res.grad_logits), out_id](TapeT<T>& t) {
      const T scale = t.grad(out_id).data[0];
      BasicTensor<T> gx = grad;
      for (auto& v : gx.data) v *= scale;
      t.accumulate_grad(logits, gx);
    });
  }
  return out_id;
}

template <typename T>
VarId op_inner(TapeT<T>& tape, VarId x, BasicTensor<T> weights) {
  const BasicTensor<T>& xv = tape.value(x);
  if (!(weights.dims == xv.dims))
    fail_invalid("op_inner: weight dims ", weights.dims.str(), " != value dims ", xv.dims.str());
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.data.size(); ++i)
    acc += static_cast<double>(weights.data[i]) * static_cast<double>(xv.data[i]);
  BasicTensor<T> out(Dims4{1, 1, 1, 1}, static_cast<T>(acc));
  const bool ng = tape.needs_grad(x);
  const VarId out_id = tape.push(std::move(out), ng);
  if (ng) {
    tape.set_backward(out_id, [x, w = std::move(weights), out_id](TapeT<T>& t) {
      const T scale = t.grad(out_id).data[0];
      BasicTensor<T> gx = w;
      for (auto& v : gx.data) v *= scale;
      t.accumulate_grad(x, gx);
    });
  }
  return out_id;
}

// --- ParamStoreT -------------------------------------------------------------

template <typename T>
ParamEntryT<T>& ParamStoreT<T>::add(const std::string& name, BasicTensor<T> value, bool trainable) {
  if (contains(name)) fail_invalid("param store: duplicate name '", name, "'");
  ParamEntryT<T> e;
  e.grad = BasicTensor<T>(value.dims);
  e.value = std::move(value);
  e.trainable = trainable;
  order_.push_back(name);
  return map_.emplace(name, std::move(e)).first->second;
}

template <typename T>
ParamEntryT<T>& ParamStoreT<T>::at(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) fail_invalid("param store: missing parameter '", name, "'");
  return it->second;
}

template <typename T>
const ParamEntryT<T>& ParamStoreT<T>::at(const std::string& name) const {
  return const_cast<ParamStoreT*>(this)->at(name);
}

template <typename T>
void ParamStoreT<T>::zero_grads() {
  for (auto& [name, e] : map_) e.grad.fill(T(0));
}

template <typename T>
void ParamStoreT<T>::zero_values() {
  for (auto& [name, e] : map_) e.value.fill(T(0));
}

ParamStoreT<double> to_double(const ParamStore& store) {
  ParamStoreT<double> out;
  for (const auto& name : store.names()) {
    const auto& e = store.at(name);
    out.add(name, e.value.template cast<double>(), e.trainable);
  }
  return out;
}

template <typename T>
std::int64_t param_scalar_count(const ParamStoreT<T>& store,
                                const std::vector<std::string>& names) {
  std::int64_t total = 0;
  for (const auto& n : names) total += store.at(n).value.numel();
  return total;
}

// --- StoreBindingT ------------------------------------------------------------

template <typename T>
VarId StoreBindingT<T>::operator[](const std::string& name) {
  auto it = ids_.find(name);
  if (it != ids_.end()) return it->second;
  const ParamEntryT<T>& e = store_->at(name);
  const VarId id = tape_->push(e.value, record_ && e.trainable);
  ids_.emplace(name, id);
  return id;
}

template <typename T>
void StoreBindingT<T>::export_grads() {
  if (!mutable_store_) fail_invalid("store binding: gradients require a mutable store");
  for (const auto& [name, id] : ids_) {
    ParamEntryT<T>& e = mutable_store_->at(name);
    if (!e.trainable) continue;
    const BasicTensor<T>& g = tape_->grad(id);
    for (std::size_t i = 0; i < g.data.size(); ++i) e.grad.data[i] += g.data[i];
  }
}

// --- Adam ---------------------------------------------------------------------

template <typename T>
AdamStateT<T>::AdamStateT(T beta1, T beta2, T epsilon, T base_lr)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), base_lr_(base_lr) {
  if (beta1 < T(0) || beta1 >= T(1) || beta2 < T(0) || beta2 >= T(1))
    fail_invalid("adam: betas must lie in [0, 1)");
  if (epsilon <= T(0)) fail_invalid("adam: epsilon must be positive");
}

template <typename T>
void adam_step(ParamStoreT<T>& store, AdamStateT<T>& state, T lr) {
  ++state.step_;
  const double t = static_cast<double>(state.step_);
  const T bc1 = static_cast<T>(1.0 - std::pow(static_cast<double>(state.beta1_), t));
  const T bc2 = static_cast<T>(1.0 - std::pow(static_cast<double>(state.beta2_), t));
  for (const auto& name : store.names()) {
    ParamEntryT<T>& e = store.at(name);
    if (!e.trainable) continue;
    auto& mom = state.moments_[name];
    if (mom.m.empty()) {
      mom.m = BasicTensor<T>(e.value.dims);
      mom.v = BasicTensor<T>(e.value.dims);
    }
    for (std::size_t i = 0; i < e.value.data.size(); ++i) {
      const T g = e.grad.data[i];
      mom.m.data[i] = state.beta1_ * mom.m.data[i] + (T(1) - state.beta1_) * g;
      mom.v.data[i] = state.beta2_ * mom.v.data[i] + (T(1) - state.beta2_) * g * g;
      const T mhat = mom.m.data[i] / bc1;
      const T vhat = mom.v.data[i] / bc2;
      e.value.data[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon_);
    }
  }
}

double poly_lr(const PolySchedule& schedule, std::int64_t iter) {
  if (schedule.base_lr <= 0.0) fail_invalid("poly schedule: base_lr must be positive");
  if (schedule.max_iter <= 0) fail_invalid("poly schedule: max_iter must be positive");
  if (iter < 0 || iter > schedule.max_iter)
    fail_invalid("poly schedule: iter ", iter, " outside [0, ", schedule.max_iter, "]");
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(schedule.max_iter);
  return schedule.base_lr * std::pow(frac, schedule.power);
}

// --- explicit instantiations ---------------------------------------------------

#define EADNET_INSTANTIATE_AUTOGRAD(T)                                                        \
  template class TapeT<T>;                                                                    \
  template class ParamStoreT<T>;                                                              \
  template class StoreBindingT<T>;                                                            \
  template class AdamStateT<T>;                                                               \
  template VarId op_input<T>(TapeT<T>&, BasicTensor<T>, bool);                                \
  template VarId op_conv2d<T>(TapeT<T>&, VarId, VarId, VarId, const ConvParams&);             \
  template VarId op_prelu<T>(TapeT<T>&, VarId, VarId);                                        \
  template VarId op_batchnorm_infer<T>(TapeT<T>&, VarId, VarId, VarId, const std::vector<T>&, \
                                       const std::vector<T>&, T);                             \
  template VarId op_batchnorm_train<T>(TapeT<T>&, VarId, VarId, VarId, T, T, std::vector<T>*, \
                                       std::vector<T>*);                                      \
  template VarId op_concat<T>(TapeT<T>&, const std::vector<VarId>&);                          \
  template VarId op_maxpool2x2<T>(TapeT<T>&, VarId);                                          \
  template VarId op_bilinear<T>(TapeT<T>&, VarId, int, int);                                  \
  template VarId op_softmax<T>(TapeT<T>&, VarId);                                             \
  template VarId op_cross_entropy<T>(TapeT<T>&, VarId, const LabelMap&, int, Reduction);      \
  template VarId op_inner<T>(TapeT<T>&, VarId, BasicTensor<T>);                               \
  template void adam_step<T>(ParamStoreT<T>&, AdamStateT<T>&, T);                             \
  template std::int64_t param_scalar_count<T>(const ParamStoreT<T>&,                          \
                                              const std::vector<std::string>&);

EADNET_INSTANTIATE_AUTOGRAD(float)
EADNET_INSTANTIATE_AUTOGRAD(double)

#undef EADNET_INSTANTIATE_AUTOGRAD

}  // namespace eadnet
