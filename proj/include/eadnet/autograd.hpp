#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "eadnet/tensor.hpp"

namespace eadnet {

using VarId = int;
constexpr VarId kNoVar = -1;

// Reverse-mode tape. Nodes are appended in forward order, so node ids are
// already a topological order and backward() is a single reverse sweep.
template <typename T>
class TapeT {
 public:
  VarId push(BasicTensor<T> value, bool needs_grad);
  // Attaches the pullback for an op's output node (captures the node ids
  // it reads and writes).
  void set_backward(VarId id, std::function<void(TapeT&)> backward);

  const BasicTensor<T>& value(VarId id) const;
  // Gradient accumulated so far; allocates zeros on first access.
  const BasicTensor<T>& grad(VarId id);
  bool needs_grad(VarId id) const;
  void accumulate_grad(VarId id, const BasicTensor<T>& g);

  // Seeds d(root)/d(root) = 1 (root must be scalar) and propagates.
  void backward(VarId root);
  void backward(VarId root, const BasicTensor<T>& seed);

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool needs_grad = false;
    std::function<void(TapeT&)> backward;
  };
  Node& node(VarId id);
  const Node& node(VarId id) const;
  std::vector<Node> nodes_;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

// --- tape operations ------------------------------------------------------

template <typename T>
VarId op_input(TapeT<T>& tape, BasicTensor<T> value, bool needs_grad = false);

template <typename T>
VarId op_conv2d(TapeT<T>& tape, VarId x, VarId weight, VarId bias, const ConvParams& p);

template <typename T>
VarId op_prelu(TapeT<T>& tape, VarId x, VarId slope);

template <typename T>
VarId op_batchnorm_infer(TapeT<T>& tape, VarId x, VarId gamma, VarId beta,
                         const std::vector<T>& running_mean, const std::vector<T>& running_var,
                         T epsilon);

// Batch-statistics normalization; if running stats are given they are
// updated in place with the given momentum.
template <typename T>
VarId op_batchnorm_train(TapeT<T>& tape, VarId x, VarId gamma, VarId beta, T epsilon, T momentum,
                         std::vector<T>* running_mean, std::vector<T>* running_var);

template <typename T>
VarId op_concat(TapeT<T>& tape, const std::vector<VarId>& inputs);

template <typename T>
VarId op_maxpool2x2(TapeT<T>& tape, VarId x);

template <typename T>
VarId op_bilinear(TapeT<T>& tape, VarId x, int out_h, int out_w);

template <typename T>
VarId op_softmax(TapeT<T>& tape, VarId x);

// Scalar node holding the loss; backward scatters (softmax - onehot).
template <typename T>
VarId op_cross_entropy(TapeT<T>& tape, VarId logits, const LabelMap& labels,
                       int ignore_index = kIgnoreLabel, Reduction reduction = Reduction::Mean);

// Scalar projection sum(weights ⊙ x); test/loss utility.
template <typename T>
VarId op_inner(TapeT<T>& tape, VarId x, BasicTensor<T> weights);

// --- parameter store ------------------------------------------------------

template <typename T>
struct ParamEntryT {
  BasicTensor<T> value;
  BasicTensor<T> grad;  // always same dims as value
  bool trainable = true;
};

template <typename T>
class ParamStoreT {
 public:
  ParamEntryT<T>& add(const std::string& name, BasicTensor<T> value, bool trainable = true);
  bool contains(const std::string& name) const { return map_.count(name) != 0; }
  ParamEntryT<T>& at(const std::string& name);
  const ParamEntryT<T>& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }
  void zero_grads();
  void zero_values();

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, ParamEntryT<T>> map_;
};

using ParamStore = ParamStoreT<float>;
using ParamEntry = ParamEntryT<float>;

ParamStoreT<double> to_double(const ParamStore& store);

// Total scalar count over the named entries (values only).
template <typename T>
std::int64_t param_scalar_count(const ParamStoreT<T>& store, const std::vector<std::string>& names);

// Bridges a ParamStore and a tape: hands out memoized leaf vars for
// parameters and copies gradients back after backward().
template <typename T>
class StoreBindingT {
 public:
  // Read-only binding: inference over a frozen store.
  StoreBindingT(TapeT<T>& tape, const ParamStoreT<T>& store)
      : tape_(&tape), store_(&store), mutable_store_(nullptr), record_(false) {}
  // Training binding: parameter vars carry gradients.
  StoreBindingT(TapeT<T>& tape, ParamStoreT<T>& store, bool record_grads)
      : tape_(&tape), store_(&store), mutable_store_(&store), record_(record_grads) {}

  VarId operator[](const std::string& name);
  const ParamStoreT<T>& store() const { return *store_; }
  ParamStoreT<T>* mutable_store() { return mutable_store_; }
  bool recording() const { return record_; }
  TapeT<T>& tape() { return *tape_; }

  // Accumulates tape gradients into store.grad for every bound trainable
  // parameter.
  void export_grads();

 private:
  TapeT<T>* tape_;
  const ParamStoreT<T>* store_;
  ParamStoreT<T>* mutable_store_;
  bool record_;
  std::unordered_map<std::string, VarId> ids_;
};

using StoreBinding = StoreBindingT<float>;

// --- optimizer and schedule -------------------------------------------------

template <typename T>
class AdamStateT {
 public:
  AdamStateT(T beta1 = T(0.9), T beta2 = T(0.999), T epsilon = T(1e-8), T base_lr = T(5e-4));

  T beta1() const { return beta1_; }
  T beta2() const { return beta2_; }
  T epsilon() const { return epsilon_; }
  T base_lr() const { return base_lr_; }
  std::int64_t step() const { return step_; }

  template <typename U>
  friend void adam_step(ParamStoreT<U>& store, AdamStateT<U>& state, U lr);

 private:
  struct Moments {
    BasicTensor<T> m;
    BasicTensor<T> v;
  };
  T beta1_, beta2_, epsilon_, base_lr_;
  std::int64_t step_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

using AdamState = AdamStateT<float>;

// Bias-corrected Adam update over all trainable entries.
template <typename T>
void adam_step(ParamStoreT<T>& store, AdamStateT<T>& state, T lr);

struct PolySchedule {
  double base_lr = 5e-4;
  std::int64_t max_iter = 1;
  double power = 0.9;
};

// base_lr * (1 - iter/max_iter)^power, valid for 0 <= iter <= max_iter.
double poly_lr(const PolySchedule& schedule, std::int64_t iter);

}  // namespace eadnet
