#pragma once

#include <string>
#include <utility>
#include <vector>

#include "eadnet/layers.hpp"

namespace eadnet {

// Multi-scale multi-shape receptive field convolution block.
struct MmrfcConfig {
  int channels = 128;     // divisible by 8, at most 128
  int base_dilation = 1;  // 1..6, so no asymmetric conv dilates beyond 24
};

void validate(const MmrfcConfig& cfg);

struct BranchSpec {
  int index = 1;        // 1..4
  int d_vertical = 1;   // dilation of the 3x1 conv
  int d_horizontal = 1; // dilation of the 1x3 conv
  bool depthwise = false;
};

// Dilation pairs per branch: (1,1), (dr,dr), (2dr,4dr), (4dr,2dr).
// Branch 1 uses full convolutions, branches 2-4 depthwise ones.
BranchSpec mmrfc_branch(int index, int base_dilation);

// Feature-level receptive rectangle (height, width): a dilated 3x1
// followed by a dilated 1x3 composes additively per axis.
std::pair<int, int> branch_receptive_field(const BranchSpec& spec);

// Parameter handle for one block; weights live in the ParamStore under
// the given name prefix.
class MmrfcBlock {
 public:
  static MmrfcBlock build(const MmrfcConfig& cfg, ParamStore& store,
                          const std::string& name_prefix, RandomStream& rng);

  const MmrfcConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }
  // Names of convolution parameters (weights and biases).
  const std::vector<std::string>& conv_param_names() const { return conv_names_; }
  // Names of batchnorm/prelu parameters.
  const std::vector<std::string>& aux_param_names() const { return aux_names_; }

  // branch_outputs, when given, receives the four pre-merge branch vars.
  template <typename T>
  VarId forward(StoreBindingT<T>& binding, VarId input, bool training,
                std::vector<VarId>* branch_outputs = nullptr) const;

 private:
  MmrfcConfig cfg_;
  std::string prefix_;
  std::vector<std::string> conv_names_;
  std::vector<std::string> aux_names_;
};

// Inference convenience over a frozen store.
Tensor mmrfc_forward(const MmrfcBlock& block, const ParamStore& store, const Tensor& input);

}  // namespace eadnet
