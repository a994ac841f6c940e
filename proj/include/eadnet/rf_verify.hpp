#pragma once

#include <utility>

#include "eadnet/mmrfc.hpp"

namespace eadnet {

// Bounding box (h, w) of the outputs a centered unit impulse reaches
// through a branch's convolution chain, run with all-ones bias-free
// weights on the production conv path. Matches branch_receptive_field
// when the kernels behave as specified.
std::pair<int, int> empirical_branch_footprint(const BranchSpec& spec);

// Same probe through a fully built block (identity-configured batchnorm,
// all activations non-negative so prelu is transparent).
std::pair<int, int> empirical_mmrfc_footprint(int channels, int base_dilation);

}  // namespace eadnet
