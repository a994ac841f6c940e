#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eadnet/network.hpp"

namespace eadnet {

// Closed-form convolution parameter counts for the MMRFC block (weights
// plus biases; batchnorm/prelu tracked separately as aux).
std::int64_t mmrfc_branch_params(int channels, int branch_index);
std::int64_t mmrfc_fusion_params(int channels);
std::int64_t mmrfc_total_params(int channels);
// FLOPs convention: parameter count times output positions.
std::int64_t mmrfc_flops(int channels, int width, int height);

struct LayerCost {
  std::string name;
  std::string kind;
  std::int64_t params = 0;      // convolution weights + biases
  std::int64_t params_aux = 0;  // batchnorm tensors + prelu slopes
  std::int64_t flops = 0;       // params x output positions
  Dims4 out_shape;
  std::pair<int, int> receptive_field{1, 1};
};

struct CostReport {
  std::vector<LayerCost> layers;
  std::int64_t total_params = 0;
  std::int64_t total_params_aux = 0;
  std::int64_t total_flops = 0;
  // Conventional multiply+add accounting (2 x weight MACs), reported in
  // the summary for cross-comparison; not part of the JSON schema.
  std::int64_t total_flops_2mac = 0;
};

CostReport analyze_graph(const GraphSpec& spec, const Dims4& input_dims);

struct BranchRect {
  int branch = 1;
  std::pair<int, int> feature{1, 1};  // rectangle at the layer's resolution
  std::pair<int, int> image{1, 1};    // same rectangle in input pixels
};

struct LayerRf {
  std::string name;
  std::string kind;
  std::pair<int, int> rf{1, 1};  // composed receptive field in input pixels
  std::vector<BranchRect> branch_rects;  // mmrfc layers only
};

std::vector<LayerRf> receptive_field_report(const GraphSpec& spec);

std::string cost_report_to_json(const CostReport& report);
CostReport cost_report_from_json(const std::string& text);

}  // namespace eadnet
