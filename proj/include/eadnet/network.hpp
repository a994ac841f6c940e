#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "eadnet/mmrfc.hpp"

namespace eadnet {

struct EadnetConfig {
  int num_classes = 19;
  std::array<int, 3> stage_channels{16, 64, 128};
  std::vector<int> dr_stage2{1, 1, 2, 2, 4, 4};
  std::vector<int> dr_stage3{1, 2, 4, 6, 1, 2, 4, 6, 6};

  int n1() const { return static_cast<int>(dr_stage2.size()); }
  int n2() const { return static_cast<int>(dr_stage3.size()); }
};

void validate(const EadnetConfig& cfg);

// Repeated 1,2,4,6 ramp, used when only a block count is configured.
std::vector<int> default_dr_schedule(int n);

// Declarative layer description; the unit the cost model works on.
struct LayerSpec {
  std::string name;
  std::string kind;  // concat-conv | mmrfc | seq-dw-conv | dw-conv | concat |
                     // pointwise-classifier | bilinear-up
  std::vector<std::string> inputs;  // earlier layer names, or "input"
  std::map<std::string, int> attrs;

  int attr(const std::string& key) const;
};

struct GraphSpec {
  std::vector<LayerSpec> layers;
};

// Checks names are unique, references resolve to earlier layers, and a
// non-empty graph has exactly one output layer.
void validate(const GraphSpec& spec);

std::string graph_to_text(const GraphSpec& spec);
GraphSpec graph_from_text(const std::string& text);
void save_graph(const GraphSpec& spec, const std::string& path);
GraphSpec load_graph(const std::string& path);

// Full network: three downsampling stages with MMRFC stacks, shallow
// taps re-downsampled to 1/8, concat head, pointwise classifier and a
// bilinear x8 upsample back to input resolution.
class EadnetModel {
 public:
  static EadnetModel build(const EadnetConfig& cfg, ParamStore& store, unsigned seed = 1);

  const EadnetConfig& config() const { return cfg_; }
  const GraphSpec& graph() const { return graph_; }
  const std::vector<std::string>& conv_param_names() const { return conv_names_; }

  // Runs the graph, returning every layer output by name ("upsample" is
  // the final logits, "classifier" the 1/8-resolution score map).
  template <typename T>
  std::vector<std::pair<std::string, VarId>> forward_trace(StoreBindingT<T>& binding, VarId input,
                                                           bool training) const;

  // Inference on a frozen store: logits at input resolution.
  Tensor infer(const ParamStore& store, const Tensor& input) const;

 private:
  EadnetConfig cfg_;
  GraphSpec graph_;
  std::vector<MmrfcBlock> stage2_;
  std::vector<MmrfcBlock> stage3_;
  std::vector<std::string> conv_names_;
};

// Binary weight file: magic "EADW", u32 version, u32 tensor count, then
// per tensor: u32 name length + name, u32 rank, u32 dims, f32 payload.
// All integers and floats little-endian.
void save_weights(const ParamStore& store, const std::string& path);
ParamStore load_weights(const std::string& path);
// Strict load into an existing store: every entry must be present with
// matching dims and no unknown tensors may appear.
void load_weights_into(ParamStore& store, const std::string& path);

}  // namespace eadnet
