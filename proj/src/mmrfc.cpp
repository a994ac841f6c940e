#include "eadnet/mmrfc.hpp"

namespace eadnet {

void validate(const MmrfcConfig& cfg) {
  if (cfg.channels < 8 || cfg.channels % 8 != 0)
    fail_invalid("mmrfc: channels must be a positive multiple of 8, got ", cfg.channels);
  if (cfg.channels > 128) fail_invalid("mmrfc: channels capped at 128, got ", cfg.channels);
  if (cfg.base_dilation < 1 || cfg.base_dilation > 6)
    fail_invalid("mmrfc: base dilation must lie in [1, 6], got ", cfg.base_dilation);
}

BranchSpec mmrfc_branch(int index, int base_dilation) {
  if (index < 1 || index > 4) fail_invalid("mmrfc: branch index must lie in [1, 4], got ", index);
  const int dr = base_dilation;
  BranchSpec s;
  s.index = index;
  s.depthwise = index != 1;
  switch (index) {
    case 1: s.d_vertical = 1; s.d_horizontal = 1; break;
    case 2: s.d_vertical = dr; s.d_horizontal = dr; break;
    case 3: s.d_vertical = 2 * dr; s.d_horizontal = 4 * dr; break;
    default: s.d_vertical = 4 * dr; s.d_horizontal = 2 * dr; break;
  }
  return s;
}

std::pair<int, int> branch_receptive_field(const BranchSpec& spec) {
  return {2 * spec.d_vertical + 1, 2 * spec.d_horizontal + 1};
}

MmrfcBlock MmrfcBlock::build(const MmrfcConfig& cfg, ParamStore& store,
                             const std::string& name_prefix, RandomStream& rng) {
  validate(cfg);
  MmrfcBlock blk;
  blk.cfg_ = cfg;
  blk.prefix_ = name_prefix;
  const int C = cfg.channels;
  const int Cr = C / 8;

  auto conv = [&](const std::string& name, int out_c, int in_per_group, int kh, int kw) {
    register_conv(store, name, out_c, in_per_group, kh, kw, rng);
    blk.conv_names_.push_back(name + ".w");
    blk.conv_names_.push_back(name + ".b");
  };
  auto bn = [&](const std::string& name, int c) {
    register_bn(store, name, c);
    blk.aux_names_.push_back(name + ".gamma");
    blk.aux_names_.push_back(name + ".beta");
    blk.aux_names_.push_back(name + ".mean");
    blk.aux_names_.push_back(name + ".var");
  };
  auto act = [&](const std::string& name, int c) {
    register_prelu(store, name, c);
    blk.aux_names_.push_back(name + ".slope");
  };

  for (int i = 1; i <= 4; ++i) {
    const BranchSpec spec = mmrfc_branch(i, cfg.base_dilation);
    const std::string p = name_prefix + ".b" + std::to_string(i);
    conv(p + ".reduce", Cr, C, 1, 1);
    bn(p + ".bn1", Cr);
    act(p + ".act1", Cr);
    conv(p + ".v", Cr, spec.depthwise ? 1 : Cr, 3, 1);
    act(p + ".act2", Cr);
    conv(p + ".h", Cr, spec.depthwise ? 1 : Cr, 1, 3);
    bn(p + ".bn2", Cr);
    act(p + ".act3", Cr);
  }
  conv(name_prefix + ".fuse.dw", C / 2, 1, 3, 3);
  conv(name_prefix + ".fuse.pw", C, C, 1, 1);
  bn(name_prefix + ".fuse.bn", C);
  act(name_prefix + ".fuse.act", C);
  return blk;
}

template <typename T>
VarId MmrfcBlock::forward(StoreBindingT<T>& binding, VarId input, bool training,
                          std::vector<VarId>* branch_outputs) const {
  const int C = cfg_.channels;
  const int Cr = C / 8;
  TapeT<T>& tape = binding.tape();
  if (tape.value(input).dims.c != C)
    fail_invalid("mmrfc forward: input has ", tape.value(input).dims.c, " channels, block expects ",
                 C);

  std::vector<VarId> branches;
  for (int i = 1; i <= 4; ++i) {
    const BranchSpec spec = mmrfc_branch(i, cfg_.base_dilation);
    const std::string p = prefix_ + ".b" + std::to_string(i);
    ConvParams reduce;  // 1x1 pointwise
    VarId r = conv_layer(binding, p + ".reduce", input, reduce);
    r = bn_layer(binding, p + ".bn1", r, training);
    r = prelu_layer(binding, p + ".act1", r);

    ConvParams vert;
    vert.kh = 3;
    vert.dh = spec.d_vertical;
    vert.ph = spec.d_vertical;  // same padding: (3-1)*d/2
    vert.groups = spec.depthwise ? Cr : 1;
    r = conv_layer(binding, p + ".v", r, vert);
    r = prelu_layer(binding, p + ".act2", r);

    ConvParams horz;
    horz.kw = 3;
    horz.dw = spec.d_horizontal;
    horz.pw = spec.d_horizontal;
    horz.groups = spec.depthwise ? Cr : 1;
    r = conv_layer(binding, p + ".h", r, horz);
    r = bn_layer(binding, p + ".bn2", r, training);
    r = prelu_layer(binding, p + ".act3", r);
    branches.push_back(r);
  }
  if (branch_outputs) *branch_outputs = branches;

  const VarId merged = op_concat(tape, branches);  // C/2 channels
  ConvParams dw;
  dw.kh = dw.kw = 3;
  dw.ph = dw.pw = 1;
  dw.groups = C / 2;
  const VarId ghost = conv_layer(binding, prefix_ + ".fuse.dw", merged, dw);
  const VarId doubled = op_concat(tape, std::vector<VarId>{merged, ghost});  // C channels
  ConvParams pw;
  VarId fused = conv_layer(binding, prefix_ + ".fuse.pw", doubled, pw);
  fused = bn_layer(binding, prefix_ + ".fuse.bn", fused, training);
  fused = prelu_layer(binding, prefix_ + ".fuse.act", fused);
  return fused;
}

template VarId MmrfcBlock::forward<float>(StoreBindingT<float>&, VarId, bool,
                                          std::vector<VarId>*) const;
template VarId MmrfcBlock::forward<double>(StoreBindingT<double>&, VarId, bool,
                                           std::vector<VarId>*) const;

Tensor mmrfc_forward(const MmrfcBlock& block, const ParamStore& store, const Tensor& input) {
  Tape tape;
  StoreBinding binding(tape, store);
  const VarId x = op_input(tape, input);
  const VarId y = block.forward(binding, x, /*training=*/false);
  return tape.value(y);
}

}  // namespace eadnet
