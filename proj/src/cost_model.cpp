#include "eadnet/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <json.hpp>

namespace eadnet {

namespace {

void check_mmrfc_channels(int channels) {
  if (channels < 8 || channels % 8 != 0)
    fail_invalid("mmrfc params: channels must be a positive multiple of 8, got ", channels);
}

// One convolution's weight geometry; params = (kh*kw*in_per_group + 1)*out_c.
struct ConvShape {
  int out_c;
  int in_per_group;
  int kh;
  int kw;

  std::int64_t params() const {
    return (static_cast<std::int64_t>(kh) * kw * in_per_group + 1) * out_c;
  }
  std::int64_t weight_macs() const {
    return static_cast<std::int64_t>(kh) * kw * in_per_group * out_c;
  }
};

// The block's convolutions in forward order; the generic counting route
// used by analyze_graph (the closed forms below are the algebraic route).
std::vector<ConvShape> mmrfc_conv_shapes(int C) {
  std::vector<ConvShape> shapes;
  const int Cr = C / 8;
  for (int i = 1; i <= 4; ++i) {
    const int asym_in = i == 1 ? Cr : 1;
    shapes.push_back({Cr, C, 1, 1});
    shapes.push_back({Cr, asym_in, 3, 1});
    shapes.push_back({Cr, asym_in, 1, 3});
  }
  shapes.push_back({C / 2, 1, 3, 3});
  shapes.push_back({C, C, 1, 1});
  return shapes;
}

}  // namespace

std::int64_t mmrfc_branch_params(int channels, int branch_index) {
  check_mmrfc_channels(channels);
  if (branch_index < 1 || branch_index > 4)
    fail_invalid("mmrfc params: branch index must lie in [1, 4], got ", branch_index);
  const std::int64_t C = channels;
  const std::int64_t c8 = C / 8;
  const std::int64_t reduce = (C + 1) * c8;
  const std::int64_t asym =
      branch_index == 1 ? (3 * c8 + 1) * c8 * 2 : (3 + 1) * c8 * 2;
  return reduce + asym;
}

std::int64_t mmrfc_fusion_params(int channels) {
  if (channels < 2 || channels % 2 != 0)
    fail_invalid("mmrfc params: fusion needs an even channel count, got ", channels);
  const std::int64_t C = channels;
  return (3 * 3 + 1) * (C / 2) + (C + 1) * C;
}

std::int64_t mmrfc_total_params(int channels) {
  check_mmrfc_channels(channels);
  std::int64_t total = mmrfc_fusion_params(channels);
  for (int i = 1; i <= 4; ++i) total += mmrfc_branch_params(channels, i);
  return total;
}

std::int64_t mmrfc_flops(int channels, int width, int height) {
  if (width < 1 || height < 1) fail_invalid("mmrfc flops: dims must be positive");
  return mmrfc_total_params(channels) * width * height;
}

// --- graph analysis ------------------------------------------------------------

namespace {

struct RfState {
  double rf_h = 1.0, rf_w = 1.0;
  double jump_h = 1.0, jump_w = 1.0;
};

RfState grow(RfState s, int keff_h, int keff_w, int stride_h, int stride_w) {
  s.rf_h += (keff_h - 1) * s.jump_h;
  s.rf_w += (keff_w - 1) * s.jump_w;
  s.jump_h *= stride_h;
  s.jump_w *= stride_w;
  return s;
}

struct NodeInfo {
  Dims4 shape;
  RfState rf;
};

std::pair<int, int> rf_pair(const RfState& s) {
  return {static_cast<int>(std::lround(s.rf_h)), static_cast<int>(std::lround(s.rf_w))};
}

// Shared walk for cost analysis and receptive-field reporting.
struct GraphWalk {
  const GraphSpec& spec;
  Dims4 input_dims;
  std::unordered_map<std::string, NodeInfo> nodes;

  GraphWalk(const GraphSpec& s, const Dims4& in) : spec(s), input_dims(in) {
    validate(spec);
    nodes["input"] = NodeInfo{input_dims, RfState{}};
  }

  const NodeInfo& in(const LayerSpec& layer, std::size_t idx = 0) const {
    const auto it = nodes.find(layer.inputs.at(idx));
    if (it == nodes.end()) fail_invalid("graph: unresolved input for layer '", layer.name, "'");
    return it->second;
  }

  static Dims4 halved(const Dims4& d, const std::string& name) {
    if (d.h < 2 || d.w < 2)
      fail_invalid("graph: layer '", name, "' cannot downsample ", d.str());
    return Dims4{d.n, d.c, d.h / 2, d.w / 2};
  }

  // Fills cost (params/flops/shape) and rf for one layer.
  LayerCost analyze(const LayerSpec& layer, std::int64_t* flops_2mac,
                    std::vector<BranchRect>* rects) {
    LayerCost lc;
    lc.name = layer.name;
    lc.kind = layer.kind;
    NodeInfo out;
    std::int64_t macs2 = 0;
    if (layer.kind == "concat-conv") {
      const NodeInfo& src = in(layer);
      const int out_c = layer.attr("out_channels");
      if (out_c <= src.shape.c)
        fail_invalid("graph: concat-conv '", layer.name, "' must grow channels");
      // 3x3 stride-2 conv producing (out_c - in_c) channels, concatenated
      // with a 2x2 stride-2 max-pool of the input (pool adds no params).
      if (src.shape.h % 2 != 0 || src.shape.w % 2 != 0)
        fail_invalid("graph: concat-conv '", layer.name, "' needs even input dims, got ",
                     src.shape.str());
      const Dims4 half = halved(src.shape, layer.name);
      out.shape = Dims4{half.n, out_c, half.h, half.w};
      const ConvShape conv{out_c - src.shape.c, src.shape.c, 3, 3};
      lc.params = conv.params();
      lc.params_aux = 4 * out_c + out_c;  // bn + prelu
      const std::int64_t pos = static_cast<std::int64_t>(out.shape.n) * out.shape.h * out.shape.w;
      lc.flops = lc.params * pos;
      macs2 = 2 * conv.weight_macs() * pos;
      out.rf = grow(src.rf, 3, 3, 2, 2);
    } else if (layer.kind == "mmrfc") {
      const NodeInfo& src = in(layer);
      const int C = layer.attr("channels");
      const int dr = layer.attr("dr");
      if (src.shape.c != C)
        fail_invalid("graph: mmrfc '", layer.name, "' configured for ", C, " channels but fed ",
                     src.shape.c);
      if (dr < 1 || dr > 6) fail_invalid("graph: mmrfc '", layer.name, "' dr outside [1, 6]");
      out.shape = src.shape;
      std::int64_t params = 0;
      for (const ConvShape& cs : mmrfc_conv_shapes(C)) {
        params += cs.params();
        macs2 += 2 * cs.weight_macs();
      }
      if (params != mmrfc_total_params(C))
        fail_invalid("graph: mmrfc conv enumeration disagrees with closed form for C=", C);
      lc.params = params;
      const std::int64_t pos = static_cast<std::int64_t>(out.shape.n) * out.shape.h * out.shape.w;
      lc.flops = lc.params * pos;
      macs2 *= pos;
      const int c8 = C / 8;
      lc.params_aux = 4 * (2 * 4 * c8 + C) + (3 * 4 * c8 + C);  // bn + prelu slopes
      // Branch part: widest extent per axis is the (4dr, 2dr) / (2dr, 4dr)
      // pair; the 3x3 depthwise then adds 2 per axis.
      out.rf = grow(src.rf, 8 * dr + 1, 8 * dr + 1, 1, 1);
      out.rf = grow(out.rf, 3, 3, 1, 1);
      if (rects) {
        for (int i = 1; i <= 4; ++i) {
          const BranchSpec bs = mmrfc_branch(i, dr);
          const auto feat = branch_receptive_field(bs);
          BranchRect r;
          r.branch = i;
          r.feature = feat;
          r.image = {static_cast<int>(std::lround(src.rf.jump_h * (feat.first - 1))) + 1,
                     static_cast<int>(std::lround(src.rf.jump_w * (feat.second - 1))) + 1};
          rects->push_back(r);
        }
      }
    } else if (layer.kind == "seq-dw-conv" || layer.kind == "dw-conv") {
      const NodeInfo& src = in(layer);
      const int C = layer.attr("channels");
      if (src.shape.c != C)
        fail_invalid("graph: ", layer.kind, " '", layer.name, "' channel mismatch");
      const int stages = layer.kind == "seq-dw-conv" ? 2 : 1;
      const ConvShape conv{C, 1, 3, 3};
      out.shape = src.shape;
      out.rf = src.rf;
      for (int s = 0; s < stages; ++s) {
        out.shape = halved(out.shape, layer.name);
        const std::int64_t pos =
            static_cast<std::int64_t>(out.shape.n) * out.shape.h * out.shape.w;
        lc.params += conv.params();
        lc.flops += conv.params() * pos;
        macs2 += 2 * conv.weight_macs() * pos;
        out.rf = grow(out.rf, 3, 3, 2, 2);
      }
      lc.params_aux = stages * (4 * C + C);
    } else if (layer.kind == "concat") {
      const NodeInfo& first = in(layer);
      out.shape = first.shape;
      out.shape.c = 0;
      out.rf = first.rf;
      for (std::size_t i = 0; i < layer.inputs.size(); ++i) {
        const NodeInfo& src = in(layer, i);
        if (src.shape.n != first.shape.n || src.shape.h != first.shape.h ||
            src.shape.w != first.shape.w)
          fail_invalid("graph: concat '", layer.name, "' spatial mismatch: ", src.shape.str(),
                       " vs ", first.shape.str());
        out.shape.c += src.shape.c;
        out.rf.rf_h = std::max(out.rf.rf_h, src.rf.rf_h);
        out.rf.rf_w = std::max(out.rf.rf_w, src.rf.rf_w);
      }
    } else if (layer.kind == "conv") {
      // plain convolution: out_channels, k, stride (default 1), dilation
      // (default 1), pad (default same)
      const NodeInfo& src = in(layer);
      const int out_c = layer.attr("out_channels");
      const int k = layer.attr("k");
      const int stride = layer.attrs.count("stride") ? layer.attrs.at("stride") : 1;
      const int dil = layer.attrs.count("dilation") ? layer.attrs.at("dilation") : 1;
      const int keff = (k - 1) * dil + 1;
      const int pad = layer.attrs.count("pad") ? layer.attrs.at("pad") : (keff - 1) / 2;
      if (out_c < 1 || k < 1 || stride < 1 || dil < 1 || pad < 0)
        fail_invalid("graph: conv '", layer.name, "' has bad geometry");
      const int oh = (src.shape.h + 2 * pad - keff) / stride + 1;
      const int ow = (src.shape.w + 2 * pad - keff) / stride + 1;
      if (oh < 1 || ow < 1) fail_invalid("graph: conv '", layer.name, "' output collapses");
      out.shape = Dims4{src.shape.n, out_c, oh, ow};
      const ConvShape conv{out_c, src.shape.c, k, k};
      lc.params = conv.params();
      const std::int64_t pos = static_cast<std::int64_t>(out.shape.n) * out.shape.h * out.shape.w;
      lc.flops = conv.params() * pos;
      macs2 = 2 * conv.weight_macs() * pos;
      out.rf = grow(src.rf, keff, keff, stride, stride);
    } else if (layer.kind == "pointwise-classifier") {
      const NodeInfo& src = in(layer);
      const int classes = layer.attr("classes");
      if (classes < 1) fail_invalid("graph: classifier '", layer.name, "' needs classes >= 1");
      out.shape = Dims4{src.shape.n, classes, src.shape.h, src.shape.w};
      const ConvShape conv{classes, src.shape.c, 1, 1};
      lc.params = conv.params();
      const std::int64_t pos = static_cast<std::int64_t>(out.shape.n) * out.shape.h * out.shape.w;
      lc.flops = conv.params() * pos;
      macs2 = 2 * conv.weight_macs() * pos;
      out.rf = src.rf;
    } else if (layer.kind == "bilinear-up") {
      const NodeInfo& src = in(layer);
      const int factor = layer.attr("factor");
      if (factor < 1) fail_invalid("graph: bilinear-up '", layer.name, "' needs factor >= 1");
      out.shape = Dims4{src.shape.n, src.shape.c, src.shape.h * factor, src.shape.w * factor};
      // 4 multiply-adds per output element; no parameters.
      const std::int64_t elems = out.shape.numel();
      lc.flops = 4 * elems;
      macs2 = 8 * elems;
      out.rf = src.rf;
      out.rf.rf_h += out.rf.jump_h;  // the 2x2 interpolation stencil
      out.rf.rf_w += out.rf.jump_w;
      out.rf.jump_h /= factor;
      out.rf.jump_w /= factor;
    } else {
      fail_invalid("graph: layer '", layer.name, "' has unknown kind '", layer.kind, "'");
    }
    lc.out_shape = out.shape;
    lc.receptive_field = rf_pair(out.rf);
    nodes[layer.name] = out;
    if (flops_2mac) *flops_2mac += macs2;
    return lc;
  }
};

}  // namespace

CostReport analyze_graph(const GraphSpec& spec, const Dims4& input_dims) {
  if (!spec.layers.empty() &&
      (input_dims.n < 1 || input_dims.c < 1 || input_dims.h < 1 || input_dims.w < 1))
    fail_invalid("analyze_graph: bad input dims ", input_dims.str());
  GraphWalk walk(spec, input_dims);
  CostReport report;
  for (const auto& layer : spec.layers) {
    report.layers.push_back(walk.analyze(layer, &report.total_flops_2mac, nullptr));
    const LayerCost& lc = report.layers.back();
    report.total_params += lc.params;
    report.total_params_aux += lc.params_aux;
    report.total_flops += lc.flops;
  }
  return report;
}

std::vector<LayerRf> receptive_field_report(const GraphSpec& spec) {
  // Shapes are irrelevant for the receptive-field recursion; a dummy
  // resolution keeps the shared walk's shape checks satisfied.
  int max_down = 1;
  for (const auto& layer : spec.layers)
    max_down *= layer.kind == "seq-dw-conv" ? 4 : 2;
  max_down = std::min(max_down, 1 << 12);
  Dims4 dummy{1, 3, max_down * 8, max_down * 8};
  GraphWalk walk(spec, dummy);
  std::vector<LayerRf> rows;
  for (const auto& layer : spec.layers) {
    LayerRf row;
    row.name = layer.name;
    row.kind = layer.kind;
    std::vector<BranchRect> rects;
    const LayerCost lc = walk.analyze(layer, nullptr, &rects);
    row.rf = lc.receptive_field;
    row.branch_rects = std::move(rects);
    rows.push_back(std::move(row));
  }
  return rows;
}

// --- JSON ------------------------------------------------------------------------

std::string cost_report_to_json(const CostReport& report) {
  nlohmann::json j;
  j["layers"] = nlohmann::json::array();
  for (const auto& lc : report.layers) {
    nlohmann::json l;
    l["name"] = lc.name;
    l["kind"] = lc.kind;
    l["params"] = lc.params;
    l["params_aux"] = lc.params_aux;
    l["flops"] = lc.flops;
    l["out_shape"] = {lc.out_shape.n, lc.out_shape.c, lc.out_shape.h, lc.out_shape.w};
    l["rf"] = {lc.receptive_field.first, lc.receptive_field.second};
    j["layers"].push_back(std::move(l));
  }
  j["total_params"] = report.total_params;
  j["total_params_aux"] = report.total_params_aux;
  j["total_flops"] = report.total_flops;
  return j.dump(2) + "\n";
}

CostReport cost_report_from_json(const std::string& text) {
  CostReport report;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    for (const auto& l : j.at("layers")) {
      LayerCost lc;
      lc.name = l.at("name").get<std::string>();
      lc.kind = l.at("kind").get<std::string>();
      lc.params = l.at("params").get<std::int64_t>();
      lc.params_aux = l.at("params_aux").get<std::int64_t>();
      lc.flops = l.at("flops").get<std::int64_t>();
      const auto& s = l.at("out_shape");
      lc.out_shape = Dims4{s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>(),
                           s.at(3).get<int>()};
      const auto& rf = l.at("rf");
      lc.receptive_field = {rf.at(0).get<int>(), rf.at(1).get<int>()};
      report.layers.push_back(std::move(lc));
    }
    report.total_params = j.at("total_params").get<std::int64_t>();
    report.total_params_aux = j.at("total_params_aux").get<std::int64_t>();
    report.total_flops = j.at("total_flops").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail_io("cost report JSON: ", e.what());
  }
  return report;
}

}  // namespace eadnet
