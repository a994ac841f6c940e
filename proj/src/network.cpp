#include "eadnet/network.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace eadnet {

void validate(const EadnetConfig& cfg) {
  if (cfg.num_classes < 1) fail_invalid("eadnet: num_classes must be positive");
  const auto [c1, c2, c3] = cfg.stage_channels;
  if (c1 <= 3) fail_invalid("eadnet: stage 1 channels must exceed the 3 input channels");
  if (c2 <= c1 || c3 <= c2)
    fail_invalid("eadnet: stage channels must increase, got (", c1, ",", c2, ",", c3, ")");
  if (c2 % 8 != 0 || c3 % 8 != 0)
    fail_invalid("eadnet: MMRFC stage channels must be multiples of 8, got (", c2, ",", c3, ")");
  if (c3 > 128) fail_invalid("eadnet: stage 3 channels capped at 128, got ", c3);
  for (int dr : cfg.dr_stage2)
    if (dr < 1 || dr > 6) fail_invalid("eadnet: stage 2 dilation ", dr, " outside [1, 6]");
  for (int dr : cfg.dr_stage3)
    if (dr < 1 || dr > 6) fail_invalid("eadnet: stage 3 dilation ", dr, " outside [1, 6]");
}

std::vector<int> default_dr_schedule(int n) {
  if (n < 0) fail_invalid("eadnet: negative block count");
  static constexpr int ramp[4] = {1, 2, 4, 6};
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = ramp[i % 4];
  return out;
}

int LayerSpec::attr(const std::string& key) const {
  auto it = attrs.find(key);
  if (it == attrs.end()) fail_invalid("layer '", name, "': missing attribute '", key, "'");
  return it->second;
}

void validate(const GraphSpec& spec) {
  std::unordered_set<std::string> seen;
  std::unordered_set<std::string> consumed;
  for (const auto& layer : spec.layers) {
    if (layer.name.empty() || layer.name == "input")
      fail_invalid("graph: bad layer name '", layer.name, "'");
    if (!seen.insert(layer.name).second)
      fail_invalid("graph: duplicate layer name '", layer.name, "'");
    if (layer.inputs.empty()) fail_invalid("graph: layer '", layer.name, "' has no inputs");
    for (const auto& in : layer.inputs) {
      if (in != "input" && seen.count(in) == 0)
        fail_invalid("graph: layer '", layer.name, "' references '", in,
                     "' which is not an earlier layer");
      consumed.insert(in);
    }
  }
  int outputs = 0;
  for (const auto& layer : spec.layers)
    if (consumed.count(layer.name) == 0) ++outputs;
  if (!spec.layers.empty() && outputs != 1)
    fail_invalid("graph: expected exactly one output layer, found ", outputs);
}

std::string graph_to_text(const GraphSpec& spec) {
  std::ostringstream os;
  os << "# eadnet graph v1\n";
  for (const auto& layer : spec.layers) {
    os << "layer name=" << layer.name << " kind=" << layer.kind << " inputs=";
    for (std::size_t i = 0; i < layer.inputs.size(); ++i) {
      if (i) os << ',';
      os << layer.inputs[i];
    }
    for (const auto& [k, v] : layer.attrs) os << ' ' << k << '=' << v;
    os << '\n';
  }
  return os.str();
}

GraphSpec graph_from_text(const std::string& text) {
  GraphSpec spec;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok) || tok[0] == '#') continue;
    if (tok != "layer") fail_io("graph text: line ", lineno, ": expected 'layer', got '", tok, "'");
    LayerSpec layer;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos)
        fail_io("graph text: line ", lineno, ": expected key=value, got '", tok, "'");
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      if (key == "name") {
        layer.name = val;
      } else if (key == "kind") {
        layer.kind = val;
      } else if (key == "inputs") {
        std::string item;
        std::istringstream vs(val);
        while (std::getline(vs, item, ','))
          if (!item.empty()) layer.inputs.push_back(item);
      } else {
        try {
          layer.attrs[key] = std::stoi(val);
        } catch (const std::exception&) {
          fail_io("graph text: line ", lineno, ": attribute '", key, "' is not an integer");
        }
      }
    }
    if (layer.name.empty() || layer.kind.empty())
      fail_io("graph text: line ", lineno, ": layer needs name and kind");
    spec.layers.push_back(std::move(layer));
  }
  validate(spec);
  return spec;
}

void save_graph(const GraphSpec& spec, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail_io("cannot open '", path, "' for writing");
  f << graph_to_text(spec);
  if (!f) fail_io("failed writing graph to '", path, "'");
}

GraphSpec load_graph(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail_io("cannot open '", path, "'");
  std::ostringstream os;
  os << f.rdbuf();
  return graph_from_text(os.str());
}

// --- model -------------------------------------------------------------------

namespace {

struct ConcatConvNames {
  std::string conv;
  std::string bn;
  std::string act;
};

void register_concat_conv(ParamStore& store, const std::string& name, int in_c, int out_c,
                          RandomStream& rng, std::vector<std::string>& conv_names) {
  register_conv(store, name + ".conv", out_c - in_c, in_c, 3, 3, rng);
  conv_names.push_back(name + ".conv.w");
  conv_names.push_back(name + ".conv.b");
  register_bn(store, name + ".bn", out_c);
  register_prelu(store, name + ".act", out_c);
}

void register_dw_stage(ParamStore& store, const std::string& name, int channels, RandomStream& rng,
                       std::vector<std::string>& conv_names) {
  register_conv(store, name + ".conv", channels, 1, 3, 3, rng);
  conv_names.push_back(name + ".conv.w");
  conv_names.push_back(name + ".conv.b");
  register_bn(store, name + ".bn", channels);
  register_prelu(store, name + ".act", channels);
}

template <typename T>
VarId concat_conv_forward(StoreBindingT<T>& b, const std::string& name, VarId x, bool training) {
  ConvParams p;
  p.kh = p.kw = 3;
  p.sh = p.sw = 2;
  p.ph = p.pw = 1;
  const VarId conv = conv_layer(b, name + ".conv", x, p);
  const VarId pool = op_maxpool2x2(b.tape(), x);
  VarId out = op_concat(b.tape(), std::vector<VarId>{conv, pool});
  out = bn_layer(b, name + ".bn", out, training);
  return prelu_layer(b, name + ".act", out);
}

template <typename T>
VarId dw_stage_forward(StoreBindingT<T>& b, const std::string& name, VarId x, int channels,
                       bool training) {
  ConvParams p;
  p.kh = p.kw = 3;
  p.sh = p.sw = 2;
  p.ph = p.pw = 1;
  p.groups = channels;
  VarId out = conv_layer(b, name + ".conv", x, p);
  out = bn_layer(b, name + ".bn", out, training);
  return prelu_layer(b, name + ".act", out);
}

}  // namespace

EadnetModel EadnetModel::build(const EadnetConfig& cfg, ParamStore& store, unsigned seed) {
  validate(cfg);
  EadnetModel m;
  m.cfg_ = cfg;
  RandomStream rng(seed);
  const auto [c1, c2, c3] = cfg.stage_channels;

  register_concat_conv(store, "cc1", 3, c1, rng, m.conv_names_);
  register_concat_conv(store, "cc2", c1, c2, rng, m.conv_names_);
  for (int i = 0; i < cfg.n1(); ++i) {
    MmrfcConfig bc{c2, cfg.dr_stage2[static_cast<std::size_t>(i)]};
    m.stage2_.push_back(MmrfcBlock::build(bc, store, "stage2.b" + std::to_string(i), rng));
    const auto& names = m.stage2_.back().conv_param_names();
    m.conv_names_.insert(m.conv_names_.end(), names.begin(), names.end());
  }
  register_concat_conv(store, "cc3", c2, c3, rng, m.conv_names_);
  for (int i = 0; i < cfg.n2(); ++i) {
    MmrfcConfig bc{c3, cfg.dr_stage3[static_cast<std::size_t>(i)]};
    m.stage3_.push_back(MmrfcBlock::build(bc, store, "stage3.b" + std::to_string(i), rng));
    const auto& names = m.stage3_.back().conv_param_names();
    m.conv_names_.insert(m.conv_names_.end(), names.begin(), names.end());
  }
  register_dw_stage(store, "tap1.dw1", c1, rng, m.conv_names_);
  register_dw_stage(store, "tap1.dw2", c1, rng, m.conv_names_);
  register_dw_stage(store, "tap2.dw1", c2, rng, m.conv_names_);
  register_conv(store, "classifier", cfg.num_classes, c1 + c2 + c3, 1, 1, rng);
  m.conv_names_.push_back("classifier.w");
  m.conv_names_.push_back("classifier.b");

  // Mirror the executable topology as a declarative spec.
  GraphSpec g;
  auto add = [&g](std::string name, std::string kind, std::vector<std::string> inputs,
                  std::map<std::string, int> attrs) {
    g.layers.push_back(LayerSpec{std::move(name), std::move(kind), std::move(inputs),
                                 std::move(attrs)});
  };
  add("cc1", "concat-conv", {"input"}, {{"out_channels", c1}});
  add("cc2", "concat-conv", {"cc1"}, {{"out_channels", c2}});
  std::string prev = "cc2";
  for (int i = 0; i < cfg.n1(); ++i) {
    const std::string name = "stage2.b" + std::to_string(i);
    add(name, "mmrfc", {prev}, {{"channels", c2}, {"dr", cfg.dr_stage2[static_cast<std::size_t>(i)]}});
    prev = name;
  }
  const std::string stage2_out = prev;
  add("cc3", "concat-conv", {stage2_out}, {{"out_channels", c3}});
  prev = "cc3";
  for (int i = 0; i < cfg.n2(); ++i) {
    const std::string name = "stage3.b" + std::to_string(i);
    add(name, "mmrfc", {prev}, {{"channels", c3}, {"dr", cfg.dr_stage3[static_cast<std::size_t>(i)]}});
    prev = name;
  }
  add("tap1", "seq-dw-conv", {"cc1"}, {{"channels", c1}});
  add("tap2", "dw-conv", {stage2_out}, {{"channels", c2}});
  add("head", "concat", {prev, "tap1", "tap2"}, {});
  add("classifier", "pointwise-classifier", {"head"}, {{"classes", cfg.num_classes}});
  add("upsample", "bilinear-up", {"classifier"}, {{"factor", 8}});
  validate(g);
  m.graph_ = std::move(g);
  return m;
}

template <typename T>
std::vector<std::pair<std::string, VarId>> EadnetModel::forward_trace(StoreBindingT<T>& binding,
                                                                      VarId input,
                                                                      bool training) const {
  TapeT<T>& tape = binding.tape();
  const Dims4 in = tape.value(input).dims;
  if (in.c != 3) fail_invalid("eadnet forward: input must have 3 channels, got ", in.str());
  if (in.h % 8 != 0 || in.w % 8 != 0)
    fail_invalid("eadnet forward: input resolution ", in.h, "x", in.w,
                 " not divisible by 8 (pad explicitly instead)");
  if (in.h < 8 || in.w < 8) fail_invalid("eadnet forward: input smaller than 8x8");

  std::vector<std::pair<std::string, VarId>> trace;
  auto emit = [&trace](const std::string& name, VarId id) {
    trace.emplace_back(name, id);
    return id;
  };

  const VarId cc1 = emit("cc1", concat_conv_forward(binding, "cc1", input, training));
  const VarId cc2 = emit("cc2", concat_conv_forward(binding, "cc2", cc1, training));
  VarId x = cc2;
  for (std::size_t i = 0; i < stage2_.size(); ++i)
    x = emit("stage2.b" + std::to_string(i), stage2_[i].forward(binding, x, training));
  const VarId stage2_out = x;
  const VarId cc3 = emit("cc3", concat_conv_forward(binding, "cc3", stage2_out, training));
  x = cc3;
  for (std::size_t i = 0; i < stage3_.size(); ++i)
    x = emit("stage3.b" + std::to_string(i), stage3_[i].forward(binding, x, training));

  VarId tap1 = dw_stage_forward(binding, "tap1.dw1", cc1, cfg_.stage_channels[0], training);
  tap1 = emit("tap1", dw_stage_forward(binding, "tap1.dw2", tap1, cfg_.stage_channels[0], training));
  const VarId tap2 =
      emit("tap2", dw_stage_forward(binding, "tap2.dw1", stage2_out, cfg_.stage_channels[1], training));

  const VarId head = emit("head", op_concat(tape, std::vector<VarId>{x, tap1, tap2}));
  ConvParams cls;  // 1x1
  const VarId scores = emit("classifier", conv_layer(binding, "classifier", head, cls));
  emit("upsample", op_bilinear(tape, scores, in.h, in.w));
  return trace;
}

template std::vector<std::pair<std::string, VarId>> EadnetModel::forward_trace<float>(
    StoreBindingT<float>&, VarId, bool) const;
template std::vector<std::pair<std::string, VarId>> EadnetModel::forward_trace<double>(
    StoreBindingT<double>&, VarId, bool) const;

Tensor EadnetModel::infer(const ParamStore& store, const Tensor& input) const {
  Tape tape;
  StoreBinding binding(tape, store);
  const VarId x = op_input(tape, input);
  const auto trace = forward_trace(binding, x, /*training=*/false);
  return tape.value(trace.back().second);
}

// --- weight files --------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'E', 'A', 'D', 'W'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) fail_io("weight file truncated reading ", what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_weights(const ParamStore& store, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail_io("cannot open '", path, "' for writing");
  f.write(kMagic, 4);
  put_u32(f, kVersion);
  put_u32(f, static_cast<std::uint32_t>(store.size()));
  for (const auto& name : store.names()) {
    const Tensor& t = store.at(name).value;
    put_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(f, 4);
    put_u32(f, static_cast<std::uint32_t>(t.dims.n));
    put_u32(f, static_cast<std::uint32_t>(t.dims.c));
    put_u32(f, static_cast<std::uint32_t>(t.dims.h));
    put_u32(f, static_cast<std::uint32_t>(t.dims.w));
    for (float v : t.data) put_u32(f, std::bit_cast<std::uint32_t>(v));
  }
  if (!f) fail_io("failed writing weights to '", path, "'");
}

ParamStore load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail_io("cannot open '", path, "'");
  char magic[4];
  if (!f.read(magic, 4)) fail_io("weight file truncated reading magic");
  if (std::memcmp(magic, kMagic, 4) != 0) fail_io("'", path, "' is not a weight file (bad magic)");
  const std::uint32_t version = get_u32(f, "version");
  if (version != kVersion) fail_io("unsupported weight file version ", version);
  const std::uint32_t count = get_u32(f, "tensor count");
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(f, "name length");
    if (name_len == 0 || name_len > 4096) fail_io("weight file: implausible name length ", name_len);
    std::string name(name_len, '\0');
    if (!f.read(name.data(), name_len)) fail_io("weight file truncated reading name");
    const std::uint32_t rank = get_u32(f, "rank");
    if (rank != 4) fail_io("weight file: tensor '", name, "' has unsupported rank ", rank);
    const int n = static_cast<int>(get_u32(f, "dims"));
    const int c = static_cast<int>(get_u32(f, "dims"));
    const int h = static_cast<int>(get_u32(f, "dims"));
    const int w = static_cast<int>(get_u32(f, "dims"));
    Tensor t(Dims4{n, c, h, w});
    for (auto& v : t.data) v = std::bit_cast<float>(get_u32(f, "payload"));
    store.add(name, std::move(t));
  }
  // Anything after the declared tensors is a malformed file.
  char extra;
  if (f.read(&extra, 1)) fail_io("weight file: trailing bytes after ", count, " tensors");
  return store;
}

void load_weights_into(ParamStore& store, const std::string& path) {
  ParamStore loaded = load_weights(path);
  for (const auto& name : store.names()) {
    if (!loaded.contains(name)) fail_io("weight file: missing parameter '", name, "'");
    const Tensor& src = loaded.at(name).value;
    ParamEntry& dst = store.at(name);
    if (!(src.dims == dst.value.dims))
      fail_io("weight file: parameter '", name, "' has dims ", src.dims.str(), ", expected ",
              dst.value.dims.str());
  }
  for (const auto& name : loaded.names())
    if (!store.contains(name)) fail_io("weight file: unknown parameter '", name, "'");
  for (const auto& name : store.names()) store.at(name).value = loaded.at(name).value;
}

}  // namespace eadnet
