#include "eadnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "eadnet/mmrfc.hpp"
#include "eadnet/random.hpp"

namespace eadnet {

namespace {

double rel_err(double a, double b) {
  const double m = std::max(std::fabs(a), std::fabs(b));
  if (m < 1e-7) return 0.0;
  return std::fabs(a - b) / m;
}

Tensor64 random_tensor(RandomStream& rng, Dims4 d, double lo = -1.0, double hi = 1.0) {
  Tensor64 t(d);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Values away from zero (prelu kinks).
Tensor64 random_tensor_off_zero(RandomStream& rng, Dims4 d) {
  Tensor64 t(d);
  for (auto& v : t.data) {
    const double mag = 0.05 + 0.95 * rng.uniform();
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Shuffled evenly spaced values: every pairwise gap stays well above the
// finite-difference step, keeping max-pool selections stable.
Tensor64 distinct_tensor(RandomStream& rng, Dims4 d) {
  Tensor64 t(d);
  const std::int64_t n = d.numel();
  for (std::int64_t i = 0; i < n; ++i)
    t.data[static_cast<std::size_t>(i)] =
        -1.0 + 2.0 * static_cast<double>(i) / std::max<std::int64_t>(1, n - 1);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const int j = rng.uniform_int(static_cast<int>(i) + 1);
    std::swap(t.data[static_cast<std::size_t>(i)], t.data[static_cast<std::size_t>(j)]);
  }
  return t;
}

using LossBuilder = std::function<VarId(Tape64&, const std::vector<VarId>&)>;

// Analytic gradients vs central differences for one instance; returns the
// worst relative error over every element of every input.
double check_instance(const LossBuilder& build, const std::vector<Tensor64>& inputs,
                      bool inject_fault) {
  const double h = kGradCheckStep;

  Tape64 tape;
  std::vector<VarId> ids;
  for (const auto& in : inputs) ids.push_back(op_input(tape, in, /*needs_grad=*/true));
  const VarId loss = build(tape, ids);
  if (tape.value(loss).numel() != 1) fail_invalid("gradcheck: loss must be scalar");
  tape.backward(loss);
  std::vector<Tensor64> analytic;
  for (VarId id : ids) analytic.push_back(tape.grad(id));
  if (inject_fault && !analytic.empty() && !analytic[0].data.empty())
    analytic[0].data[0] += 1.0 + std::fabs(analytic[0].data[0]);

  auto eval = [&](const std::vector<Tensor64>& ins) {
    Tape64 t;
    std::vector<VarId> vs;
    for (const auto& in : ins) vs.push_back(op_input(t, in, false));
    return t.value(build(t, vs)).data[0];
  };

  double worst = 0.0;
  std::vector<Tensor64> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t j = 0; j < probe[k].data.size(); ++j) {
      const double orig = probe[k].data[j];
      probe[k].data[j] = orig + h;
      const double up = eval(probe);
      probe[k].data[j] = orig - h;
      const double down = eval(probe);
      probe[k].data[j] = orig;
      const double fd = (up - down) / (2.0 * h);
      worst = std::max(worst, rel_err(analytic[k].data[j], fd));
    }
  }
  return worst;
}

// --- per-op instance generators ------------------------------------------------

double check_conv2d(RandomStream& rng, int instance, bool fault) {
  static constexpr int kernels[4][2] = {{1, 1}, {3, 1}, {1, 3}, {3, 3}};
  static constexpr int dils[5] = {1, 2, 6, 12, 24};
  ConvParams p;
  p.kh = kernels[instance % 4][0];
  p.kw = kernels[instance % 4][1];
  const int d = dils[(instance / 4) % 5];
  p.dh = p.kh > 1 ? d : 1;
  p.dw = p.kw > 1 ? d : 1;
  p.sh = p.sw = (instance % 2) + 1;
  const bool depthwise = (instance / 2) % 2 == 1;

  const int ext_h = (p.kh - 1) * p.dh + 1;
  const int ext_w = (p.kw - 1) * p.dw + 1;
  auto extent = [&rng](int ext, int* pad) {
    if (ext > 9) {  // large dilations: lean on padding to keep tensors small
      *pad = (ext - 1) / 2;
      return 1 + rng.uniform_int(4);
    }
    *pad = rng.uniform_int(ext / 2 + 1);
    return std::max(1, ext - 2 * *pad + rng.uniform_int(4));
  };
  const int h = extent(ext_h, &p.ph);
  const int w = extent(ext_w, &p.pw);

  int cin, cout;
  if (depthwise) {
    cin = cout = 1 + rng.uniform_int(3);
    p.groups = cin;
  } else {
    cin = 1 + rng.uniform_int(3);
    cout = 1 + rng.uniform_int(3);
    p.groups = 1;
  }
  const Tensor64 x = random_tensor(rng, Dims4{1 + instance % 2, cin, h, w});
  const Tensor64 wgt = random_tensor(rng, Dims4{cout, cin / p.groups, p.kh, p.kw});
  const Tensor64 bias = random_tensor(rng, Dims4{1, cout, 1, 1});
  const Dims4 od = conv_output_dims(x.dims, wgt.dims, p);
  Tensor64 u = random_tensor(rng, od);
  LossBuilder build = [p, u](Tape64& t, const std::vector<VarId>& in) {
    return op_inner(t, op_conv2d(t, in[0], in[1], in[2], p), u);
  };
  return check_instance(build, {x, wgt, bias}, fault);
}

double check_prelu(RandomStream& rng, int instance, bool fault) {
  const int c = 1 + rng.uniform_int(3);
  const Tensor64 x = random_tensor_off_zero(rng, Dims4{1 + instance % 2, c, 3, 4});
  const Tensor64 slope = random_tensor(rng, Dims4{1, c, 1, 1}, -0.6, 0.6);
  Tensor64 u = random_tensor(rng, x.dims);
  LossBuilder build = [u](Tape64& t, const std::vector<VarId>& in) {
    return op_inner(t, op_prelu(t, in[0], in[1]), u);
  };
  return check_instance(build, {x, slope}, fault);
}

double check_batchnorm_infer(RandomStream& rng, int instance, bool fault) {
  const int c = 1 + rng.uniform_int(3);
  const Tensor64 x = random_tensor(rng, Dims4{1 + instance % 2, c, 3, 3});
  const Tensor64 gamma = random_tensor(rng, Dims4{1, c, 1, 1}, 0.5, 1.5);
  const Tensor64 beta = random_tensor(rng, Dims4{1, c, 1, 1}, -0.5, 0.5);
  std::vector<double> mean(static_cast<std::size_t>(c)), var(static_cast<std::size_t>(c));
  for (auto& v : mean) v = rng.uniform(-0.5, 0.5);
  for (auto& v : var) v = rng.uniform(0.2, 1.5);
  Tensor64 u = random_tensor(rng, x.dims);
  LossBuilder build = [mean, var, u](Tape64& t, const std::vector<VarId>& in) {
    return op_inner(t, op_batchnorm_infer(t, in[0], in[1], in[2], mean, var, 1e-5), u);
  };
  return check_instance(build, {x, gamma, beta}, fault);
}

double check_batchnorm_train(RandomStream& rng, int instance, bool fault) {
  const int c = 1 + rng.uniform_int(2);
  const Tensor64 x = random_tensor(rng, Dims4{2, c, 3 + instance % 2, 4});
  const Tensor64 gamma = random_tensor(rng, Dims4{1, c, 1, 1}, 0.5, 1.5);
  const Tensor64 beta = random_tensor(rng, Dims4{1, c, 1, 1}, -0.5, 0.5);
  Tensor64 u = random_tensor(rng, x.dims);
  LossBuilder build = [u](Tape64& t, const std::vector<VarId>& in) {
    const VarId y = op_batchnorm_train<double>(t, in[0], in[1], in[2], 1e-5, 0.1, nullptr, nullptr);
    return op_inner(t, y, u);
  };
  return check_instance(build, {x, gamma, beta}, fault);
}

double check_concat(RandomStream& rng, int instance, bool fault) {
  const int n = 1 + instance % 2;
  const Tensor64 a = random_tensor(rng, Dims4{n, 1 + rng.uniform_int(2), 3, 5});
  const Tensor64 b = random_tensor(rng, Dims4{n, 1 + rng.uniform_int(3), 3, 5});
  const Tensor64 c = random_tensor(rng, Dims4{n, 1 + rng.uniform_int(2), 3, 5});
  Tensor64 u = random_tensor(rng, Dims4{n, a.dims.c + b.dims.c + c.dims.c, 3, 5});
  LossBuilder build = [u](Tape64& t, const std::vector<VarId>& in) {
    return op_inner(t, op_concat(t, in), u);
  };
  return check_instance(build, {a, b, c}, fault);
}

double check_maxpool(RandomStream& rng, int instance, bool fault) {
  const int h = 4 + 2 * (instance % 2), w = 4 + 2 * rng.uniform_int(2);
  const Tensor64 x = distinct_tensor(rng, Dims4{1, 1 + rng.uniform_int(2), h, w});
  Tensor64 u = random_tensor(rng, Dims4{x.dims.n, x.dims.c, h / 2, w / 2});
  LossBuilder build = [u](Tape64& t, const std::vector<VarId>& in) {
    return op_inner(t, op_maxpool2x2(t, in[0]), u);
  };
  return check_instance(build, {x}, fault);
}

double check_bilinear(RandomStream& rng, int instance, bool fault) {
  const Tensor64 x = random_tensor(rng, Dims4{1, 2, 4 + rng.uniform_int(3), 5 + rng.uniform_int(3)});
  const bool up = instance % 2 == 0;
  const int oh = up ? 2 * x.dims.h + 1 : 2 + rng.uniform_int(2);
  const int ow = up ? 2 * x.dims.w : 3;
  Tensor64 u = random_tensor(rng, Dims4{x.dims.n, x.dims.c, oh, ow});
  LossBuilder build = [oh, ow, u](Tape64& t, const std::vector<VarId>& in) {
    return op_inner(t, op_bilinear(t, in[0], oh, ow), u);
  };
  return check_instance(build, {x}, fault);
}

double check_softmax(RandomStream& rng, int instance, bool fault) {
  const Tensor64 x =
      random_tensor(rng, Dims4{1 + instance % 2, 2 + rng.uniform_int(3), 2, 3}, -2.0, 2.0);
  Tensor64 u = random_tensor(rng, x.dims);
  LossBuilder build = [u](Tape64& t, const std::vector<VarId>& in) {
    return op_inner(t, op_softmax(t, in[0]), u);
  };
  return check_instance(build, {x}, fault);
}

double check_cross_entropy(RandomStream& rng, int instance, bool fault) {
  const int k = 2 + rng.uniform_int(3);
  const Tensor64 x = random_tensor(rng, Dims4{1 + instance % 2, k, 3, 3}, -2.0, 2.0);
  LabelMap labels(x.dims.n, 3, 3);
  for (auto& l : labels.data)
    l = rng.uniform() < 0.2 ? kIgnoreLabel : static_cast<std::uint8_t>(rng.uniform_int(k));
  const Reduction red = instance % 2 == 0 ? Reduction::Mean : Reduction::Sum;
  LossBuilder build = [labels, red](Tape64& t, const std::vector<VarId>& in) {
    return op_cross_entropy(t, in[0], labels, kIgnoreLabel, red);
  };
  return check_instance(build, {x}, fault);
}

// Keeps every prelu input away from its kink so central differences stay
// valid: small weights, batchnorm betas offset well past gamma * |xhat|,
// and a bias offset on the conv feeding the mid-branch activation.
void margin_friendly_params(ParamStoreT<double>& store, RandomStream& rng) {
  for (const auto& name : store.names()) {
    auto& t = store.at(name).value;
    if (name.ends_with(".w")) {
      for (auto& v : t.data) v = rng.normal(0.0, 0.05);
    } else if (name.ends_with(".v.b")) {
      for (auto& v : t.data) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.55, 0.7);
    } else if (name.ends_with(".b")) {
      for (auto& v : t.data) v = rng.uniform(-0.1, 0.1);
    } else if (name.ends_with(".gamma")) {
      for (auto& v : t.data) v = rng.uniform(0.05, 0.08);
    } else if (name.ends_with(".beta")) {
      for (auto& v : t.data) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 0.7);
    } else if (name.ends_with(".slope")) {
      for (auto& v : t.data) v = rng.uniform(0.1, 0.4);
    }
  }
}

// Two stacked blocks, training-mode batchnorm, every parameter and the
// input checked by finite differences through the whole graph.
double check_mmrfc_graph(RandomStream& rng, int instance, bool fault) {
  ParamStore fstore;
  RandomStream init(77 + static_cast<unsigned>(instance));
  const MmrfcBlock b0 = MmrfcBlock::build({8, 1 + instance % 3}, fstore, "blk0", init);
  const MmrfcBlock b1 = MmrfcBlock::build({8, 1 + (instance + 1) % 3}, fstore, "blk1", init);
  ParamStoreT<double> store = to_double(fstore);
  margin_friendly_params(store, rng);
  const Tensor64 x = random_tensor(rng, Dims4{1, 8, 6, 6});
  Tensor64 u = random_tensor(rng, x.dims);

  // analytic pass (inference-mode batchnorm: the loss is then piecewise
  // linear along any single-scalar slice, so central differences are
  // exact away from prelu kinks; batch-statistics gradients have their
  // own dedicated check)
  store.zero_grads();
  Tape64 tape;
  StoreBindingT<double> binding(tape, store, true);
  const VarId xv = op_input(tape, x, true);
  VarId y = b0.forward(binding, xv, false);
  y = b1.forward(binding, y, false);
  const VarId loss = op_inner(tape, y, u);
  tape.backward(loss);
  binding.export_grads();
  Tensor64 gx = tape.grad(xv);
  if (fault && !gx.data.empty()) gx.data[0] += 1.0 + std::fabs(gx.data[0]);

  auto eval = [&](const Tensor64& input) {
    Tape64 t;
    StoreBindingT<double> b(t, store, false);
    const VarId iv = op_input(t, input, false);
    VarId out = b0.forward(b, iv, false);
    out = b1.forward(b, out, false);
    return t.value(op_inner(t, out, u)).data[0];
  };

  const double h = kGradCheckStep;
  const double base = eval(x);
  double worst = 0.0;
  // Second-difference kink detector: the loss is piecewise linear along
  // each probe line, so any |up + down - 2*base| beyond roundoff means
  // the +-h window straddles a prelu kink and the difference quotient
  // does not measure the derivative there.
  auto compare = [&](double analytic, double up, double down) {
    if (std::fabs(up + down - 2.0 * base) / (2.0 * h) > 1e-8 * std::max(1.0, std::fabs(analytic)))
      return;
    worst = std::max(worst, rel_err(analytic, (up - down) / (2.0 * h)));
  };
  Tensor64 probe = x;
  for (std::size_t j = 0; j < probe.data.size(); ++j) {
    const double orig = probe.data[j];
    probe.data[j] = orig + h;
    const double up = eval(probe);
    probe.data[j] = orig - h;
    const double down = eval(probe);
    probe.data[j] = orig;
    compare(gx.data[j], up, down);
  }
  for (const auto& name : store.names()) {
    auto& e = store.at(name);
    if (!e.trainable) continue;
    for (std::size_t j = 0; j < e.value.data.size(); ++j) {
      const double orig = e.value.data[j];
      e.value.data[j] = orig + h;
      const double up = eval(x);
      e.value.data[j] = orig - h;
      const double down = eval(x);
      e.value.data[j] = orig;
      compare(e.grad.data[j], up, down);
    }
  }
  return worst;
}

using OpCheck = double (*)(RandomStream&, int, bool);

struct OpEntry {
  const char* name;
  OpCheck fn;
};

constexpr OpEntry kOps[] = {
    {"conv2d", check_conv2d},
    {"prelu", check_prelu},
    {"batchnorm-infer", check_batchnorm_infer},
    {"batchnorm-train", check_batchnorm_train},
    {"concat", check_concat},
    {"maxpool", check_maxpool},
    {"bilinear", check_bilinear},
    {"softmax", check_softmax},
    {"cross-entropy", check_cross_entropy},
    {"mmrfc", check_mmrfc_graph},
};

}  // namespace

const std::vector<std::string>& gradcheck_ops() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& op : kOps) v.emplace_back(op.name);
    return v;
  }();
  return names;
}

std::vector<GradCheckResult> run_gradcheck(unsigned seed, int instances,
                                           const std::string& only_op,
                                           const std::string& fault_op) {
  if (instances < 1) fail_invalid("gradcheck: need at least one instance per op");
  bool matched = only_op.empty();
  std::vector<GradCheckResult> results;
  int op_index = 0;
  for (const auto& op : kOps) {
    ++op_index;
    if (!only_op.empty() && only_op != op.name) continue;
    matched = true;
    GradCheckResult r;
    r.op = op.name;
    r.cases = instances;
    for (int i = 0; i < r.cases; ++i) {
      RandomStream rng(seed + static_cast<unsigned>(op_index) * 1009 + static_cast<unsigned>(i));
      const bool fault = fault_op == op.name && i == 0;
      r.max_rel_err = std::max(r.max_rel_err, op.fn(rng, i, fault));
    }
    r.pass = r.max_rel_err < kGradCheckTolerance;
    results.push_back(std::move(r));
  }
  if (!matched) fail_invalid("gradcheck: unknown op '", only_op, "'");
  return results;
}

}  // namespace eadnet
