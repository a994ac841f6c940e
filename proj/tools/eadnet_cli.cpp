#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "eadnet/cost_model.hpp"
#include "eadnet/gradcheck.hpp"
#include "eadnet/netpbm.hpp"
#include "eadnet/rf_verify.hpp"
#include "eadnet/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitVerify = 3;

struct ModelOptions {
  int classes = 19;
  std::vector<int> channels{16, 64, 128};
  int n1 = -1;  // -1: take from the dr schedule
  int n2 = -1;
  std::vector<int> dr2;
  std::vector<int> dr3;
};

void add_model_flags(CLI::App* cmd, ModelOptions& opt) {
  cmd->add_option("--classes", opt.classes, "number of output classes")->capture_default_str();
  cmd->add_option("--channels", opt.channels, "stage channels c1,c2,c3")
      ->delimiter(',')
      ->expected(3);
  cmd->add_option("--n1", opt.n1, "MMRFC blocks after the second downsample");
  cmd->add_option("--n2", opt.n2, "MMRFC blocks after the third downsample");
  cmd->add_option("--dr2", opt.dr2, "stage 2 dilation schedule (comma separated)")->delimiter(',');
  cmd->add_option("--dr3", opt.dr3, "stage 3 dilation schedule (comma separated)")->delimiter(',');
}

eadnet::EadnetConfig make_config(const ModelOptions& opt) {
  eadnet::EadnetConfig cfg;
  cfg.num_classes = opt.classes;
  cfg.stage_channels = {opt.channels.at(0), opt.channels.at(1), opt.channels.at(2)};
  if (!opt.dr2.empty()) cfg.dr_stage2 = opt.dr2;
  else if (opt.n1 >= 0) cfg.dr_stage2 = eadnet::default_dr_schedule(opt.n1);
  if (!opt.dr3.empty()) cfg.dr_stage3 = opt.dr3;
  else if (opt.n2 >= 0) cfg.dr_stage3 = eadnet::default_dr_schedule(opt.n2);
  if (opt.n1 >= 0 && cfg.n1() != opt.n1)
    eadnet::fail_invalid("--n1 disagrees with the --dr2 schedule length");
  if (opt.n2 >= 0 && cfg.n2() != opt.n2)
    eadnet::fail_invalid("--n2 disagrees with the --dr3 schedule length");
  eadnet::validate(cfg);
  return cfg;
}

eadnet::Dims4 parse_input_size(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos)
    eadnet::fail_invalid("--input-size expects HxW, got '", text, "'");
  try {
    const int h = std::stoi(text.substr(0, x));
    const int w = std::stoi(text.substr(x + 1));
    if (h < 1 || w < 1) throw std::invalid_argument("non-positive");
    return eadnet::Dims4{1, 3, h, w};
  } catch (const std::exception&) {
    eadnet::fail_invalid("--input-size expects HxW, got '", text, "'");
  }
}

std::string human_count(std::int64_t v) {
  std::ostringstream os;
  if (v >= 1000000000) os << std::fixed << std::setprecision(2) << v / 1e9 << "G";
  else if (v >= 1000000) os << std::fixed << std::setprecision(2) << v / 1e6 << "M";
  else os << v;
  return os.str();
}

std::string shape_str(const eadnet::Dims4& d) {
  std::ostringstream os;
  os << d.n << 'x' << d.c << 'x' << d.h << 'x' << d.w;
  return os.str();
}

// Replicate-pad on the bottom/right up to the next multiple of 8.
eadnet::Tensor pad_to_multiple8(const eadnet::Tensor& img) {
  const int h = (img.dims.h + 7) / 8 * 8;
  const int w = (img.dims.w + 7) / 8 * 8;
  if (h == img.dims.h && w == img.dims.w) return img;
  eadnet::Tensor out(eadnet::Dims4{img.dims.n, img.dims.c, h, w});
  for (int n = 0; n < img.dims.n; ++n)
    for (int c = 0; c < img.dims.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out.at(n, c, y, x) =
              img.at(n, c, std::min(y, img.dims.h - 1), std::min(x, img.dims.w - 1));
  return out;
}

int cmd_summarize(const ModelOptions& mopt, const std::string& input_size,
                  const std::string& json_path) {
  const eadnet::EadnetConfig cfg = make_config(mopt);
  eadnet::ParamStore store;
  const eadnet::EadnetModel model = eadnet::EadnetModel::build(cfg, store);
  const eadnet::Dims4 in = parse_input_size(input_size);
  const eadnet::CostReport report = eadnet::analyze_graph(model.graph(), in);

  std::cout << std::left << std::setw(14) << "layer" << std::setw(22) << "kind" << std::setw(18)
            << "out shape" << std::setw(12) << "params" << std::setw(12) << "aux" << "flops\n";
  for (const auto& lc : report.layers) {
    std::cout << std::left << std::setw(14) << lc.name << std::setw(22) << lc.kind << std::setw(18)
              << shape_str(lc.out_shape) << std::setw(12) << lc.params << std::setw(12)
              << lc.params_aux << lc.flops << "\n";
  }
  std::cout << "total conv params: " << report.total_params << " ("
            << human_count(report.total_params) << ")\n"
            << "total aux params:  " << report.total_params_aux << "\n"
            << "total flops:       " << report.total_flops << " ("
            << human_count(report.total_flops) << ", params x positions)\n"
            << "total flops (2xMAC convention): " << report.total_flops_2mac << " ("
            << human_count(report.total_flops_2mac) << ")\n";
  if (!json_path.empty()) {
    std::ofstream f(json_path);
    if (!f) eadnet::fail_io("cannot open '", json_path, "' for writing");
    f << eadnet::cost_report_to_json(report);
  }
  return kExitOk;
}

int cmd_analyze(const ModelOptions& mopt, const std::string& input_size,
                const std::string& out_path) {
  const eadnet::EadnetConfig cfg = make_config(mopt);
  eadnet::ParamStore store;
  const eadnet::EadnetModel model = eadnet::EadnetModel::build(cfg, store);
  const eadnet::CostReport report =
      eadnet::analyze_graph(model.graph(), parse_input_size(input_size));
  const std::string json = eadnet::cost_report_to_json(report);
  if (out_path.empty()) {
    std::cout << json;
  } else {
    std::ofstream f(out_path);
    if (!f) eadnet::fail_io("cannot open '", out_path, "' for writing");
    f << json;
  }
  return kExitOk;
}

int cmd_rf_report(const ModelOptions& mopt, bool verify) {
  const eadnet::EadnetConfig cfg = make_config(mopt);
  eadnet::ParamStore store;
  const eadnet::EadnetModel model = eadnet::EadnetModel::build(cfg, store);
  const auto rows = eadnet::receptive_field_report(model.graph());
  std::cout << std::left << std::setw(14) << "layer" << std::setw(22) << "kind"
            << "receptive field (h x w)\n";
  for (const auto& row : rows) {
    std::cout << std::left << std::setw(14) << row.name << std::setw(22) << row.kind << row.rf.first
              << " x " << row.rf.second << "\n";
    for (const auto& br : row.branch_rects)
      std::cout << "    branch " << br.branch << ": feature " << br.feature.first << " x "
                << br.feature.second << ", image " << br.image.first << " x " << br.image.second
                << "\n";
  }
  if (!verify) return kExitOk;

  bool all_ok = true;
  for (const auto& row : rows) {
    if (row.branch_rects.empty()) continue;
    const auto* layer = [&]() -> const eadnet::LayerSpec* {
      for (const auto& l : model.graph().layers)
        if (l.name == row.name) return &l;
      return nullptr;
    }();
    const int dr = layer->attr("dr");
    for (const auto& br : row.branch_rects) {
      const auto spec = eadnet::mmrfc_branch(br.branch, dr);
      const auto got = eadnet::empirical_branch_footprint(spec);
      const bool ok = got == br.feature;
      all_ok = all_ok && ok;
      std::cout << row.name << " branch " << br.branch << ": analytic " << br.feature.first << "x"
                << br.feature.second << " empirical " << got.first << "x" << got.second
                << (ok ? "  == ok" : "  MISMATCH") << "\n";
    }
  }
  std::cout << (all_ok ? "verify: analytic == empirical for every branch\n"
                       : "verify: FAILED\n");
  return all_ok ? kExitOk : kExitVerify;
}

int cmd_infer(const ModelOptions& mopt, const std::string& weights, const std::string& input,
              const std::string& output, const std::string& labels_out,
              const std::string& palette_path, bool pad) {
  const eadnet::EadnetConfig cfg = make_config(mopt);
  eadnet::ParamStore store;
  const eadnet::EadnetModel model = eadnet::EadnetModel::build(cfg, store);
  eadnet::load_weights_into(store, weights);
  eadnet::Tensor img = eadnet::load_ppm(input);
  const int orig_h = img.dims.h, orig_w = img.dims.w;
  if (img.dims.h % 8 != 0 || img.dims.w % 8 != 0) {
    if (!pad)
      eadnet::fail_invalid("input is ", orig_h, "x", orig_w,
                           ", not divisible by 8; rerun with --pad to pad and crop");
    img = pad_to_multiple8(img);
  }
  const eadnet::Tensor logits = model.infer(store, img);
  eadnet::LabelMap pred = eadnet::argmax_channels(logits);
  if (pred.h != orig_h || pred.w != orig_w) {
    eadnet::LabelMap cropped(1, orig_h, orig_w);
    for (int y = 0; y < orig_h; ++y)
      for (int x = 0; x < orig_w; ++x) cropped.at(0, y, x) = pred.at(0, y, x);
    pred = std::move(cropped);
  }
  const eadnet::Palette palette = palette_path.empty()
                                      ? eadnet::default_palette(cfg.num_classes)
                                      : eadnet::load_palette(palette_path, cfg.num_classes);
  eadnet::write_label_ppm(output, pred, palette);
  if (!labels_out.empty()) eadnet::write_pgm_labels(labels_out, pred);
  return kExitOk;
}

int cmd_train(const ModelOptions& mopt, const std::string& data_dir, bool synthetic, int count,
              int size, unsigned seed, int iters, int batch, double base_lr, double weight_decay,
              const std::string& weights_out, const std::string& log_path, bool report_miou) {
  const eadnet::EadnetConfig cfg = make_config(mopt);
  eadnet::ParamStore store;
  const eadnet::EadnetModel model = eadnet::EadnetModel::build(cfg, store, seed);

  std::vector<eadnet::LabeledSample> data;
  if (synthetic) {
    data = eadnet::synth_dataset(seed, count, size, cfg.num_classes);
  } else {
    if (data_dir.empty())
      eadnet::fail_invalid("train needs --synthetic or --data <dir>");
    namespace fs = std::filesystem;
    std::vector<fs::path> images;
    for (const auto& entry : fs::directory_iterator(data_dir))
      if (entry.path().extension() == ".ppm") images.push_back(entry.path());
    std::sort(images.begin(), images.end());
    for (const auto& img_path : images) {
      fs::path label_path = img_path;
      label_path.replace_extension(".pgm");
      if (!fs::exists(label_path))
        eadnet::fail_io("no label map '", label_path.string(), "' for '", img_path.string(), "'");
      eadnet::LabeledSample s;
      s.image = eadnet::load_ppm(img_path.string());
      s.labels = eadnet::load_pgm_labels(label_path.string());
      data.push_back(std::move(s));
    }
    if (data.empty()) eadnet::fail_io("no .ppm images found in '", data_dir, "'");
  }

  eadnet::TrainerConfig tcfg;
  tcfg.iters = iters;
  tcfg.batch = batch;
  tcfg.base_lr = base_lr;
  tcfg.weight_decay = weight_decay;
  tcfg.log_path = log_path;
  const eadnet::TrainResult result = eadnet::train_model(model, store, data, tcfg);
  if (!result.log.empty())
    std::cout << "iter 0: lr " << result.log.front().lr << " loss " << result.log.front().loss
              << "\nfinal: lr " << result.log.back().lr << " loss " << result.log.back().loss
              << "\n";
  if (!weights_out.empty()) eadnet::save_weights(store, weights_out);
  if (report_miou) {
    const auto train_miou = eadnet::evaluate_model(model, store, data);
    std::cout << "training-set mIoU: " << train_miou.miou << "\n";
    if (synthetic) {
      const auto held = eadnet::synth_dataset(seed + 1000003, std::max(8, count / 4), size,
                                              cfg.num_classes);
      const auto held_miou = eadnet::evaluate_model(model, store, held);
      std::cout << "held-out mIoU:     " << held_miou.miou << "\n";
    }
  }
  return kExitOk;
}

int cmd_gradcheck(const std::string& op, unsigned seed, int instances, const std::string& fault) {
  const auto results = eadnet::run_gradcheck(seed, instances, op, fault);
  bool all_pass = true;
  std::cout << std::left << std::setw(18) << "op" << std::setw(8) << "cases" << std::setw(14)
            << "max rel err" << "status\n";
  for (const auto& r : results) {
    std::cout << std::left << std::setw(18) << r.op << std::setw(8) << r.cases << std::setw(14)
              << std::scientific << std::setprecision(3) << r.max_rel_err
              << (r.pass ? "pass" : "FAIL") << "\n";
    all_pass = all_pass && r.pass;
  }
  if (!all_pass) {
    for (const auto& r : results)
      if (!r.pass) std::cerr << "gradcheck failed for op '" << r.op << "'\n";
    return kExitVerify;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EADNet segmentation engine and analytical cost model"};
  app.require_subcommand(1);

  auto* summarize = app.add_subcommand("summarize", "per-layer parameter and FLOP table");
  ModelOptions sum_opt;
  add_model_flags(summarize, sum_opt);
  std::string sum_size = "1024x2048", sum_json;
  summarize->add_option("--input-size", sum_size, "input resolution HxW")->capture_default_str();
  summarize->add_option("--json", sum_json, "also write the JSON cost report here");

  auto* analyze = app.add_subcommand("analyze", "JSON cost report");
  ModelOptions ana_opt;
  add_model_flags(analyze, ana_opt);
  std::string ana_size = "1024x2048", ana_out;
  analyze->add_option("--input-size", ana_size, "input resolution HxW")->capture_default_str();
  analyze->add_option("--out", ana_out, "output path (default stdout)");

  auto* rf = app.add_subcommand("rf-report", "per-layer receptive fields");
  ModelOptions rf_opt;
  add_model_flags(rf, rf_opt);
  bool rf_verify = false;
  rf->add_flag("--verify", rf_verify, "check analytic rectangles against impulse footprints");

  auto* infer = app.add_subcommand("infer", "segment one PPM image");
  ModelOptions inf_opt;
  add_model_flags(infer, inf_opt);
  std::string inf_weights, inf_input, inf_output, inf_labels, inf_palette;
  bool inf_pad = false;
  infer->add_option("--weights", inf_weights, "weight file")->required();
  infer->add_option("--input", inf_input, "input PPM image")->required();
  infer->add_option("--output", inf_output, "colorized PPM output")->required();
  infer->add_option("--labels-out", inf_labels, "raw label PGM output");
  infer->add_option("--palette", inf_palette, "palette file (class r g b per line)");
  infer->add_flag("--pad", inf_pad, "pad to a multiple of 8 and crop the result");

  auto* train = app.add_subcommand("train", "train on a directory or synthetic data");
  ModelOptions tr_opt;
  add_model_flags(train, tr_opt);
  std::string tr_data, tr_weights = "eadnet.weights", tr_log;
  bool tr_synth = false, tr_miou = false;
  int tr_iters = 2000, tr_batch = 4, tr_count = 64, tr_size = 64;
  unsigned tr_seed = 42;
  double tr_lr = 5e-4, tr_decay = 0.0;
  train->add_option("--data", tr_data, "directory of paired .ppm/.pgm files");
  train->add_flag("--synthetic", tr_synth, "train on the generated shape dataset");
  train->add_option("--count", tr_count, "synthetic sample count")->capture_default_str();
  train->add_option("--size", tr_size, "synthetic image size")->capture_default_str();
  train->add_option("--iters", tr_iters, "training iterations")->capture_default_str();
  train->add_option("--batch", tr_batch, "batch size")->capture_default_str();
  train->add_option("--base-lr", tr_lr, "base learning rate")->capture_default_str();
  train->add_option("--weight-decay", tr_decay, "L2 penalty")->capture_default_str();
  train->add_option("--seed", tr_seed, "seed for weights and data")->capture_default_str();
  train->add_option("--weights-out", tr_weights, "weight file to write")->capture_default_str();
  train->add_option("--log", tr_log, "CSV loss log (iter,lr,loss)");
  train->add_flag("--miou", tr_miou, "report training-set (and held-out) mIoU afterwards");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_op, gc_fault;
  unsigned gc_seed = 7;
  int gc_instances = 20;
  grad->add_option("--op", gc_op, "check a single op");
  grad->add_option("--seed", gc_seed, "random seed")->capture_default_str();
  grad->add_option("--instances", gc_instances, "instances per op")->capture_default_str();
  grad->add_option("--inject-fault", gc_fault,
                   "perturb this op's analytic gradient (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (summarize->parsed()) return cmd_summarize(sum_opt, sum_size, sum_json);
    if (analyze->parsed()) return cmd_analyze(ana_opt, ana_size, ana_out);
    if (rf->parsed()) return cmd_rf_report(rf_opt, rf_verify);
    if (infer->parsed())
      return cmd_infer(inf_opt, inf_weights, inf_input, inf_output, inf_labels, inf_palette,
                       inf_pad);
    if (train->parsed())
      return cmd_train(tr_opt, tr_data, tr_synth, tr_count, tr_size, tr_seed, tr_iters, tr_batch,
                       tr_lr, tr_decay, tr_weights, tr_log, tr_miou);
    if (grad->parsed()) return cmd_gradcheck(gc_op, gc_seed, gc_instances, gc_fault);
  } catch (const eadnet::io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
