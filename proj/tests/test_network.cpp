#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "eadnet/network.hpp"

using namespace eadnet;

namespace {

Tensor random_image(RandomStream& rng, int n, int h, int w) {
  Tensor t(Dims4{n, 3, h, w});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform());
  return t;
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("config validation") {
  EadnetConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  SUBCASE("stage channels must be multiples of 8 where blocks run") {
    cfg.stage_channels = {16, 60, 128};
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  }
  SUBCASE("stage 3 capped at 128") {
    cfg.stage_channels = {16, 64, 136};
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  }
  SUBCASE("dilations bounded by 6") {
    cfg.dr_stage2 = {1, 7};
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  }
  SUBCASE("channels must increase") {
    cfg.stage_channels = {16, 16, 128};
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  }
  CHECK(default_dr_schedule(6) == std::vector<int>{1, 2, 4, 6, 1, 2});
}

TEST_CASE("forward yields input-resolution logits; score map at 1/8") {
  EadnetConfig cfg;
  cfg.num_classes = 19;
  ParamStore store;
  const EadnetModel model = EadnetModel::build(cfg, store, 3);
  RandomStream rng(71);
  Tape tape;
  StoreBinding binding(tape, store);
  const VarId x = op_input(tape, random_image(rng, 1, 64, 128));
  const auto trace = model.forward_trace(binding, x, false);
  REQUIRE(trace.back().first == "upsample");
  CHECK(tape.value(trace.back().second).dims == Dims4{1, 19, 64, 128});
  for (const auto& [name, id] : trace) {
    if (name == "classifier") CHECK(tape.value(id).dims == Dims4{1, 19, 8, 16});
    if (name == "head") CHECK(tape.value(id).dims.c == 16 + 64 + 128);
    if (name == "tap1") CHECK(tape.value(id).dims == Dims4{1, 16, 8, 16});
    if (name == "tap2") CHECK(tape.value(id).dims == Dims4{1, 64, 8, 16});
  }
  // all finite under random weights
  for (float v : tape.value(trace.back().second).data) CHECK(std::isfinite(v));
}

TEST_CASE("default configuration lands in the parameter budget band") {
  ParamStore store;
  const EadnetModel model = EadnetModel::build(EadnetConfig{}, store);
  const std::int64_t conv_params = param_scalar_count(store, model.conv_param_names());
  CHECK(conv_params == 338335);
  CHECK(conv_params >= 300000);
  CHECK(conv_params <= 400000);
}

TEST_CASE("all-zero weights give all-zero logits and class-0 argmax") {
  EadnetConfig cfg;
  cfg.num_classes = 4;
  ParamStore store;
  const EadnetModel model = EadnetModel::build(cfg, store);
  store.zero_values();
  RandomStream rng(73);
  const Tensor logits = model.infer(store, random_image(rng, 1, 16, 16));
  for (float v : logits.data) CHECK(v == 0.0f);
  for (auto l : argmax_channels(logits).data) CHECK(l == 0);
}

TEST_CASE("identical samples in a batch produce identical outputs") {
  EadnetConfig cfg;
  cfg.num_classes = 5;
  ParamStore store;
  const EadnetModel model = EadnetModel::build(cfg, store, 9);
  RandomStream rng(79);
  const Tensor one = random_image(rng, 1, 16, 24);
  Tensor two(Dims4{2, 3, 16, 24});
  std::copy(one.data.begin(), one.data.end(), two.data.begin());
  std::copy(one.data.begin(), one.data.end(), two.data.begin() + one.data.size());
  const Tensor out = model.infer(store, two);
  const std::size_t half = out.data.size() / 2;
  for (std::size_t i = 0; i < half; ++i) CHECK(out.data[i] == out.data[half + i]);
}

TEST_CASE("resolutions not divisible by 8 are rejected") {
  ParamStore store;
  const EadnetModel model = EadnetModel::build(EadnetConfig{}, store);
  CHECK_THROWS_AS(model.infer(store, Tensor(Dims4{1, 3, 60, 64}, 0.1f)), std::invalid_argument);
  CHECK_THROWS_AS(model.infer(store, Tensor(Dims4{1, 3, 64, 63}, 0.1f)), std::invalid_argument);
  CHECK_THROWS_AS(model.infer(store, Tensor(Dims4{1, 4, 64, 64}, 0.1f)), std::invalid_argument);
}

TEST_CASE("weight files round trip bitwise") {
  EadnetConfig cfg;
  cfg.num_classes = 4;
  cfg.dr_stage2 = {1};
  cfg.dr_stage3 = {2};
  ParamStore store;
  EadnetModel::build(cfg, store, 21);
  const auto path = temp_file("eadnet_test_weights.bin");
  save_weights(store, path.string());

  SUBCASE("load_weights reproduces every tensor exactly") {
    const ParamStore loaded = load_weights(path.string());
    REQUIRE(loaded.size() == store.size());
    for (const auto& name : store.names()) {
      const Tensor& a = store.at(name).value;
      const Tensor& b = loaded.at(name).value;
      REQUIRE(a.dims == b.dims);
      for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
    }
  }
  SUBCASE("load_weights_into restores a zeroed store") {
    ParamStore store2;
    EadnetModel::build(cfg, store2, 99);
    load_weights_into(store2, path.string());
    for (const auto& name : store.names())
      for (std::size_t i = 0; i < store.at(name).value.data.size(); ++i)
        CHECK(store2.at(name).value.data[i] == store.at(name).value.data[i]);
  }
  SUBCASE("truncated file is rejected with no partial store") {
    const auto trunc = temp_file("eadnet_test_trunc.bin");
    std::filesystem::copy_file(path, trunc, std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(trunc, std::filesystem::file_size(trunc) / 2);
    CHECK_THROWS_AS(load_weights(trunc.string()), io_error);
  }
  SUBCASE("bad magic is rejected") {
    const auto bad = temp_file("eadnet_test_magic.bin");
    std::ofstream f(bad, std::ios::binary);
    f << "NOPE" << std::string(64, '\0');
    f.close();
    CHECK_THROWS_AS(load_weights(bad.string()), io_error);
  }
  SUBCASE("a renamed tensor surfaces as a missing parameter naming it") {
    ParamStore renamed;
    for (const auto& name : store.names()) {
      const std::string out = name == "classifier.b" ? "classifier.bias" : name;
      renamed.add(out, store.at(name).value, store.at(name).trainable);
    }
    const auto rpath = temp_file("eadnet_test_renamed.bin");
    save_weights(renamed, rpath.string());
    ParamStore store3;
    EadnetModel::build(cfg, store3, 7);
    try {
      load_weights_into(store3, rpath.string());
      FAIL("expected io_error");
    } catch (const io_error& e) {
      CHECK(std::string(e.what()).find("classifier.b") != std::string::npos);
    }
  }
  SUBCASE("dim mismatch against the model is rejected") {
    EadnetConfig other = cfg;
    other.num_classes = 7;
    ParamStore store4;
    EadnetModel::build(other, store4, 7);
    CHECK_THROWS_AS(load_weights_into(store4, path.string()), io_error);
  }
}

TEST_CASE("graph spec text round trip") {
  ParamStore store;
  const EadnetModel model = EadnetModel::build(EadnetConfig{}, store);
  const GraphSpec& g = model.graph();
  const std::string text = graph_to_text(g);
  const GraphSpec parsed = graph_from_text(text);
  REQUIRE(parsed.layers.size() == g.layers.size());
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    CHECK(parsed.layers[i].name == g.layers[i].name);
    CHECK(parsed.layers[i].kind == g.layers[i].kind);
    CHECK(parsed.layers[i].inputs == g.layers[i].inputs);
    CHECK(parsed.layers[i].attrs == g.layers[i].attrs);
  }
  CHECK(graph_to_text(parsed) == text);

  const auto path = temp_file("eadnet_test_graph.txt");
  save_graph(g, path.string());
  const GraphSpec loaded = load_graph(path.string());
  CHECK(graph_to_text(loaded) == text);
}

TEST_CASE("graph validation") {
  GraphSpec g;
  SUBCASE("references must resolve to earlier layers") {
    g.layers.push_back({"a", "concat", {"later"}, {}});
    g.layers.push_back({"later", "concat", {"input"}, {}});
    CHECK_THROWS_AS(validate(g), std::invalid_argument);
  }
  SUBCASE("duplicate names rejected") {
    g.layers.push_back({"a", "concat", {"input"}, {}});
    g.layers.push_back({"a", "concat", {"input"}, {}});
    CHECK_THROWS_AS(validate(g), std::invalid_argument);
  }
  SUBCASE("exactly one output layer") {
    g.layers.push_back({"a", "concat", {"input"}, {}});
    g.layers.push_back({"b", "concat", {"input"}, {}});
    CHECK_THROWS_AS(validate(g), std::invalid_argument);
  }
  SUBCASE("malformed text rejected") {
    CHECK_THROWS_AS(graph_from_text("not a layer line\n"), io_error);
    CHECK_THROWS_AS(graph_from_text("layer name=a kind=mmrfc inputs=input dr=abc\n"), io_error);
  }
}

TEST_CASE("empty MMRFC stages still assemble and run") {
  EadnetConfig cfg;
  cfg.num_classes = 3;
  cfg.dr_stage2 = {};
  cfg.dr_stage3 = {};
  ParamStore store;
  const EadnetModel model = EadnetModel::build(cfg, store, 5);
  RandomStream rng(83);
  const Tensor out = model.infer(store, random_image(rng, 1, 16, 16));
  CHECK(out.dims == Dims4{1, 3, 16, 16});
}
