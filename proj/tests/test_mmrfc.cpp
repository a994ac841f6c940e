#include <doctest.h>

#include <cmath>

#include "eadnet/cost_model.hpp"
#include "eadnet/mmrfc.hpp"
#include "eadnet/rf_verify.hpp"

using namespace eadnet;

namespace {

Tensor random_tensor(RandomStream& rng, Dims4 d) {
  Tensor t(d);
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

}  // namespace

TEST_CASE("branch dilation scheme and receptive rectangles") {
  for (int dr = 1; dr <= 6; ++dr) {
    const BranchSpec b1 = mmrfc_branch(1, dr);
    const BranchSpec b2 = mmrfc_branch(2, dr);
    const BranchSpec b3 = mmrfc_branch(3, dr);
    const BranchSpec b4 = mmrfc_branch(4, dr);
    CHECK(b1.d_vertical == 1);
    CHECK(b1.d_horizontal == 1);
    CHECK_FALSE(b1.depthwise);
    CHECK(b2.d_vertical == dr);
    CHECK(b2.d_horizontal == dr);
    CHECK(b3.d_vertical == 2 * dr);
    CHECK(b3.d_horizontal == 4 * dr);
    CHECK(b4.d_vertical == 4 * dr);
    CHECK(b4.d_horizontal == 2 * dr);
    CHECK(b2.depthwise);
    CHECK(b3.depthwise);
    CHECK(b4.depthwise);
    // no constructed dilation may exceed 24
    for (const auto& b : {b1, b2, b3, b4}) {
      CHECK(std::max(b.d_vertical, b.d_horizontal) <= 24);
      CHECK(std::max(b.d_vertical, b.d_horizontal) <= 4 * dr);
    }
  }
  CHECK(branch_receptive_field(mmrfc_branch(1, 5)) == std::pair{3, 3});
  CHECK(branch_receptive_field(mmrfc_branch(2, 6)) == std::pair{13, 13});
  CHECK(branch_receptive_field(mmrfc_branch(3, 6)) == std::pair{25, 49});
  CHECK(branch_receptive_field(mmrfc_branch(4, 6)) == std::pair{49, 25});  // tall rectangle
  CHECK_THROWS_AS(mmrfc_branch(0, 1), std::invalid_argument);
  CHECK_THROWS_AS(mmrfc_branch(5, 1), std::invalid_argument);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(validate(MmrfcConfig{12, 1}), std::invalid_argument);   // not /8
  CHECK_THROWS_AS(validate(MmrfcConfig{136, 1}), std::invalid_argument);  // > 128
  CHECK_THROWS_AS(validate(MmrfcConfig{0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(validate(MmrfcConfig{64, 0}), std::invalid_argument);
  CHECK_THROWS_AS(validate(MmrfcConfig{64, 7}), std::invalid_argument);
  CHECK_NOTHROW(validate(MmrfcConfig{128, 6}));
}

TEST_CASE("registered convolution parameters match the closed-form counts") {
  RandomStream rng(2);
  SUBCASE("C=128 block registers exactly 27360 conv scalars") {
    ParamStore store;
    const MmrfcBlock blk = MmrfcBlock::build({128, 2}, store, "blk", rng);
    CHECK(param_scalar_count(store, blk.conv_param_names()) == 27360);
  }
  SUBCASE("C=64 block registers exactly 7152") {
    ParamStore store;
    const MmrfcBlock blk = MmrfcBlock::build({64, 1}, store, "blk", rng);
    CHECK(param_scalar_count(store, blk.conv_param_names()) == 7152);
  }
  SUBCASE("C=8 branches compress to a single channel") {
    ParamStore store;
    const MmrfcBlock blk = MmrfcBlock::build({8, 1}, store, "blk", rng);
    CHECK(store.at("blk.b1.reduce.w").value.dims == Dims4{1, 8, 1, 1});
    CHECK(store.at("blk.b2.v.w").value.dims == Dims4{1, 1, 3, 1});
    CHECK(param_scalar_count(store, blk.conv_param_names()) == 180);
  }
}

TEST_CASE("forward preserves dims for every valid (C, dr) pair") {
  for (int C = 8; C <= 128; C += 8) {
    for (int dr = 1; dr <= 6; ++dr) {
      ParamStore store;
      RandomStream rng(static_cast<unsigned>(C * 10 + dr));
      const MmrfcBlock blk = MmrfcBlock::build({C, dr}, store, "blk", rng);
      const Tensor x = random_tensor(rng, {1, C, 5, 4});
      const Tensor y = mmrfc_forward(blk, store, x);
      CHECK(y.dims == x.dims);
    }
  }
}

TEST_CASE("intermediate channel counts: branches at C/8, merge at C/2, doubled at C") {
  ParamStore store;
  RandomStream rng(5);
  const MmrfcBlock blk = MmrfcBlock::build({32, 2}, store, "blk", rng);
  Tape tape;
  StoreBinding binding(tape, store);
  const VarId x = op_input(tape, random_tensor(rng, {1, 32, 6, 6}));
  std::vector<VarId> branches;
  const VarId y = blk.forward(binding, x, false, &branches);
  REQUIRE(branches.size() == 4);
  for (VarId b : branches) CHECK(tape.value(b).dims.c == 4);
  CHECK(tape.value(y).dims.c == 32);
}

TEST_CASE("zeroed fusion pointwise stage nulls the output") {
  ParamStore store;
  RandomStream rng(7);
  const MmrfcBlock blk = MmrfcBlock::build({16, 3}, store, "blk", rng);
  store.at("blk.fuse.pw.w").value.fill(0.0f);
  store.at("blk.fuse.pw.b").value.fill(0.0f);
  store.at("blk.fuse.bn.beta").value.fill(0.0f);  // affine tail stays zero
  const Tensor y = mmrfc_forward(blk, store, random_tensor(rng, {2, 16, 4, 4}));
  for (float v : y.data) CHECK(v == 0.0f);
}

TEST_CASE("ablating branch 1 changes only features flowing from that branch") {
  ParamStore store;
  RandomStream rng(11);
  const MmrfcBlock blk = MmrfcBlock::build({32, 2}, store, "blk", rng);
  const Tensor x = random_tensor(rng, {1, 32, 6, 6});

  auto run = [&](std::vector<Tensor>* branch_vals) {
    Tape tape;
    StoreBinding binding(tape, store);
    const VarId xv = op_input(tape, x);
    std::vector<VarId> ids;
    const VarId y = blk.forward(binding, xv, false, &ids);
    branch_vals->clear();
    for (VarId id : ids) branch_vals->push_back(tape.value(id));
    return tape.value(y);
  };

  std::vector<Tensor> before, after;
  const Tensor out_before = run(&before);
  store.at("blk.b1.reduce.w").value.fill(0.0f);
  const Tensor out_after = run(&after);

  auto differs = [](const Tensor& a, const Tensor& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i)
      if (a.data[i] != b.data[i]) return true;
    return false;
  };
  CHECK(differs(before[0], after[0]));
  for (int i = 1; i < 4; ++i) CHECK_FALSE(differs(before[static_cast<std::size_t>(i)],
                                                  after[static_cast<std::size_t>(i)]));
  CHECK(differs(out_before, out_after));  // fusion mixes branch 1 into the output
}

TEST_CASE("forward rejects mismatched input channels") {
  ParamStore store;
  RandomStream rng(13);
  const MmrfcBlock blk = MmrfcBlock::build({16, 1}, store, "blk", rng);
  CHECK_THROWS_AS(mmrfc_forward(blk, store, Tensor(Dims4{1, 8, 4, 4}, 0.1f)),
                  std::invalid_argument);
}

TEST_CASE("analytic rectangles equal impulse footprints (spot checks)") {
  for (int dr : {1, 6}) {
    for (int branch = 1; branch <= 4; ++branch) {
      const BranchSpec spec = mmrfc_branch(branch, dr);
      CHECK(empirical_branch_footprint(spec) == branch_receptive_field(spec));
    }
  }
}

TEST_CASE("whole-block impulse footprint matches the composed analytic extent") {
  for (int dr : {1, 2}) {
    const int extent = 8 * dr + 3;  // widest branch extent plus the 3x3 depthwise
    CHECK(empirical_mmrfc_footprint(8, dr) == std::pair{extent, extent});
  }
}
