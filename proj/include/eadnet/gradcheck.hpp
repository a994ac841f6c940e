#pragma once

#include <string>
#include <vector>

namespace eadnet {

inline constexpr double kGradCheckTolerance = 1e-3;
inline constexpr double kGradCheckStep = 1e-3;

struct GradCheckResult {
  std::string op;
  int cases = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

const std::vector<std::string>& gradcheck_ops();

// Central finite differences on a 64-bit shadow evaluation against the
// analytic backward pass; `fault_op` perturbs that op's analytic gradient
// (negative-control hook).
std::vector<GradCheckResult> run_gradcheck(unsigned seed, int instances,
                                           const std::string& only_op = {},
                                           const std::string& fault_op = {});

}  // namespace eadnet
