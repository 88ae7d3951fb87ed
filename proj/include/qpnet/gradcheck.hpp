#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace qpnet::gradcheck {

struct CheckResult {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Central finite differences in double precision (h = 1e-5) against the
// tape's analytic gradients for every operation type, plus an end-to-end
// check on a tiny two-block adaptive model. Pass threshold: 1e-4 relative.
std::vector<CheckResult> run_all(uint64_t seed = 0);

bool all_pass(const std::vector<CheckResult>& results);

}  // namespace qpnet::gradcheck
