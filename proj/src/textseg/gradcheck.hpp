#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace textseg {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::int64_t checked = 0;  // gradient elements compared
    std::int64_t skipped = 0;  // elements whose FD interval crossed a kink
};

// Central finite-difference verification (h = 1e-3, double precision) of
// every layer primitive, all seven losses against pre-softmax logits, and an
// end-to-end toy MFM. `inject_fault` deliberately corrupts one analytic
// gradient so the failure path can be exercised.
std::vector<GradCheckResult> run_gradcheck_suite(bool inject_fault = false);

bool all_passed(const std::vector<GradCheckResult>& results);

}  // namespace textseg
