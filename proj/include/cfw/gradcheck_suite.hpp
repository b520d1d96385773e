#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfw/gradcheck.hpp"

namespace cfw {

inline constexpr double kGradcheckTolerance = 1e-5;

struct GradcheckEntry {
    std::string op;
    std::string target;  // which input the gradient is taken with respect to
    GradcheckResult result;
    bool passed() const { return result.max_rel_error < kGradcheckTolerance; }
};

// Names accepted by run_gradcheck_suite's `only` filter.
std::vector<std::string> gradcheck_op_names();

// Double-precision finite-difference checks of every differentiable op on
// random inputs no larger than 5^3 per op, plus the multi-scale loss through
// a 2-level network on 8^3 volumes. `only` restricts to one op name.
std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed, const std::string &only = "");

}  // namespace cfw
