#pragma once

#include "stainr/gradcheck.hpp"

#include <functional>
#include <string>
#include <vector>

namespace stainr {

/// A named finite-difference check over one differentiable operation with
/// randomly drawn inputs and parameters (64-bit).
struct GradcheckCase {
  std::string name;
  std::function<GradcheckReport(std::uint64_t seed, const GradcheckOptions& options)> run;
};

const std::vector<GradcheckCase>& gradcheck_suite();

}  // namespace stainr
