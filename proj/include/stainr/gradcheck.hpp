#pragma once

#include "stainr/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace stainr {

struct GradcheckOptions {
  double step = 1e-5;       // central-difference half width
  double tolerance = 1e-3;  // relative
  double abs_floor = 1e-6;  // absolute error always accepted
  // Coordinates probed per leaf; 0 probes all of them.
  Index max_coords_per_leaf = 0;
  std::uint64_t seed = 0;
};

struct GradcheckReport {
  double max_error = 0;  // max |a-n| / max(|a|, |n|, abs_floor/tolerance)
  bool passed = true;
  Index coordinates = 0;
  std::string worst;  // "leaf#i[j]: analytic=.. numeric=.."
};

/// Compares reverse-mode gradients of `f` w.r.t. `leaves` against central
/// finite differences. A non-scalar output is reduced with a fixed seeded
/// random projection. Throws NumericError when `f` is not deterministic.
GradcheckReport gradcheck(const std::function<Tensor<double>()>& f,
                          const std::vector<Tensor<double>>& leaves,
                          const GradcheckOptions& options = {});

GradcheckReport gradcheck(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                          const Tensor<double>& x, const GradcheckOptions& options = {});

}  // namespace stainr
