#include "stainr/gradcheck.hpp"

#include "stainr/ops.hpp"

#include <algorithm>
#include <cstring>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace stainr {

namespace {

bool bit_equal(const Tensor<double>& a, const Tensor<double>& b) {
  return a.shape() == b.shape() &&
         std::equal(a.ptr(), a.ptr() + a.numel(), b.ptr(),
                    [](double x, double y) { return std::memcmp(&x, &y, sizeof x) == 0; });
}

}  // namespace

GradcheckReport gradcheck(const std::function<Tensor<double>()>& f,
                          const std::vector<Tensor<double>>& leaves,
                          const GradcheckOptions& options) {
  auto& tape = GradTape<double>::current();
  tape.clear();

  Tensor<double> probe;
  {
    NoGradGuard no_grad;
    probe = f();
    if (!bit_equal(probe, f()))
      throw NumericError("gradcheck: function is not deterministic (two evaluations differ)");
  }
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Tensor<double> projection(probe.shape());
  for (Index i = 0; i < projection.numel(); ++i) projection.data()[i] = unit(rng);

  auto objective = [&] { return sum(mul(f(), projection)); };

  std::vector<bool> previous;
  for (auto leaf : leaves) {
    previous.push_back(leaf.requires_grad());
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  backward(objective());
  std::vector<Tensor<double>::Array> analytic;
  for (auto leaf : leaves)
    analytic.push_back(leaf.has_grad() ? leaf.grad() : Tensor<double>::Array::Zero(leaf.numel()));
  tape.clear();

  GradcheckReport report;
  const double denom_floor = options.abs_floor / options.tolerance;
  NoGradGuard no_grad;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double> leaf = leaves[li];
    std::vector<Index> coords(static_cast<std::size_t>(leaf.numel()));
    std::iota(coords.begin(), coords.end(), Index(0));
    if (options.max_coords_per_leaf > 0 && leaf.numel() > options.max_coords_per_leaf) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(options.max_coords_per_leaf));
      std::sort(coords.begin(), coords.end());
    }
    for (Index c : coords) {
      const double saved = leaf.data()[c];
      leaf.data()[c] = saved + options.step;
      const double up = objective().item();
      leaf.data()[c] = saved - options.step;
      const double down = objective().item();
      leaf.data()[c] = saved;
      const double numeric = (up - down) / (2 * options.step);
      const double a = analytic[li][c];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), denom_floor});
      ++report.coordinates;
      if (err > report.max_error || report.worst.empty()) {
        if (err >= report.max_error) {
          report.max_error = err;
          std::ostringstream os;
          os << "leaf#" << li << "[" << c << "]: analytic=" << a << " numeric=" << numeric;
          report.worst = os.str();
        }
      }
    }
  }
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double> leaf = leaves[li];
    leaf.zero_grad();
    leaf.set_requires_grad(previous[li]);
  }
  report.passed = report.max_error <= options.tolerance;
  return report;
}

GradcheckReport gradcheck(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                          const Tensor<double>& x, const GradcheckOptions& options) {
  return gradcheck([&] { return f(x); }, {x}, options);
}

}  // namespace stainr
