#include "stainr/losses.hpp"

#include "stainr/ops.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace stainr {

std::vector<double> SSIMConfig::kernel() const {
  std::vector<double> k(static_cast<std::size_t>(window));
  const double center = (window - 1) / 2.0;
  double total = 0;
  for (int i = 0; i < window; ++i) {
    k[i] = std::exp(-(i - center) * (i - center) / (2 * sigma * sigma));
    total += k[i];
  }
  for (auto& v : k) v /= total;
  return k;
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& restored, const Tensor<T>& target) {
  if (restored.shape() != target.shape())
    throw ShapeError("mse_loss: shape mismatch " + shape_str(restored.shape()) + " vs " +
                     shape_str(target.shape()));
  const Tensor<T> d = sub(restored, target);
  return mean(mul(d, d));
}

template <typename T>
Tensor<T> ssim(const Tensor<T>& x, const Tensor<T>& y, const SSIMConfig& cfg) {
  if (x.shape() != y.shape())
    throw ShapeError("ssim: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  if (x.ndim() != 4) throw ShapeError("ssim: expected [B,C,H,W], got " + shape_str(x.shape()));
  if (x.dim(2) < cfg.window || x.dim(3) < cfg.window)
    throw ShapeError("ssim: image " + shape_str(x.shape()) + " smaller than the " +
                     std::to_string(cfg.window) + "x" + std::to_string(cfg.window) + " window");
  std::vector<T> k;
  for (double v : cfg.kernel()) k.push_back(static_cast<T>(v));
  const T c1 = static_cast<T>(cfg.c1()), c2 = static_cast<T>(cfg.c2());

  const Tensor<T> mu_x = separable_filter_valid(x, k);
  const Tensor<T> mu_y = separable_filter_valid(y, k);
  const Tensor<T> mu_xx = mul(mu_x, mu_x), mu_yy = mul(mu_y, mu_y), mu_xy = mul(mu_x, mu_y);
  const Tensor<T> var_x = sub(separable_filter_valid(mul(x, x), k), mu_xx);
  const Tensor<T> var_y = sub(separable_filter_valid(mul(y, y), k), mu_yy);
  const Tensor<T> cov = sub(separable_filter_valid(mul(x, y), k), mu_xy);

  const Tensor<T> num = mul(add_scalar(scale(mu_xy, T(2)), c1), add_scalar(scale(cov, T(2)), c2));
  const Tensor<T> den = mul(add_scalar(add(mu_xx, mu_yy), c1), add_scalar(add(var_x, var_y), c2));
  return mean(div(num, den));
}

template <typename T>
Tensor<T> ssim_loss(const Tensor<T>& restored, const Tensor<T>& target, const SSIMConfig& cfg) {
  return add_scalar(scale(ssim(restored, target, cfg), T(-1)), T(1));
}

template <typename T>
LossTerms<T> total_loss(const Tensor<T>& restored, const Tensor<T>& target, double alpha,
                        const SSIMConfig& cfg) {
  if (alpha < 0) throw std::invalid_argument("total_loss: alpha must be >= 0");
  LossTerms<T> out;
  out.mse = mse_loss(restored, target);
  out.ssim_loss = ssim_loss(restored, target, cfg);
  out.total = add(out.mse, scale(out.ssim_loss, static_cast<T>(alpha)));
  return out;
}

double psnr(const Tensor<double>& restored, const Tensor<double>& target, double max_val) {
  if (restored.shape() != target.shape()) throw ShapeError("psnr: shape mismatch");
  const double mse = (restored.data() - target.data()).square().mean();
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / mse));
}

double mae255(const Tensor<double>& restored, const Tensor<double>& target) {
  if (restored.shape() != target.shape())
    throw ShapeError("mae: shape mismatch " + shape_str(restored.shape()) + " vs " +
                     shape_str(target.shape()));
  return (restored.data() - target.data()).abs().mean() * 255.0;
}

double ssim_value(const Tensor<double>& restored, const Tensor<double>& target, const SSIMConfig& cfg) {
  NoGradGuard no_grad;
  if (restored.ndim() == 3 && target.shape() == restored.shape()) {
    const Shape s{1, restored.dim(0), restored.dim(1), restored.dim(2)};
    return ssim(reshape(restored, s), reshape(target, s), cfg).item();
  }
  return ssim(restored, target, cfg).item();
}

ImageMetrics measure(const std::string& id, const Tensor<double>& restored, const Tensor<double>& target) {
  return {id, psnr(restored, target), ssim_value(restored, target), mae255(restored, target)};
}

ImageMetrics MetricsReport::aggregate(const std::vector<ImageMetrics>& rows) {
  ImageMetrics m{"mean", 0, 0, 0};
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.psnr += r.psnr;
    m.ssim += r.ssim;
    m.mae += r.mae;
  }
  const double n = static_cast<double>(rows.size());
  m.psnr /= n;
  m.ssim /= n;
  m.mae /= n;
  return m;
}

void MetricsReport::write_text(std::ostream& os) const {
  const auto in = aggregate(input), out = aggregate(restored);
  os << "# " << (label.empty() ? "evaluation" : label) << "  images=" << image_count()
     << "  config_hash=" << std::hex << std::setw(16) << std::setfill('0') << config_hash
     << std::dec << std::setfill(' ') << '\n';
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(10) << "row" << std::right << std::setw(10) << "PSNR" << std::setw(10)
     << "SSIM" << std::setw(10) << "MAE" << '\n';
  os << std::left << std::setw(10) << "Input" << std::right << std::setw(10) << in.psnr << std::setw(10)
     << in.ssim << std::setw(10) << in.mae << '\n';
  os << std::left << std::setw(10) << "Restored" << std::right << std::setw(10) << out.psnr
     << std::setw(10) << out.ssim << std::setw(10) << out.mae << '\n';
  for (std::size_t i = 0; i < restored.size(); ++i)
    os << "image " << restored[i].image_id << "  input " << input[i].psnr << " / " << input[i].ssim
       << " / " << input[i].mae << "  restored " << restored[i].psnr << " / " << restored[i].ssim
       << " / " << restored[i].mae << '\n';
  os.unsetf(std::ios::floatfield);
}

void MetricsReport::write_csv(std::ostream& os) const {
  os << "image_id,psnr,ssim,mae\n" << std::setprecision(10);
  for (const auto& r : restored) os << r.image_id << ',' << r.psnr << ',' << r.ssim << ',' << r.mae << '\n';
}

template Tensor<float> mse_loss(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> mse_loss(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> ssim(const Tensor<float>&, const Tensor<float>&, const SSIMConfig&);
template Tensor<double> ssim(const Tensor<double>&, const Tensor<double>&, const SSIMConfig&);
template Tensor<float> ssim_loss(const Tensor<float>&, const Tensor<float>&, const SSIMConfig&);
template Tensor<double> ssim_loss(const Tensor<double>&, const Tensor<double>&, const SSIMConfig&);
template LossTerms<float> total_loss(const Tensor<float>&, const Tensor<float>&, double, const SSIMConfig&);
template LossTerms<double> total_loss(const Tensor<double>&, const Tensor<double>&, double, const SSIMConfig&);

}  // namespace stainr
