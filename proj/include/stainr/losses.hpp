#pragma once

#include "stainr/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace stainr {

/// Gaussian-window SSIM constants for unit dynamic range.
struct SSIMConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
  /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
  std::vector<double> kernel() const;
};

template <typename T> Tensor<T> mse_loss(const Tensor<T>& restored, const Tensor<T>& target);

/// Mean SSIM over all valid window positions of every [H,W] plane of [B,C,H,W] inputs.
template <typename T>
Tensor<T> ssim(const Tensor<T>& restored, const Tensor<T>& target, const SSIMConfig& cfg = {});
template <typename T>
Tensor<T> ssim_loss(const Tensor<T>& restored, const Tensor<T>& target, const SSIMConfig& cfg = {});

template <typename T>
struct LossTerms {
  Tensor<T> mse, ssim_loss, total;
};

/// L = L_mse + alpha * L_ssim.
template <typename T>
LossTerms<T> total_loss(const Tensor<T>& restored, const Tensor<T>& target, double alpha = 0.2,
                        const SSIMConfig& cfg = {});

// Evaluation metrics on plain arrays (no gradients).

constexpr double kPsnrCap = 100.0;

/// 10 log10(max^2 / MSE), capped at kPsnrCap when the images are identical.
double psnr(const Tensor<double>& restored, const Tensor<double>& target, double max_val = 1.0);
/// Mean absolute error scaled by 255.
double mae255(const Tensor<double>& restored, const Tensor<double>& target);
/// Accepts [C,H,W] images as well as [B,C,H,W] batches.
double ssim_value(const Tensor<double>& restored, const Tensor<double>& target, const SSIMConfig& cfg = {});

struct ImageMetrics {
  std::string image_id;
  double psnr = 0, ssim = 0, mae = 0;
};

struct MetricsReport {
  std::vector<ImageMetrics> restored;  // model output vs clean
  std::vector<ImageMetrics> input;     // stained vs clean
  std::uint64_t config_hash = 0;
  std::string label;

  static ImageMetrics aggregate(const std::vector<ImageMetrics>& rows);
  std::size_t image_count() const { return restored.size(); }
  void write_text(std::ostream& os) const;
  /// image_id,psnr,ssim,mae for the restored rows.
  void write_csv(std::ostream& os) const;
};

ImageMetrics measure(const std::string& id, const Tensor<double>& restored, const Tensor<double>& target);

}  // namespace stainr
