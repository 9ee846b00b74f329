#pragma once

#include "stainr/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace stainr {

/// Images are [3,H,W] double tensors with values in [0,1].
using Image = Tensor<double>;

enum class StainKind { black_tea, green_tea, red_ink, blue_ink, seal, mark };
inline constexpr std::array<StainKind, 6> kAllStainKinds{
    StainKind::black_tea, StainKind::green_tea, StainKind::red_ink,
    StainKind::blue_ink,  StainKind::seal,      StainKind::mark};

std::string to_string(StainKind kind);
StainKind parse_stain_kind(const std::string& name);

enum class StainShape { blob, stroke, ring, glyph };

struct StainModel {
  std::array<double, 3> base_color{1, 1, 1};
  double opacity_min = 0.3;
  double opacity_max = 0.6;
  double penetration = 1.5;  // edge softness in pixels
  StainShape shape = StainShape::blob;
  int stroke_count = -1;     // ink only; negative derives the count from severity
  int dot_count = -1;        // ink only; negative derives the count from severity

  static StainModel preset(StainKind kind);
  void validate() const;
};

struct ImagePair {
  Image stained;
  Image clean;
  StainKind kind = StainKind::black_tea;
  int severity = 1;
  std::uint64_t seed = 0;
};

double luminance(const Image& img, Index y, Index x);

/// Near-white page with rows of dark pseudo-glyphs and occasional boxes.
Image gen_document(std::uint64_t seed, int height, int width);

/// Tea-like multiplicative stain: stained = clean * (1 - opacity * mask * (1 - color)).
Image apply_liquid_stain(const Image& clean, const StainModel& model, int severity, std::uint64_t seed);
/// Multiplicative ink strokes and splatter dots.
Image apply_ink_stain(const Image& clean, const StainModel& model, int severity, std::uint64_t seed);
/// Coverage mask of the liquid stain generator (exposed for inspection).
std::vector<double> liquid_mask(int height, int width, const StainModel& model, int severity, std::uint64_t seed);
std::vector<double> ink_mask(int height, int width, const StainModel& model, int severity, std::uint64_t seed);

struct OverlayParams {
  double opacity = 0.7;
  std::array<double, 3> color{0.85, 0.1, 0.1};
  // seal
  double center_y = 32, center_x = 32, outer_radius = 20, ring_width = 3;
  // mark
  double angle = 0;   // radians
  int period = 24;    // tile edge in pixels
  std::uint64_t glyph_seed = 0;
};

OverlayParams sample_overlay(StainKind kind, int height, int width, int severity, std::uint64_t seed);
std::vector<double> overlay_mask(StainKind kind, int height, int width, const OverlayParams& params);
/// Alpha compositing: out = (1 - a*m) * clean + a*m * color.
Image apply_overlay(const Image& clean, StainKind kind, const OverlayParams& params);
Image apply_overlay(const Image& clean, StainKind kind, std::uint64_t seed, int severity = 2);

/// Rounds to the 8-bit grid used on disk.
Image quantize8(const Image& img);

/// One reproducible pair; resamples until PSNR(stained, clean) < 40 dB.
ImagePair make_pair(StainKind kind, int severity, std::uint64_t seed, int height, int width);

struct ManifestEntry {
  int id = 0;
  StainKind kind = StainKind::black_tea;
  int severity = 1;
  std::uint64_t seed = 0;
  bool test = false;
};

struct DatasetSpec {
  int count = 10;
  int height = 64;
  int width = 64;
  // Proportions over kAllStainKinds; must sum to 1.
  std::array<double, 6> mix{1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6};
  std::uint64_t seed = 0;
  double test_fraction = 0.1;
};

/// Independent 64-bit seed for a numbered sub-stream of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t pair_seed(std::uint64_t dataset_seed, int id);
/// Exactly round(count * test_fraction) ids go to the test split, chosen by
/// the smallest hashes of the id.
std::vector<bool> split_by_hash(int count, double test_fraction);
std::vector<ManifestEntry> plan_dataset(const DatasetSpec& spec);
/// Writes <id:06>_clean.ppm, <id:06>_stained.ppm and manifest.csv into `dir`.
std::vector<ManifestEntry> gen_dataset(const std::string& dir, const DatasetSpec& spec);

std::string format_manifest_line(const ManifestEntry& e);
ManifestEntry parse_manifest_line(const std::string& line);

struct Dataset {
  std::vector<ImagePair> train, test;
  std::vector<std::string> train_ids, test_ids;
};
Dataset load_dataset(const std::string& dir);

/// Geometric and mixup plan shared by both images of a pair.
struct AugmentPlan {
  int crop = 0;       // 0 keeps full size
  int crop_y = 0, crop_x = 0;
  bool flip_h = false, flip_v = false;
  int rot90 = 0;      // quarter turns counter-clockwise
  double mixup_lambda = 1.0;
};

ImagePair apply_augment(const ImagePair& pair, const AugmentPlan& plan, const ImagePair* partner = nullptr);
AugmentPlan sample_augment(const ImagePair& pair, std::uint64_t seed, int crop, double mixup_alpha,
                           bool use_mixup);
ImagePair augment(const ImagePair& pair, std::uint64_t seed, int crop, double mixup_alpha,
                  const ImagePair* partner = nullptr);

Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);
Image rotate90(const Image& img, int quarter_turns);
Image crop(const Image& img, int y, int x, int h, int w);

}  // namespace stainr
