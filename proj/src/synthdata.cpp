#include "stainr/synthdata.hpp"

#include "stainr/config.hpp"
#include "stainr/losses.hpp"
#include "stainr/ppm.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace stainr {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x51ed270b27ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }
  bool chance(double p) { return uniform() < p; }
  double normal(double sd) { return std::normal_distribution<double>(0.0, sd)(gen_); }
  double beta(double a) {
    std::gamma_distribution<double> g(a, 1.0);
    const double x = g(gen_), y = g(gen_);
    return (x + y) > 0 ? x / (x + y) : 0.5;
  }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

/// Smoothly interpolated lattice noise in [0,1].
class ValueNoise {
 public:
  ValueNoise(int height, int width, double cell, Rng& rng)
      : cell_(std::max(cell, 1.0)),
        gh_(static_cast<int>(height / cell_) + 2),
        gw_(static_cast<int>(width / cell_) + 2),
        grid_(static_cast<std::size_t>(gh_ * gw_)) {
    for (auto& v : grid_) v = rng.uniform();
  }

  double operator()(double y, double x) const {
    const double fy = std::clamp(y / cell_, 0.0, gh_ - 1.000001);
    const double fx = std::clamp(x / cell_, 0.0, gw_ - 1.000001);
    const int iy = static_cast<int>(fy), ix = static_cast<int>(fx);
    const int iy1 = std::min(iy + 1, gh_ - 1), ix1 = std::min(ix + 1, gw_ - 1);
    const double ty = smooth(fy - iy), tx = smooth(fx - ix);
    const double a = at(iy, ix) + (at(iy, ix1) - at(iy, ix)) * tx;
    const double b = at(iy1, ix) + (at(iy1, ix1) - at(iy1, ix)) * tx;
    return a + (b - a) * ty;
  }

 private:
  static double smooth(double t) { return t * t * (3 - 2 * t); }
  double at(int y, int x) const { return grid_[static_cast<std::size_t>(y * gw_ + x)]; }

  double cell_;
  int gh_, gw_;
  std::vector<double> grid_;
};

double& px(Image& img, Index c, Index y, Index x) {
  return img.data()[(c * img.dim(1) + y) * img.dim(2) + x];
}
double px(const Image& img, Index c, Index y, Index x) {
  return img.data()[(c * img.dim(1) + y) * img.dim(2) + x];
}

void check_image(const Image& img, const char* op) {
  if (!img.defined() || img.ndim() != 3 || img.dim(0) != 3)
    throw ShapeError(std::string(op) + ": expected a [3,H,W] image");
}

void check_severity(int severity) {
  if (severity < 1 || severity > 3)
    throw std::invalid_argument("severity must be 1, 2 or 3, got " + std::to_string(severity));
}

double segment_distance(double py, double px_, double ay, double ax, double by, double bx) {
  const double vy = by - ay, vx = bx - ax;
  const double len2 = vy * vy + vx * vx;
  double t = len2 > 0 ? ((py - ay) * vy + (px_ - ax) * vx) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dy = py - (ay + t * vy), dx = px_ - (ax + t * vx);
  return std::sqrt(dy * dy + dx * dx);
}

// Soft-edged coverage of a shape at signed distance `inside` (positive inside)
// with an edge ramp of width `soft`; exactly zero once outside by soft/2.
double coverage(double inside, double soft) {
  return std::clamp(0.5 + inside / std::max(soft, 1e-6), 0.0, 1.0);
}

double severity_opacity(double lo, double hi, int severity, Rng& rng) {
  return lo + (hi - lo) * (severity - 1 + rng.uniform()) / 3.0;
}

Image multiplicative(const Image& clean, const std::vector<double>& mask,
                     const std::array<double, 3>& color, double opacity) {
  Image out = clean.detach();
  const Index plane = clean.dim(1) * clean.dim(2);
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < plane; ++i) {
      const double m = mask[static_cast<std::size_t>(i)];
      if (m == 0) continue;
      out.data()[c * plane + i] *= 1.0 - opacity * m * (1.0 - color[c]);
    }
  return out;
}

}  // namespace

std::string to_string(StainKind kind) {
  switch (kind) {
    case StainKind::black_tea: return "black_tea";
    case StainKind::green_tea: return "green_tea";
    case StainKind::red_ink: return "red_ink";
    case StainKind::blue_ink: return "blue_ink";
    case StainKind::seal: return "seal";
    case StainKind::mark: return "mark";
  }
  return "?";
}

StainKind parse_stain_kind(const std::string& name) {
  for (StainKind k : kAllStainKinds)
    if (to_string(k) == name) return k;
  throw DataError("unknown stain kind '" + name + "'");
}

StainModel StainModel::preset(StainKind kind) {
  StainModel m;
  switch (kind) {
    case StainKind::black_tea:
      m.base_color = {0.72, 0.50, 0.30};
      m.opacity_min = 0.45;
      m.opacity_max = 0.9;
      m.penetration = 2.5;
      m.shape = StainShape::blob;
      break;
    case StainKind::green_tea:
      m.base_color = {0.86, 0.78, 0.46};
      m.opacity_min = 0.45;
      m.opacity_max = 0.9;
      m.penetration = 2.5;
      m.shape = StainShape::blob;
      break;
    case StainKind::red_ink:
      m.base_color = {0.88, 0.16, 0.22};
      m.opacity_min = 0.6;
      m.opacity_max = 0.95;
      m.penetration = 0.8;
      m.shape = StainShape::stroke;
      break;
    case StainKind::blue_ink:
      m.base_color = {0.18, 0.30, 0.85};
      m.opacity_min = 0.6;
      m.opacity_max = 0.95;
      m.penetration = 0.8;
      m.shape = StainShape::stroke;
      break;
    case StainKind::seal:
      m.base_color = {0.82, 0.12, 0.12};
      m.opacity_min = 0.5;
      m.opacity_max = 0.9;
      m.penetration = 1.0;
      m.shape = StainShape::ring;
      break;
    case StainKind::mark:
      m.base_color = {0.45, 0.45, 0.55};
      m.opacity_min = 0.25;
      m.opacity_max = 0.5;
      m.penetration = 1.0;
      m.shape = StainShape::glyph;
      break;
  }
  return m;
}

void StainModel::validate() const {
  if (!(opacity_min >= 0 && opacity_min <= opacity_max && opacity_max <= 1))
    throw std::invalid_argument("stain opacity range must satisfy 0 <= min <= max <= 1");
  for (double c : base_color)
    if (c < 0 || c > 1) throw std::invalid_argument("stain color outside [0,1]");
  if (!(penetration > 0)) throw std::invalid_argument("stain penetration must be positive");
}

double luminance(const Image& img, Index y, Index x) {
  return 0.299 * px(img, 0, y, x) + 0.587 * px(img, 1, y, x) + 0.114 * px(img, 2, y, x);
}

// ---------------------------------------------------------------------------
// Clean pages

Image gen_document(std::uint64_t seed, int height, int width) {
  if (height < 64 || width < 64)
    throw std::invalid_argument("gen_document: page must be at least 64x64, got " +
                                std::to_string(height) + "x" + std::to_string(width));
  Rng rng(mix_seed(seed, 11));
  const int unit = std::max(1, std::min(height, width) / 128);
  Image img({3, height, width});

  const double base = rng.uniform(0.93, 0.98);
  const std::array<double, 3> tint{base, base - rng.uniform(0.0, 0.012), base - rng.uniform(0.0, 0.035)};
  ValueNoise fiber(height, width, 16.0 * unit, rng);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      const double shade = 0.03 * (fiber(y, x) - 0.5) + rng.normal(0.004);
      for (Index c = 0; c < 3; ++c) px(img, c, y, x) = std::clamp(tint[c] + shade, 0.0, 1.0);
    }

  const double ink = rng.uniform(0.05, 0.22);
  auto dark = [&](Index y, Index x) {
    if (y < 0 || y >= height || x < 0 || x >= width) return;
    for (Index c = 0; c < 3; ++c) px(img, c, y, x) = ink;
  };
  auto hline = [&](int y, int x0, int x1) {
    for (int t = 0; t < unit; ++t)
      for (int x = x0; x <= x1; ++x) dark(y + t, x);
  };
  auto vline = [&](int x, int y0, int y1) {
    for (int t = 0; t < unit; ++t)
      for (int y = y0; y <= y1; ++y) dark(y, x + t);
  };

  const int margin = std::max(3, width / 16);
  const int line_height = rng.integer(8, 11) * unit;
  const int glyph_h = line_height - 3 * unit;
  for (int y0 = margin; y0 + glyph_h < height - margin; y0 += line_height) {
    if (rng.chance(0.08)) continue;  // paragraph gap
    int x = margin + (rng.chance(0.2) ? rng.integer(2, 6) * unit : 0);
    const int line_end = width - margin - rng.integer(0, width / 4);
    while (x < line_end) {
      const int letters = rng.integer(2, 6);
      for (int l = 0; l < letters && x < line_end; ++l) {
        const int cw = rng.integer(3, 5) * unit;
        const int x1 = std::min(x + cw - 1, line_end);
        const int y1 = y0 + glyph_h - 1;
        const int mid = y0 + glyph_h / 2;
        int drawn = 0;
        while (drawn == 0) {
          if (rng.chance(0.55)) { vline(x, y0, y1); ++drawn; }
          if (rng.chance(0.45)) { vline(x1 - unit + 1, y0, y1); ++drawn; }
          if (rng.chance(0.45)) { hline(y0, x, x1); ++drawn; }
          if (rng.chance(0.35)) { hline(mid, x, x1); ++drawn; }
          if (rng.chance(0.45)) { hline(y1 - unit + 1, x, x1); ++drawn; }
        }
        x += cw + unit;
      }
      x += rng.integer(2, 3) * unit;
    }
  }

  if (rng.chance(0.5)) {
    const int bh = rng.integer(height / 6, height / 3), bw = rng.integer(width / 5, width / 2);
    const int by = rng.integer(margin, height - margin - bh), bx = rng.integer(margin, width - margin - bw);
    hline(by, bx, bx + bw);
    hline(by + bh, bx, bx + bw);
    vline(bx, by, by + bh);
    vline(bx + bw, by, by + bh);
  }
  return img;
}

// ---------------------------------------------------------------------------
// Liquid and ink stains

std::vector<double> liquid_mask(int height, int width, const StainModel& model, int severity,
                                std::uint64_t seed) {
  check_severity(severity);
  model.validate();
  Rng rng(mix_seed(seed, 21));
  std::vector<double> mask(static_cast<std::size_t>(height * width), 0.0);
  const double scale = std::array<double, 3>{0.8, 1.0, 1.25}[severity - 1];
  const double extent = std::min(height, width);
  // Parameters for all three blobs are always drawn so that a higher severity
  // only adds blobs and grows the existing ones.
  for (int b = 0; b < 3; ++b) {
    const double cy = rng.uniform(0.1, 0.9) * height, cx = rng.uniform(0.1, 0.9) * width;
    const double radius = rng.uniform(0.14, 0.24) * extent * scale;
    ValueNoise lobes(height, width, std::max(4.0, radius * 0.6), rng);
    ValueNoise texture(height, width, std::max(3.0, radius * 0.3), rng);
    if (b >= severity) continue;
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) {
        const double r = radius * (1.0 + 0.7 * (lobes(y, x) - 0.5));
        const double d = std::hypot(y - cy, x - cx);
        const double inside = r - d;
        const double body = coverage(inside, model.penetration);
        if (body == 0) continue;
        // Pigment collects at the drying edge.
        const double edge = std::exp(-std::pow(inside / (1.5 * model.penetration), 2.0));
        const double v = std::min(1.0, body * (0.65 + 0.2 * texture(y, x) + 0.35 * edge));
        auto& m = mask[static_cast<std::size_t>(y * width + x)];
        m = std::max(m, v);
      }
  }
  return mask;
}

Image apply_liquid_stain(const Image& clean, const StainModel& model, int severity, std::uint64_t seed) {
  check_image(clean, "apply_liquid_stain");
  check_severity(severity);
  const int h = static_cast<int>(clean.dim(1)), w = static_cast<int>(clean.dim(2));
  const auto mask = liquid_mask(h, w, model, severity, seed);
  Rng rng(mix_seed(seed, 22));
  return multiplicative(clean, mask, model.base_color,
                        severity_opacity(model.opacity_min, model.opacity_max, severity, rng));
}

std::vector<double> ink_mask(int height, int width, const StainModel& model, int severity,
                             std::uint64_t seed) {
  check_severity(severity);
  model.validate();
  Rng rng(mix_seed(seed, 31));
  std::vector<double> mask(static_cast<std::size_t>(height * width), 0.0);
  const int unit = std::max(1, std::min(height, width) / 128);
  const int strokes = model.stroke_count >= 0 ? model.stroke_count : severity + rng.integer(0, 1);
  const int dots = model.dot_count >= 0 ? model.dot_count : 2 * severity + rng.integer(0, 2);

  auto stamp = [&](auto&& signed_inside, double y0, double y1, double x0, double x1) {
    const Index ya = std::max<Index>(0, static_cast<Index>(std::floor(y0)));
    const Index yb = std::min<Index>(height - 1, static_cast<Index>(std::ceil(y1)));
    const Index xa = std::max<Index>(0, static_cast<Index>(std::floor(x0)));
    const Index xb = std::min<Index>(width - 1, static_cast<Index>(std::ceil(x1)));
    for (Index y = ya; y <= yb; ++y)
      for (Index x = xa; x <= xb; ++x) {
        const double v = coverage(signed_inside(double(y), double(x)), model.penetration);
        auto& m = mask[static_cast<std::size_t>(y * width + x)];
        m = std::max(m, v);
      }
  };

  for (int s = 0; s < strokes; ++s) {
    const int points = rng.integer(3, 5);
    double y = rng.uniform(0, height), x = rng.uniform(0, width);
    const double heading = rng.uniform(0, 2 * M_PI);
    const double half = rng.uniform(0.6, 1.6) * unit;
    for (int p = 1; p < points; ++p) {
      const double step = rng.uniform(0.12, 0.3) * std::min(height, width);
      const double a = heading + rng.uniform(-0.7, 0.7);
      const double ny = y + step * std::sin(a), nx = x + step * std::cos(a);
      const double pad = half + model.penetration;
      stamp([&](double py, double qx) { return half - segment_distance(py, qx, y, x, ny, nx); },
            std::min(y, ny) - pad, std::max(y, ny) + pad, std::min(x, nx) - pad, std::max(x, nx) + pad);
      y = ny;
      x = nx;
    }
  }
  for (int d = 0; d < dots; ++d) {
    const double cy = rng.uniform(0, height), cx = rng.uniform(0, width);
    const double r = rng.uniform(0.8, 2.6) * unit;
    const double pad = r + model.penetration;
    stamp([&](double py, double qx) { return r - std::hypot(py - cy, qx - cx); }, cy - pad, cy + pad,
          cx - pad, cx + pad);
  }
  return mask;
}

Image apply_ink_stain(const Image& clean, const StainModel& model, int severity, std::uint64_t seed) {
  check_image(clean, "apply_ink_stain");
  check_severity(severity);
  const int h = static_cast<int>(clean.dim(1)), w = static_cast<int>(clean.dim(2));
  const auto mask = ink_mask(h, w, model, severity, seed);
  Rng rng(mix_seed(seed, 32));
  return multiplicative(clean, mask, model.base_color,
                        severity_opacity(model.opacity_min, model.opacity_max, severity, rng));
}

// ---------------------------------------------------------------------------
// Seals and marks

OverlayParams sample_overlay(StainKind kind, int height, int width, int severity, std::uint64_t seed) {
  check_severity(severity);
  if (kind != StainKind::seal && kind != StainKind::mark)
    throw std::invalid_argument("sample_overlay: kind must be seal or mark");
  const StainModel model = StainModel::preset(kind);
  Rng rng(mix_seed(seed, 41));
  const int unit = std::max(1, std::min(height, width) / 128);
  OverlayParams p;
  p.opacity = severity_opacity(model.opacity_min, model.opacity_max, severity, rng);
  p.color = model.base_color;
  for (auto& c : p.color) c = std::clamp(c + rng.uniform(-0.05, 0.05), 0.0, 1.0);
  p.glyph_seed = rng.engine()();
  if (kind == StainKind::seal) {
    p.outer_radius = rng.uniform(0.2, 0.32) * std::min(height, width);
    p.ring_width = rng.uniform(2.0, 3.5) * unit;
    p.center_y = rng.uniform(p.outer_radius * 0.6, height - p.outer_radius * 0.6);
    p.center_x = rng.uniform(p.outer_radius * 0.6, width - p.outer_radius * 0.6);
  } else {
    p.period = rng.integer(14, 22) * unit;
    p.angle = rng.uniform(-0.6, 0.6);
  }
  return p;
}

std::vector<double> overlay_mask(StainKind kind, int height, int width, const OverlayParams& p) {
  std::vector<double> mask(static_cast<std::size_t>(height * width), 0.0);
  Rng rng(p.glyph_seed);
  if (kind == StainKind::seal) {
    const double mid = p.outer_radius - p.ring_width / 2;
    // A few straight strokes inside the ring stand in for the seal's lettering.
    struct Seg { double ay, ax, by, bx; };
    std::vector<Seg> segs;
    const int n = rng.integer(3, 6);
    const double inner = p.outer_radius * 0.55;
    for (int i = 0; i < n; ++i) {
      const double a0 = rng.uniform(0, 2 * M_PI), a1 = rng.uniform(0, 2 * M_PI);
      const double r0 = rng.uniform(0, inner), r1 = rng.uniform(0, inner);
      segs.push_back({p.center_y + r0 * std::sin(a0), p.center_x + r0 * std::cos(a0),
                      p.center_y + r1 * std::sin(a1), p.center_x + r1 * std::cos(a1)});
    }
    const double half_stroke = 0.9 * std::max(1.0, p.ring_width / 3);
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) {
        const double d = std::hypot(y - p.center_y, x - p.center_x);
        double v = coverage(p.ring_width / 2 - std::abs(d - mid), 1.0);
        for (const auto& s : segs)
          v = std::max(v, coverage(half_stroke - segment_distance(y, x, s.ay, s.ax, s.by, s.bx), 1.0));
        mask[static_cast<std::size_t>(y * width + x)] = v;
      }
  } else if (kind == StainKind::mark) {
    // A 5x5 block glyph filling the central part of each tile.
    std::array<bool, 25> glyph{};
    int on = 0;
    while (on < 9) {
      on = 0;
      for (auto& g : glyph) on += (g = rng.chance(0.5));
    }
    const double period = std::max(p.period, 5);
    const double cs = std::cos(p.angle), sn = std::sin(p.angle);
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) {
        double acc = 0;
        for (int sy = 0; sy < 2; ++sy)
          for (int sx = 0; sx < 2; ++sx) {
            const double fy = y + 0.25 + 0.5 * sy, fx = x + 0.25 + 0.5 * sx;
            const double u = fx * cs + fy * sn, v = -fx * sn + fy * cs;
            const double tu = (u / period - std::floor(u / period)) * 7.0;
            const double tv = (v / period - std::floor(v / period)) * 7.0;
            const int gu = static_cast<int>(tu) - 1, gv = static_cast<int>(tv) - 1;
            if (gu >= 0 && gu < 5 && gv >= 0 && gv < 5 && glyph[static_cast<std::size_t>(gv * 5 + gu)]) acc += 0.25;
          }
        mask[static_cast<std::size_t>(y * width + x)] = acc;
      }
  } else {
    throw std::invalid_argument("overlay_mask: kind must be seal or mark");
  }
  return mask;
}

Image apply_overlay(const Image& clean, StainKind kind, const OverlayParams& params) {
  check_image(clean, "apply_overlay");
  const int h = static_cast<int>(clean.dim(1)), w = static_cast<int>(clean.dim(2));
  const auto mask = overlay_mask(kind, h, w, params);
  Image out = clean.detach();
  const Index plane = Index(h) * w;
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < plane; ++i) {
      const double a = params.opacity * mask[static_cast<std::size_t>(i)];
      if (a == 0) continue;
      double& v = out.data()[c * plane + i];
      v = (1 - a) * v + a * params.color[c];
    }
  return out;
}

Image apply_overlay(const Image& clean, StainKind kind, std::uint64_t seed, int severity) {
  check_image(clean, "apply_overlay");
  return apply_overlay(clean, kind,
                       sample_overlay(kind, static_cast<int>(clean.dim(1)), static_cast<int>(clean.dim(2)),
                                      severity, seed));
}

Image quantize8(const Image& img) {
  Image out = img.detach();
  out.data() = (out.data().max(0.0).min(1.0) * 255.0).round() / 255.0;
  return out;
}

ImagePair make_pair(StainKind kind, int severity, std::uint64_t seed, int height, int width) {
  check_severity(severity);
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    const std::uint64_t s = mix_seed(seed, attempt);
    ImagePair pair;
    pair.kind = kind;
    pair.severity = severity;
    pair.seed = seed;
    pair.clean = quantize8(gen_document(mix_seed(s, 1), height, width));
    const std::uint64_t stain_seed = mix_seed(s, 2);
    const StainModel model = StainModel::preset(kind);
    switch (kind) {
      case StainKind::black_tea:
      case StainKind::green_tea:
        pair.stained = apply_liquid_stain(pair.clean, model, severity, stain_seed);
        break;
      case StainKind::red_ink:
      case StainKind::blue_ink:
        pair.stained = apply_ink_stain(pair.clean, model, severity, stain_seed);
        break;
      case StainKind::seal:
      case StainKind::mark:
        pair.stained = apply_overlay(pair.clean, kind, stain_seed, severity);
        break;
    }
    pair.stained = quantize8(pair.stained);
    const double p = psnr(pair.stained, pair.clean);
    if (std::isfinite(p) && p < 40.0) return pair;
  }
  throw DataError("make_pair: could not produce a visible stain for seed " + std::to_string(seed));
}

// ---------------------------------------------------------------------------
// Dataset files

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) { return mix_seed(seed, stream); }

std::uint64_t pair_seed(std::uint64_t dataset_seed, int id) {
  return mix_seed(dataset_seed, static_cast<std::uint64_t>(id) + 1000);
}

std::vector<bool> split_by_hash(int count, double test_fraction) {
  if (test_fraction < 0 || test_fraction > 1) throw std::invalid_argument("test_fraction must lie in [0,1]");
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  auto key = [](int id) { return splitmix64(static_cast<std::uint64_t>(id) ^ 0x5eedULL); };
  std::sort(order.begin(), order.end(), [&](int a, int b) { return key(a) < key(b); });
  const auto n_test = static_cast<std::size_t>(std::llround(count * test_fraction));
  std::vector<bool> test(static_cast<std::size_t>(count), false);
  for (std::size_t i = 0; i < n_test; ++i) test[static_cast<std::size_t>(order[i])] = true;
  return test;
}

std::vector<ManifestEntry> plan_dataset(const DatasetSpec& spec) {
  if (spec.count < 0) throw std::invalid_argument("dataset count must be >= 0");
  double total = 0;
  for (double m : spec.mix) {
    if (m < 0) throw std::invalid_argument("mix proportions must be >= 0");
    total += m;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw std::invalid_argument("mix proportions must sum to 1, got " + std::to_string(total));
  const auto test = split_by_hash(spec.count, spec.test_fraction);
  std::vector<ManifestEntry> out;
  for (int id = 0; id < spec.count; ++id) {
    ManifestEntry e;
    e.id = id;
    e.seed = pair_seed(spec.seed, id);
    Rng rng(mix_seed(e.seed, 7));
    double pick = rng.uniform(0, total);
    std::size_t k = 0;
    while (k + 1 < spec.mix.size() && pick >= spec.mix[k]) pick -= spec.mix[k++];
    e.kind = kAllStainKinds[k];
    e.severity = rng.integer(1, 3);
    e.test = test[static_cast<std::size_t>(id)];
    out.push_back(e);
  }
  return out;
}

namespace {
std::string id_name(int id) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << id;
  return os.str();
}
}  // namespace

std::string format_manifest_line(const ManifestEntry& e) {
  std::ostringstream os;
  os << e.id << ',' << to_string(e.kind) << ',' << e.severity << ',' << e.seed << ','
     << (e.test ? "test" : "train");
  return os.str();
}

ManifestEntry parse_manifest_line(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) f.push_back(item);
  if (f.size() != 5) throw DataError("manifest: malformed line '" + line + "'");
  ManifestEntry e;
  try {
    e.id = std::stoi(f[0]);
    e.kind = parse_stain_kind(f[1]);
    e.severity = std::stoi(f[2]);
    e.seed = std::stoull(f[3]);
  } catch (const std::logic_error&) {
    throw DataError("manifest: malformed line '" + line + "'");
  }
  if (f[4] != "train" && f[4] != "test") throw DataError("manifest: bad split '" + f[4] + "'");
  e.test = f[4] == "test";
  return e;
}

std::vector<ManifestEntry> gen_dataset(const std::string& dir, const DatasetSpec& spec) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("gen_dataset: cannot create directory '" + dir + "'");
  const auto plan = plan_dataset(spec);
  std::ofstream manifest(fs::path(dir) / "manifest.csv", std::ios::binary);
  if (!manifest) throw DataError("gen_dataset: directory '" + dir + "' is not writable");
  for (const auto& e : plan) {
    const ImagePair pair = make_pair(e.kind, e.severity, e.seed, spec.height, spec.width);
    write_ppm((fs::path(dir) / (id_name(e.id) + "_clean.ppm")).string(), pair.clean);
    write_ppm((fs::path(dir) / (id_name(e.id) + "_stained.ppm")).string(), pair.stained);
    manifest << format_manifest_line(e) << '\n';
  }
  if (!manifest) throw DataError("gen_dataset: failed writing manifest in '" + dir + "'");
  return plan;
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw DataError("dataset '" + dir + "' has no readable manifest.csv");
  Dataset ds;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const ManifestEntry e = parse_manifest_line(line);
    ImagePair pair;
    pair.kind = e.kind;
    pair.severity = e.severity;
    pair.seed = e.seed;
    pair.clean = read_ppm((fs::path(dir) / (id_name(e.id) + "_clean.ppm")).string());
    pair.stained = read_ppm((fs::path(dir) / (id_name(e.id) + "_stained.ppm")).string());
    if (pair.clean.shape() != pair.stained.shape())
      throw DataError("dataset pair " + id_name(e.id) + " has mismatched image sizes");
    (e.test ? ds.test : ds.train).push_back(std::move(pair));
    (e.test ? ds.test_ids : ds.train_ids).push_back(id_name(e.id));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Augmentation

Image flip_horizontal(const Image& img) {
  Image out(img.shape());
  const Index H = img.dim(1), W = img.dim(2);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) px(out, c, y, x) = px(img, c, y, W - 1 - x);
  return out;
}

Image flip_vertical(const Image& img) {
  Image out(img.shape());
  const Index H = img.dim(1), W = img.dim(2);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) px(out, c, y, x) = px(img, c, H - 1 - y, x);
  return out;
}

Image rotate90(const Image& img, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return img.detach();
  const Index H = img.dim(1), W = img.dim(2);
  Image out(k == 2 ? Shape{3, H, W} : Shape{3, W, H});
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const double v = px(img, c, y, x);
        if (k == 1) px(out, c, W - 1 - x, y) = v;
        else if (k == 2) px(out, c, H - 1 - y, W - 1 - x) = v;
        else px(out, c, x, H - 1 - y) = v;
      }
  return out;
}

Image crop(const Image& img, int y, int x, int h, int w) {
  if (y < 0 || x < 0 || h < 1 || w < 1 || y + h > img.dim(1) || x + w > img.dim(2))
    throw std::invalid_argument("crop: window outside the image");
  Image out({3, h, w});
  for (Index c = 0; c < 3; ++c)
    for (Index yy = 0; yy < h; ++yy)
      for (Index xx = 0; xx < w; ++xx) px(out, c, yy, xx) = px(img, c, y + yy, x + xx);
  return out;
}

namespace {
Image transform(const Image& img, const AugmentPlan& plan) {
  Image out = plan.crop > 0 ? crop(img, plan.crop_y, plan.crop_x, plan.crop, plan.crop) : img.detach();
  if (plan.flip_h) out = flip_horizontal(out);
  if (plan.flip_v) out = flip_vertical(out);
  if (plan.rot90 % 4 != 0) out = rotate90(out, plan.rot90);
  return out;
}
}  // namespace

ImagePair apply_augment(const ImagePair& pair, const AugmentPlan& plan, const ImagePair* partner) {
  if (plan.crop > std::min(pair.clean.dim(1), pair.clean.dim(2)))
    throw std::invalid_argument("augment: crop " + std::to_string(plan.crop) + " larger than image");
  ImagePair out = pair;
  out.stained = transform(pair.stained, plan);
  out.clean = transform(pair.clean, plan);
  if (partner && plan.mixup_lambda < 1.0) {
    const Image ps = transform(partner->stained, plan), pc = transform(partner->clean, plan);
    if (ps.shape() != out.stained.shape()) throw std::invalid_argument("augment: mixup partner size differs");
    const double lam = plan.mixup_lambda;
    out.stained.data() = lam * out.stained.data() + (1 - lam) * ps.data();
    out.clean.data() = lam * out.clean.data() + (1 - lam) * pc.data();
  }
  return out;
}

AugmentPlan sample_augment(const ImagePair& pair, std::uint64_t seed, int crop_size, double mixup_alpha,
                           bool use_mixup) {
  const int H = static_cast<int>(pair.clean.dim(1)), W = static_cast<int>(pair.clean.dim(2));
  if (crop_size > std::min(H, W))
    throw std::invalid_argument("augment: crop " + std::to_string(crop_size) + " larger than image");
  Rng rng(mix_seed(seed, 51));
  AugmentPlan plan;
  plan.crop = crop_size;
  if (crop_size > 0) {
    plan.crop_y = rng.integer(0, H - crop_size);
    plan.crop_x = rng.integer(0, W - crop_size);
  }
  plan.flip_h = rng.chance(0.5);
  plan.flip_v = rng.chance(0.5);
  const bool square = crop_size > 0 || H == W;
  plan.rot90 = square ? rng.integer(0, 3) : 2 * rng.integer(0, 1);
  plan.mixup_lambda = use_mixup ? rng.beta(mixup_alpha) : 1.0;
  return plan;
}

ImagePair augment(const ImagePair& pair, std::uint64_t seed, int crop_size, double mixup_alpha,
                  const ImagePair* partner) {
  return apply_augment(pair, sample_augment(pair, seed, crop_size, mixup_alpha, partner != nullptr), partner);
}

}  // namespace stainr
