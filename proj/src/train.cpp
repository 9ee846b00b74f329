#include "stainr/train.hpp"

#include "stainr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace stainr {

namespace {

// Training allocates and frees the same multi-megabyte buffers every step.
// Keeping them on the heap instead of fresh mappings avoids paying for page
// faults and kernel zeroing on each allocation.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
    return true;
  }();
  (void)once;
#endif
}

std::vector<Tensor<float>> tensors_of(const NamedTensors<float>& named) {
  std::vector<Tensor<float>> out;
  out.reserve(named.size());
  for (const auto& [_, t] : named) out.push_back(t);
  return out;
}

AdamWHyper hyper_of(const TrainConfig& cfg) {
  return AdamWHyper{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
}

std::vector<int> epoch_order(std::uint64_t seed, std::uint64_t epoch, int n) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0x100000000ULL + epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Mirror index into [0, n) without repeating the edge sample.
Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Model residual for one image: model(x) - x, computed in float on a
// reflect-padded copy and cropped back to the input size.
Tensor<double> residual(const RestorerModel<float>& model, const Image& stained) {
  NoGradGuard no_grad;
  const Index H = stained.dim(1), W = stained.dim(2);
  const Index m = model.config.spatial_multiple();
  const Index Hp = (H + m - 1) / m * m, Wp = (W + m - 1) / m * m;
  Tensor<float> x({1, 3, Hp, Wp});
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < Hp; ++y)
      for (Index xx = 0; xx < Wp; ++xx)
        x.data()[(c * Hp + y) * Wp + xx] =
            static_cast<float>(stained.data()[(c * H + reflect(y, H)) * W + reflect(xx, W)]);
  const Tensor<float> out = model_forward(x, model, false);
  Tensor<double> r({3, H, W});
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index xx = 0; xx < W; ++xx) {
        const Index k = (c * Hp + y) * Wp + xx;
        r.data()[(c * H + y) * W + xx] = static_cast<double>(out.data()[k] - x.data()[k]);
      }
  return r;
}

Image apply_residual(const Image& stained, const Tensor<double>& r) {
  Image out = stained.detach();
  out.data() = (out.data() + r.data()).max(0.0).min(1.0);
  return out;
}

// Evenly spread tile origins. Interior origins snap down to `align` so the
// attention windows of every tile sit on the same grid as a single pass.
std::vector<Index> tile_starts(Index length, Index tile, Index overlap, Index align) {
  if (length <= tile) return {0};
  // Snapping can shrink a gap by up to align - 1, so budget for it.
  if (tile - overlap - align < 1) align = 1;
  const Index stride = tile - overlap - (align - 1);
  const Index n = (length - tile + stride - 1) / stride + 1;
  std::vector<Index> starts;
  for (Index i = 0; i < n; ++i) {
    Index s = (i * (length - tile) + (n - 1) / 2) / (n - 1);
    if (i + 1 < n) s = s / align * align;
    starts.push_back(s);
  }
  return starts;
}

// Feathering weight along one axis. On every side that borders another tile
// the outer quarter of the overlap is ignored (its receptive field is cut off
// by the tile edge) and the weight then ramps linearly over half the overlap.
double feather(Index p, Index size, Index overlap, bool ramp_lo, bool ramp_hi) {
  if (overlap <= 0) return 1.0;
  const double skip = overlap / 4.0, span = overlap / 2.0;
  auto ramp = [&](double d) { return std::clamp((d - skip) / span, 1e-6, 1.0); };
  double w = 1.0;
  if (ramp_lo) w = std::min(w, ramp(p + 0.5));
  if (ramp_hi) w = std::min(w, ramp(size - p - 0.5));
  return w;
}

}  // namespace

void write_loss_log(std::ostream& os, const std::vector<LossLogRow>& rows) {
  os << "step,lr,mse,ssim_loss,total\n";
  std::ostringstream line;
  for (const auto& r : rows) {
    line.str("");
    line << std::setprecision(9) << r.step << ',' << r.lr << ',' << r.mse << ',' << r.ssim_loss << ',' << r.total
         << '\n';
    os << line.str();
  }
}

double mean_total(const std::vector<LossLogRow>& rows, std::size_t n, bool from_end) {
  n = std::min(n, rows.size());
  if (n == 0) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += rows[from_end ? rows.size() - 1 - i : i].total;
  return s / static_cast<double>(n);
}

std::pair<Tensor<float>, Tensor<float>> assemble_batch(const TrainConfig& cfg, const std::vector<ImagePair>& pairs,
                                                       int step) {
  const int n = static_cast<int>(pairs.size());
  const int B = cfg.batch_size, r = cfg.train_resolution;
  Tensor<float> x({B, 3, r, r}), y({B, 3, r, r});
  const Index plane = Index(3) * r * r;
  std::vector<int> order;
  std::int64_t cached_epoch = -1;
  for (int slot = 0; slot < B; ++slot) {
    const std::int64_t k = std::int64_t(step) * B + slot;
    const std::int64_t epoch = k / n;
    if (epoch != cached_epoch) {
      order = epoch_order(cfg.seed, static_cast<std::uint64_t>(epoch), n);
      cached_epoch = epoch;
    }
    const ImagePair& pair = pairs[static_cast<std::size_t>(order[static_cast<std::size_t>(k % n)])];
    const std::uint64_t slot_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(k));
    std::mt19937_64 rng(slot_seed);
    const bool mix = std::uniform_real_distribution<double>(0, 1)(rng) < cfg.mixup_prob;
    const int partner = std::uniform_int_distribution<int>(0, n - 1)(rng);
    const ImagePair sample = augment(pair, derive_seed(slot_seed, 1), r, cfg.mixup_alpha,
                                     mix ? &pairs[static_cast<std::size_t>(partner)] : nullptr);
    x.data().segment(slot * plane, plane) = sample.stained.data().cast<float>();
    y.data().segment(slot * plane, plane) = sample.clean.data().cast<float>();
  }
  return {x, y};
}

TrainResult train(const TrainConfig& cfg, const std::vector<ImagePair>& pairs, const StepCallback& on_step) {
  cfg.validate();
  if (static_cast<int>(pairs.size()) < cfg.batch_size)
    throw DataError("training needs at least batch_size=" + std::to_string(cfg.batch_size) + " pairs, got " +
                    std::to_string(pairs.size()));
  for (const auto& p : pairs)
    if (p.clean.dim(1) < cfg.train_resolution || p.clean.dim(2) < cfg.train_resolution)
      throw DataError("training pair " + shape_str(p.clean.shape()) + " is smaller than train_resolution " +
                      std::to_string(cfg.train_resolution));

  tune_allocator();
  TrainResult res{build_model<float>(cfg.model, cfg.seed), {}, {}};
  const NamedTensors<float> named = res.model.parameters();
  const std::vector<Tensor<float>> params = tensors_of(named);
  res.optim = OptimState<float>::create(params, hyper_of(cfg));
  auto& tape = GradTape<float>::current();

  for (int step = 0; step < cfg.total_steps; ++step) {
    const double lr = cosine_anneal_lr(step, cfg.total_steps, cfg.lr_max, cfg.lr_min);
    auto [x, y] = assemble_batch(cfg, pairs, step);
    tape.clear();
    for (auto p : params) p.zero_grad();
    const Tensor<float> out = model_forward(x, res.model);
    const LossTerms<float> terms = total_loss(out, y, cfg.alpha);
    LossLogRow row{step + 1, lr, terms.mse.item(), terms.ssim_loss.item(), terms.total.item()};
    if (!std::isfinite(row.total)) {
      std::ostringstream os;
      os << "non-finite loss at step " << row.step << " (lr " << lr << ", mse " << row.mse << ", ssim_loss "
         << row.ssim_loss << ")";
      tape.clear();
      throw NumericError(os.str());
    }
    backward(terms.total);
    tape.clear();
    adamw_step(params, res.optim, lr);
    res.log.push_back(row);
    if (cfg.checkpoint_interval > 0 && !cfg.out_dir.empty() && row.step % cfg.checkpoint_interval == 0) {
      std::ostringstream name;
      name << "checkpoint_" << std::setw(6) << std::setfill('0') << row.step << ".bin";
      std::filesystem::create_directories(cfg.out_dir);
      save_checkpoint((std::filesystem::path(cfg.out_dir) / name.str()).string(), res.model, &res.optim);
    }
    if (on_step && !on_step(row)) break;
  }
  for (auto p : params) p.zero_grad();
  return res;
}

TrainResult train_from_config(const TrainConfig& cfg, const StepCallback& on_step) {
  if (cfg.dataset.empty()) throw DataError("no dataset given (set 'dataset' or pass --data)");
  cfg.validate();
  const Dataset data = load_dataset(cfg.dataset);
  TrainResult res = train(cfg, data.train, on_step);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw DataError("cannot create output directory '" + cfg.out_dir + "'");
  std::ofstream log(fs::path(cfg.out_dir) / "loss_log.csv", std::ios::binary);
  if (!log) throw DataError("cannot write loss log in '" + cfg.out_dir + "'");
  write_loss_log(log, res.log);
  save_checkpoint((fs::path(cfg.out_dir) / "checkpoint.bin").string(), res.model, &res.optim);
  return res;
}

Image restore_image(const RestorerModel<float>& model, const Image& stained) {
  if (!stained.defined() || stained.ndim() != 3 || stained.dim(0) != 3)
    throw ShapeError("restore_image: expected a [3,H,W] image");
  return apply_residual(stained, residual(model, stained));
}

void validate_tiling(const ModelConfig& cfg, int tile, int overlap) {
  const int m = cfg.spatial_multiple();
  if (tile < m || tile % m != 0)
    throw ConfigError("tile " + std::to_string(tile) + " must be a positive multiple of " + std::to_string(m));
  if (overlap < 0 || 2 * overlap >= tile)
    throw ConfigError("overlap " + std::to_string(overlap) + " must satisfy 0 <= overlap < tile/2");
}

Image restore_tiled(const RestorerModel<float>& model, const Image& stained, int tile, int overlap) {
  validate_tiling(model.config, tile, overlap);
  if (!stained.defined() || stained.ndim() != 3 || stained.dim(0) != 3)
    throw ShapeError("restore_tiled: expected a [3,H,W] image");
  const Index H = stained.dim(1), W = stained.dim(2);
  if (H <= tile && W <= tile) return restore_image(model, stained);

  const Index align = model.config.spatial_multiple();
  const auto ys = tile_starts(H, tile, overlap, align), xs = tile_starts(W, tile, overlap, align);
  Tensor<double> acc({3, H, W});
  std::vector<double> wsum(static_cast<std::size_t>(H * W), 0.0);
  for (std::size_t iy = 0; iy < ys.size(); ++iy)
    for (std::size_t ix = 0; ix < xs.size(); ++ix) {
      const Index y0 = ys[iy], x0 = xs[ix];
      const Index th = std::min<Index>(tile, H - y0), tw = std::min<Index>(tile, W - x0);
      const Tensor<double> r = residual(model, crop(stained, int(y0), int(x0), int(th), int(tw)));
      for (Index y = 0; y < th; ++y) {
        const double wy = feather(y, th, overlap, iy > 0, iy + 1 < ys.size());
        for (Index x = 0; x < tw; ++x) {
          const double w = wy * feather(x, tw, overlap, ix > 0, ix + 1 < xs.size());
          wsum[static_cast<std::size_t>((y0 + y) * W + x0 + x)] += w;
          for (Index c = 0; c < 3; ++c)
            acc.data()[(c * H + y0 + y) * W + x0 + x] += w * r.data()[(c * th + y) * tw + x];
        }
      }
    }
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < H * W; ++i) acc.data()[c * H * W + i] /= wsum[static_cast<std::size_t>(i)];
  return apply_residual(stained, acc);
}

MetricsReport evaluate(const RestorerModel<float>& model, const std::vector<ImagePair>& pairs,
                       const std::vector<std::string>& ids, const EvalOptions& opts) {
  if (ids.size() != pairs.size()) throw std::invalid_argument("evaluate: one id per pair required");
  validate_tiling(model.config, opts.tile, opts.overlap);
  MetricsReport report;
  report.config_hash = model.config.hash();
  report.restored.resize(pairs.size());
  report.input.resize(pairs.size());
  const int workers = std::max(1, std::min<int>(opts.threads, static_cast<int>(pairs.size())));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto work = [&](int w) {
    try {
      for (std::size_t i = static_cast<std::size_t>(w); i < pairs.size(); i += static_cast<std::size_t>(workers)) {
        const Image restored = restore_tiled(model, pairs[i].stained, opts.tile, opts.overlap);
        report.restored[i] = measure(ids[i], restored, pairs[i].clean);
        report.input[i] = measure(ids[i], pairs[i].stained, pairs[i].clean);
      }
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return report;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const Dataset& data, const EvalOptions& opts,
                                      std::ostream* progress) {
  struct Variant {
    const char* label;
    bool mem, srt;
  };
  const Variant variants[] = {{"neither", false, false},
                              {"docmemory", true, false},
                              {"srtransformer", false, true},
                              {"both", true, true}};
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    TrainConfig cfg = base;
    cfg.model.enable_docmemory = v.mem;
    cfg.model.enable_srtransformer = v.srt;
    if (!base.out_dir.empty()) cfg.out_dir = (std::filesystem::path(base.out_dir) / v.label).string();
    if (progress) *progress << "training '" << v.label << "' (" << cfg.total_steps << " steps)\n" << std::flush;
    const TrainResult res = train(cfg, data.train);
    const MetricsReport rep = evaluate(res.model, data.test, data.test_ids, opts);
    AblationRow row;
    row.label = v.label;
    row.docmemory = v.mem;
    row.srtransformer = v.srt;
    row.restored = MetricsReport::aggregate(rep.restored);
    row.input = MetricsReport::aggregate(rep.input);
    row.first_loss = mean_total(res.log, 10, false);
    row.last_loss = mean_total(res.log, 10, true);
    rows.push_back(row);
    if (progress)
      *progress << "  psnr " << std::fixed << std::setprecision(3) << row.restored.psnr << " dB, ssim "
                << std::setprecision(4) << row.restored.ssim << std::defaultfloat << "\n"
                << std::flush;
  }
  return rows;
}

void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << std::left << std::setw(15) << "config" << std::setw(11) << "DocMemory" << std::setw(15) << "SRTransformer"
     << std::right << std::setw(10) << "PSNR" << std::setw(9) << "SSIM" << std::setw(9) << "MAE" << std::setw(12)
     << "loss@10" << std::setw(12) << "loss@end" << '\n';
  auto line = [&](const std::string& label, const std::string& mem, const std::string& srt, const ImageMetrics& m,
                  const std::string& l0, const std::string& l1) {
    os << std::left << std::setw(15) << label << std::setw(11) << mem << std::setw(15) << srt << std::right
       << std::fixed << std::setprecision(3) << std::setw(10) << m.psnr << std::setprecision(4) << std::setw(9)
       << m.ssim << std::setprecision(3) << std::setw(9) << m.mae << std::setw(12) << l0 << std::setw(12) << l1
       << std::defaultfloat << '\n';
  };
  if (!rows.empty()) line("Input", "-", "-", rows.front().input, "-", "-");
  for (const auto& r : rows) {
    std::ostringstream a, b;
    a << std::setprecision(5) << r.first_loss;
    b << std::setprecision(5) << r.last_loss;
    line(r.label, r.docmemory ? "yes" : "no", r.srtransformer ? "yes" : "no", r.restored, a.str(), b.str());
  }
}

}  // namespace stainr
