#pragma once

#include "stainr/config.hpp"
#include "stainr/losses.hpp"
#include "stainr/srtransformer.hpp"
#include "stainr/synthdata.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace stainr {

// ---------------------------------------------------------------------------
// Optimizer

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
struct OptimState {
  AdamWHyper hyper;
  std::vector<Tensor<T>> m, v;  // first and second moments, shaped like the parameters
  std::int64_t step = 0;

  static OptimState create(const std::vector<Tensor<T>>& params, const AdamWHyper& hyper = {});
};

/// One decoupled-weight-decay Adam update using each parameter's accumulated
/// gradient. Throws GraphError when a parameter has no gradient.
template <typename T>
void adamw_step(const std::vector<Tensor<T>>& params, OptimState<T>& state, double lr);

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2.
double cosine_anneal_lr(int step, int total, double lr_max, double lr_min);

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointError : std::runtime_error {
  enum class Kind { io, bad_magic, bad_version, truncated, hash_mismatch, shape_mismatch, missing_tensor };
  CheckpointError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

std::string to_string(CheckpointError::Kind kind);

/// Parsed contents of a checkpoint file.
struct CheckpointData {
  std::uint64_t config_hash = 0;
  std::string config_text;  // ModelConfig::canonical() of the saved model
  std::int64_t optimizer_step = 0;
  NamedTensors<float> records;
};

CheckpointData read_checkpoint(const std::string& path);
ModelConfig model_config_from_canonical(const std::string& text);

/// Parameters first, then optimizer moments as adam.m/<name> and adam.v/<name>.
void save_checkpoint(const std::string& path, const RestorerModel<float>& model,
                     const OptimState<float>* optim = nullptr);
/// Verifies the config hash and every tensor shape before copying anything.
void load_checkpoint(const std::string& path, RestorerModel<float>& model, OptimState<float>* optim = nullptr);
/// Rebuilds the model from the config stored in the file.
RestorerModel<float> load_model(const std::string& path);

// ---------------------------------------------------------------------------
// Training

struct LossLogRow {
  int step = 0;  // 1-based
  double lr = 0, mse = 0, ssim_loss = 0, total = 0;
};

void write_loss_log(std::ostream& os, const std::vector<LossLogRow>& rows);

struct TrainResult {
  RestorerModel<float> model;
  OptimState<float> optim;
  std::vector<LossLogRow> log;
};

/// Called after every step; returning false stops training early.
using StepCallback = std::function<bool(const LossLogRow&)>;

/// Runs the full optimization on in-memory training pairs. Deterministic in
/// (cfg, pairs). When cfg.out_dir is non-empty, interval checkpoints are written there.
TrainResult train(const TrainConfig& cfg, const std::vector<ImagePair>& pairs, const StepCallback& on_step = {});

/// Loads cfg.dataset, trains, and writes loss_log.csv and checkpoint.bin to cfg.out_dir.
TrainResult train_from_config(const TrainConfig& cfg, const StepCallback& on_step = {});

/// The stained batch and clean targets used at `step` (0-based), as [B,3,r,r].
std::pair<Tensor<float>, Tensor<float>> assemble_batch(const TrainConfig& cfg, const std::vector<ImagePair>& pairs,
                                                       int step);

// ---------------------------------------------------------------------------
// Inference and evaluation

/// Single pass with reflect padding up to the model's spatial multiple.
/// Returns clamp(stained + residual) in double precision.
Image restore_image(const RestorerModel<float>& model, const Image& stained);

/// Overlapping tiles of edge `tile` blended by linear feathering over `overlap`
/// pixels. Images no larger than the tile take the single-pass path.
Image restore_tiled(const RestorerModel<float>& model, const Image& stained, int tile, int overlap);

/// Checks the tile edge and overlap; throws ConfigError.
void validate_tiling(const ModelConfig& cfg, int tile, int overlap);

struct EvalOptions {
  int tile = 256;
  int overlap = 32;
  int threads = 1;
};

MetricsReport evaluate(const RestorerModel<float>& model, const std::vector<ImagePair>& pairs,
                       const std::vector<std::string>& ids, const EvalOptions& opts = {});

struct AblationRow {
  std::string label;
  bool docmemory = false, srtransformer = false;
  ImageMetrics restored, input;
  double first_loss = 0, last_loss = 0;  // averages over the first and last ten steps
};

/// Trains and evaluates {neither, DocMemory only, SRT only, both} on the same data.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const Dataset& data, const EvalOptions& opts,
                                      std::ostream* progress = nullptr);
void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows);

/// Mean of `total` over the first / last `n` log rows.
double mean_total(const std::vector<LossLogRow>& rows, std::size_t n, bool from_end);

}  // namespace stainr
