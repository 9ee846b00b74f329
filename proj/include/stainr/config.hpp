#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace stainr {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Architecture record. Every field participates in the config hash that
/// guards checkpoint loading.
struct ModelConfig {
  int levels = 3;
  std::vector<int> blocks_per_level{1, 1, 2};
  int base_channels = 16;
  std::vector<int> heads_per_level{1, 2, 4};
  int bank_part = 64;
  int bank_instance = 32;
  int bank_semantic = 16;
  double memory_threshold = -1.0;  // negative: 1/(2N) for each bank
  bool enable_docmemory = true;
  bool enable_srtransformer = true;
  bool memory_residual = false;
  double ffn_expansion = 2.0;
  int q_window = 8;
  double overlap_ratio = 0.5;

  void validate() const;
  int channels_at(int level) const { return base_channels << level; }
  /// Edge length of the key/value windows, window * (1 + overlap).
  int kv_window() const;
  /// Input height and width must be multiples of this.
  int spatial_multiple() const { return (1 << (levels - 1)) * q_window; }
  std::string canonical() const;
  std::uint64_t hash() const;
};

struct TrainConfig {
  ModelConfig model;
  int batch_size = 4;
  double lr_max = 2e-4;
  double lr_min = 1e-6;
  int total_steps = 2000;
  double alpha = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  int train_resolution = 64;
  int eval_resolution = 256;
  double mixup_alpha = 1.2;
  double mixup_prob = 0.5;
  std::uint64_t seed = 0;
  std::string dataset;
  std::string out_dir = "run";
  int checkpoint_interval = 0;  // 0: only the final checkpoint
  int threads = 1;

  void validate() const;
};

/// Parses UTF-8 `key = value` lines with `#` comments into `cfg`.
void parse_config_text(const std::string& text, TrainConfig& cfg);
void load_config_file(const std::string& path, TrainConfig& cfg);
/// Sets one field by its config-file key. Throws ConfigError on unknown keys or bad values.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();
std::string describe(const TrainConfig& cfg);

/// Applies STAINR_SEED and STAINR_THREADS when set.
void apply_environment(TrainConfig& cfg);

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace stainr
