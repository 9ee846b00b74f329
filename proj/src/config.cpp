#include "stainr/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace stainr {

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  std::uint64_t h = seed;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

int ModelConfig::kv_window() const {
  return static_cast<int>(std::lround(q_window * (1.0 + overlap_ratio)));
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (levels < 1 || levels > 6) fail("levels must be in [1,6]");
  if (static_cast<int>(blocks_per_level.size()) != levels)
    fail("blocks_per_level needs " + std::to_string(levels) + " entries");
  if (static_cast<int>(heads_per_level.size()) != levels)
    fail("heads_per_level needs " + std::to_string(levels) + " entries");
  if (base_channels < 1) fail("base_channels must be positive");
  for (int l = 0; l < levels; ++l) {
    if (blocks_per_level[l] < 0) fail("blocks_per_level entries must be >= 0");
    if (heads_per_level[l] < 1 || channels_at(l) % heads_per_level[l] != 0)
      fail("channels at level " + std::to_string(l) + " not divisible by heads");
  }
  if (bank_part < 1 || bank_instance < 1 || bank_semantic < 1) fail("bank sizes must be >= 1");
  const int largest = std::max({bank_part, bank_instance, bank_semantic});
  if (memory_threshold > 1.0 / largest + 1e-15)
    fail("memory_threshold must not exceed 1/N of every bank");
  if (!(ffn_expansion > 0)) fail("ffn_expansion must be positive");
  if (q_window < 1) fail("q_window must be positive");
  if (overlap_ratio < 0) fail("overlap_ratio must be >= 0");
  const double span = q_window * (1.0 + overlap_ratio);
  if (std::abs(span - std::round(span)) > 1e-9) fail("q_window * (1 + overlap_ratio) must be an integer");
  if ((kv_window() - q_window) % 2 != 0)
    fail("key/value window margin must be even so windows stay concentric");
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  auto list = [&](const std::vector<int>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  };
  os << "levels=" << levels << ";blocks_per_level=";
  list(blocks_per_level);
  os << ";base_channels=" << base_channels << ";heads_per_level=";
  list(heads_per_level);
  os << ";bank_part=" << bank_part << ";bank_instance=" << bank_instance
     << ";bank_semantic=" << bank_semantic << ";memory_threshold=" << memory_threshold
     << ";enable_docmemory=" << enable_docmemory << ";enable_srtransformer=" << enable_srtransformer
     << ";memory_residual=" << memory_residual << ";ffn_expansion=" << ffn_expansion
     << ";q_window=" << q_window << ";overlap_ratio=" << overlap_ratio;
  return os.str();
}

std::uint64_t ModelConfig::hash() const {
  const std::string c = canonical();
  return fnv1a64(c.data(), c.size());
}

void TrainConfig::validate() const {
  model.validate();
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (batch_size < 1) fail("batch_size must be positive");
  if (!(lr_min < lr_max) || lr_min < 0) fail("need 0 <= lr_min < lr_max");
  if (total_steps < 0) fail("total_steps must be >= 0");
  if (alpha < 0) fail("alpha must be >= 0");
  if (train_resolution % model.spatial_multiple() != 0)
    fail("train_resolution must be a multiple of " + std::to_string(model.spatial_multiple()));
  if (eval_resolution % model.spatial_multiple() != 0)
    fail("eval_resolution must be a multiple of " + std::to_string(model.spatial_multiple()));
  if (mixup_alpha <= 0) fail("mixup_alpha must be positive");
  if (mixup_prob < 0 || mixup_prob > 1) fail("mixup_prob must lie in [0,1]");
  if (checkpoint_interval < 0) fail("checkpoint_interval must be >= 0");
  if (threads < 1) fail("threads must be >= 1");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  N out{};
  is >> out;
  if (is.fail() || !is.eof()) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(), ::tolower);
  if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "off" || s == "no") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

std::vector<int> parse_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"levels", [](auto& c, auto& k, auto& v) { c.model.levels = parse_number<int>(k, v); }},
      {"blocks_per_level", [](auto& c, auto& k, auto& v) { c.model.blocks_per_level = parse_list(k, v); }},
      {"base_channels", [](auto& c, auto& k, auto& v) { c.model.base_channels = parse_number<int>(k, v); }},
      {"heads_per_level", [](auto& c, auto& k, auto& v) { c.model.heads_per_level = parse_list(k, v); }},
      {"bank_part", [](auto& c, auto& k, auto& v) { c.model.bank_part = parse_number<int>(k, v); }},
      {"bank_instance", [](auto& c, auto& k, auto& v) { c.model.bank_instance = parse_number<int>(k, v); }},
      {"bank_semantic", [](auto& c, auto& k, auto& v) { c.model.bank_semantic = parse_number<int>(k, v); }},
      {"memory_threshold", [](auto& c, auto& k, auto& v) { c.model.memory_threshold = parse_number<double>(k, v); }},
      {"enable_docmemory", [](auto& c, auto& k, auto& v) { c.model.enable_docmemory = parse_bool(k, v); }},
      {"enable_srtransformer", [](auto& c, auto& k, auto& v) { c.model.enable_srtransformer = parse_bool(k, v); }},
      {"memory_residual", [](auto& c, auto& k, auto& v) { c.model.memory_residual = parse_bool(k, v); }},
      {"ffn_expansion", [](auto& c, auto& k, auto& v) { c.model.ffn_expansion = parse_number<double>(k, v); }},
      {"q_window", [](auto& c, auto& k, auto& v) { c.model.q_window = parse_number<int>(k, v); }},
      {"overlap_ratio", [](auto& c, auto& k, auto& v) { c.model.overlap_ratio = parse_number<double>(k, v); }},
      {"batch_size", [](auto& c, auto& k, auto& v) { c.batch_size = parse_number<int>(k, v); }},
      {"lr_max", [](auto& c, auto& k, auto& v) { c.lr_max = parse_number<double>(k, v); }},
      {"lr_min", [](auto& c, auto& k, auto& v) { c.lr_min = parse_number<double>(k, v); }},
      {"total_steps", [](auto& c, auto& k, auto& v) { c.total_steps = parse_number<int>(k, v); }},
      {"alpha", [](auto& c, auto& k, auto& v) { c.alpha = parse_number<double>(k, v); }},
      {"beta1", [](auto& c, auto& k, auto& v) { c.beta1 = parse_number<double>(k, v); }},
      {"beta2", [](auto& c, auto& k, auto& v) { c.beta2 = parse_number<double>(k, v); }},
      {"adam_eps", [](auto& c, auto& k, auto& v) { c.adam_eps = parse_number<double>(k, v); }},
      {"weight_decay", [](auto& c, auto& k, auto& v) { c.weight_decay = parse_number<double>(k, v); }},
      {"train_resolution", [](auto& c, auto& k, auto& v) { c.train_resolution = parse_number<int>(k, v); }},
      {"eval_resolution", [](auto& c, auto& k, auto& v) { c.eval_resolution = parse_number<int>(k, v); }},
      {"mixup_alpha", [](auto& c, auto& k, auto& v) { c.mixup_alpha = parse_number<double>(k, v); }},
      {"mixup_prob", [](auto& c, auto& k, auto& v) { c.mixup_prob = parse_number<double>(k, v); }},
      {"seed", [](auto& c, auto& k, auto& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"dataset", [](auto& c, auto&, auto& v) { c.dataset = v; }},
      {"out_dir", [](auto& c, auto&, auto& v) { c.out_dir = v; }},
      {"checkpoint_interval", [](auto& c, auto& k, auto& v) { c.checkpoint_interval = parse_number<int>(k, v); }},
      {"threads", [](auto& c, auto& k, auto& v) { c.threads = parse_number<int>(k, v); }},
  };
  return table;
}

}  // namespace

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

void parse_config_text(const std::string& text, TrainConfig& cfg) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void load_config_file(const std::string& path, TrainConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  parse_config_text(ss.str(), cfg);
}

std::string describe(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(10);
  os << c.model.canonical() << ";batch_size=" << c.batch_size << ";lr_max=" << c.lr_max
     << ";lr_min=" << c.lr_min << ";total_steps=" << c.total_steps << ";alpha=" << c.alpha
     << ";weight_decay=" << c.weight_decay << ";train_resolution=" << c.train_resolution
     << ";mixup_alpha=" << c.mixup_alpha << ";mixup_prob=" << c.mixup_prob << ";seed=" << c.seed;
  return os.str();
}

void apply_environment(TrainConfig& cfg) {
  if (const char* s = std::getenv("STAINR_SEED"); s && *s) set_config_value(cfg, "seed", s);
  if (const char* t = std::getenv("STAINR_THREADS"); t && *t) set_config_value(cfg, "threads", t);
}

}  // namespace stainr
