#include "stainr/train.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace stainr {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'A', 'I', 'N', 'R', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(CheckpointError::Kind::truncated,
                            "checkpoint '" + path_ + "' is truncated at byte " + std::to_string(pos_));
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::vector<char> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

void write_record(Writer& w, const std::string& name, const Tensor<float>& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.ndim()));
  for (Index d : t.shape()) w.u64(static_cast<std::uint64_t>(d));
  w.u64(static_cast<std::uint64_t>(t.numel()));
  for (Index i = 0; i < t.numel(); ++i) w.f32(t.data()[i]);
}

}  // namespace

std::string to_string(CheckpointError::Kind kind) {
  switch (kind) {
    case CheckpointError::Kind::io: return "io";
    case CheckpointError::Kind::bad_magic: return "bad_magic";
    case CheckpointError::Kind::bad_version: return "bad_version";
    case CheckpointError::Kind::truncated: return "truncated";
    case CheckpointError::Kind::hash_mismatch: return "hash_mismatch";
    case CheckpointError::Kind::shape_mismatch: return "shape_mismatch";
    case CheckpointError::Kind::missing_tensor: return "missing_tensor";
  }
  return "?";
}

void save_checkpoint(const std::string& path, const RestorerModel<float>& model, const OptimState<float>* optim) {
  const auto params = model.parameters();
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u64(model.config.hash());
  w.u64(optim ? static_cast<std::uint64_t>(optim->step) : 0);
  w.str(model.config.canonical());
  std::uint32_t count = static_cast<std::uint32_t>(params.size());
  if (optim) {
    if (optim->m.size() != params.size() || optim->v.size() != params.size())
      throw std::invalid_argument("save_checkpoint: optimizer state does not match the model");
    count *= 3;
  }
  w.u32(count);
  for (const auto& [name, t] : params) write_record(w, name, t);
  if (optim) {
    for (std::size_t i = 0; i < params.size(); ++i) write_record(w, "adam.m/" + params[i].first, optim->m[i]);
    for (std::size_t i = 0; i < params.size(); ++i) write_record(w, "adam.v/" + params[i].first, optim->v[i]);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write checkpoint '" + path + "'");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "failed writing checkpoint '" + path + "'");
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot read checkpoint '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError(CheckpointError::Kind::bad_magic, "'" + path + "' is not a stainr checkpoint");
  Reader r(std::vector<char>(bytes.begin() + sizeof kMagic, bytes.end()), path);
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw CheckpointError(CheckpointError::Kind::bad_version,
                          "checkpoint '" + path + "' has format version " + std::to_string(version));
  CheckpointData data;
  data.config_hash = r.u64();
  data.optimizer_step = static_cast<std::int64_t>(r.u64());
  data.config_text = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t ndim = r.u32();
    if (ndim > 8) throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint '" + path + "' is corrupt");
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<Index>(r.u64()));
    const std::uint64_t n = r.u64();
    if (n != static_cast<std::uint64_t>(shape_numel(shape)))
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            "record '" + name + "' stores " + std::to_string(n) + " values for shape " +
                                shape_str(shape));
    r.need(4 * n);
    Tensor<float> t(shape);
    for (std::uint64_t k = 0; k < n; ++k) t.data()[static_cast<Index>(k)] = r.f32();
    data.records.emplace_back(std::move(name), std::move(t));
  }
  if (!r.at_end())
    throw CheckpointError(CheckpointError::Kind::truncated,
                          "checkpoint '" + path + "' has " + std::to_string(r.remaining()) + " trailing bytes");
  return data;
}

ModelConfig model_config_from_canonical(const std::string& text) {
  TrainConfig cfg;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed stored config entry '" + item + "'");
    set_config_value(cfg, item.substr(0, eq), item.substr(eq + 1));
  }
  cfg.model.validate();
  return cfg.model;
}

void load_checkpoint(const std::string& path, RestorerModel<float>& model, OptimState<float>* optim) {
  CheckpointData data = read_checkpoint(path);
  if (data.config_hash != model.config.hash())
    throw CheckpointError(CheckpointError::Kind::hash_mismatch,
                          "checkpoint '" + path + "' was saved for a different model config");
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, t] : data.records) by_name[name] = &t;
  auto find = [&](const std::string& name, const Tensor<float>& like) -> const Tensor<float>& {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw CheckpointError(CheckpointError::Kind::missing_tensor, "checkpoint '" + path + "' lacks '" + name + "'");
    if (it->second->shape() != like.shape())
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            "tensor '" + name + "' is " + shape_str(it->second->shape()) + " in the file but " +
                                shape_str(like.shape()) + " in the model");
    return *it->second;
  };
  const auto params = model.parameters();
  // Validate everything before mutating so a failed load leaves the model intact.
  for (const auto& [name, t] : params) find(name, t);
  if (optim) {
    if (optim->m.size() != params.size()) *optim = OptimState<float>::create([&] {
        std::vector<Tensor<float>> v;
        for (const auto& p : params) v.push_back(p.second);
        return v;
      }(), optim->hyper);
    for (const auto& [name, t] : params) {
      find("adam.m/" + name, t);
      find("adam.v/" + name, t);
    }
  }
  for (auto [name, t] : params) t.data() = find(name, t).data();
  if (optim) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      optim->m[i].data() = find("adam.m/" + params[i].first, params[i].second).data();
      optim->v[i].data() = find("adam.v/" + params[i].first, params[i].second).data();
    }
    optim->step = data.optimizer_step;
  }
}

RestorerModel<float> load_model(const std::string& path) {
  const CheckpointData data = read_checkpoint(path);
  ModelConfig cfg;
  try {
    cfg = model_config_from_canonical(data.config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint '" + path + "' has a corrupt config: " + e.what());
  }
  RestorerModel<float> model = build_model<float>(cfg, 0);
  load_checkpoint(path, model, nullptr);
  return model;
}

}  // namespace stainr
