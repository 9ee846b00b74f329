#include "stainr/srtransformer.hpp"

#include "stainr/ops.hpp"

#include <cmath>
#include <sstream>

namespace stainr {

namespace {

template <typename T>
Tensor<T> he_normal(Shape shape, Index fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor<T> t(std::move(shape), true);
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(normal(rng));
  return t;
}

template <typename T>
Tensor<T> zeros_param(Shape shape) {
  Tensor<T> t(std::move(shape), true);
  return t;
}

template <typename T>
Tensor<T> run_level(const LevelParams<T>& level, Tensor<T> x) {
  for (const auto& b : level.blocks) x = srtransformer_block(x, b);
  for (const auto& b : level.conv_blocks) x = conv_block(x, b);
  return x;
}

template <typename T>
LevelParams<T> make_level(const ModelConfig& cfg, int level, std::mt19937_64& rng) {
  LevelParams<T> out;
  const Index c = cfg.channels_at(level);
  for (int i = 0; i < cfg.blocks_per_level[level]; ++i) {
    if (cfg.enable_srtransformer)
      out.blocks.push_back(BlockParams<T>::create(c, cfg.heads_per_level[level], cfg, rng));
    else
      out.conv_blocks.push_back(ConvBlockParams<T>::create(c, rng));
  }
  return out;
}

template <typename T>
void push_conv(NamedTensors<T>& out, const std::string& name, const Conv<T>& c) {
  out.emplace_back(name + ".weight", c.weight);
  out.emplace_back(name + ".bias", c.bias);
}

template <typename T>
void push_norm(NamedTensors<T>& out, const std::string& name, const NormParams<T>& n) {
  out.emplace_back(name + ".gamma", n.gamma);
  out.emplace_back(name + ".beta", n.beta);
}

template <typename T>
void push_ffn(NamedTensors<T>& out, const std::string& name, const FfnParams<T>& f) {
  push_conv(out, name + ".expand", f.expand);
  push_conv(out, name + ".dw", f.dw);
  push_conv(out, name + ".project", f.project);
}

template <typename T>
void push_level(NamedTensors<T>& out, const std::string& name, const LevelParams<T>& level) {
  for (std::size_t i = 0; i < level.blocks.size(); ++i) {
    const auto& b = level.blocks[i];
    const std::string p = name + ".block" + std::to_string(i);
    push_norm(out, p + ".norm_channel", b.norm_channel);
    push_conv(out, p + ".mhdca.qkv", b.mhdca.qkv);
    push_conv(out, p + ".mhdca.qkv_dw", b.mhdca.qkv_dw);
    push_conv(out, p + ".mhdca.out", b.mhdca.out);
    out.emplace_back(p + ".mhdca.log_temperature", b.mhdca.log_temperature);
    push_norm(out, p + ".norm_ffn1", b.norm_ffn1);
    push_ffn(out, p + ".ffn1", b.ffn1);
    push_norm(out, p + ".norm_spatial", b.norm_spatial);
    push_conv(out, p + ".oca.q", b.oca.q);
    push_conv(out, p + ".oca.kv", b.oca.kv);
    push_conv(out, p + ".oca.out", b.oca.out);
    push_norm(out, p + ".norm_ffn2", b.norm_ffn2);
    push_ffn(out, p + ".ffn2", b.ffn2);
  }
  for (std::size_t i = 0; i < level.conv_blocks.size(); ++i) {
    const std::string p = name + ".conv" + std::to_string(i);
    push_conv(out, p + ".first", level.conv_blocks[i].first);
    push_conv(out, p + ".second", level.conv_blocks[i].second);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameter construction

template <typename T>
Tensor<T> Conv<T>::operator()(const Tensor<T>& x) const {
  if (depthwise) return depthwise_conv2d(x, weight, bias);
  return conv2d(x, weight, bias, 1, weight.dim(2) == 3 ? 1 : 0);
}

template <typename T>
Conv<T> Conv<T>::pointwise(Index cin, Index cout, std::mt19937_64& rng, bool zero) {
  Conv c;
  c.weight = zero ? zeros_param<T>({cout, cin, 1, 1}) : he_normal<T>({cout, cin, 1, 1}, cin, rng);
  c.bias = zeros_param<T>({cout});
  return c;
}

template <typename T>
Conv<T> Conv<T>::full3x3(Index cin, Index cout, std::mt19937_64& rng, bool zero) {
  Conv c;
  c.weight = zero ? zeros_param<T>({cout, cin, 3, 3}) : he_normal<T>({cout, cin, 3, 3}, cin * 9, rng);
  c.bias = zeros_param<T>({cout});
  return c;
}

template <typename T>
Conv<T> Conv<T>::depthwise3x3(Index channels, std::mt19937_64& rng) {
  Conv c;
  c.weight = he_normal<T>({channels, 1, 3, 3}, 9, rng);
  c.bias = zeros_param<T>({channels});
  c.depthwise = true;
  return c;
}

template <typename T>
NormParams<T> NormParams<T>::create(Index channels) {
  NormParams n;
  n.gamma = Tensor<T>::full({channels}, T(1));
  n.gamma.set_requires_grad(true);
  n.beta = zeros_param<T>({channels});
  return n;
}

template <typename T>
MhdcaParams<T> MhdcaParams<T>::create(Index channels, int heads, std::mt19937_64& rng) {
  if (heads < 1 || channels % heads != 0)
    throw ShapeError("mhdca: channels " + std::to_string(channels) + " not divisible by heads " +
                     std::to_string(heads));
  MhdcaParams p;
  p.qkv = Conv<T>::pointwise(channels, 3 * channels, rng);
  p.qkv_dw = Conv<T>::depthwise3x3(3 * channels, rng);
  p.out = Conv<T>::pointwise(channels, channels, rng, true);
  p.log_temperature = zeros_param<T>({heads});
  p.heads = heads;
  return p;
}

template <typename T>
OcaParams<T> OcaParams<T>::create(Index channels, int heads, int window, int kv_window,
                                  std::mt19937_64& rng) {
  OcaParams p;
  p.q = Conv<T>::pointwise(channels, channels, rng);
  p.kv = Conv<T>::pointwise(channels, 2 * channels, rng);
  p.out = Conv<T>::pointwise(channels, channels, rng, true);
  p.window = window;
  p.kv_window = kv_window;
  p.heads = heads;
  return p;
}

template <typename T>
Index FfnParams<T>::hidden_channels(Index channels, double expansion) {
  const auto expanded = static_cast<Index>(std::ceil(expansion * static_cast<double>(channels) - 1e-9));
  return std::max<Index>(1, (expanded + 1) / 2);
}

template <typename T>
FfnParams<T> FfnParams<T>::create(Index channels, double expansion, std::mt19937_64& rng) {
  const Index hidden = hidden_channels(channels, expansion);
  FfnParams p;
  p.expand = Conv<T>::pointwise(channels, 2 * hidden, rng);
  p.dw = Conv<T>::depthwise3x3(2 * hidden, rng);
  p.project = Conv<T>::pointwise(hidden, channels, rng, true);
  return p;
}

template <typename T>
BlockParams<T> BlockParams<T>::create(Index channels, int heads, const ModelConfig& cfg,
                                      std::mt19937_64& rng) {
  BlockParams b;
  b.norm_channel = NormParams<T>::create(channels);
  b.mhdca = MhdcaParams<T>::create(channels, heads, rng);
  b.norm_ffn1 = NormParams<T>::create(channels);
  b.ffn1 = FfnParams<T>::create(channels, cfg.ffn_expansion, rng);
  b.norm_spatial = NormParams<T>::create(channels);
  b.oca = OcaParams<T>::create(channels, heads, cfg.q_window, cfg.kv_window(), rng);
  b.norm_ffn2 = NormParams<T>::create(channels);
  b.ffn2 = FfnParams<T>::create(channels, cfg.ffn_expansion, rng);
  return b;
}

template <typename T>
ConvBlockParams<T> ConvBlockParams<T>::create(Index channels, std::mt19937_64& rng) {
  ConvBlockParams p;
  p.first = Conv<T>::full3x3(channels, channels, rng);
  p.second = Conv<T>::full3x3(channels, channels, rng, true);
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes

template <typename T>
Tensor<T> channel_layer_norm(const Tensor<T>& x, const NormParams<T>& p) {
  return layer_norm(x, p.gamma, p.beta, 1);
}

template <typename T>
Tensor<T> mhdca(const Tensor<T>& x, const MhdcaParams<T>& p, AttentionTrace<T>* trace) {
  if (x.ndim() != 4) throw ShapeError("mhdca: expected [B,C,H,W], got " + shape_str(x.shape()));
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (p.heads < 1 || C % p.heads != 0)
    throw ShapeError("mhdca: channels " + std::to_string(C) + " not divisible by heads " +
                     std::to_string(p.heads));
  const Index hd = C / p.heads;
  const Shape head_shape{B * p.heads, hd, H * W};

  const Tensor<T> qkv = p.qkv_dw(p.qkv(x));
  const Tensor<T> q = l2_normalize(reshape(slice_channels(qkv, 0, C), head_shape), 2);
  const Tensor<T> k = l2_normalize(reshape(slice_channels(qkv, C, C), head_shape), 2);
  const Tensor<T> v = reshape(slice_channels(qkv, 2 * C, C), head_shape);

  Tensor<T> attn = scale_slices(matmul(q, transpose_last2(k)), exp(p.log_temperature));
  attn = softmax(attn, 2);
  if (trace) trace->weights = attn;
  return p.out(reshape(matmul(attn, v), x.shape()));
}

template <typename T>
Tensor<T> oca(const Tensor<T>& x, const OcaParams<T>& p, AttentionTrace<T>* trace) {
  if (x.ndim() != 4) throw ShapeError("oca: expected [B,C,H,W], got " + shape_str(x.shape()));
  const Index C = x.dim(1);
  if (x.dim(2) % p.window != 0 || x.dim(3) % p.window != 0)
    throw ShapeError("oca: spatial size " + shape_str(x.shape()) + " not divisible by window " +
                     std::to_string(p.window));
  const Tensor<T> q = p.q(x);
  const Tensor<T> kv = p.kv(x);
  const Tensor<T> qw = extract_windows(q, p.window, p.window, p.heads);
  const Tensor<T> kw = extract_windows(slice_channels(kv, 0, C), p.window, p.kv_window, p.heads);
  const Tensor<T> vw = extract_windows(slice_channels(kv, C, C), p.window, p.kv_window, p.heads);
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(C / p.heads));
  const Tensor<T> attn = softmax(scale(matmul(qw, transpose_last2(kw)), inv_sqrt_d), 2);
  if (trace) trace->weights = attn;
  return p.out(merge_windows(matmul(attn, vw), x.shape(), p.window, p.heads));
}

template <typename T>
Tensor<T> ffn(const Tensor<T>& x, const FfnParams<T>& p) {
  const Tensor<T> h = p.dw(p.expand(x));
  const Index hidden = h.dim(1) / 2;
  return p.project(mul(gelu(slice_channels(h, 0, hidden)), slice_channels(h, hidden, hidden)));
}

template <typename T>
Tensor<T> srtransformer_block(const Tensor<T>& x, const BlockParams<T>& p) {
  const Tensor<T> fc = add(x, mhdca(channel_layer_norm(x, p.norm_channel), p.mhdca));
  const Tensor<T> fc_out = add(fc, ffn(channel_layer_norm(fc, p.norm_ffn1), p.ffn1));
  const Tensor<T> fs = add(fc_out, oca(channel_layer_norm(fc_out, p.norm_spatial), p.oca));
  return add(fs, ffn(channel_layer_norm(fs, p.norm_ffn2), p.ffn2));
}

template <typename T>
Tensor<T> conv_block(const Tensor<T>& x, const ConvBlockParams<T>& p) {
  return add(x, p.second(gelu(p.first(x))));
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
RestorerModel<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  RestorerModel<T> m;
  m.config = config;
  const Index c0 = config.base_channels;
  m.stem = Conv<T>::full3x3(3, c0, rng);
  if (config.enable_docmemory) {
    m.memory = DocMemoryParams<T>::create(c0, config.bank_part, config.bank_instance,
                                          config.bank_semantic, config.memory_threshold, rng);
    m.memory_proj = Conv<T>::pointwise(c0, c0, rng);
  }
  for (int l = 0; l + 1 < config.levels; ++l) {
    const Index c = config.channels_at(l);
    m.encoder.push_back(make_level<T>(config, l, rng));
    m.down.push_back(Conv<T>::pointwise(4 * c, 2 * c, rng));
  }
  m.bottleneck = make_level<T>(config, config.levels - 1, rng);
  m.up.resize(config.levels - 1);
  m.fuse.resize(config.levels - 1);
  m.decoder.resize(config.levels - 1);
  for (int l = config.levels - 2; l >= 0; --l) {
    const Index c = config.channels_at(l);
    m.up[l] = Conv<T>::pointwise(2 * c, 4 * c, rng);
    m.fuse[l] = Conv<T>::pointwise(2 * c, c, rng);
    m.decoder[l] = make_level<T>(config, l, rng);
  }
  m.head = Conv<T>::full3x3(c0, 3, rng, true);
  return m;
}

template <typename T>
NamedTensors<T> RestorerModel<T>::parameters() const {
  NamedTensors<T> out;
  push_conv(out, "stem", stem);
  if (memory) {
    out.emplace_back("memory.part", memory->part.items);
    out.emplace_back("memory.instance", memory->instance.items);
    out.emplace_back("memory.semantic", memory->semantic.items);
    out.emplace_back("memory.mix_weight", memory->mix_weight);
    push_conv(out, "memory.proj", memory_proj);
  }
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    push_level(out, "encoder" + std::to_string(l), encoder[l]);
    push_conv(out, "down" + std::to_string(l), down[l]);
  }
  push_level(out, "bottleneck", bottleneck);
  for (std::size_t i = decoder.size(); i-- > 0;) {
    push_conv(out, "up" + std::to_string(i), up[i]);
    push_conv(out, "fuse" + std::to_string(i), fuse[i]);
    push_level(out, "decoder" + std::to_string(i), decoder[i]);
  }
  push_conv(out, "head", head);
  return out;
}

template <typename T>
Index RestorerModel<T>::parameter_count() const {
  Index n = 0;
  for (const auto& [_, t] : parameters()) n += t.numel();
  return n;
}

template <typename Dst, typename Src>
void copy_parameters(const RestorerModel<Src>& from, RestorerModel<Dst>& to) {
  const auto src = from.parameters();
  auto dst = to.parameters();
  if (src.size() != dst.size()) throw ShapeError("copy_parameters: parameter lists differ in length");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].first != dst[i].first || src[i].second.shape() != dst[i].second.shape())
      throw ShapeError("copy_parameters: mismatch at " + src[i].first);
    dst[i].second.data() = src[i].second.data().template cast<Dst>();
  }
}

template <typename T>
Tensor<T> model_forward(const Tensor<T>& stained, const RestorerModel<T>& m, bool clamp) {
  const ModelConfig& cfg = m.config;
  if (stained.ndim() != 4 || stained.dim(1) != 3)
    throw ShapeError("model_forward: expected [B,3,H,W], got " + shape_str(stained.shape()));
  const Index mult = cfg.spatial_multiple();
  const Index H = stained.dim(2), W = stained.dim(3);
  if (H % mult != 0 || W % mult != 0) {
    std::ostringstream os;
    os << "model_forward: height and width must be multiples of " << mult << "; pad " << H << "x"
       << W << " to " << ((H + mult - 1) / mult) * mult << "x" << ((W + mult - 1) / mult) * mult;
    throw ShapeError(os.str());
  }

  Tensor<T> feat = m.stem(stained);
  if (m.memory) {
    const Tensor<T> mixed = protomix(docmemory_forward(feat, *m.memory), *m.memory);
    const Tensor<T> projected = m.memory_proj(mixed);
    feat = cfg.memory_residual ? add(feat, projected) : projected;
  }
  std::vector<Tensor<T>> skips;
  for (std::size_t l = 0; l < m.encoder.size(); ++l) {
    feat = run_level(m.encoder[l], feat);
    skips.push_back(feat);
    feat = m.down[l](pixel_unshuffle(feat, 2));
  }
  feat = run_level(m.bottleneck, feat);
  for (std::size_t l = m.decoder.size(); l-- > 0;) {
    feat = pixel_shuffle(m.up[l](feat), 2);
    feat = m.fuse[l](concat_channels(feat, skips[l]));
    feat = run_level(m.decoder[l], feat);
  }
  Tensor<T> restored = add(stained, m.head(feat));
  if (clamp) {
    restored = restored.detach();
    restored.data() = restored.data().min(T(1)).max(T(0));
  }
  return restored;
}

#define STAINR_INSTANTIATE_SRT(T)                                                                \
  template struct Conv<T>;                                                                       \
  template struct NormParams<T>;                                                                 \
  template struct MhdcaParams<T>;                                                                \
  template struct OcaParams<T>;                                                                  \
  template struct FfnParams<T>;                                                                  \
  template struct BlockParams<T>;                                                                \
  template struct ConvBlockParams<T>;                                                            \
  template struct RestorerModel<T>;                                                              \
  template Tensor<T> mhdca(const Tensor<T>&, const MhdcaParams<T>&, AttentionTrace<T>*);        \
  template Tensor<T> oca(const Tensor<T>&, const OcaParams<T>&, AttentionTrace<T>*);            \
  template Tensor<T> ffn(const Tensor<T>&, const FfnParams<T>&);                                 \
  template Tensor<T> srtransformer_block(const Tensor<T>&, const BlockParams<T>&);               \
  template Tensor<T> conv_block(const Tensor<T>&, const ConvBlockParams<T>&);                    \
  template Tensor<T> channel_layer_norm(const Tensor<T>&, const NormParams<T>&);                 \
  template RestorerModel<T> build_model<T>(const ModelConfig&, std::uint64_t);                   \
  template Tensor<T> model_forward(const Tensor<T>&, const RestorerModel<T>&, bool);

STAINR_INSTANTIATE_SRT(float)
STAINR_INSTANTIATE_SRT(double)

template void copy_parameters(const RestorerModel<float>&, RestorerModel<float>&);
template void copy_parameters(const RestorerModel<float>&, RestorerModel<double>&);
template void copy_parameters(const RestorerModel<double>&, RestorerModel<float>&);
template void copy_parameters(const RestorerModel<double>&, RestorerModel<double>&);

}  // namespace stainr
