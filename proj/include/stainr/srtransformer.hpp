#pragma once

#include "stainr/config.hpp"
#include "stainr/docmemory.hpp"
#include "stainr/tensor.hpp"

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace stainr {

/// Convolution weights [Cout, Cin/groups, k, k] plus bias [Cout].
template <typename T>
struct Conv {
  Tensor<T> weight, bias;
  bool depthwise = false;

  Tensor<T> operator()(const Tensor<T>& x) const;
  Index out_channels() const { return weight.dim(0); }

  /// He fan-in normal initialization, or all zeros when `zero` is set.
  static Conv pointwise(Index cin, Index cout, std::mt19937_64& rng, bool zero = false);
  static Conv full3x3(Index cin, Index cout, std::mt19937_64& rng, bool zero = false);
  static Conv depthwise3x3(Index channels, std::mt19937_64& rng);
};

template <typename T>
struct NormParams {
  Tensor<T> gamma, beta;
  static NormParams create(Index channels);
};

/// Multi-head depthwise channel attention.
template <typename T>
struct MhdcaParams {
  Conv<T> qkv;     // 1x1, C -> 3C
  Conv<T> qkv_dw;  // 3x3 depthwise over 3C
  Conv<T> out;     // 1x1, C -> C
  Tensor<T> log_temperature;  // [heads]; the temperature is exp() of it
  int heads = 1;

  static MhdcaParams create(Index channels, int heads, std::mt19937_64& rng);
};

/// Overlapping cross-attention: window x window queries attend to concentric
/// kv_window x kv_window keys/values.
template <typename T>
struct OcaParams {
  Conv<T> q;    // 1x1, C -> C
  Conv<T> kv;   // 1x1, C -> 2C
  Conv<T> out;  // 1x1, C -> C
  int window = 8;
  int kv_window = 12;
  int heads = 1;

  static OcaParams create(Index channels, int heads, int window, int kv_window, std::mt19937_64& rng);
};

/// Gated depthwise feed-forward.
template <typename T>
struct FfnParams {
  Conv<T> expand;  // 1x1, C -> 2*hidden
  Conv<T> dw;      // 3x3 depthwise over 2*hidden
  Conv<T> project; // 1x1, hidden -> C

  static FfnParams create(Index channels, double expansion, std::mt19937_64& rng);
  static Index hidden_channels(Index channels, double expansion);
};

template <typename T>
struct BlockParams {
  NormParams<T> norm_channel, norm_ffn1, norm_spatial, norm_ffn2;
  MhdcaParams<T> mhdca;
  FfnParams<T> ffn1;
  OcaParams<T> oca;
  FfnParams<T> ffn2;

  static BlockParams create(Index channels, int heads, const ModelConfig& cfg, std::mt19937_64& rng);
};

/// Residual conv block used in place of transformer blocks when they are ablated.
template <typename T>
struct ConvBlockParams {
  Conv<T> first, second;
  static ConvBlockParams create(Index channels, std::mt19937_64& rng);
};

/// Optional capture of attention maps for inspection.
template <typename T>
struct AttentionTrace {
  Tensor<T> weights;
};

template <typename T>
Tensor<T> mhdca(const Tensor<T>& x, const MhdcaParams<T>& p, AttentionTrace<T>* trace = nullptr);

template <typename T>
Tensor<T> oca(const Tensor<T>& x, const OcaParams<T>& p, AttentionTrace<T>* trace = nullptr);

template <typename T>
Tensor<T> ffn(const Tensor<T>& x, const FfnParams<T>& p);

/// F_c = F + MHDCA(LN F); F_c_out = F_c + FFN(LN F_c);
/// F_s = F_c_out + OCA(LN F_c_out); F_s_out = F_s + FFN(LN F_s).
template <typename T>
Tensor<T> srtransformer_block(const Tensor<T>& x, const BlockParams<T>& p);

template <typename T>
Tensor<T> conv_block(const Tensor<T>& x, const ConvBlockParams<T>& p);

template <typename T>
Tensor<T> channel_layer_norm(const Tensor<T>& x, const NormParams<T>& p);

template <typename T>
struct LevelParams {
  std::vector<BlockParams<T>> blocks;
  std::vector<ConvBlockParams<T>> conv_blocks;
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

/// Full restorer: stem conv, optional DocMemory + projection, U-net of
/// transformer (or conv) blocks, and a residual output head.
template <typename T>
struct RestorerModel {
  ModelConfig config;
  Conv<T> stem;                            // 3x3, 3 -> C
  std::optional<DocMemoryParams<T>> memory;
  Conv<T> memory_proj;                     // 1x1, C -> C (only with memory)
  std::vector<LevelParams<T>> encoder;     // levels - 1
  std::vector<Conv<T>> down;               // after unshuffle: 4C_l -> 2C_l
  LevelParams<T> bottleneck;
  std::vector<Conv<T>> up;                 // 2C_l -> 4C_l, then shuffle to C_l
  std::vector<Conv<T>> fuse;               // concat 2C_l -> C_l
  std::vector<LevelParams<T>> decoder;     // levels - 1
  Conv<T> head;                            // 3x3, C -> 3, zero-initialized

  /// Every learnable tensor in a fixed order with a stable name. The handles
  /// share storage with the model.
  NamedTensors<T> parameters() const;
  Index parameter_count() const;
};

template <typename T>
RestorerModel<T> build_model(const ModelConfig& config, std::uint64_t seed);

/// Copies parameter values between models of the same config.
template <typename Dst, typename Src>
void copy_parameters(const RestorerModel<Src>& from, RestorerModel<Dst>& to);

template <typename T, typename U>
RestorerModel<T> cast_model(const RestorerModel<U>& m) {
  RestorerModel<T> out = build_model<T>(m.config, 0);
  copy_parameters(m, out);
  return out;
}

/// Predicts stained + residual. `clamp` limits the result to [0,1] and is
/// meant for inference only.
template <typename T>
Tensor<T> model_forward(const Tensor<T>& stained, const RestorerModel<T>& model, bool clamp = false);

}  // namespace stainr
