#pragma once

#include "stainr/tensor.hpp"

#include <random>
#include <string>

namespace stainr {

enum class MemoryLevel { part, instance, semantic };

std::string to_string(MemoryLevel level);

/// Learnable N x C prototype matrix for one level of the hierarchy.
template <typename T>
struct MemoryBank {
  Tensor<T> items;  // [N, C]
  MemoryLevel level = MemoryLevel::part;

  Index size() const { return items.dim(0); }
  Index dim() const { return items.dim(1); }

  /// Rows drawn uniformly on the unit sphere.
  static MemoryBank random(Index n, Index c, MemoryLevel level, std::mt19937_64& rng);
};

template <typename T>
struct DocMemoryParams {
  MemoryBank<T> part, instance, semantic;
  Tensor<T> mix_weight;               // one element, sigma(w) weighs the semantic level
  double sparsity_threshold = -1.0;   // negative: 1/(2N) per bank

  T threshold_for(const MemoryBank<T>& bank) const;
  static DocMemoryParams create(Index channels, Index n_part, Index n_instance, Index n_semantic,
                                double threshold, std::mt19937_64& rng);
};

template <typename T>
struct DocMemoryOutput {
  Tensor<T> part, instance, semantic;  // each [B,C,H,W]
};

/// Cosine similarity between every query row of f [L,C] and every bank row: [L,N].
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& f, const MemoryBank<T>& bank);

/// Softmax over the bank axis of the cosine similarities, then entries below
/// `threshold` are dropped and the row renormalized. threshold in [0, 1/N].
template <typename T>
Tensor<T> address_memory(const Tensor<T>& f, const MemoryBank<T>& bank, T threshold);

/// Weighted prototype readout: address_memory(f) x items, [L,C].
template <typename T>
Tensor<T> read_memory(const Tensor<T>& f, const MemoryBank<T>& bank, T threshold);

/// Chained part -> instance -> semantic reads where each pixel of the
/// feature map is one query vector.
template <typename T>
DocMemoryOutput<T> docmemory_forward(const Tensor<T>& feature_map, const DocMemoryParams<T>& params);

/// ProtoMix fusion of the three level outputs.
template <typename T>
Tensor<T> protomix(const DocMemoryOutput<T>& levels, const DocMemoryParams<T>& params);

/// Feature map [B,C,H,W] to query rows [B*H*W, C] and back.
template <typename T>
Tensor<T> pixels_to_rows(const Tensor<T>& x);
template <typename T>
Tensor<T> rows_to_pixels(const Tensor<T>& rows, const Shape& image_shape);

}  // namespace stainr
