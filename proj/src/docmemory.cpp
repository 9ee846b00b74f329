#include "stainr/docmemory.hpp"

#include "stainr/ops.hpp"

#include <cmath>

namespace stainr {

std::string to_string(MemoryLevel level) {
  switch (level) {
    case MemoryLevel::part: return "part";
    case MemoryLevel::instance: return "instance";
    case MemoryLevel::semantic: return "semantic";
  }
  return "?";
}

template <typename T>
MemoryBank<T> MemoryBank<T>::random(Index n, Index c, MemoryLevel level, std::mt19937_64& rng) {
  if (n < 1 || c < 1) throw ShapeError("memory bank needs N >= 1 and C >= 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<T> items({n, c}, true);
  for (Index i = 0; i < n; ++i) {
    double norm = 0;
    std::vector<double> row(static_cast<std::size_t>(c));
    do {
      norm = 0;
      for (auto& v : row) {
        v = normal(rng);
        norm += v * v;
      }
    } while (norm == 0);
    norm = std::sqrt(norm);
    for (Index j = 0; j < c; ++j) items.data()[i * c + j] = static_cast<T>(row[j] / norm);
  }
  return MemoryBank{items, level};
}

template <typename T>
T DocMemoryParams<T>::threshold_for(const MemoryBank<T>& bank) const {
  if (sparsity_threshold < 0) return T(1) / (T(2) * static_cast<T>(bank.size()));
  return static_cast<T>(sparsity_threshold);
}

template <typename T>
DocMemoryParams<T> DocMemoryParams<T>::create(Index channels, Index n_part, Index n_instance,
                                              Index n_semantic, double threshold,
                                              std::mt19937_64& rng) {
  DocMemoryParams p;
  p.part = MemoryBank<T>::random(n_part, channels, MemoryLevel::part, rng);
  p.instance = MemoryBank<T>::random(n_instance, channels, MemoryLevel::instance, rng);
  p.semantic = MemoryBank<T>::random(n_semantic, channels, MemoryLevel::semantic, rng);
  p.mix_weight = Tensor<T>::zeros({1});
  p.mix_weight.set_requires_grad(true);
  p.sparsity_threshold = threshold;
  return p;
}

template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& f, const MemoryBank<T>& bank) {
  if (f.ndim() != 2 || f.dim(1) != bank.dim())
    throw ShapeError("cosine_similarity: features " + shape_str(f.shape()) + " vs bank " +
                     shape_str(bank.items.shape()));
  return matmul(l2_normalize(f, 1), transpose_last2(l2_normalize(bank.items, 1)));
}

template <typename T>
Tensor<T> address_memory(const Tensor<T>& f, const MemoryBank<T>& bank, T threshold) {
  const T limit = T(1) / static_cast<T>(bank.size());
  if (threshold < 0 || threshold > limit * (T(1) + std::numeric_limits<T>::epsilon()))
    throw std::invalid_argument("address_memory: threshold must lie in [0, 1/N]");
  return threshold_renormalize(softmax(cosine_similarity(f, bank), 1), threshold);
}

template <typename T>
Tensor<T> read_memory(const Tensor<T>& f, const MemoryBank<T>& bank, T threshold) {
  return matmul(address_memory(f, bank, threshold), bank.items);
}

template <typename T>
Tensor<T> pixels_to_rows(const Tensor<T>& x) {
  if (x.ndim() != 4) throw ShapeError("pixels_to_rows: expected [B,C,H,W], got " + shape_str(x.shape()));
  const Index B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  return reshape(transpose_last2(reshape(x, {B, C, P})), {B * P, C});
}

template <typename T>
Tensor<T> rows_to_pixels(const Tensor<T>& rows, const Shape& s) {
  const Index B = s[0], C = s[1], P = s[2] * s[3];
  return reshape(transpose_last2(reshape(rows, {B, P, C})), s);
}

template <typename T>
DocMemoryOutput<T> docmemory_forward(const Tensor<T>& feature_map, const DocMemoryParams<T>& p) {
  if (feature_map.ndim() != 4 || feature_map.dim(1) != p.part.dim())
    throw ShapeError("docmemory_forward: feature map " + shape_str(feature_map.shape()) +
                     " does not match bank dimension " + std::to_string(p.part.dim()));
  const Tensor<T> rows = pixels_to_rows(feature_map);
  const Tensor<T> part = read_memory(rows, p.part, p.threshold_for(p.part));
  const Tensor<T> ins = read_memory(part, p.instance, p.threshold_for(p.instance));
  const Tensor<T> sem = read_memory(ins, p.semantic, p.threshold_for(p.semantic));
  const Shape& s = feature_map.shape();
  return {rows_to_pixels(part, s), rows_to_pixels(ins, s), rows_to_pixels(sem, s)};
}

template <typename T>
Tensor<T> protomix(const DocMemoryOutput<T>& levels, const DocMemoryParams<T>& params) {
  return protomix(levels.part, levels.instance, levels.semantic, params.mix_weight);
}

#define STAINR_INSTANTIATE_DOCMEMORY(T)                                                          \
  template struct MemoryBank<T>;                                                                 \
  template struct DocMemoryParams<T>;                                                            \
  template Tensor<T> cosine_similarity(const Tensor<T>&, const MemoryBank<T>&);                  \
  template Tensor<T> address_memory(const Tensor<T>&, const MemoryBank<T>&, T);                  \
  template Tensor<T> read_memory(const Tensor<T>&, const MemoryBank<T>&, T);                     \
  template Tensor<T> pixels_to_rows(const Tensor<T>&);                                           \
  template Tensor<T> rows_to_pixels(const Tensor<T>&, const Shape&);                             \
  template DocMemoryOutput<T> docmemory_forward(const Tensor<T>&, const DocMemoryParams<T>&);    \
  template Tensor<T> protomix(const DocMemoryOutput<T>&, const DocMemoryParams<T>&);

STAINR_INSTANTIATE_DOCMEMORY(float)
STAINR_INSTANTIATE_DOCMEMORY(double)

}  // namespace stainr
