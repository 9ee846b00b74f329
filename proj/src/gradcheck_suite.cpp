#include "stainr/gradcheck_suite.hpp"

#include "stainr/docmemory.hpp"
#include "stainr/losses.hpp"
#include "stainr/ops.hpp"
#include "stainr/srtransformer.hpp"

#include <random>

namespace stainr {

namespace {

using T = Tensor<double>;
using Leaves = std::vector<T>;

T random_tensor(const Shape& shape, std::mt19937_64& rng, double sd = 1.0, double mean = 0.0) {
  std::normal_distribution<double> d(mean, sd);
  T t(shape);
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = d(rng);
  return t;
}

T uniform_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  T t(shape);
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = d(rng);
  return t;
}

// Overwrites every leaf with fresh random values so zero-initialized
// projections do not hide gradient paths.
void scramble(const Leaves& leaves, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> d(0.0, sd);
  for (auto t : leaves)
    for (Index i = 0; i < t.numel(); ++i) t.data()[i] = d(rng);
}

void append(Leaves& out, const Conv<double>& c) {
  out.push_back(c.weight);
  out.push_back(c.bias);
}
void append(Leaves& out, const NormParams<double>& n) {
  out.push_back(n.gamma);
  out.push_back(n.beta);
}
void append(Leaves& out, const MhdcaParams<double>& p) {
  append(out, p.qkv);
  append(out, p.qkv_dw);
  append(out, p.out);
  out.push_back(p.log_temperature);
}
void append(Leaves& out, const OcaParams<double>& p) {
  append(out, p.q);
  append(out, p.kv);
  append(out, p.out);
}
void append(Leaves& out, const FfnParams<double>& p) {
  append(out, p.expand);
  append(out, p.dw);
  append(out, p.project);
}
void append(Leaves& out, const BlockParams<double>& b) {
  append(out, b.norm_channel);
  append(out, b.mhdca);
  append(out, b.norm_ffn1);
  append(out, b.ffn1);
  append(out, b.norm_spatial);
  append(out, b.oca);
  append(out, b.norm_ffn2);
  append(out, b.ffn2);
}

ModelConfig small_block_config() {
  ModelConfig cfg;
  cfg.levels = 1;
  cfg.blocks_per_level = {1};
  cfg.heads_per_level = {2};
  cfg.base_channels = 4;
  cfg.q_window = 4;
  cfg.overlap_ratio = 0.5;
  cfg.ffn_expansion = 2.0;
  return cfg;
}

GradcheckOptions with_seed(GradcheckOptions o, std::uint64_t seed) {
  o.seed = seed;
  return o;
}

std::vector<GradcheckCase> build_suite() {
  std::vector<GradcheckCase> s;

  s.push_back({"elementwise", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 T a = random_tensor({2, 3, 4}, rng), b = random_tensor({3, 4}, rng);
                 T c = uniform_tensor({3, 4}, rng, 0.5, 2.0), r = random_tensor({2, 3, 4}, rng);
                 return gradcheck(
                     [&] {
                       T x = add(mul(gelu(a), sigmoid(b)), div(sub(a, b), c));
                       return add(sum(mul(scale(exp(scale(x, 0.3)), 0.5), r)), add_scalar(mean(x), 0.1));
                     },
                     {a, b, c}, with_seed(o, seed));
               }});
  s.push_back({"reductions", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 T a = random_tensor({3, 5}, rng);
                 return gradcheck([&] { return add(sum(mul(a, a)), mean(a)); }, {a}, with_seed(o, seed));
               }});
  s.push_back({"matmul", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 T a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 4, 5}, rng), w = random_tensor({5, 2}, rng);
                 return gradcheck([&] { return matmul(transpose_last2(matmul(a, b)), matmul(matmul(a, b), w)); },
                                  {a, b, w}, with_seed(o, seed));
               }});
  s.push_back({"conv2d", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 T x = random_tensor({2, 2, 5, 5}, rng), w3 = random_tensor({3, 2, 3, 3}, rng), b3 = random_tensor({3}, rng);
                 T w1 = random_tensor({2, 3, 1, 1}, rng), b1 = random_tensor({2}, rng);
                 T ws = random_tensor({2, 2, 3, 3}, rng);
                 T ry = random_tensor({2, 2, 5, 5}, rng), rz = random_tensor({2, 2, 3, 3}, rng);
                 return gradcheck(
                     [&] {
                       T y = conv2d(conv2d(x, w3, b3, 1, 1), w1, b1);
                       T z = conv2d(y, ws, T(), 2, 1);  // strided path
                       return add(sum(mul(y, ry)), sum(mul(z, rz)));
                     },
                     {x, w3, b3, w1, b1, ws}, with_seed(o, seed));
               }});
  s.push_back({"depthwise_conv2d", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 T x = random_tensor({2, 3, 5, 4}, rng), w = random_tensor({3, 1, 3, 3}, rng), b = random_tensor({3}, rng);
                 return gradcheck([&] { return depthwise_conv2d(x, w, b); }, {x, w, b}, with_seed(o, seed));
               }});
  s.push_back({"layer_norm", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 T x = random_tensor({2, 3, 5}, rng), g = random_tensor({5}, rng, 0.3, 1.0), b = random_tensor({5}, rng);
                 T x2 = random_tensor({2, 4, 3, 3}, rng), g2 = random_tensor({4}, rng, 0.3, 1.0), b2 = random_tensor({4}, rng);
                 return gradcheck(
                     [&] { return add(sum(layer_norm(x, g, b)), sum(mul(layer_norm(x2, g2, b2, 1), x2))); },
                     {x, g, b, x2, g2, b2}, with_seed(o, seed));
               }});
  s.push_back({"softmax", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 T x = random_tensor({3, 4, 5}, rng, 2.0);
                 return gradcheck([&] { return add(sum(mul(softmax(x, 1), x)), sum(mul(softmax(x), x))); }, {x},
                                  with_seed(o, seed));
               }});
  s.push_back({"l2_normalize", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 T x = random_tensor({4, 6}, rng);
                 return gradcheck([&] { return add(l2_normalize(x, 1), l2_normalize(x, 0)); }, {x}, with_seed(o, seed));
               }});
  s.push_back({"windows", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 T x = random_tensor({1, 4, 8, 8}, rng);
                 const Shape shp = x.shape();
                 return gradcheck(
                     [&] {
                       T wide = extract_windows(x, 4, 6, 2);
                       T tight = merge_windows(extract_windows(mul(x, x), 4, 4, 2), shp, 4, 2);
                       return concat_channels(reshape(wide, {1, wide.numel() / 64, 8, 8}), tight);
                     },
                     {x}, with_seed(o, seed));
               }});
  s.push_back({"mhdca", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 auto p = MhdcaParams<double>::create(4, 2, rng);
                 Leaves leaves;
                 append(leaves, p);
                 scramble(leaves, rng, 0.5);
                 T x = random_tensor({2, 4, 5, 6}, rng);
                 leaves.insert(leaves.begin(), x);
                 return gradcheck([&] { return mhdca(x, p); }, leaves, with_seed(o, seed));
               }});
  s.push_back({"oca", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 auto p = OcaParams<double>::create(4, 2, 4, 6, rng);
                 Leaves leaves;
                 append(leaves, p);
                 scramble(leaves, rng, 0.5);
                 T x = random_tensor({1, 4, 8, 8}, rng);
                 leaves.insert(leaves.begin(), x);
                 return gradcheck([&] { return oca(x, p); }, leaves, with_seed(o, seed));
               }});
  s.push_back({"ffn", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 auto p = FfnParams<double>::create(4, 2.66, rng);
                 Leaves leaves;
                 append(leaves, p);
                 scramble(leaves, rng, 0.5);
                 T x = random_tensor({2, 4, 4, 5}, rng);
                 leaves.insert(leaves.begin(), x);
                 return gradcheck([&] { return ffn(x, p); }, leaves, with_seed(o, seed));
               }});
  s.push_back({"srtransformer_block", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 const ModelConfig cfg = small_block_config();
                 auto p = BlockParams<double>::create(4, 2, cfg, rng);
                 Leaves leaves;
                 append(leaves, p);
                 scramble(leaves, rng, 0.4);
                 T x = random_tensor({1, 4, 8, 8}, rng);
                 leaves.insert(leaves.begin(), x);
                 return gradcheck([&] { return srtransformer_block(x, p); }, leaves, with_seed(o, seed));
               }});
  s.push_back({"docmemory_forward", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 auto p = DocMemoryParams<double>::create(4, 6, 5, 4, -1.0, rng);
                 T x = random_tensor({2, 4, 3, 3}, rng);
                 Leaves leaves{x, p.part.items, p.instance.items, p.semantic.items};
                 return gradcheck(
                     [&] {
                       const auto out = docmemory_forward(x, p);
                       return concat_channels(concat_channels(out.part, out.instance), out.semantic);
                     },
                     leaves, with_seed(o, seed));
               }});
  s.push_back({"protomix", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 auto p = DocMemoryParams<double>::create(4, 6, 5, 4, -1.0, rng);
                 p.mix_weight.data()[0] = std::normal_distribution<double>(0, 1)(rng);
                 DocMemoryOutput<double> lv{random_tensor({1, 4, 3, 3}, rng), random_tensor({1, 4, 3, 3}, rng),
                                            random_tensor({1, 4, 3, 3}, rng)};
                 return gradcheck([&] { return protomix(lv, p); }, {lv.part, lv.instance, lv.semantic, p.mix_weight},
                                  with_seed(o, seed));
               }});
  s.push_back({"mse_loss", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 T a = uniform_tensor({1, 3, 16, 16}, rng, 0, 1), b = uniform_tensor({1, 3, 16, 16}, rng, 0, 1);
                 return gradcheck([&] { return mse_loss(a, b); }, {a, b}, with_seed(o, seed));
               }});
  s.push_back({"ssim_loss", [](std::uint64_t seed, const GradcheckOptions& o) {
                 std::mt19937_64 rng(seed);
                 T a = uniform_tensor({1, 3, 16, 16}, rng, 0, 1), b = uniform_tensor({1, 3, 16, 16}, rng, 0, 1);
                 return gradcheck([&] { return ssim_loss(a, b); }, {a, b}, with_seed(o, seed));
               }});
  return s;
}

}  // namespace

const std::vector<GradcheckCase>& gradcheck_suite() {
  static const std::vector<GradcheckCase> suite = build_suite();
  return suite;
}

}  // namespace stainr
