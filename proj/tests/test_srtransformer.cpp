#include "oracles.hpp"

#include "stainr/gradcheck_suite.hpp"
#include "stainr/ops.hpp"
#include "stainr/srtransformer.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

using namespace stainr;
using Td = Tensor<double>;

namespace {

void fill_random(Td& t, std::mt19937_64& rng, double sd = 0.5) {
  std::normal_distribution<double> nd(0.0, sd);
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = nd(rng);
}

Td random_tensor(const Shape& shape, std::mt19937_64& rng) {
  Td t(shape);
  fill_random(t, rng);
  return t;
}

void randomize(Conv<double>& c, std::mt19937_64& rng) {
  fill_random(c.weight, rng);
  fill_random(c.bias, rng, 0.1);
}

// 1x1 convolution applied to a single pixel vector.
oracle::Vec pointwise(const Conv<double>& c, const oracle::Vec& x) {
  const Index cout = c.weight.dim(0), cin = c.weight.dim(1);
  oracle::Vec y(static_cast<std::size_t>(cout));
  for (Index o = 0; o < cout; ++o) {
    double acc = c.bias.data()[o];
    for (Index i = 0; i < cin; ++i) acc += c.weight.data()[o * cin + i] * x[std::size_t(i)];
    y[std::size_t(o)] = acc;
  }
  return y;
}

oracle::Vec pixel(const Td& x, Index y, Index xx) {
  const Index C = x.dim(1), H = x.dim(2), W = x.dim(3);
  oracle::Vec v(static_cast<std::size_t>(C));
  for (Index c = 0; c < C; ++c) v[std::size_t(c)] = x.data()[(c * H + y) * W + xx];
  return v;
}

// Direct per-query window attention over a concentric, zero-padded kv window.
Td oca_oracle(const Td& x, const OcaParams<double>& p) {
  const Index C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index d = C / p.heads, margin = (p.kv_window - p.window) / 2;
  Td out(x.shape());
  for (Index y = 0; y < H; ++y)
    for (Index xx = 0; xx < W; ++xx) {
      const oracle::Vec q = pointwise(p.q, pixel(x, y, xx));
      const Index y0 = (y / p.window) * p.window - margin, x0 = (xx / p.window) * p.window - margin;
      oracle::Vec mixed(static_cast<std::size_t>(C), 0.0);
      for (int h = 0; h < p.heads; ++h) {
        std::vector<double> score;
        std::vector<oracle::Vec> vals;
        for (Index u = 0; u < p.kv_window; ++u)
          for (Index v = 0; v < p.kv_window; ++v) {
            const Index ky = y0 + u, kx = x0 + v;
            oracle::Vec kv(static_cast<std::size_t>(2 * C), 0.0);
            if (ky >= 0 && ky < H && kx >= 0 && kx < W) kv = pointwise(p.kv, pixel(x, ky, kx));
            double s = 0;
            for (Index j = 0; j < d; ++j) s += q[std::size_t(h * d + j)] * kv[std::size_t(h * d + j)];
            score.push_back(s / std::sqrt(double(d)));
            vals.emplace_back(kv.begin() + C + h * d, kv.begin() + C + (h + 1) * d);
          }
        double mx = score[0], z = 0;
        for (double s : score) mx = std::max(mx, s);
        for (double& s : score) z += (s = std::exp(s - mx));
        for (std::size_t k = 0; k < score.size(); ++k)
          for (Index j = 0; j < d; ++j) mixed[std::size_t(h * d + j)] += score[k] / z * vals[k][std::size_t(j)];
      }
      const oracle::Vec o = pointwise(p.out, mixed);
      for (Index c = 0; c < C; ++c) out.data()[(c * H + y) * W + xx] = o[std::size_t(c)];
    }
  return out;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.levels = 1;
  cfg.blocks_per_level = {1};
  cfg.heads_per_level = {1};
  cfg.base_channels = 4;
  cfg.enable_docmemory = false;
  return cfg;
}

}  // namespace

TEST_SUITE("mhdca") {
  TEST_CASE("zero value path leaves the output bias") {
    std::mt19937_64 rng(1);
    auto p = MhdcaParams<double>::create(4, 2, rng);
    randomize(p.out, rng);
    // Zero the V rows of both projections.
    for (Index o = 8; o < 12; ++o) {
      for (Index i = 0; i < 4; ++i) p.qkv.weight.data()[o * 4 + i] = 0;
      p.qkv.bias.data()[o] = 0;
      p.qkv_dw.bias.data()[o] = 0;
    }
    Td y = mhdca(random_tensor({1, 4, 3, 3}, rng), p);
    for (Index c = 0; c < 4; ++c)
      for (Index i = 0; i < 9; ++i) CHECK(y.data()[c * 9 + i] == doctest::Approx(p.out.bias.data()[c]).epsilon(1e-14));
  }

  TEST_CASE("single head on one pixel matches a hand-rolled 2x2 channel attention") {
    std::mt19937_64 rng(2);
    auto p = MhdcaParams<double>::create(2, 1, rng);
    randomize(p.qkv, rng);
    randomize(p.qkv_dw, rng);
    randomize(p.out, rng);
    p.log_temperature.data()[0] = 0.4;
    Td x = random_tensor({1, 2, 1, 1}, rng);

    // On a 1x1 map the 3x3 depthwise conv sees only its center tap.
    oracle::Vec qkv = pointwise(p.qkv, {x.data()[0], x.data()[1]});
    for (int c = 0; c < 6; ++c) qkv[std::size_t(c)] = qkv[std::size_t(c)] * p.qkv_dw.weight.data()[c * 9 + 4] + p.qkv_dw.bias.data()[c];
    // L2 normalization over a single spatial entry leaves only the sign.
    const double q[2] = {qkv[0] / std::fabs(qkv[0]), qkv[1] / std::fabs(qkv[1])};
    const double k[2] = {qkv[2] / std::fabs(qkv[2]), qkv[3] / std::fabs(qkv[3])};
    const double v[2] = {qkv[4], qkv[5]};
    const double tau = std::exp(0.4);
    oracle::Vec att(2);
    for (int i = 0; i < 2; ++i) {
      const double a0 = std::exp(q[i] * k[0] * tau), a1 = std::exp(q[i] * k[1] * tau);
      att[std::size_t(i)] = (a0 * v[0] + a1 * v[1]) / (a0 + a1);
    }
    const oracle::Vec ref = pointwise(p.out, att);

    AttentionTrace<double> trace;
    Td y = mhdca(x, p, &trace);
    CHECK(y.data()[0] == doctest::Approx(ref[0]).epsilon(1e-12));
    CHECK(y.data()[1] == doctest::Approx(ref[1]).epsilon(1e-12));
    CHECK(trace.weights.shape() == Shape{1, 2, 2});
  }

  TEST_CASE("attention rows sum to one") {
    std::mt19937_64 rng(3);
    auto p = MhdcaParams<double>::create(8, 2, rng);
    AttentionTrace<double> trace;
    mhdca(random_tensor({2, 8, 5, 4}, rng), p, &trace);
    const Index rows = trace.weights.numel() / trace.weights.dim(2);
    for (Index r = 0; r < rows; ++r) {
      double s = 0;
      for (Index j = 0; j < trace.weights.dim(2); ++j) s += trace.weights.data()[r * trace.weights.dim(2) + j];
      CHECK(std::fabs(s - 1.0) < 1e-9);
    }
  }

  TEST_CASE("equivariant to pixel permutations with delta depthwise kernels") {
    std::mt19937_64 rng(4);
    auto p = MhdcaParams<double>::create(4, 2, rng);
    randomize(p.out, rng);
    p.qkv_dw.weight.data().setZero();
    for (Index c = 0; c < 12; ++c) p.qkv_dw.weight.data()[c * 9 + 4] = 1.0;
    Td x = random_tensor({1, 4, 2, 2}, rng);
    const int perm[4] = {2, 0, 3, 1};
    Td xp({1, 4, 2, 2});
    for (Index c = 0; c < 4; ++c)
      for (int i = 0; i < 4; ++i) xp.data()[c * 4 + i] = x.data()[c * 4 + perm[i]];
    Td y = mhdca(x, p), yp = mhdca(xp, p);
    for (Index c = 0; c < 4; ++c)
      for (int i = 0; i < 4; ++i) CHECK(yp.data()[c * 4 + i] == doctest::Approx(y.data()[c * 4 + perm[i]]).epsilon(1e-12));
  }

  TEST_CASE("head divisibility") {
    std::mt19937_64 rng(5);
    CHECK_THROWS_AS(MhdcaParams<double>::create(6, 4, rng), ShapeError);
    auto p = MhdcaParams<double>::create(4, 2, rng);
    CHECK_THROWS_AS(mhdca(Td({1, 6, 2, 2}), p), ShapeError);
  }
}

TEST_SUITE("oca") {
  TEST_CASE("without overlap it is plain window self-attention") {
    std::mt19937_64 rng(6);
    auto p = OcaParams<double>::create(4, 2, 2, 2, rng);
    randomize(p.out, rng);
    Td x = random_tensor({1, 4, 4, 6}, rng);
    Td y = oca(x, p);
    Td ref = oca_oracle(x, p);
    for (Index i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
  }

  TEST_CASE("overlapping windows match the zero-padded oracle") {
    std::mt19937_64 rng(7);
    auto p = OcaParams<double>::create(4, 1, 4, 6, rng);
    randomize(p.out, rng);
    Td x = random_tensor({1, 4, 8, 8}, rng);
    Td y = oca(x, p);
    Td ref = oca_oracle(x, p);
    for (Index i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
  }

  TEST_CASE("constant input gives a constant interior") {
    std::mt19937_64 rng(8);
    auto p = OcaParams<double>::create(4, 2, 4, 6, rng);
    randomize(p.out, rng);
    Td x({1, 4, 16, 16});
    for (Index c = 0; c < 4; ++c)
      for (Index i = 0; i < 256; ++i) x.data()[c * 256 + i] = 0.1 * double(c + 1);
    Td y = oca(x, p);
    // Blocks 1 and 2 in each direction have kv windows fully inside the image.
    for (Index c = 0; c < 4; ++c) {
      const double ref = y.data()[c * 256 + 4 * 16 + 4];
      for (Index r = 4; r < 12; ++r)
        for (Index col = 4; col < 12; ++col) CHECK(y.data()[c * 256 + r * 16 + col] == doctest::Approx(ref).epsilon(1e-12));
    }
  }

  TEST_CASE("attention rows sum to one") {
    std::mt19937_64 rng(9);
    auto p = OcaParams<double>::create(4, 2, 4, 6, rng);
    AttentionTrace<double> trace;
    oca(random_tensor({1, 4, 8, 8}, rng), p, &trace);
    const Index n = trace.weights.dim(2);
    CHECK(n == 36);
    for (Index r = 0; r < trace.weights.numel() / n; ++r) {
      double s = 0;
      for (Index j = 0; j < n; ++j) s += trace.weights.data()[r * n + j];
      CHECK(std::fabs(s - 1.0) < 1e-9);
    }
  }

  TEST_CASE("window divisibility") {
    std::mt19937_64 rng(10);
    auto p = OcaParams<double>::create(4, 1, 4, 6, rng);
    CHECK_THROWS_AS(oca(Td({1, 4, 6, 8}), p), ShapeError);
  }
}

TEST_SUITE("ffn") {
  TEST_CASE("zero input with zero biases gives zero") {
    std::mt19937_64 rng(11);
    auto p = FfnParams<double>::create(4, 2.0, rng);
    randomize(p.project, rng);
    p.project.bias.data().setZero();
    Td y = ffn(Td({1, 4, 3, 5}), p);
    CHECK(y.shape() == Shape{1, 4, 3, 5});
    CHECK(y.data().isZero());
  }

  TEST_CASE("hidden width") {
    CHECK(FfnParams<double>::hidden_channels(4, 2.0) == 4);
    CHECK(FfnParams<double>::hidden_channels(16, 2.66) == 22);  // ceil(42.56) = 43, rounded up to 44
    CHECK(FfnParams<double>::hidden_channels(1, 0.1) == 1);
  }

  TEST_CASE("shape is preserved for odd sizes") {
    std::mt19937_64 rng(12);
    auto p = FfnParams<double>::create(3, 2.0, rng);
    CHECK(ffn(random_tensor({2, 3, 7, 5}, rng), p).shape() == Shape{2, 3, 7, 5});
  }
}

TEST_SUITE("srtransformer_block") {
  TEST_CASE("freshly created blocks are the identity bit-exactly") {
    std::mt19937_64 rng(13);
    ModelConfig cfg;
    cfg.q_window = 4;
    auto b = BlockParams<double>::create(8, 2, cfg, rng);
    Td x = random_tensor({2, 8, 8, 8}, rng);
    Td y = srtransformer_block(x, b);
    CHECK((y.data() == x.data()).all());
  }

  TEST_CASE("silencing OCA leaves the channel half plus the second FFN") {
    std::mt19937_64 rng(14);
    ModelConfig cfg;
    cfg.q_window = 4;
    auto b = BlockParams<double>::create(4, 1, cfg, rng);
    randomize(b.mhdca.out, rng);
    randomize(b.ffn1.project, rng);
    randomize(b.ffn2.project, rng);
    Td x = random_tensor({1, 4, 8, 8}, rng);
    Td fc = add(x, mhdca(channel_layer_norm(x, b.norm_channel), b.mhdca));
    Td fc_out = add(fc, ffn(channel_layer_norm(fc, b.norm_ffn1), b.ffn1));
    Td ref = add(fc_out, ffn(channel_layer_norm(fc_out, b.norm_ffn2), b.ffn2));
    Td y = srtransformer_block(x, b);
    CHECK(((y.data() - ref.data()).abs() < 1e-14).all());
  }

  TEST_CASE("gradients of the attention and block operations") {
    for (const auto& c : gradcheck_suite()) {
      if (c.name != "mhdca" && c.name != "oca" && c.name != "ffn" && c.name != "srtransformer_block") continue;
      GradcheckOptions opt;
      const auto rep = c.run(0, opt);
      INFO(c.name << ": " << rep.worst);
      CHECK(rep.passed);
    }
  }
}

TEST_SUITE("model") {
  TEST_CASE("tiny model runs a 16x16 pass") {
    auto m = build_model<double>(tiny_config(), 1);
    std::mt19937_64 rng(15);
    Td x = random_tensor({1, 3, 16, 16}, rng);
    CHECK(model_forward(x, m).shape() == x.shape());
  }

  TEST_CASE("parameter count matches the closed form") {
    // stem 3*4*9+4, block: four norms 4*8, mhdca 60+120+20+1, two ffns 2*(40+80+20),
    // oca 20+40+20, head 4*3*9+3.
    const Index block = 32 + 201 + 280 + 80;
    auto m = build_model<double>(tiny_config(), 1);
    CHECK(m.parameter_count() == 112 + block + 111);

    ModelConfig with_memory = tiny_config();
    with_memory.enable_docmemory = true;
    with_memory.bank_part = 5;
    with_memory.bank_instance = 4;
    with_memory.bank_semantic = 3;
    auto mm = build_model<double>(with_memory, 1);
    CHECK(mm.parameter_count() == 112 + block + 111 + (5 + 4 + 3) * 4 + 1 + 20);
  }

  TEST_CASE("same seed gives identical parameters; names are unique") {
    ModelConfig cfg;
    auto a = build_model<float>(cfg, 42), b = build_model<float>(cfg, 42), c = build_model<float>(cfg, 43);
    const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    REQUIRE(pa.size() == pb.size());
    bool any_diff = false;
    std::set<std::string> names;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i].first == pb[i].first);
      CHECK((pa[i].second.data() == pb[i].second.data()).all());
      any_diff = any_diff || !(pa[i].second.data() == pc[i].second.data()).all();
      names.insert(pa[i].first);
    }
    CHECK(any_diff);
    CHECK(names.size() == pa.size());
  }

  TEST_CASE("untrained model returns its input exactly") {
    for (bool memory : {false, true})
      for (bool srt : {false, true}) {
        ModelConfig cfg;
        cfg.enable_docmemory = memory;
        cfg.enable_srtransformer = srt;
        auto m = build_model<float>(cfg, 3);
        CHECK(m.memory.has_value() == memory);
        std::mt19937_64 rng(16);
        Tensor<float> x({2, 3, 64, 64});
        std::uniform_real_distribution<float> u(0.f, 1.f);
        for (Index i = 0; i < x.numel(); ++i) x.data()[i] = u(rng);
        Tensor<float> y = model_forward(x, m);
        CHECK(y.shape() == x.shape());
        CHECK((y.data() == x.data()).all());
      }
  }

  TEST_CASE("clamping applies only when requested") {
    auto m = build_model<double>(tiny_config(), 1);
    Td x = Td::full({1, 3, 8, 8}, 1.5);
    CHECK(model_forward(x, m).data()[0] == 1.5);
    CHECK(model_forward(x, m, true).data()[0] == 1.0);
  }

  TEST_CASE("indivisible input names the required padding") {
    ModelConfig cfg;
    auto m = build_model<float>(cfg, 1);
    CHECK_THROWS_WITH_AS(model_forward(Tensor<float>({1, 3, 40, 64}), m), doctest::Contains("pad 40x64 to 64x64"),
                         ShapeError);
  }

  TEST_CASE("float and double copies agree") {
    ModelConfig cfg = tiny_config();
    auto md = build_model<double>(cfg, 5);
    std::mt19937_64 rng(18);
    randomize(md.head, rng);
    auto mf = cast_model<float>(md);
    Td x = random_tensor({1, 3, 8, 8}, rng);
    Td yd = model_forward(x, md);
    Tensor<float> xf(x.shape(), x.data().cast<float>());
    Tensor<float> yf = model_forward(xf, mf);
    CHECK((yd.data() - yf.data().cast<double>()).abs().maxCoeff() < 1e-4);
  }
}
