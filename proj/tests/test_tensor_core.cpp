#include "oracles.hpp"

#include "stainr/gradcheck.hpp"
#include "stainr/ops.hpp"
#include "stainr/tensor.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace stainr;
using Td = Tensor<double>;

namespace {

Td from_vec(const Shape& shape, const oracle::Vec& v) {
  Td t(shape);
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = v[static_cast<std::size_t>(i)];
  return t;
}

double max_abs_diff(const Td& t, const oracle::Vec& v) {
  double m = 0;
  for (Index i = 0; i < t.numel(); ++i) m = std::max(m, std::fabs(t.data()[i] - v[static_cast<std::size_t>(i)]));
  return m;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape and storage invariants") {
    Td t({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(shape_numel(t.shape()) == t.numel());
    CHECK(t.data().isZero());
    Td s = Td::scalar(2.5);
    CHECK(s.ndim() == 0);
    CHECK(s.item() == 2.5);
    CHECK_THROWS_AS(t.item(), ShapeError);
    CHECK_THROWS_AS(Td({2, 2}, Td::Array::Zero(3)), ShapeError);
  }

  TEST_CASE("handles share storage; detach copies") {
    Td a = Td::from({2}, {1, 2});
    Td b = a;
    b.data()[0] = 7;
    CHECK(a.data()[0] == 7);
    Td c = a.detach();
    c.data()[0] = 0;
    CHECK(a.data()[0] == 7);
  }

  TEST_CASE("gradient buffers match data shape") {
    Td a = Td::from({3}, {1, 2, 3});
    a.set_requires_grad();
    Td loss = sum(mul(a, a));
    backward(loss);
    REQUIRE(a.has_grad());
    CHECK(a.grad().size() == a.numel());
    CHECK(a.grad()[2] == doctest::Approx(6.0));
    GradTape<double>::current().clear();
  }

  TEST_CASE("backward needs a recorded scalar") {
    Td a = Td::from({2}, {1, 2});
    a.set_requires_grad();
    Td v = scale(a, 2.0);
    CHECK_THROWS_AS(backward(v), GraphError);
    Td detached = sum(a).detach();
    CHECK_THROWS_AS(backward(detached), GraphError);
    GradTape<double>::current().clear();
  }

  TEST_CASE("no-grad guard suppresses recording") {
    Td a = Td::from({2}, {1, 2});
    a.set_requires_grad();
    auto& tape = GradTape<double>::current();
    tape.clear();
    {
      NoGradGuard g;
      Td b = add(a, a);
      CHECK_FALSE(b.requires_grad());
    }
    CHECK(tape.empty());
    Td c = add(a, a);
    CHECK(tape.size() == 1);
    tape.clear();
  }

  TEST_CASE("debug checks reject non-finite inputs") {
    const bool previous = debug_checks();
    set_debug_checks(true);
    Td a = Td::from({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_AS(exp(a), NumericError);
    set_debug_checks(previous);
  }
}

TEST_SUITE("primitives") {
  TEST_CASE("add and broadcast") {
    Td r = add(Td::from({2}, {1, 2}), Td::from({2}, {3, 4}));
    CHECK(r.data()[0] == 4);
    CHECK(r.data()[1] == 6);
    Td batch = Td::from({2, 2}, {1, 2, 3, 4});
    Td row = Td::from({2}, {10, 20});
    Td b = add(batch, row);
    CHECK(b.data()[3] == 24);
    CHECK_THROWS_WITH_AS(add(Td({2, 3}), Td({4})), doctest::Contains("[2,3]"), ShapeError);
  }

  TEST_CASE("sigmoid, exp, scale") {
    CHECK(sigmoid(Td::scalar(0.0)).item() == 0.5);
    CHECK(exp(Td::scalar(0.0)).item() == 1.0);
    CHECK(scale(Td::from({2}, {1, -2}), 3.0).data()[1] == -6.0);
    CHECK(add_scalar(Td::from({1}, {1}), 0.5).data()[0] == 1.5);
    CHECK(sub(Td::from({1}, {1}), Td::from({1}, {3})).data()[0] == -2);
    CHECK(div(Td::from({1}, {1}), Td::from({1}, {4})).data()[0] == 0.25);
  }

  TEST_CASE("gelu against the closed form") {
    for (double x : {-3.0, -1.0, -0.25, 0.0, 0.5, 1.0, 2.5}) {
      const double got = gelu(Td::scalar(x)).item();
      CHECK(std::fabs(got - oracle::gelu(x)) <= 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(x)));
    }
  }

  TEST_CASE("sum and mean") {
    Td a = Td::from({2, 2}, {1, 2, 3, 4});
    CHECK(sum(a).item() == 10);
    CHECK(mean(a).item() == 2.5);
    CHECK(sum(a).ndim() == 0);
  }

  TEST_CASE("matmul") {
    std::mt19937_64 rng(3);
    Td A = from_vec({3, 3}, oracle::random_vec(9, rng));
    Td I = Td::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Td r = matmul(I, A);
    for (Index i = 0; i < 9; ++i) CHECK(r.data()[i] == A.data()[i]);
    Td B = from_vec({2, 3, 4}, oracle::random_vec(24, rng));
    Td C = from_vec({2, 4, 5}, oracle::random_vec(40, rng));
    Td P = matmul(B, C);
    CHECK(P.shape() == Shape{2, 3, 5});
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j) {
          double acc = 0;
          for (int k = 0; k < 4; ++k) acc += B.data()[(b * 3 + i) * 4 + k] * C.data()[(b * 4 + k) * 5 + j];
          CHECK(P.data()[(b * 3 + i) * 5 + j] == doctest::Approx(acc).epsilon(1e-14));
        }
    CHECK_THROWS_AS(matmul(Td({2, 3}), Td({2, 3})), ShapeError);
  }

  TEST_CASE("transpose, reshape, channel slicing") {
    Td a = Td::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Td t = transpose_last2(a);
    CHECK(t.shape() == Shape{3, 2});
    CHECK(t.data()[1] == 4);
    CHECK(reshape(a, {3, 2}).data()[5] == 6);
    CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeError);
    Td x({1, 4, 2, 2});
    for (Index i = 0; i < 16; ++i) x.data()[i] = double(i);
    Td s = slice_channels(x, 1, 2);
    CHECK(s.shape() == Shape{1, 2, 2, 2});
    CHECK(s.data()[0] == 4);
    Td back = concat_channels(slice_channels(x, 0, 1), slice_channels(x, 1, 3));
    CHECK((back.data() == x.data()).all());
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("1x1 permutation kernel is a channel permutation") {
    std::mt19937_64 rng(1);
    Td x = from_vec({1, 3, 4, 4}, oracle::random_vec(48, rng));
    Td w({3, 3, 1, 1});
    w.data()[0 * 3 + 0] = 1;  // identity
    w.data()[1 * 3 + 1] = 1;
    w.data()[2 * 3 + 2] = 1;
    Td y = conv2d(x, w, Td::zeros({3}));
    CHECK((y.data() == x.data()).all());
  }

  TEST_CASE("3x3 on a constant image") {
    std::mt19937_64 rng(2);
    const double c = 0.7;
    Td x = Td::full({1, 2, 6, 6}, c);
    Td w = from_vec({1, 2, 3, 3}, oracle::random_vec(18, rng));
    Td y = conv2d(x, w, Td(), 1, 1);
    const double expected = c * w.data().sum();
    for (int i = 1; i < 5; ++i)
      for (int j = 1; j < 5; ++j) CHECK(y.data()[i * 6 + j] == doctest::Approx(expected).epsilon(1e-14));
  }

  TEST_CASE("matches the naive loop oracle") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const int k = trial % 2 ? 3 : 1, stride = trial % 3 == 0 ? 2 : 1, pad = k == 3 ? 1 : 0;
      const int H = 4 + trial % 3, W = 5 - trial % 2;
      if ((H + 2 * pad - k) % stride || (W + 2 * pad - k) % stride) continue;
      auto xv = oracle::random_vec(std::size_t(2 * H * W), rng);
      auto wv = oracle::random_vec(std::size_t(3 * 2 * k * k), rng);
      auto bv = oracle::random_vec(3, rng);
      int Ho, Wo;
      const auto ref = oracle::conv2d(xv, 1, 2, H, W, wv, 3, k, bv, stride, pad, Ho, Wo);
      Td y = conv2d(from_vec({1, 2, H, W}, xv), from_vec({3, 2, k, k}, wv), from_vec({3}, bv), stride, pad);
      REQUIRE(y.shape() == Shape{1, 3, Ho, Wo});
      CHECK(max_abs_diff(y, ref) < 1e-10);
    }
  }

  TEST_CASE("error reporting") {
    CHECK_THROWS_WITH_AS(conv2d(Td({1, 2, 4, 4}), Td({3, 5, 3, 3}), Td(), 1, 1), doctest::Contains("channel mismatch"),
                         ShapeError);
    CHECK_THROWS_WITH_AS(conv2d(Td({1, 2, 4, 4}), Td({3, 2, 3, 3}), Td(), 2, 1), doctest::Contains("non-integral"),
                         ShapeError);
    CHECK_THROWS_AS(conv2d(Td({1, 2, 4, 4}), Td({3, 2, 5, 5}), Td(), 1, 2), ShapeError);
  }
}

TEST_SUITE("depthwise_conv2d") {
  TEST_CASE("centered delta kernel is the identity") {
    std::mt19937_64 rng(4);
    Td x = from_vec({2, 3, 5, 5}, oracle::random_vec(150, rng));
    Td w({3, 1, 3, 3});
    for (int c = 0; c < 3; ++c) w.data()[c * 9 + 4] = 1;
    Td y = depthwise_conv2d(x, w, Td::zeros({3}));
    CHECK((y.data() == x.data()).all());
  }

  TEST_CASE("channels are isolated") {
    std::mt19937_64 rng(5);
    Td x({1, 2, 4, 4});
    for (int i = 0; i < 16; ++i) x.data()[i] = double(i) - 3;
    Td w = from_vec({2, 1, 3, 3}, oracle::random_vec(18, rng));
    Td b = Td::from({2}, {0.25, -1.5});
    Td y = depthwise_conv2d(x, w, b);
    for (int i = 16; i < 32; ++i) CHECK(y.data()[i] == -1.5);
  }

  TEST_CASE("matches the grouped naive oracle") {
    std::mt19937_64 rng(6);
    // Includes maps narrower than the kernel, where padding does all the work.
    for (int trial = 0; trial < 20; ++trial) {
      const int C = 1 + trial % 4, H = 1 + trial % 5, W = 1 + (trial / 5) % 4;
      auto xv = oracle::random_vec(std::size_t(2 * C * H * W), rng);
      auto wv = oracle::random_vec(std::size_t(C * 9), rng);
      auto bv = oracle::random_vec(std::size_t(C), rng);
      Td y = depthwise_conv2d(from_vec({2, C, H, W}, xv), from_vec({C, 1, 3, 3}, wv), from_vec({C}, bv));
      CHECK(max_abs_diff(y, oracle::depthwise3x3(xv, 2, C, H, W, wv, bv)) < 1e-10);
    }
    CHECK_THROWS_AS(depthwise_conv2d(Td({1, 3, 4, 4}), Td({2, 1, 3, 3}), Td()), ShapeError);
  }
}

TEST_SUITE("normalization") {
  TEST_CASE("layer_norm") {
    Td ones = Td::full({3}, 1.0), zeros = Td::zeros({3});
    Td c = layer_norm(Td::full({2, 3}, 4.2), ones, zeros);
    CHECK(c.data().abs().maxCoeff() == 0.0);
    Td r = layer_norm(Td::from({2}, {1, -1}), Td::full({2}, 1.0), Td::zeros({2}), -1, 1e-300);
    CHECK(r.data()[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.data()[1] == doctest::Approx(-1.0).epsilon(1e-12));
    Td beta = Td::from({3}, {0.1, 0.2, 0.3});
    Td g0 = layer_norm(Td::from({1, 3}, {5, -2, 9}), Td::zeros({3}), beta);
    CHECK((g0.data() == beta.data()).all());
    std::mt19937_64 rng(7);
    Td x = from_vec({4, 8}, oracle::random_vec(32, rng, -5, 5));
    Td y = layer_norm(x, Td::full({8}, 1.0), Td::zeros({8}));
    for (int row = 0; row < 4; ++row) {
      const auto seg = y.data().segment(row * 8, 8);
      CHECK(std::fabs(seg.mean()) < 1e-12);
      CHECK((seg.square().mean()) == doctest::Approx(1.0).epsilon(1e-4));
    }
    CHECK_THROWS_AS(layer_norm(Td({2, 0}), Td({0}), Td({0})), ShapeError);
  }

  TEST_CASE("softmax") {
    Td u = softmax(Td::from({3}, {0, 0, 0}));
    for (int i = 0; i < 3; ++i) CHECK(u.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));
    Td s = softmax(Td::from({2}, {1, 0}));
    CHECK(s.data()[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1)).epsilon(1e-15));
    CHECK(s.data()[0] == doctest::Approx(0.7311).epsilon(1e-4));
    Td big = softmax(Td::from({2}, {1000, 0}));
    CHECK(big.data()[0] == 1.0);
    CHECK(big.data()[1] == 0.0);
    Td ax = softmax(Td::from({2, 2}, {1, 5, 3, 5}), 0);
    CHECK(ax.data()[0] + ax.data()[2] == doctest::Approx(1.0));
    CHECK(ax.data()[1] == 0.5);
  }

  TEST_CASE("l2_normalize") {
    Td v = l2_normalize(Td::from({1, 2}, {3, 4}));
    CHECK(v.data()[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(v.data()[1] == doctest::Approx(0.8).epsilon(1e-15));
    Td z = l2_normalize(Td::from({1, 2}, {0, 0}));
    CHECK(z.data().isZero());
  }
}

TEST_SUITE("rearrangement") {
  TEST_CASE("pixel_shuffle inverts pixel_unshuffle") {
    std::mt19937_64 rng(8);
    Td x = from_vec({2, 3, 4, 6}, oracle::random_vec(144, rng));
    Td down = pixel_unshuffle(x, 2);
    CHECK(down.shape() == Shape{2, 12, 2, 3});
    Td up = pixel_shuffle(down, 2);
    CHECK((up.data() == x.data()).all());
    // channel c*4 + i*2 + j holds pixel (2y+i, 2x+j) of input channel c
    CHECK(down.data()[((0 * 12 + 1 * 4 + 1 * 2 + 0) * 2 + 1) * 3 + 2] == x.data()[((0 * 3 + 1) * 4 + 3) * 6 + 4]);
    CHECK_THROWS_AS(pixel_unshuffle(Td({1, 1, 3, 4}), 2), ShapeError);
  }

  TEST_CASE("windows with zero padding") {
    Td x = Td::full({1, 2, 4, 4}, 1.0);
    Td w = extract_windows(x, 2, 4, 1);
    CHECK(w.shape() == Shape{4, 16, 2});
    // the top-left window reaches one pixel outside the image on two sides
    double total = 0;
    for (Index i = 0; i < 16 * 2; ++i) total += w.data()[i];
    CHECK(total == 9 * 2);
    Td m = merge_windows(extract_windows(x, 2, 2, 2), x.shape(), 2, 2);
    CHECK((m.data() == x.data()).all());
  }

  TEST_CASE("threshold_renormalize keeps at least one entry") {
    Td p = Td::from({2, 4}, {0.55, 0.30, 0.10, 0.05, 0.25, 0.25, 0.25, 0.25});
    Td t = threshold_renormalize(p, 0.26);
    CHECK(t.data()[0] == doctest::Approx(0.55 / 0.85));
    CHECK(t.data()[1] == doctest::Approx(0.30 / 0.85));
    CHECK(t.data()[2] == 0.0);
    double row = 0;
    int nonzero = 0;
    for (int i = 4; i < 8; ++i) {
      row += t.data()[i];
      nonzero += t.data()[i] > 0;
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(nonzero >= 1);
  }
}

TEST_SUITE("gradcheck") {
  TEST_CASE("passes on a correct rule and reports a broken one") {
    std::mt19937_64 rng(9);
    Td x = from_vec({2, 3}, oracle::random_vec(6, rng));
    auto ok = gradcheck([](const Td& a) { return gelu(mul(a, a)); }, x);
    CHECK(ok.passed);
    CHECK(ok.coordinates == 6);
    CHECK(ok.max_error < 1e-6);

    // A function whose recorded backward ignores half of the dependency.
    Td y = from_vec({3}, oracle::random_vec(3, rng));
    auto bad = gradcheck([&] { return add(mul(y, y.detach()), Td::zeros({3})); }, {y});
    CHECK_FALSE(bad.passed);
  }

  TEST_CASE("rejects non-deterministic functions") {
    Td x = Td::from({1}, {1.0});
    int calls = 0;
    CHECK_THROWS_AS(gradcheck([&] { return scale(x, double(++calls)); }, {x}), NumericError);
  }
}
