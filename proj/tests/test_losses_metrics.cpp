#include "oracles.hpp"

#include "stainr/gradcheck_suite.hpp"
#include "stainr/losses.hpp"
#include "stainr/ops.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace stainr;
using Td = Tensor<double>;

namespace {

Td from_vec(const Shape& shape, const oracle::Vec& v) {
  Td t(shape);
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = v[std::size_t(i)];
  return t;
}

oracle::Vec to_vec(const Td& t) { return oracle::Vec(t.data().data(), t.data().data() + t.numel()); }

Td checkerboard(Index h, Index w) {
  Td t({1, 1, h, w});
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j) t.data()[i * w + j] = (i + j) % 2 ? 0.95 : 0.05;
  return t;
}

}  // namespace

TEST_SUITE("mse") {
  TEST_CASE("identity and constant offset") {
    Td a = Td::full({1, 3, 4, 4}, 0.3);
    CHECK(mse_loss(a, a).item() == 0.0);
    CHECK(mse_loss(add_scalar(a, 0.1), a).item() == doctest::Approx(0.01).epsilon(1e-12));
  }

  TEST_CASE("matches the loop oracle") {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 100; ++t) {
      const auto a = oracle::random_vec(2 * 3 * 5 * 4, rng, 0, 1), b = oracle::random_vec(120, rng, 0, 1);
      const double got = mse_loss(from_vec({2, 3, 5, 4}, a), from_vec({2, 3, 5, 4}, b)).item();
      CHECK(std::fabs(got - oracle::mse(a, b)) < 1e-12);
    }
  }

  TEST_CASE("shape mismatch") { CHECK_THROWS_AS(mse_loss(Td({2, 2}), Td({4})), ShapeError); }
}

TEST_SUITE("ssim") {
  TEST_CASE("window weights sum to one; constants are positive") {
    SSIMConfig cfg;
    double s = 0;
    for (double v : cfg.kernel()) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cfg.c1() == doctest::Approx(1e-4));
    CHECK(cfg.c2() == doctest::Approx(9e-4));
  }

  TEST_CASE("matches the scalar reference") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 10; ++t) {
      const int H = 11 + int(rng() % 8), W = 11 + int(rng() % 8);
      const auto a = oracle::random_vec(std::size_t(2 * H * W), rng, 0, 1);
      auto b = a;
      std::normal_distribution<double> nd(0, 0.15);
      for (auto& v : b) v = std::clamp(v + nd(rng), 0.0, 1.0);
      const double got = ssim(from_vec({1, 2, H, W}, a), from_vec({1, 2, H, W}, b)).item();
      CHECK(std::fabs(got - oracle::ssim(a, b, 2, H, W)) < 1e-9);
    }
  }

  TEST_CASE("identity, symmetry and range") {
    std::mt19937_64 rng(3);
    Td a = from_vec({1, 3, 16, 16}, oracle::random_vec(768, rng, 0, 1));
    Td b = from_vec({1, 3, 16, 16}, oracle::random_vec(768, rng, 0, 1));
    CHECK(std::fabs(ssim_loss(a, a).item()) < 1e-9);
    const double ab = ssim(a, b).item(), ba = ssim(b, a).item();
    CHECK(std::fabs(ab - ba) < 1e-12);
    CHECK(ab < 1.0 - 1e-9);
    CHECK(ab > -1.0);
  }

  TEST_CASE("inverted checkerboard scores below one half") {
    Td x = checkerboard(16, 16);
    Td inv = add_scalar(scale(x, -1.0), 1.0);
    const double s = ssim(x, inv).item();
    CHECK(s < 0.5);
    CHECK(std::fabs(s - oracle::ssim(to_vec(x), to_vec(inv), 1, 16, 16)) < 1e-9);
  }

  TEST_CASE("images smaller than the window are rejected") {
    CHECK_THROWS_AS(ssim(Td({1, 1, 10, 12}), Td({1, 1, 10, 12})), ShapeError);
  }

  TEST_CASE("ssim_value takes single images") {
    std::mt19937_64 rng(4);
    Td a = from_vec({3, 12, 12}, oracle::random_vec(432, rng, 0, 1));
    Td b = from_vec({3, 12, 12}, oracle::random_vec(432, rng, 0, 1));
    CHECK(std::fabs(ssim_value(a, b) - oracle::ssim(to_vec(a), to_vec(b), 3, 12, 12)) < 1e-9);
  }
}

TEST_SUITE("total_loss") {
  TEST_CASE("weighted sum") {
    std::mt19937_64 rng(5);
    Td a = from_vec({1, 1, 12, 12}, oracle::random_vec(144, rng, 0, 1));
    Td b = from_vec({1, 1, 12, 12}, oracle::random_vec(144, rng, 0, 1));
    auto t = total_loss(a, b, 0.2);
    CHECK(t.total.item() == doctest::Approx(t.mse.item() + 0.2 * t.ssim_loss.item()).epsilon(1e-14));
    CHECK(t.total.item() >= 0.0);
    // 0.04 + 0.2 * 0.1
    CHECK(0.04 + 0.2 * 0.1 == doctest::Approx(0.06).epsilon(1e-15));
    auto same = total_loss(a, a, 3.0);
    CHECK(std::fabs(same.total.item()) < 1e-9);
    CHECK_THROWS_AS(total_loss(a, b, -1.0), std::invalid_argument);
  }

  TEST_CASE("gradients of both terms") {
    for (const auto& c : gradcheck_suite()) {
      if (c.name != "mse_loss" && c.name != "ssim_loss") continue;
      const auto rep = c.run(1, GradcheckOptions{});
      INFO(c.name << ": " << rep.worst);
      CHECK(rep.passed);
    }
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("psnr examples") {
    Td a = Td::full({3, 8, 8}, 0.2);
    CHECK(psnr(a, a) == kPsnrCap);
    CHECK(psnr(add_scalar(a, 0.1), a) == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(psnr(add_scalar(a, 0.5), a) == doctest::Approx(10 * std::log10(4.0)).epsilon(1e-12));
    CHECK(psnr(add_scalar(a, 0.5), a) == doctest::Approx(6.0206).epsilon(1e-5));
  }

  TEST_CASE("psnr strictly decreases with noise amplitude") {
    std::mt19937_64 rng(6);
    Td clean = from_vec({3, 16, 16}, oracle::random_vec(768, rng, 0, 1));
    const auto noise = oracle::random_vec(768, rng, -1, 1);
    double prev = 1e9;
    for (double amp : {0.01, 0.02, 0.05, 0.1, 0.2}) {
      Td noisy = clean.detach();
      for (Index i = 0; i < 768; ++i) noisy.data()[i] += amp * noise[std::size_t(i)];
      const double p = psnr(noisy, clean);
      CHECK(p < prev);
      prev = p;
    }
  }

  TEST_CASE("mae scaled to 8-bit units") {
    Td a = Td::full({3, 4, 4}, 0.5);
    CHECK(mae255(a, a) == 0.0);
    CHECK(mae255(add_scalar(a, 0.1), a) == doctest::Approx(25.5).epsilon(1e-12));
    std::mt19937_64 rng(7);
    const auto x = oracle::random_vec(48, rng, 0, 1), y = oracle::random_vec(48, rng, 0, 1);
    CHECK(mae255(from_vec({3, 4, 4}, x), from_vec({3, 4, 4}, y)) == doctest::Approx(oracle::mae255(x, y)).epsilon(1e-12));
    CHECK_THROWS_AS(mae255(Td({3}), Td({4})), ShapeError);
  }

  TEST_CASE("report aggregation and serialization") {
    MetricsReport r;
    r.label = "demo";
    r.config_hash = 0xabc;
    r.restored = {{"a", 30, 0.9, 3}, {"b", 20, 0.7, 5}};
    r.input = {{"a", 25, 0.8, 4}, {"b", 15, 0.6, 6}};
    const auto m = MetricsReport::aggregate(r.restored);
    CHECK(m.psnr == 25);
    CHECK(m.ssim == doctest::Approx(0.8));
    CHECK(m.mae == 4);
    std::ostringstream csv, text;
    r.write_csv(csv);
    CHECK(csv.str() == "image_id,psnr,ssim,mae\na,30,0.9,3\nb,20,0.7,5\n");
    r.write_text(text);
    CHECK(text.str().find("images=2") != std::string::npos);
    CHECK(text.str().find("0000000000000abc") != std::string::npos);
    CHECK(text.str().find("Input") != std::string::npos);
  }
}
