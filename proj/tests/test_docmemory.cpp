#include "oracles.hpp"

#include "stainr/docmemory.hpp"
#include "stainr/gradcheck_suite.hpp"
#include "stainr/ops.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace stainr;
using Td = Tensor<double>;

namespace {

MemoryBank<double> bank_of(Shape shape, std::initializer_list<double> rows, MemoryLevel level = MemoryLevel::part) {
  return MemoryBank<double>{Td::from(std::move(shape), rows), level};
}

Td random_tensor(const Shape& shape, std::mt19937_64& rng) {
  Td t(shape);
  const auto v = oracle::random_vec(static_cast<std::size_t>(t.numel()), rng);
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = v[static_cast<std::size_t>(i)];
  return t;
}

// Softmax of cosine similarities followed by thresholding, written out per row.
oracle::Vec address_oracle(const Td& f, const Td& items, double lambda) {
  const Index L = f.dim(0), C = f.dim(1), N = items.dim(0);
  oracle::Vec out(static_cast<std::size_t>(L * N));
  for (Index i = 0; i < L; ++i) {
    oracle::Vec d(static_cast<std::size_t>(N));
    double fn = 0;
    for (Index c = 0; c < C; ++c) fn += f.data()[i * C + c] * f.data()[i * C + c];
    for (Index j = 0; j < N; ++j) {
      double dot = 0, mn = 0;
      for (Index c = 0; c < C; ++c) {
        dot += f.data()[i * C + c] * items.data()[j * C + c];
        mn += items.data()[j * C + c] * items.data()[j * C + c];
      }
      d[static_cast<std::size_t>(j)] = dot / (std::sqrt(fn) * std::sqrt(mn));
    }
    double z = 0;
    for (double& v : d) z += (v = std::exp(v));
    double kept = 0;
    for (double& v : d) {
      v /= z;
      if (v < lambda) v = 0;
      kept += v;
    }
    for (Index j = 0; j < N; ++j) out[static_cast<std::size_t>(i * N + j)] = d[static_cast<std::size_t>(j)] / kept;
  }
  return out;
}

}  // namespace

TEST_SUITE("cosine_similarity") {
  TEST_CASE("parallel, orthogonal and diagonal vectors") {
    auto bank = bank_of({3, 2}, {2, 0, 0, 1, 1, 0});
    Td f = Td::from({2, 2}, {1, 0, 1, 1});
    Td d = cosine_similarity(f, bank);
    REQUIRE(d.shape() == Shape{2, 3});
    CHECK(d.data()[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::fabs(d.data()[1]) < 1e-15);
    CHECK(d.data()[5] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-14));
  }

  TEST_CASE("entries stay in [-1, 1] and ignore positive rescaling") {
    std::mt19937_64 rng(11);
    Td f = random_tensor({20, 6}, rng);
    MemoryBank<double> bank{random_tensor({9, 6}, rng), MemoryLevel::instance};
    Td d = cosine_similarity(f, bank);
    CHECK((d.data().abs() <= 1.0 + 1e-12).all());

    Td f2 = scale(f, 7.3);
    MemoryBank<double> bank2{scale(bank.items, 7.3), MemoryLevel::instance};
    Td d2 = cosine_similarity(f2, bank2);
    CHECK((d.data() - d2.data()).abs().maxCoeff() < 1e-9);
  }

  TEST_CASE("feature dimension must match") {
    auto bank = bank_of({1, 3}, {1, 0, 0});
    CHECK_THROWS_AS(cosine_similarity(Td({2, 2}), bank), ShapeError);
  }
}

TEST_SUITE("address_memory") {
  TEST_CASE("equal similarities give a uniform row") {
    auto bank = bank_of({3, 2}, {1, 1, 1, 1, 2, 2});
    Td w = address_memory(Td::from({1, 2}, {0.3, 0.3}), bank, 0.0);
    for (int j = 0; j < 3; ++j) CHECK(w.data()[j] == doctest::Approx(1.0 / 3).epsilon(1e-14));
  }

  TEST_CASE("two prototypes at cosine 1 and 0") {
    auto bank = bank_of({2, 2}, {1, 0, 0, 1});
    Td w = address_memory(Td::from({1, 2}, {5, 0}), bank, 0.0);
    CHECK(w.data()[0] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
    CHECK(w.data()[1] == doctest::Approx(0.2689414213699951).epsilon(1e-12));
  }

  TEST_CASE("threshold drops small weights and renormalizes") {
    Td p = Td::from({1, 4}, {0.55, 0.30, 0.10, 0.05});
    Td r = threshold_renormalize(p, 0.25);
    CHECK(r.data()[0] == doctest::Approx(0.55 / 0.85).epsilon(1e-14));
    CHECK(r.data()[1] == doctest::Approx(0.30 / 0.85).epsilon(1e-14));
    CHECK(r.data()[2] == 0.0);
    CHECK(r.data()[3] == 0.0);
    CHECK(r.data()[0] == doctest::Approx(0.6471).epsilon(1e-4));
  }

  TEST_CASE("matches the per-row oracle") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      Td f = random_tensor({7, 5}, rng);
      MemoryBank<double> bank{random_tensor({6, 5}, rng), MemoryLevel::part};
      const double lambda = (trial % 3) / 12.0;  // 0, 1/12, 1/6 are all within [0, 1/6]
      Td w = address_memory(f, bank, lambda);
      const auto ref = address_oracle(f, bank.items, lambda);
      for (Index i = 0; i < w.numel(); ++i) CHECK(w.data()[i] == doctest::Approx(ref[std::size_t(i)]).epsilon(1e-12));
    }
  }

  TEST_CASE("rows sum to one and keep the argmax") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 200; ++trial) {
      const Index n = 1 + Index(rng() % 12);
      Td f = random_tensor({4, 3}, rng);
      MemoryBank<double> bank{random_tensor({n, 3}, rng), MemoryLevel::part};
      Td w = address_memory(f, bank, 1.0 / double(n));
      for (Index i = 0; i < 4; ++i) {
        double s = 0;
        int nonzero = 0;
        for (Index j = 0; j < n; ++j) {
          const double v = w.data()[i * n + j];
          CHECK(v >= 0.0);
          s += v;
          nonzero += v > 0;
        }
        CHECK(std::fabs(s - 1.0) < 1e-9);
        CHECK(nonzero >= 1);
      }
    }
  }

  TEST_CASE("threshold outside [0, 1/N] is rejected") {
    auto bank = bank_of({4, 1}, {1, 1, 1, 1});
    CHECK_THROWS_AS(address_memory(Td::from({1, 1}, {1}), bank, 0.3), std::invalid_argument);
    CHECK_THROWS_AS(address_memory(Td::from({1, 1}, {1}), bank, -0.1), std::invalid_argument);
    CHECK_NOTHROW(address_memory(Td::from({1, 1}, {1}), bank, 0.25));
  }
}

TEST_SUITE("read_memory") {
  TEST_CASE("single prototype is returned for any query") {
    auto bank = bank_of({1, 3}, {0.2, -0.4, 0.9});
    std::mt19937_64 rng(2);
    Td y = read_memory(random_tensor({5, 3}, rng), bank, 0.5);
    for (Index i = 0; i < 5; ++i)
      for (Index c = 0; c < 3; ++c) CHECK(y.data()[i * 3 + c] == doctest::Approx(bank.items.data()[c]).epsilon(1e-15));
  }

  TEST_CASE("a query equal to one of orthogonal prototypes weighs it most") {
    auto bank = bank_of({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Td f = Td::from({1, 3}, {0, 1, 0});
    Td w = address_memory(f, bank, 1.0 / 6);
    CHECK(w.data()[1] > w.data()[0]);
    CHECK(w.data()[1] > w.data()[2]);
    Td y = read_memory(f, bank, 1.0 / 6);
    CHECK(y.data()[1] > y.data()[0]);
    CHECK(y.data()[1] > y.data()[2]);
  }

  TEST_CASE("duplicate prototypes") {
    auto bank = bank_of({2, 2}, {0.6, 0.8, 0.6, 0.8});
    Td y = read_memory(Td::from({1, 2}, {-1, 3}), bank, 0.0);
    CHECK(y.data()[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(y.data()[1] == doctest::Approx(0.8).epsilon(1e-15));
  }

  TEST_CASE("outputs lie in the convex hull of the prototypes") {
    std::mt19937_64 rng(21);
    MemoryBank<double> bank{random_tensor({5, 2}, rng), MemoryLevel::part};
    Td y = read_memory(random_tensor({30, 2}, rng), bank, 0.1);
    // Per coordinate the output is bounded by the bank's extremes.
    for (Index c = 0; c < 2; ++c) {
      double lo = 1e300, hi = -1e300;
      for (Index j = 0; j < 5; ++j) {
        lo = std::min(lo, bank.items.data()[j * 2 + c]);
        hi = std::max(hi, bank.items.data()[j * 2 + c]);
      }
      for (Index i = 0; i < 30; ++i) {
        CHECK(y.data()[i * 2 + c] >= lo - 1e-12);
        CHECK(y.data()[i * 2 + c] <= hi + 1e-12);
      }
    }
  }
}

TEST_SUITE("banks") {
  TEST_CASE("random banks have unit rows and are seeded") {
    std::mt19937_64 a(4), b(4);
    auto x = MemoryBank<double>::random(16, 8, MemoryLevel::semantic, a);
    auto y = MemoryBank<double>::random(16, 8, MemoryLevel::semantic, b);
    CHECK((x.items.data() == y.items.data()).all());
    for (Index j = 0; j < 16; ++j) {
      double n = 0;
      for (Index c = 0; c < 8; ++c) n += x.items.data()[j * 8 + c] * x.items.data()[j * 8 + c];
      CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(to_string(MemoryLevel::instance) == "instance");
  }

  TEST_CASE("default thresholds are half the uniform weight") {
    std::mt19937_64 rng(1);
    auto p = DocMemoryParams<double>::create(4, 64, 32, 16, -1.0, rng);
    CHECK(p.threshold_for(p.part) == 1.0 / 128);
    CHECK(p.threshold_for(p.semantic) == 1.0 / 32);
    CHECK(p.mix_weight.numel() == 1);
    CHECK(p.mix_weight.data()[0] == 0.0);
  }
}

TEST_SUITE("docmemory_forward") {
  TEST_CASE("single-item banks collapse to the semantic prototype") {
    DocMemoryParams<double> p;
    p.part = bank_of({1, 2}, {1, 0}, MemoryLevel::part);
    p.instance = bank_of({1, 2}, {0, 1}, MemoryLevel::instance);
    p.semantic = bank_of({1, 2}, {0.3, 0.4}, MemoryLevel::semantic);
    p.mix_weight = Td::from({1}, {0});
    std::mt19937_64 rng(3);
    auto out = docmemory_forward(random_tensor({2, 2, 3, 3}, rng), p);
    CHECK(out.semantic.shape() == Shape{2, 2, 3, 3});
    for (Index i = 0; i < 9; ++i) {
      CHECK(out.semantic.data()[i] == doctest::Approx(0.3));
      CHECK(out.semantic.data()[9 + i] == doctest::Approx(0.4));
    }
  }

  TEST_CASE("the input feature stored in every bank gets the largest weight") {
    Td f = Td::from({1, 3, 1, 1}, {0.2, 0.5, -0.3});
    DocMemoryParams<double> p;
    p.part = bank_of({3, 3}, {0.2, 0.5, -0.3, 1, 0, 0, 0, 0, 1}, MemoryLevel::part);
    p.instance = bank_of({2, 3}, {0, 1, 0, 0.2, 0.5, -0.3}, MemoryLevel::instance);
    p.semantic = bank_of({2, 3}, {0.2, 0.5, -0.3, -1, 0, 0}, MemoryLevel::semantic);
    p.mix_weight = Td::from({1}, {0});
    Td rows = pixels_to_rows(f);
    Td w_part = address_memory(rows, p.part, p.threshold_for(p.part));
    CHECK(w_part.data()[0] > w_part.data()[1]);
    CHECK(w_part.data()[0] > w_part.data()[2]);
    auto out = docmemory_forward(f, p);
    Td w_ins = address_memory(pixels_to_rows(out.part), p.instance, p.threshold_for(p.instance));
    CHECK(w_ins.data()[1] > w_ins.data()[0]);
    Td w_sem = address_memory(pixels_to_rows(out.instance), p.semantic, p.threshold_for(p.semantic));
    CHECK(w_sem.data()[0] > w_sem.data()[1]);
  }

  TEST_CASE("chain equals three sequential reads") {
    std::mt19937_64 rng(17);
    auto p = DocMemoryParams<double>::create(4, 5, 4, 3, -1.0, rng);
    Td x = random_tensor({1, 4, 2, 2}, rng);
    auto out = docmemory_forward(x, p);

    // Rebuild the rows by hand: pixel (h,w) of channel c sits at c*4 + h*2 + w.
    Td rows({4, 4});
    for (Index pix = 0; pix < 4; ++pix)
      for (Index c = 0; c < 4; ++c) rows.data()[pix * 4 + c] = x.data()[c * 4 + pix];
    auto mm = [](const oracle::Vec& w, const Td& items, Index L) {
      const Index N = items.dim(0), C = items.dim(1);
      Td y({L, C});
      for (Index i = 0; i < L; ++i)
        for (Index c = 0; c < C; ++c) {
          double acc = 0;
          for (Index j = 0; j < N; ++j) acc += w[std::size_t(i * N + j)] * items.data()[j * C + c];
          y.data()[i * C + c] = acc;
        }
      return y;
    };
    Td r1 = mm(address_oracle(rows, p.part.items, 1.0 / 10), p.part.items, 4);
    Td r2 = mm(address_oracle(r1, p.instance.items, 1.0 / 8), p.instance.items, 4);
    Td r3 = mm(address_oracle(r2, p.semantic.items, 1.0 / 6), p.semantic.items, 4);
    for (Index pix = 0; pix < 4; ++pix)
      for (Index c = 0; c < 4; ++c) {
        CHECK(out.part.data()[c * 4 + pix] == doctest::Approx(r1.data()[pix * 4 + c]).epsilon(1e-12));
        CHECK(out.instance.data()[c * 4 + pix] == doctest::Approx(r2.data()[pix * 4 + c]).epsilon(1e-12));
        CHECK(out.semantic.data()[c * 4 + pix] == doctest::Approx(r3.data()[pix * 4 + c]).epsilon(1e-12));
      }
  }

  TEST_CASE("pixels_to_rows and rows_to_pixels are inverse") {
    std::mt19937_64 rng(9);
    Td x = random_tensor({2, 3, 4, 5}, rng);
    Td back = rows_to_pixels(pixels_to_rows(x), x.shape());
    CHECK((back.data() == x.data()).all());
  }

  TEST_CASE("channel mismatch propagates") {
    std::mt19937_64 rng(1);
    auto p = DocMemoryParams<double>::create(4, 3, 3, 3, -1.0, rng);
    CHECK_THROWS_AS(docmemory_forward(Td({1, 3, 2, 2}), p), ShapeError);
  }
}

TEST_SUITE("protomix") {
  TEST_CASE("coefficients at w = 0 and w = ln 4") {
    Td part = Td::from({1}, {1}), ins = Td::from({1}, {0}), sem = Td::from({1}, {0});
    CHECK(protomix(part, ins, sem, Td::from({1}, {0.0})).item() == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(protomix(ins, part, sem, Td::from({1}, {0.0})).item() == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(protomix(ins, sem, part, Td::from({1}, {0.0})).item() == doctest::Approx(0.5).epsilon(1e-15));
    const double w = std::log(4.0);
    CHECK(protomix(ins, sem, part, Td::from({1}, {w})).item() == doctest::Approx(0.8).epsilon(1e-14));
    CHECK(protomix(part, ins, sem, Td::from({1}, {w})).item() == doctest::Approx(0.1).epsilon(1e-14));
  }

  TEST_CASE("coefficients sum to one for any w") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd(0.0, 4.0);
    Td one = Td::from({1}, {1});
    for (int i = 0; i < 1000; ++i) {
      const double s = protomix(one, one, one, Td::from({1}, {nd(rng)})).item();
      CHECK(std::fabs(s - 1.0) < 1e-12);
    }
  }

  TEST_CASE("shape mismatch is an error") {
    CHECK_THROWS_AS(protomix(Td({2}), Td({3}), Td({2}), Td::from({1}, {0})), ShapeError);
  }
}

TEST_SUITE("gradients") {
  TEST_CASE("docmemory and protomix pass gradcheck") {
    for (const auto& c : gradcheck_suite()) {
      if (c.name != "docmemory_forward" && c.name != "protomix") continue;
      for (std::uint64_t seed = 0; seed < 2; ++seed) {
        GradcheckOptions opt;
        const auto rep = c.run(seed, opt);
        INFO(c.name << " seed " << seed << ": " << rep.worst);
        CHECK(rep.passed);
      }
    }
  }
}
