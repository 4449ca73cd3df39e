#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "oracles.hpp"
#include "vpseg/tensor.hpp"

using namespace vpseg;

TEST_CASE("tensor shape invariants") {
  Tensor t({2, 3});
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t.shape_string() == "[2x3]");
  CHECK_THROWS_AS(Tensor({0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({1, 2, 3, 4}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0f, 2.0f}), std::invalid_argument);
  CHECK_THROWS_AS(t.reshaped({5}), std::invalid_argument);
}

TEST_CASE("matmul identity and hand arithmetic") {
  const Tensor id = Tensor::from_rows({{1, 0}, {0, 1}});
  const Tensor b = Tensor::from_rows({{3, 4}, {5, 6}});
  const Tensor prod = matmul(id, b);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) CHECK(prod.at(i, j) == b.at(i, j));
  }
  const Tensor row = Tensor::from_rows({{1, 2}});
  const Tensor col = Tensor::from_data({2, 1}, {3.0f, 4.0f});
  CHECK(matmul(row, col).at(0, 0) == 11.0f);
}

TEST_CASE("matmul identity is bit-exact for sizes up to 16") {
  SplitMix64 rng(11);
  for (int n : {1, 2, 5, 16}) {
    Tensor eye({n, n});
    for (int i = 0; i < n; ++i) eye.at(i, i) = 1.0f;
    const Tensor a = oracle::random_tensor({n, n}, rng, -100.0, 100.0);
    const Tensor left = matmul(eye, a);
    const Tensor right = matmul(a, eye);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(left.data()[i] == a.data()[i]);
      CHECK(right.data()[i] == a.data()[i]);
    }
  }
}

TEST_CASE("matmul matches the naive triple-loop and Eigen oracles") {
  SplitMix64 rng(7);
  const Tensor a = oracle::random_tensor({7, 5}, rng);
  const Tensor b = oracle::random_tensor({5, 3}, rng);
  const Tensor got = matmul(a, b);

  // Naive triple loop in float, written independently of the library.
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 3; ++j) {
      float acc = 0.0f;
      for (int p = 0; p < 5; ++p) acc += a.at(i, p) * b.at(p, j);
      CHECK(std::abs(got.at(i, j) - acc) <= 1e-6f * std::max(1.0f, std::abs(acc)));
    }
  }
  CHECK(oracle::max_rel_diff(got, oracle::to_eigen(a) * oracle::to_eigen(b)) < 1e-6);
}

TEST_CASE("matmul shape errors name both shapes") {
  const Tensor a({7, 5});
  const Tensor b({4, 3});
  try {
    matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[7x5]") != std::string::npos);
    CHECK(msg.find("[4x3]") != std::string::npos);
  }
}

TEST_CASE("softmax_rows closed forms") {
  const Tensor sym = softmax_rows(Tensor::from_rows({{0, 0}}));
  CHECK(sym.at(0, 0) == doctest::Approx(0.5));
  CHECK(sym.at(0, 1) == doctest::Approx(0.5));

  const Tensor big = softmax_rows(Tensor::from_rows({{1000, 1000, 1000}}));
  for (int j = 0; j < 3; ++j) CHECK(big.at(0, j) == doctest::Approx(1.0 / 3.0));
  CHECK(big.all_finite());

  const Tensor quarter = softmax_rows(Tensor::from_rows({{0.0f, std::log(3.0f)}}));
  CHECK(quarter.at(0, 0) == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(quarter.at(0, 1) == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("softmax_rows rejects NaN and rows always sum to one") {
  Tensor bad({1, 2});
  bad.at(0, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(softmax_rows(bad), std::invalid_argument);

  SplitMix64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 1 + static_cast<int>(rng.next_below(6));
    const int n = 1 + static_cast<int>(rng.next_below(8));
    const Tensor y = softmax_rows(oracle::random_tensor({m, n}, rng, -30.0, 30.0));
    for (int i = 0; i < m; ++i) {
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        CHECK(y.at(i, j) >= 0.0f);
        sum += y.at(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("cross_attention single key returns the value column") {
  SplitMix64 rng(3);
  const Tensor q = oracle::random_tensor({4, 3}, rng);
  const Tensor k = oracle::random_tensor({4, 1}, rng);
  const Tensor v = oracle::random_tensor({4, 1}, rng);

  const Tensor out = cross_attention(q, k, v, nullptr, false);
  for (int ch = 0; ch < 4; ++ch) {
    for (int col = 0; col < 3; ++col) CHECK(out.at(ch, col) == doctest::Approx(v.at(ch, 0)));
  }
  const Tensor with_res = cross_attention(q, k, v, nullptr, true);
  for (int ch = 0; ch < 4; ++ch) {
    for (int col = 0; col < 3; ++col) {
      CHECK(with_res.at(ch, col) == doctest::Approx(v.at(ch, 0) + q.at(ch, col)));
    }
  }
}

TEST_CASE("cross_attention bias saturation selects one key") {
  SplitMix64 rng(5);
  const Tensor q = oracle::random_tensor({3, 2}, rng);
  const Tensor k = oracle::random_tensor({3, 5}, rng);
  const Tensor v = oracle::random_tensor({3, 5}, rng);
  const int j = 3;
  Tensor bias = Tensor::full({5}, -1e9f);
  bias.at(j) = 0.0f;
  const Tensor out = cross_attention(q, k, v, &bias, false);
  for (int ch = 0; ch < 3; ++ch) {
    for (int col = 0; col < 2; ++col) {
      CHECK(out.at(ch, col) == doctest::Approx(v.at(ch, j)).epsilon(1e-5));
    }
  }
}

TEST_CASE("cross_attention matches the dense Eigen oracle") {
  SplitMix64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor q = oracle::random_tensor({4, 3}, rng);
    const Tensor k = oracle::random_tensor({4, 6}, rng);
    const Tensor v = oracle::random_tensor({4, 6}, rng);
    const Tensor bias = oracle::random_tensor({6}, rng);
    Eigen::VectorXd be(6);
    for (int i = 0; i < 6; ++i) be(i) = bias.at(i);
    for (bool residual : {false, true}) {
      const Tensor got = cross_attention(q, k, v, &bias, residual);
      const oracle::Matrix want = oracle::cross_attention(
          oracle::to_eigen(q), oracle::to_eigen(k), oracle::to_eigen(v), &be, residual);
      CHECK(oracle::max_rel_diff(got, want) < 1e-5);
    }
  }
}

TEST_CASE("cross_attention outputs are convex combinations of value columns") {
  SplitMix64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    // Full-rank square v so the mixing coefficients are recoverable.
    const Tensor q = oracle::random_tensor({4, 3}, rng);
    const Tensor k = oracle::random_tensor({4, 4}, rng);
    const Tensor v = oracle::random_tensor({4, 4}, rng);
    const Tensor out = cross_attention(q, k, v, nullptr, false);
    const oracle::Matrix ve = oracle::to_eigen(v);
    for (int col = 0; col < 3; ++col) {
      Eigen::VectorXd rhs(4);
      for (int ch = 0; ch < 4; ++ch) rhs(ch) = out.at(ch, col);
      const Eigen::VectorXd lambda = ve.fullPivLu().solve(rhs);
      CHECK(lambda.sum() == doctest::Approx(1.0).epsilon(1e-4));
      for (int i = 0; i < 4; ++i) CHECK(lambda(i) >= -1e-4);
    }
  }
}

TEST_CASE("cross_attention validates shapes and bias") {
  const Tensor q({4, 2}), k({3, 5}), v({3, 5});
  CHECK_THROWS_AS(cross_attention(q, k, v, nullptr, false), std::invalid_argument);
  const Tensor q2({3, 2});
  Tensor bias({4});
  CHECK_THROWS_AS(cross_attention(q2, k, v, &bias, false), std::invalid_argument);
  Tensor bad_bias({5});
  bad_bias.at(0) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(cross_attention(q2, k, v, &bad_bias, false), std::invalid_argument);
}

TEST_CASE("bilinear_resize identity, constants, and the 2x2 oracle") {
  SplitMix64 rng(17);
  const Tensor x = oracle::random_tensor({2, 5, 7}, rng);
  const Tensor same = bilinear_resize(x, 5, 7);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(same.data()[i] == x.data()[i]);

  const Tensor one = Tensor::full({1, 1, 1}, 4.25f);
  const Tensor up = bilinear_resize(one, 4, 4);
  for (std::size_t i = 0; i < up.size(); ++i) CHECK(up.data()[i] == 4.25f);

  // Per-pixel scalar interpolation oracle for 1x2x2 -> 1x4x4.
  const Tensor grid = Tensor::from_data({1, 2, 2}, {0.0f, 1.0f, 2.0f, 3.0f});
  const Tensor big = bilinear_resize(grid, 4, 4);
  double src[2][2] = {{0.0, 1.0}, {2.0, 3.0}};
  auto sample = [&src](double y, double x) {
    auto clamp01 = [](double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); };
    const double sy = clamp01((y + 0.5) * 0.5 - 0.5);
    const double sx = clamp01((x + 0.5) * 0.5 - 0.5);
    const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
    const int y1 = std::min(y0 + 1, 1), x1 = std::min(x0 + 1, 1);
    const double fy = sy - y0, fx = sx - x0;
    return src[y0][x0] * (1 - fy) * (1 - fx) + src[y0][x1] * (1 - fy) * fx +
           src[y1][x0] * fy * (1 - fx) + src[y1][x1] * fy * fx;
  };
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      CHECK(big.at(0, y, x) == doctest::Approx(sample(y, x)).epsilon(1e-6));
    }
  }

  CHECK_THROWS_AS(bilinear_resize(grid, 0, 4), std::invalid_argument);
}

TEST_CASE("CTNSR round-trips bit-exactly") {
  SplitMix64 rng(21);
  const std::string path = (std::filesystem::temp_directory_path() / "t.ctnsr").string();
  for (const std::vector<int>& shape :
       {std::vector<int>{7}, std::vector<int>{3, 4}, std::vector<int>{2, 3, 5}}) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::uint64_t bits = rng.next();
      float f = static_cast<float>(rng.uniform(-1e20, 1e20));
      if (bits % 5 == 0) f = -0.0f;
      if (bits % 7 == 0) f = 1e-42f;  // denormal
      t.data()[i] = f;
    }
    save_ctnsr(t, path);
    const Tensor back = load_ctnsr(path);
    REQUIRE(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
      CHECK(std::memcmp(&back.data()[i], &t.data()[i], 4) == 0);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("CTNSR header layout is stable") {
  const std::string path = (std::filesystem::temp_directory_path() / "h.ctnsr").string();
  const Tensor t = Tensor::from_data({1, 2}, {1.0f, 2.0f});
  save_ctnsr(t, path);
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 5 + 1 + 1 + 8 + 8);
  CHECK(std::memcmp(bytes.data(), "CTNSR", 5) == 0);
  CHECK(bytes[5] == 1);   // version
  CHECK(bytes[6] == 2);   // rank
  CHECK(bytes[7] == 1);   // extent 0, little-endian
  CHECK(bytes[11] == 2);  // extent 1
  std::filesystem::remove(path);
}
