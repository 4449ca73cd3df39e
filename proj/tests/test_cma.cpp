#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vpseg/cma.hpp"
#include "vpseg/tape.hpp"

using namespace vpseg;

namespace {

AttentionProjections identity_proj(int c) {
  AttentionProjections p;
  p.wq = Tensor({c, c});
  for (int i = 0; i < c; ++i) p.wq.at(i, i) = 1.0f;
  p.wk = p.wq;
  p.wv = p.wq;
  return p;
}

}  // namespace

TEST_CASE("ca_e with zero bias is plain residual attention") {
  SplitMix64 rng(1);
  const Tensor q = oracle::random_tensor({4, 3}, rng);
  const Tensor k = oracle::random_tensor({4, 6}, rng);
  const Tensor v = oracle::random_tensor({4, 6}, rng);
  const Tensor zero_bias({6});
  const Tensor got = ca_e(q, k, v, zero_bias);
  const Tensor want = cross_attention(q, k, v, nullptr, true);
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got.data()[i] == doctest::Approx(want.data()[i]));
  }
}

TEST_CASE("ca_e saturated bias returns v_j + q") {
  SplitMix64 rng(2);
  const Tensor q = oracle::random_tensor({3, 2}, rng);
  const Tensor k = oracle::random_tensor({3, 5}, rng);
  const Tensor v = oracle::random_tensor({3, 5}, rng);
  Tensor bias = Tensor::full({5}, -1e9f);
  const int j = 2;
  bias.at(j) = 0.0f;
  const Tensor got = ca_e(q, k, v, bias);
  for (int ch = 0; ch < 3; ++ch) {
    for (int col = 0; col < 2; ++col) {
      CHECK(got.at(ch, col) == doctest::Approx(v.at(ch, j) + q.at(ch, col)).epsilon(1e-5));
    }
  }
}

TEST_CASE("ca_e matches the dense formula oracle") {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor q = oracle::random_tensor({5, 4}, rng);
    const Tensor k = oracle::random_tensor({5, 7}, rng);
    const Tensor v = oracle::random_tensor({5, 7}, rng);
    const Tensor bias = oracle::random_tensor({7}, rng);
    Eigen::VectorXd be(7);
    for (int i = 0; i < 7; ++i) be(i) = bias.at(i);
    const Tensor got = ca_e(q, k, v, bias);
    const oracle::Matrix want = oracle::cross_attention(
        oracle::to_eigen(q), oracle::to_eigen(k), oracle::to_eigen(v), &be, true);
    CHECK(oracle::max_rel_diff(got, want) < 1e-5);
  }
  const Tensor bad_bias({3});
  CHECK_THROWS_AS(ca_e(Tensor({5, 4}), Tensor({5, 7}), Tensor({5, 7}), bad_bias),
                  std::invalid_argument);
}

TEST_CASE("contextualize_queries with constant features and identity projections") {
  const int c = 3, k = 2, h = 2, w = 2;
  const float kappa = 0.6f;
  SplitMix64 rng(4);
  const Tensor queries = oracle::random_tensor({c, k}, rng);
  Tensor local({c, h, w});
  for (std::size_t i = 0; i < local.size(); ++i) local.data()[i] = kappa;
  const Tensor proximity({h, w});
  const Tensor got = contextualize_queries(queries, local, proximity, identity_proj(c));
  // Every value column is constant kappa, so attention returns kappa + query.
  for (int ch = 0; ch < c; ++ch) {
    for (int col = 0; col < k; ++col) {
      CHECK(got.at(ch, col) == doctest::Approx(kappa + queries.at(ch, col)).epsilon(1e-5));
    }
  }
}

TEST_CASE("contextualize_queries is dominated by a peaked proximity bias") {
  SplitMix64 rng(5);
  const int c = 3, k = 2, h = 2, w = 3;
  const Tensor queries = oracle::random_tensor({c, k}, rng);
  const Tensor local = oracle::random_tensor({c, h, w}, rng);
  Tensor proximity = Tensor::full({h, w}, -1e9f);
  proximity.at(1, 2) = 0.0f;  // flattened position 5
  const Tensor got = contextualize_queries(queries, local, proximity, identity_proj(c));
  for (int ch = 0; ch < c; ++ch) {
    for (int col = 0; col < k; ++col) {
      CHECK(got.at(ch, col) ==
            doctest::Approx(local.at(ch, 1, 2) + queries.at(ch, col)).epsilon(1e-5));
    }
  }
}

TEST_CASE("contextualize_queries equals the ca_e composition oracle") {
  SplitMix64 rng(6);
  const int c = 4, k = 3, h = 3, w = 2;
  const Tensor queries = oracle::random_tensor({c, k}, rng);
  const Tensor local = oracle::random_tensor({c, h, w}, rng);
  const Tensor proximity = oracle::random_tensor({h, w}, rng, 0.0, 1.0);
  const AttentionProjections proj = random_projections(c, 17);
  const Tensor got = contextualize_queries(queries, local, proximity, proj);

  const Tensor flat = local.reshaped({c, h * w});
  const Tensor want = ca_e(matmul(proj.wq, queries), matmul(proj.wk, flat),
                           matmul(proj.wv, flat), proximity.reshaped({h * w}));
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-6));
  }
}

TEST_CASE("motion_attention layer counts") {
  SplitMix64 rng(7);
  const int c = 4, k = 3, h = 2, w = 2;
  const Tensor q_c = oracle::random_tensor({c, k}, rng);
  const Tensor f_aug = oracle::random_tensor({c, h, w}, rng);
  const Tensor proximity = oracle::random_tensor({h, w}, rng, 0.0, 1.0);

  SUBCASE("N = 0 bypasses bit-exactly") {
    const Tensor got = motion_attention(q_c, f_aug, proximity, {});
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got.data()[i] == q_c.data()[i]);
  }

  SUBCASE("N = 1 equals a single ca_e composition") {
    const AttentionProjections proj = random_projections(c, 23);
    const Tensor got = motion_attention(q_c, f_aug, proximity, {proj});
    const Tensor flat = f_aug.reshaped({c, h * w});
    const Tensor want = ca_e(matmul(proj.wq, q_c), matmul(proj.wk, flat),
                             matmul(proj.wv, flat), proximity.reshaped({h * w}));
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-6));
    }
  }

  SUBCASE("N = 2 stacks fresh layers") {
    const AttentionProjections l0 = random_projections(c, 31);
    const AttentionProjections l1 = random_projections(c, 37);
    const Tensor got = motion_attention(q_c, f_aug, proximity, {l0, l1});
    const Tensor step1 = motion_attention(q_c, f_aug, proximity, {l0});
    const Tensor want = motion_attention(step1, f_aug, proximity, {l1});
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("detail attention map") {
  SUBCASE("zero merged context gives O = 0.5 everywhere") {
    const Tensor f_m({3, 2});
    SplitMix64 rng(8);
    const Tensor f_tl = oracle::random_tensor({3, 2, 2}, rng);
    const DetailAttention att = detail_attention_map(f_m, f_tl);
    for (std::size_t i = 0; i < att.raw.size(); ++i) {
      CHECK(att.raw.data()[i] == 0.0f);
      CHECK(att.squashed.data()[i] == doctest::Approx(0.5));
    }
  }

  SUBCASE("orthonormal class prototypes score highest for their own class") {
    const int c = 3, k = 3;
    Tensor f_m({c, k});
    for (int i = 0; i < c; ++i) f_m.at(i, i) = 1.0f;  // class prototypes e_k
    Tensor f_tl({c, 1, k});
    for (int i = 0; i < c; ++i) f_tl.at(i, 0, i) = 1.0f;  // position j carries e_j
    const DetailAttention att = detail_attention_map(f_m, f_tl);
    for (int z = 0; z < k; ++z) {
      for (int pos = 0; pos < k; ++pos) {
        if (pos == z) {
          CHECK(att.raw.at(z, 0, pos) == doctest::Approx(1.0));
        } else {
          CHECK(att.raw.at(z, 0, pos) == doctest::Approx(0.0));
        }
      }
    }
  }

  SUBCASE("random instance matches the per-element triple sum") {
    SplitMix64 rng(9);
    const int c = 4, k = 3, h = 3, w = 2;
    const Tensor f_m = oracle::random_tensor({c, k}, rng);
    const Tensor f_tl = oracle::random_tensor({c, h, w}, rng);
    const DetailAttention att = detail_attention_map(f_m, f_tl);
    for (int z = 0; z < k; ++z) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double want = 0.0;
          for (int ch = 0; ch < c; ++ch) {
            want += static_cast<double>(f_m.at(ch, z)) * f_tl.at(ch, y, x);
          }
          CHECK(att.raw.at(z, y, x) == doctest::Approx(want).epsilon(1e-6));
          CHECK(att.squashed.at(z, y, x) ==
                doctest::Approx(1.0 / (1.0 + std::exp(-want))).epsilon(1e-5));
        }
      }
    }
  }

  SUBCASE("squashed values live in (0, 1)") {
    SplitMix64 rng(10);
    const DetailAttention att = detail_attention_map(
        oracle::random_tensor({3, 2}, rng, -50.0, 50.0),
        oracle::random_tensor({3, 4, 4}, rng, -50.0, 50.0));
    for (std::size_t i = 0; i < att.squashed.size(); ++i) {
      CHECK(att.squashed.data()[i] >= 0.0f);
      CHECK(att.squashed.data()[i] <= 1.0f);
    }
  }
}

TEST_CASE("fuse_predictions endpoints and envelope") {
  SplitMix64 rng(11);
  const int k = 3, h = 8, w = 8;
  const Tensor p_c = oracle::random_tensor({k, 4, 4}, rng);  // context at low res
  const Tensor p_d = oracle::random_tensor({k, h, w}, rng);

  SUBCASE("O -> 0 gives P_c, O -> 1 gives P_d") {
    const Tensor zeros({k, 4, 4});
    const Tensor ones = Tensor::full({k, 4, 4}, 1.0f);
    const Tensor up_c = bilinear_resize(p_c, h, w);
    const Tensor lo = fuse_predictions(p_c, p_d, zeros);
    const Tensor hi = fuse_predictions(p_c, p_d, ones);
    for (std::size_t i = 0; i < lo.size(); ++i) {
      CHECK(std::abs(lo.data()[i] - up_c.data()[i]) < 1e-6f);
      CHECK(std::abs(hi.data()[i] - p_d.data()[i]) < 1e-6f);
    }
  }

  SUBCASE("O = 0.5 with P_c = -P_d cancels") {
    const Tensor half = Tensor::full({k, h, w}, 0.5f);
    const Tensor neg = affine(p_d, -1.0f, 0.0f);
    const Tensor fused = fuse_predictions(neg, p_d, half);
    for (std::size_t i = 0; i < fused.size(); ++i) {
      CHECK(fused.data()[i] == doctest::Approx(0.0).epsilon(1e-6));
    }
  }

  SUBCASE("fused logits stay inside the [min, max] envelope") {
    const Tensor o = oracle::random_tensor({k, h, w}, rng, 0.0, 1.0);
    const Tensor fused = fuse_predictions(p_c, p_d, o);
    const Tensor up_c = bilinear_resize(p_c, h, w);
    for (std::size_t i = 0; i < fused.size(); ++i) {
      const float lo = std::min(up_c.data()[i], p_d.data()[i]);
      const float hi = std::max(up_c.data()[i], p_d.data()[i]);
      CHECK(fused.data()[i] >= lo - 1e-6f);
      CHECK(fused.data()[i] <= hi + 1e-6f);
    }
  }
}

TEST_CASE("total_loss endpoints and the scalar oracle") {
  SplitMix64 rng(12);
  const int k = 3, h = 4, w = 4;
  const Tensor p_f = oracle::random_tensor({k, h, w}, rng);
  const Tensor p_d = oracle::random_tensor({k, h, w}, rng);
  LabelMap labels(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      labels.at(y, x) = static_cast<std::uint16_t>(rng.next_below(k));
    }
  }

  auto scalar_ce = [&](const Tensor& logits) {
    double total = 0.0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double denom = 0.0;
        for (int z = 0; z < k; ++z) denom += std::exp(logits.at(z, y, x));
        total += std::log(denom) - logits.at(labels.at(y, x), y, x);
      }
    }
    return total / (h * w);
  };

  SUBCASE("lambda 0 is the pure fused loss") {
    CHECK(total_loss(p_f, p_d, labels, 0.0f) == doctest::Approx(scalar_ce(p_f)).epsilon(1e-5));
  }

  SUBCASE("random instance matches the hand loop at lambda 0.1") {
    const double want = 0.9 * scalar_ce(p_f) + 0.1 * scalar_ce(p_d);
    CHECK(total_loss(p_f, p_d, labels, 0.1f) == doctest::Approx(want).epsilon(1e-5));
  }

  SUBCASE("saturated one-hot logits drive the loss to zero") {
    Tensor perfect({k, h, w});
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int z = 0; z < k; ++z) {
          perfect.at(z, y, x) = z == labels.at(y, x) ? 100.0f : 0.0f;
        }
      }
    }
    CHECK(total_loss(perfect, perfect, labels, 0.1f) < 1e-6f);
  }

  SUBCASE("out-of-range labels and bad lambda are rejected") {
    LabelMap bad = labels;
    bad.at(0, 0) = 9;
    CHECK_THROWS_AS(total_loss(p_f, p_d, bad, 0.1f), std::invalid_argument);
    CHECK_THROWS_AS(total_loss(p_f, p_d, labels, 1.5f), std::invalid_argument);
  }
}

TEST_CASE("ca_e with zero bias and zero value projection returns the queries") {
  SplitMix64 rng(21);
  const Tensor q = oracle::random_tensor({4, 3}, rng);
  const Tensor k = oracle::random_tensor({4, 6}, rng);
  const Tensor zero_v({4, 6});
  const Tensor zero_bias({6});
  const Tensor out = ca_e(q, k, zero_v, zero_bias);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == q.data()[i]);
}

TEST_CASE("increasing the bias at one key never decreases its weight") {
  SplitMix64 rng(13);
  const Tensor q = oracle::random_tensor({3, 2}, rng);
  const Tensor k = oracle::random_tensor({3, 5}, rng);

  // Extract attention weights by using one-hot values: row ch of v selects
  // the weight of key ch.
  Tensor probe({3, 5});
  auto weight_of_key = [&](const Tensor& bias, int key) {
    Tensor v({3, 5});
    for (int col = 0; col < 5; ++col) v.at(0, col) = col == key ? 1.0f : 0.0f;
    const Tensor out = cross_attention(q, k, v, &bias, false);
    return out.at(0, 0);
  };
  Tensor bias = oracle::random_tensor({5}, rng);
  const float before = weight_of_key(bias, 2);
  for (float bump : {0.1f, 0.5f, 2.0f, 10.0f}) {
    Tensor bumped = bias;
    bumped.at(2) += bump;
    CHECK(weight_of_key(bumped, 2) >= before - 1e-7f);
  }
}

TEST_CASE("full CMA loss gradient passes grad_check at c=4, K=3, h=w=4") {
  SplitMix64 rng(14);
  const int c = 4, k = 3, h = 4, w = 4;
  const Tensor queries = oracle::random_tensor({c, k}, rng);
  const Tensor local = oracle::random_tensor({c, h, w}, rng);
  const Tensor augmented = oracle::random_tensor({c, h, w}, rng);
  const Tensor proximity = oracle::random_tensor({h, w}, rng, 0.0, 1.0);
  const Tensor detail = oracle::random_tensor({c, h, w}, rng);
  const AttentionProjections ctx_proj = random_projections(c, 41);
  const AttentionProjections layer0 = random_projections(c, 43);
  const Tensor head_w = oracle::random_tensor({k, c}, rng);
  const Tensor head_b = oracle::random_tensor({k}, rng);
  LabelMap labels(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      labels.at(y, x) = static_cast<std::uint16_t>(rng.next_below(k));
    }
  }

  // Loss as a function of exactly one parameter; `slot` names which one the
  // probe replaces so every projection, the queries, and the head get checked.
  auto loss_with = [&](Tape& tape, const std::string& slot, Var probe) -> Var {
    auto pick = [&](const std::string& name, const Tensor& fixed) {
      return slot == name ? probe : ad::constant(tape, fixed);
    };
    const Var local_v = ad::constant(tape, local);
    const Var aug_v = ad::constant(tape, augmented);
    const Var prox_v = ad::constant(tape, proximity);
    const Var detail_v = ad::constant(tape, detail);
    AttentionProjectionVars ctx{pick("ctx.wq", ctx_proj.wq), pick("ctx.wk", ctx_proj.wk),
                                pick("ctx.wv", ctx_proj.wv)};
    AttentionProjectionVars l0{pick("l0.wq", layer0.wq), pick("l0.wk", layer0.wk),
                               pick("l0.wv", layer0.wv)};
    const Var q_c =
        contextualize_queries(tape, pick("queries", queries), local_v, prox_v, ctx);
    const Var f_m = motion_attention(tape, q_c, aug_v, prox_v, {l0});
    const Var o = detail_attention_map(tape, f_m, local_v);
    // Decode both branches with the same head.
    const Var head_wv = pick("head.weight", head_w);
    const Var head_bv = pick("head.bias", head_b);
    const Var flat = ad::reshape(local_v, {c, h * w});
    const Var p_c = ad::reshape(
        ad::add_col_broadcast(ad::matmul(head_wv, flat), head_bv), {k, h, w});
    const Var dflat = ad::reshape(detail_v, {c, h * w});
    const Var p_d = ad::reshape(
        ad::add_col_broadcast(ad::matmul(head_wv, dflat), head_bv), {k, h, w});
    const Var fused = fuse_predictions(tape, p_c, p_d, o);
    return total_loss(tape, fused, p_d, labels, 0.1f);
  };

  const std::vector<std::pair<std::string, const Tensor*>> slots = {
      {"ctx.wq", &ctx_proj.wq},   {"ctx.wk", &ctx_proj.wk}, {"ctx.wv", &ctx_proj.wv},
      {"l0.wq", &layer0.wq},      {"l0.wk", &layer0.wk},    {"l0.wv", &layer0.wv},
      {"queries", &queries},      {"head.weight", &head_w}, {"head.bias", &head_b}};
  for (const auto& [slot, tensor] : slots) {
    CAPTURE(slot);
    const double err = grad_check(
        [&](Tape& tape, Var v) { return loss_with(tape, slot, v); }, *tensor, 1e-3f);
    CHECK(err < 1e-3);
  }
}
