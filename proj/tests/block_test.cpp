// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "muse/block.hpp"
#include "muse/gradcheck.hpp"
#include "muse/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace muse {
namespace {

using testing::dynamic_conv_oracle;
using testing::max_abs_diff;
using testing::permute_rows;
using testing::random_tensor;
using testing::slice_rows;
using Td = Tensor<double>;

Td identity(std::size_t n) {
  Td t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

// Per-head explicit loops over softmax(QK^T / sqrt(d_k)) V.
Td attention_oracle(const Td& q, const Td& k, const Td& v, std::size_t heads,
                    const std::function<bool(std::size_t, std::size_t)>& allowed) {
  const std::size_t nq = q.rows(), nk = k.rows(), d = q.cols(), dk = d / heads;
  Td out(Shape{nq, d});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < nq; ++i) {
      std::vector<double> s(nk, -INFINITY);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < nk; ++j) {
        if (!allowed(i, j)) continue;
        double dot = 0;
        for (std::size_t c = 0; c < dk; ++c) dot += q(i, h * dk + c) * k(j, h * dk + c);
        s[j] = dot / std::sqrt(static_cast<double>(dk));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (double& x : s) z += (x = std::exp(x - mx));
      for (std::size_t j = 0; j < nk; ++j) {
        for (std::size_t c = 0; c < dk; ++c) out(i, h * dk + c) += s[j] / z * v(j, h * dk + c);
      }
    }
  }
  return out;
}

ConvCellParams<double> random_cell(std::size_t k, std::size_t d, std::mt19937_64& rng) {
  ConvCellParams<double> c;
  c.kernel = k;
  c.weights = random_tensor({k, d}, rng);
  c.wout = random_tensor({d, d}, rng, 0.5);
  return c;
}

BlockConfig small_config(bool causal, BlockMode mode = BlockMode::muse) {
  BlockConfig cfg;
  cfg.mode = mode;
  cfg.kernel_sizes = {3, 5};
  cfg.causal = causal;
  cfg.d = 8;
  cfg.d_ff = 12;
  cfg.heads = 2;
  return cfg;
}

// Initialised parameters with the layer norm and gate moved off their
// neutral starting values.
BlockParams<double> random_block(const BlockConfig& cfg, std::mt19937_64& rng) {
  BlockParams<double> p = init_block_params<double>(cfg, rng);
  for (double& v : p.ln_gain.data()) v += 0.3 * std::normal_distribution<double>()(rng);
  for (double& v : p.ln_bias.data()) v = 0.1 * std::normal_distribution<double>()(rng);
  for (double& v : p.gate.alpha.data()) v = std::normal_distribution<double>()(rng);
  for (double& v : p.ffn.b1.data()) v = 0.1 * std::normal_distribution<double>()(rng);
  for (double& v : p.ffn.b2.data()) v = 0.1 * std::normal_distribution<double>()(rng);
  return p;
}

AttentionMask causal_mask() {
  AttentionMask m;
  m.causal = true;
  return m;
}

TEST(BlockConfigTest, Validation) {
  BlockConfig cfg = small_config(false);
  EXPECT_NO_THROW(cfg.validate());
  cfg.heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config(false);
  cfg.kernel_sizes = {4};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.kernel_sizes = {};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.mode = BlockMode::muse_simple;  // conv fields ignored
  EXPECT_NO_THROW(cfg.validate());
}

TEST(AttentionTest, ZeroQueriesAverageValues) {
  std::mt19937_64 rng(1);
  Td k = random_tensor({4, 6}, rng), v = random_tensor({4, 6}, rng);
  Td out = scaled_dot_attention<double>(nullptr, Td(Shape{3, 6}), k, v, std::nullopt, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 6; ++c) {
      double mean = 0;
      for (std::size_t j = 0; j < 4; ++j) mean += v(j, c) / 4;
      EXPECT_NEAR(out(i, c), mean, 1e-14);
    }
  }
}

TEST(AttentionTest, SingleKeyCopiesItsValue) {
  std::mt19937_64 rng(2);
  Td q = random_tensor({5, 4}, rng), k = random_tensor({1, 4}, rng), v = random_tensor({1, 4}, rng);
  Td out = scaled_dot_attention<double>(nullptr, q, k, v, std::nullopt, 2);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out(i, c), v(0, c), 1e-15);
}

TEST(AttentionTest, MatchesExplicitLoops) {
  std::mt19937_64 rng(3);
  Td q = random_tensor({5, 8}, rng), k = random_tensor({5, 8}, rng), v = random_tensor({5, 8}, rng);
  Td out = scaled_dot_attention<double>(nullptr, q, k, v, std::nullopt, 2);
  EXPECT_LT(max_abs_diff(out, attention_oracle(q, k, v, 2, [](auto, auto) { return true; })), 1e-10);

  std::vector<std::uint8_t> mask(25);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) mask[i * 5 + j] = (i + j) % 3 != 1;
  Td masked = scaled_dot_attention<double>(nullptr, q, k, v, mask, 2);
  EXPECT_LT(max_abs_diff(masked, attention_oracle(q, k, v, 2,
                                                  [&](auto i, auto j) { return mask[i * 5 + j] != 0; })),
            1e-10);
}

TEST(AttentionTest, FullyMaskedRowIsRejected) {
  std::mt19937_64 rng(4);
  Td x = random_tensor({2, 4}, rng);
  std::vector<std::uint8_t> mask{1, 1, 0, 0};
  EXPECT_THROW(scaled_dot_attention<double>(nullptr, x, x, x, mask, 2), UsageError);
  EXPECT_THROW(scaled_dot_attention<double>(nullptr, x, x, x, std::nullopt, 3), ConfigError);
}

TEST(AttentionTest, BranchExamples) {
  std::mt19937_64 rng(5);
  AttentionParams<double> p{random_tensor({4, 4}, rng), random_tensor({4, 4}, rng), Td(Shape{4, 4}), 2};
  SharedProjection<double> sp{random_tensor({4, 4}, rng), std::nullopt};
  Td x = random_tensor({3, 4}, rng);
  Td silenced = attention_branch<double>(nullptr, x, p, sp, SeqLayout::single(3), {});
  for (double v : silenced.data()) EXPECT_EQ(v, 0.0);

  p.wo = random_tensor({4, 4}, rng);
  Td one = random_tensor({1, 4}, rng);
  Td got = attention_branch<double>(nullptr, one, p, sp, SeqLayout::single(1), {});
  Td want = matmul<double>(nullptr, matmul<double>(nullptr, one, sp.wv), p.wo);
  EXPECT_LT(max_abs_diff(got, want), 1e-14);
}

TEST(AttentionTest, BranchIsCompositionOfProjections) {
  std::mt19937_64 rng(6);
  AttentionParams<double> p{random_tensor({8, 8}, rng), random_tensor({8, 8}, rng),
                            random_tensor({8, 8}, rng), 4};
  SharedProjection<double> sp{random_tensor({8, 8}, rng), std::nullopt};
  Td x = random_tensor({6, 8}, rng);
  Td q = matmul<double>(nullptr, x, p.wq), k = matmul<double>(nullptr, x, p.wk);
  Td v = matmul<double>(nullptr, x, sp.wv);
  auto causal = [](std::size_t i, std::size_t j) { return j <= i; };
  Td want = matmul<double>(nullptr, attention_oracle(q, k, v, 4, causal), p.wo);
  Td got = attention_branch<double>(nullptr, x, p, sp, SeqLayout::single(6), causal_mask());
  EXPECT_LT(max_abs_diff(got, want), 1e-10);
}

TEST(AttentionTest, BatchedRowsMatchSeparateSequences) {
  std::mt19937_64 rng(7);
  Td q = random_tensor({8, 4}, rng), k = random_tensor({8, 4}, rng), v = random_tensor({8, 4}, rng);
  AttentionMask m;
  m.key_lengths = {4, 2};
  Td out = scaled_dot_attention<double>(nullptr, q, k, v, 2, 2, m);
  for (std::size_t b = 0; b < 2; ++b) {
    const std::size_t valid = m.key_lengths[b];
    Td qb = slice_rows(q, b * 4, 4), kb = slice_rows(k, b * 4, valid), vb = slice_rows(v, b * 4, valid);
    Td want = attention_oracle(qb, kb, vb, 2, [](auto, auto) { return true; });
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out(b * 4 + i, c), want(i, c), 1e-12);
  }
}

TEST(DynamicConvTest, SingleTapIsIdentity) {
  std::mt19937_64 rng(8);
  Td v2 = random_tensor({5, 3}, rng);
  ConvCellParams<double> cell{1, random_tensor({1, 3}, rng), identity(3)};
  for (bool causal : {false, true}) {
    EXPECT_LT(max_abs_diff(dynamic_conv_cell<double>(nullptr, v2, cell, causal), v2), 1e-15);
  }
}

TEST(DynamicConvTest, UniformTapsWithZeroPadding) {
  ConvCellParams<double> cell{3, Td(Shape{3, 1}), Td::matrix({{1}})};
  Td out = dynamic_conv_cell<double>(nullptr, Td::matrix({{1}, {1}, {1}}), cell, false);
  EXPECT_NEAR(out[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(out[1], 1.0, 1e-15);
  EXPECT_NEAR(out[2], 2.0 / 3.0, 1e-15);
  // Causal taps cover i-2..i.
  Td causal = dynamic_conv_cell<double>(nullptr, Td::matrix({{1}, {1}, {1}}), cell, true);
  EXPECT_NEAR(causal[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(causal[1], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(causal[2], 1.0, 1e-15);
}

TEST(DynamicConvTest, MatchesBruteForce) {
  std::mt19937_64 rng(9);
  for (std::size_t k : {1, 3, 5, 7}) {
    for (bool causal : {false, true}) {
      Td v2 = random_tensor({6, 4}, rng);
      ConvCellParams<double> cell = random_cell(k, 4, rng);
      EXPECT_LT(max_abs_diff(dynamic_conv_cell<double>(nullptr, v2, cell, causal),
                             dynamic_conv_oracle(v2, cell.weights, cell.wout, causal)),
                1e-10)
          << "k=" << k << " causal=" << causal;
    }
  }
}

TEST(DynamicConvTest, EvenKernelIsConfigError) {
  std::mt19937_64 rng(10);
  ConvCellParams<double> cell = random_cell(4, 3, rng);
  EXPECT_THROW(dynamic_conv_cell<double>(nullptr, random_tensor({5, 3}, rng), cell, false),
               ConfigError);
}

TEST(DynamicConvTest, PaddedRowsDoNotLeakIntoValidRows) {
  std::mt19937_64 rng(11);
  ConvCellParams<double> cell = random_cell(5, 3, rng);
  Td v2 = random_tensor({12, 3}, rng);
  const SeqLayout layout{2, 6, {6, 3}};
  Td out = conv_cell<double>(nullptr, v2, cell, ConvKind::dynamic_depthwise, false, layout);
  Td want = dynamic_conv_oracle(slice_rows(v2, 6, 3), cell.weights, cell.wout, false);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out(6 + i, c), want(i, c), 1e-12);
}

TEST(PlainConvTest, RawPerChannelTaps) {
  std::mt19937_64 rng(12);
  Td v2 = random_tensor({5, 2}, rng);
  ConvCellParams<double> cell{3, random_tensor({3, 2}, rng), identity(2)};
  Td out = conv_cell<double>(nullptr, v2, cell, ConvKind::plain, false, SeqLayout::single(5));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      double want = 0;
      for (std::size_t j = 0; j < 3; ++j) {
        const long p = static_cast<long>(i + j) - 1;
        if (p >= 0 && p < 5) want += cell.weights(j, c) * v2(static_cast<std::size_t>(p), c);
      }
      EXPECT_NEAR(out(i, c), want, 1e-14);
    }
  }
}

TEST(GatedConvTest, SingleCellHasUnitGate) {
  std::mt19937_64 rng(13);
  Td v2 = random_tensor({4, 3}, rng);
  std::vector<ConvCellParams<double>> cells{random_cell(3, 3, rng)};
  GateParams<double> g{Td::vector({2.5})};
  Td out = gated_conv_branch<double>(nullptr, v2, cells, g, ConvKind::dynamic_depthwise, false,
                                     SeqLayout::single(4));
  EXPECT_LT(max_abs_diff(out, dynamic_conv_cell<double>(nullptr, v2, cells[0], false)), 1e-15);
}

TEST(GatedConvTest, EqualGatesAverageCells) {
  std::mt19937_64 rng(14);
  Td v2 = random_tensor({4, 3}, rng);
  std::vector<ConvCellParams<double>> cells{random_cell(3, 3, rng), random_cell(5, 3, rng)};
  Td out = gated_conv_branch<double>(nullptr, v2, cells, {Td::vector({0.7, 0.7})},
                                     ConvKind::dynamic_depthwise, false, SeqLayout::single(4));
  Td a = dynamic_conv_cell<double>(nullptr, v2, cells[0], false);
  Td b = dynamic_conv_cell<double>(nullptr, v2, cells[1], false);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 0.5 * (a[i] + b[i]), 1e-14);
}

TEST(GatedConvTest, WeightedSumOfThreeCells) {
  std::mt19937_64 rng(15);
  Td v2 = random_tensor({6, 4}, rng);
  std::vector<ConvCellParams<double>> cells{random_cell(1, 4, rng), random_cell(3, 4, rng),
                                            random_cell(7, 4, rng)};
  Td alpha = random_tensor({3}, rng);
  Td out = gated_conv_branch<double>(nullptr, v2, cells, {alpha}, ConvKind::dynamic_depthwise, true,
                                     SeqLayout::single(6));
  double z = 0;
  for (double a : alpha.data()) z += std::exp(a);
  Td want(Shape{6, 4});
  for (std::size_t i = 0; i < 3; ++i) {
    Td o = dynamic_conv_oracle(v2, cells[i].weights, cells[i].wout, true);
    for (std::size_t e = 0; e < want.size(); ++e) want[e] += std::exp(alpha[i]) / z * o[e];
  }
  EXPECT_LT(max_abs_diff(out, want), 1e-10);
}

TEST(GatedConvTest, GateLengthMismatchIsConfigError) {
  std::mt19937_64 rng(16);
  std::vector<ConvCellParams<double>> cells{random_cell(3, 2, rng)};
  EXPECT_THROW(gated_conv_branch<double>(nullptr, random_tensor({3, 2}, rng), cells,
                                         {Td::vector({0, 0})}, ConvKind::dynamic_depthwise, false,
                                         SeqLayout::single(3)),
               ConfigError);
}

TEST(PointwiseTest, Examples) {
  std::mt19937_64 rng(17);
  FfnParams<double> id{identity(3), Td(Shape{3}), identity(3), Td(Shape{3})};
  Td x = random_tensor({4, 3}, rng);
  for (double& v : x.data()) v = std::abs(v);
  EXPECT_LT(max_abs_diff(pointwise_branch<double>(nullptr, x, id), x), 1e-15);

  FfnParams<double> one{Td::matrix({{1}}), Td(Shape{1}), Td::matrix({{1}}), Td(Shape{1})};
  EXPECT_EQ(pointwise_branch<double>(nullptr, Td::matrix({{-1}}), one)[0], 0.0);
}

TEST(PointwiseTest, PermutingRowsPermutesOutput) {
  std::mt19937_64 rng(18);
  FfnParams<double> p{random_tensor({3, 5}, rng), random_tensor({5}, rng), random_tensor({5, 3}, rng),
                      random_tensor({3}, rng)};
  Td x = random_tensor({4, 3}, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Td y = pointwise_branch<double>(nullptr, x, p);
  Td yp = pointwise_branch<double>(nullptr, permute_rows(x, perm), p);
  EXPECT_EQ(max_abs_diff(yp, permute_rows(y, perm)), 0.0);
}

TEST(MuseBlockTest, ZeroOutputProjectionsLeaveResidual) {
  std::mt19937_64 rng(19);
  const BlockConfig cfg = small_config(false);
  BlockParams<double> p = random_block(cfg, rng);
  p.attn.wo = Td(Shape{8, 8});
  for (auto& c : p.cells) c.wout = Td(Shape{8, 8});
  p.ffn.w2 = Td(Shape{12, 8});
  p.ffn.b2 = Td(Shape{8});
  Td x = random_tensor({5, 8}, rng);
  EXPECT_EQ(max_abs_diff(muse_block_forward<double>(nullptr, x, p, cfg, SeqLayout::single(5), {}), x),
            0.0);
}

TEST(MuseBlockTest, SimpleModeDropsOnlyTheConvBranch) {
  std::mt19937_64 rng(20);
  const BlockConfig cfg = small_config(false);
  BlockConfig simple = cfg;
  simple.mode = BlockMode::muse_simple;
  const BlockParams<double> p = random_block(cfg, rng);
  Td x = random_tensor({5, 8}, rng);
  const SeqLayout layout = SeqLayout::single(5);
  Td xh = layer_norm<double>(nullptr, x, p.ln_gain, p.ln_bias, 1e-5);
  Td att = attention_branch<double>(nullptr, xh, p.attn, p.proj, layout, {});
  Td ffn = pointwise_branch<double>(nullptr, xh, p.ffn);
  Td want = add_all<double>(nullptr, {x, att, ffn});
  Td got = muse_block_forward<double>(nullptr, x, p, simple, layout, {});
  ASSERT_EQ(got.shape(), want.shape());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], want[i]);
}

TEST(MuseBlockTest, EqualsSumOfBranches) {
  std::mt19937_64 rng(21);
  for (Projection proj : {Projection::shared, Projection::separate}) {
    for (ConvKind kind : {ConvKind::dynamic_depthwise, ConvKind::plain}) {
      BlockConfig cfg = small_config(true);
      cfg.projection = proj;
      cfg.conv_kind = kind;
      const BlockParams<double> p = random_block(cfg, rng);
      Td x = random_tensor({6, 8}, rng);
      const SeqLayout layout = SeqLayout::single(6);
      Td xh = layer_norm<double>(nullptr, x, p.ln_gain, p.ln_bias, 1e-5);
      Td att = attention_branch<double>(nullptr, xh, p.attn, p.proj, layout, causal_mask());
      Td v2 = matmul<double>(nullptr, xh, proj == Projection::shared ? p.proj.wv : *p.proj.wv2);
      Td conv = gated_conv_branch<double>(nullptr, v2, p.cells, p.gate, kind, true, layout);
      Td ffn = pointwise_branch<double>(nullptr, xh, p.ffn);
      Td got = muse_block_forward<double>(nullptr, x, p, cfg, layout, causal_mask());
      Td want(Shape{6, 8});
      for (std::size_t i = 0; i < want.size(); ++i) want[i] = x[i] + att[i] + conv[i] + ffn[i];
      EXPECT_LT(max_abs_diff(got, want), 1e-10);
    }
  }
}

TEST(MuseBlockTest, WrongInputWidthIsShapeError) {
  std::mt19937_64 rng(22);
  const BlockConfig cfg = small_config(false);
  const BlockParams<double> p = random_block(cfg, rng);
  EXPECT_THROW(muse_block_forward<double>(nullptr, Td(Shape{3, 7}), p, cfg, SeqLayout::single(3), {}),
               ShapeError);
}

TEST(MuseBlockTest, NamedParametersCoverEveryTensor) {
  std::mt19937_64 rng(23);
  const BlockParams<double> p = random_block(small_config(false), rng);
  const auto named = p.named("enc.");
  // ln 2, attention 3, value 1, two cells x 2, gate, ffn 4.
  EXPECT_EQ(named.size(), 15u);
  EXPECT_EQ(named.front().first, "enc.ln.gain");
  EXPECT_EQ(p.parameter_count(), 2 * 8 + 4 * 64 + (3 * 8 + 64) + (5 * 8 + 64) + 2 + 8 * 12 + 12 +
                                     12 * 8 + 8);
}

TEST(BlockInvariants, TapWeightsFormASimplex) {
  // A constant channel passes the tap weights straight through: at interior
  // positions its output is the sum of all tap weights.
  std::mt19937_64 rng(24);
  for (std::size_t k : {3, 5, 7}) {
    Td v2 = random_tensor({12, 4}, rng, 2.0);
    for (std::size_t i = 0; i < 12; ++i) v2(i, 0) = 1.0;
    ConvCellParams<double> cell{k, random_tensor({k, 4}, rng), identity(4)};
    Td out = dynamic_conv_cell<double>(nullptr, v2, cell, false);
    Td logits = matmul_nt<double>(nullptr, v2, cell.weights);
    Td w = softmax<double>(nullptr, logits, 1);
    for (std::size_t i = 0; i < 12; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < k; ++j) {
        EXPECT_GE(w(i, j), 0.0);
        total += w(i, j);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
      const std::size_t h = (k - 1) / 2;
      if (i >= h && i + h < 12) {
        EXPECT_NEAR(out(i, 0), 1.0, 1e-12);
      } else {
        EXPECT_LE(out(i, 0), 1.0 + 1e-12);
        EXPECT_GE(out(i, 0), 0.0);
      }
    }
  }
}

TEST(BlockInvariants, GateWeightsSumToOne) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 20; ++trial) {
    Td g = softmax<double>(nullptr, random_tensor({static_cast<std::size_t>(trial % 5 + 1)}, rng, 4.0), 0);
    EXPECT_NEAR(std::accumulate(g.data().begin(), g.data().end(), 0.0), 1.0, 1e-12);
  }
}

TEST(BlockInvariants, AttentionIsPermutationEquivariant) {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 5; ++trial) {
    AttentionParams<double> p{random_tensor({8, 8}, rng), random_tensor({8, 8}, rng),
                              random_tensor({8, 8}, rng), 2};
    SharedProjection<double> sp{random_tensor({8, 8}, rng), std::nullopt};
    Td x = random_tensor({7, 8}, rng);
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Td y = attention_branch<double>(nullptr, x, p, sp, SeqLayout::single(7), {});
    Td yp = attention_branch<double>(nullptr, permute_rows(x, perm), p, sp, SeqLayout::single(7), {});
    EXPECT_LT(max_abs_diff(yp, permute_rows(y, perm)), 1e-10);
  }
}

TEST(BlockInvariants, ConvIsTranslationEquivariantInside) {
  std::mt19937_64 rng(27);
  for (std::size_t k : {3, 5, 7}) {
    const std::size_t n = 14, h = (k - 1) / 2;
    Td x = random_tensor({n, 4}, rng);
    Td shifted(Shape{n, 4});
    for (std::size_t c = 0; c < 4; ++c) shifted(0, c) = std::normal_distribution<double>()(rng);
    for (std::size_t i = 0; i + 1 < n; ++i)
      for (std::size_t c = 0; c < 4; ++c) shifted(i + 1, c) = x(i, c);
    ConvCellParams<double> cell = random_cell(k, 4, rng);
    Td y = dynamic_conv_cell<double>(nullptr, x, cell, false);
    Td ys = dynamic_conv_cell<double>(nullptr, shifted, cell, false);
    for (std::size_t i = h; i + h + 1 < n; ++i)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(ys(i + 1, c), y(i, c), 1e-10) << "k=" << k;
  }
}

TEST(BlockInvariants, CausalOutputsIgnoreTheFuture) {
  std::mt19937_64 rng(28);
  for (ConvKind kind : {ConvKind::dynamic_depthwise, ConvKind::plain}) {
    BlockConfig cfg = small_config(true);
    cfg.conv_kind = kind;
    cfg.kernel_sizes = {3, 7};
    const BlockParams<double> p = random_block(cfg, rng);
    const std::size_t n = 9;
    Td x = random_tensor({n, 8}, rng);
    Td y = muse_block_forward<double>(nullptr, x, p, cfg, SeqLayout::single(n), causal_mask());
    for (std::size_t t = 0; t + 1 < n; ++t) {
      Td changed = x.clone();
      for (std::size_t i = t + 1; i < n; ++i)
        for (std::size_t c = 0; c < 8; ++c) changed(i, c) = 10.0 * std::normal_distribution<double>()(rng);
      Td yc = muse_block_forward<double>(nullptr, changed, p, cfg, SeqLayout::single(n), causal_mask());
      for (std::size_t i = 0; i <= t; ++i)
        for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(yc(i, c), y(i, c), 1e-12);
    }
  }
}

TEST(BlockInvariants, SeparateProjectionAddsOneMatrix) {
  for (std::size_t d : {8, 16, 32}) {
    BlockConfig cfg = small_config(false);
    cfg.d = d;
    std::mt19937_64 rng(29);
    const std::size_t shared = init_block_params<double>(cfg, rng).parameter_count();
    cfg.projection = Projection::separate;
    const std::size_t separate = init_block_params<double>(cfg, rng).parameter_count();
    EXPECT_EQ(separate - shared, d * d);
  }
}

TEST(BlockInvariants, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(30);
  struct Variant {
    bool causal;
    Projection proj;
    ConvKind kind;
    BlockMode mode;
  };
  const std::vector<Variant> variants{
      {false, Projection::shared, ConvKind::dynamic_depthwise, BlockMode::muse},
      {true, Projection::shared, ConvKind::dynamic_depthwise, BlockMode::muse},
      {false, Projection::separate, ConvKind::plain, BlockMode::muse},
      {true, Projection::shared, ConvKind::dynamic_depthwise, BlockMode::muse_simple},
  };
  for (const Variant& var : variants) {
    BlockConfig cfg = small_config(var.causal, var.mode);
    cfg.projection = var.proj;
    cfg.conv_kind = var.kind;
    const BlockParams<double> p = random_block(cfg, rng);
    Td x = random_tensor({5, 8}, rng);
    Td readout = random_tensor({8, 1}, rng);
    const AttentionMask mask = var.causal ? causal_mask() : AttentionMask{};
    std::vector<Td> params{x};
    for (const auto& [name, t] : p.named("")) params.push_back(t);
    auto loss = [&](Tape<double>* t) {
      Td y = muse_block_forward(t, x, p, cfg, SeqLayout::single(5), mask);
      return sum(t, matmul(t, y, readout));
    };
    const GradCheckResult r = finite_diff_check<double>(loss, params, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-4) << "param " << r.worst_param << " index " << r.worst_index;
  }
}

}  // namespace
}  // namespace muse
