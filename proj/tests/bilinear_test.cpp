#include <gtest/gtest.h>

#include <cmath>

#include "sam/bilinear.hpp"
#include "sam/ops.hpp"
#include "support.hpp"

namespace sam {
namespace {

using testing::random_tensor;

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Rows of the identity: bank row k picks feature channel k.
ProjectionBank basis_bank(std::size_t k, std::size_t d) {
  std::vector<double> w(k * d, 0.0);
  for (std::size_t i = 0; i < k; ++i) w[i * d + i] = 1.0;
  return {Tensor::from({k, d}, w)};
}

// Brute force: sum over cells of (W phi_ij) outer phi_ij, flattened k-major.
std::vector<double> outer_product_oracle(const Tensor& phi, const Tensor& bank) {
  const std::size_t cells = phi.dim(0) * phi.dim(1), d = phi.dim(2), k = bank.dim(0);
  std::vector<double> f(k * d, 0.0);
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::size_t a = 0; a < k; ++a) {
      double m = 0.0;
      for (std::size_t j = 0; j < d; ++j) m += bank[a * d + j] * phi[c * d + j];
      for (std::size_t j = 0; j < d; ++j) f[a * d + j] += m * phi[c * d + j];
    }
  }
  return f;
}

TEST(ProjectionBank, Init) {
  const ProjectionBank b = ProjectionBank::init(16, 64, 9);
  EXPECT_EQ(b.k(), 16u);
  EXPECT_EQ(b.weights.shape(), (Shape{16, 64}));
  EXPECT_THROW(ProjectionBank::init(0, 64, 9), ParameterError);
}

TEST(ProjectAttentionMaps, Examples) {
  Rng rng(1);
  const Tensor phi = random_tensor({2, 2, 3}, rng);
  EXPECT_EQ(vals(project_attention_maps(phi, basis_bank(2, 3))),
            (std::vector<double>{phi[0], phi[1], phi[3], phi[4], phi[6], phi[7], phi[9], phi[10]}));
  const ProjectionBank bank{random_tensor({2, 3}, rng)};
  const Tensor maps = project_attention_maps(phi, bank);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t k = 0; k < 2; ++k) {
      double m = 0.0;
      for (std::size_t j = 0; j < 3; ++j) m += bank.weights[k * 3 + j] * phi[c * 3 + j];
      EXPECT_NEAR(maps[c * 2 + k], m, 1e-15);
    }
  }
  // K = 1 is the SAM projection.
  const ProjectionBank one{random_tensor({1, 3}, rng)};
  EXPECT_EQ(vals(project_attention_maps(phi, one)), vals(predict_attention(phi, {ops::reshape(one.weights, {3})}).grid));
  EXPECT_THROW(project_attention_maps(phi, {Tensor::zeros({2, 4})}), DimensionError);
}

TEST(UnionMax, Examples) {
  EXPECT_EQ(union_max(Tensor::from({1, 1, 2}, {3, 5})).grid.item(), 5.0);
  Rng rng(2);
  const Tensor m = random_tensor({2, 2, 1}, rng);
  std::vector<double> same;
  for (double v : m.values()) same.insert(same.end(), 3, v);
  EXPECT_EQ(vals(union_max(Tensor::from({2, 2, 3}, same)).grid), vals(m));
  const Tensor r = random_tensor({2, 2, 3}, rng);
  const auto u = union_max(r);
  EXPECT_EQ(u.source, AttentionSource::predicted);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(u.grid[c], std::max({r[3 * c], r[3 * c + 1], r[3 * c + 2]}));
}

TEST(AttentivePool, Examples) {
  Rng rng(3);
  const Tensor phi = random_tensor({2, 2, 2}, rng);
  EXPECT_EQ(vals(attentive_pool(Tensor::zeros({2, 2}), phi)), (std::vector<double>{0, 0}));
  const auto f = attentive_pool(Tensor::from({2, 2}, {1, 0, 0, 2}), phi);
  EXPECT_NEAR(f[0], phi[0] + 2 * phi[6], 1e-15);
  EXPECT_NEAR(f[1], phi[1] + 2 * phi[7], 1e-15);
  const auto ones = attentive_pool(Tensor::filled({2, 2}, 1.0), phi);
  const auto gap = ops::global_average_pool(phi);
  for (std::size_t d = 0; d < 2; ++d) EXPECT_NEAR(ones[d], 4.0 * gap[d], 1e-10);
  EXPECT_THROW(attentive_pool(Tensor::zeros({2, 3}), phi), DimensionError);
}

TEST(AttentivePool, LinearInTheMap) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor phi = random_tensor({3, 3, 4}, rng);
    const Tensor a = random_tensor({3, 3}, rng), b = random_tensor({3, 3}, rng);
    const double x = 1.7, y = -0.6;
    const auto lhs = attentive_pool(ops::add(ops::scale(a, x), ops::scale(b, y)), phi);
    const auto pa = attentive_pool(a, phi), pb = attentive_pool(b, phi);
    for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(lhs[d], x * pa[d] + y * pb[d], 1e-10);
  }
}

TEST(BilinearConcat, MatchesOuterProductOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor phi = random_tensor({3, 3, 4}, rng);
    const ProjectionBank bank{random_tensor({2, 4}, rng)};
    const auto f = bilinear_concat(project_attention_maps(phi, bank), phi).f;
    ASSERT_EQ(f.shape(), (Shape{8}));
    const auto oracle = outer_product_oracle(phi, bank.weights);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(f[i], oracle[i], 1e-9);
  }
}

TEST(BilinearConcat, BasisBankSelfProducts) {
  Rng rng(6);
  const Tensor phi = random_tensor({2, 2, 3}, rng);
  const auto f = bilinear_concat(project_attention_maps(phi, basis_bank(3, 3)), phi).f;
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += phi[c * 3 + k] * phi[c * 3 + j];
      EXPECT_NEAR(f[k * 3 + j], s, 1e-14);
    }
  }
}

TEST(BilinearConcat, SegmentsAreAttentivePools) {
  Rng rng(7);
  const Tensor phi = random_tensor({2, 3, 4}, rng);
  const Tensor maps = random_tensor({2, 3, 3}, rng);
  const auto f = bilinear_concat(maps, phi).f;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> a;
    for (std::size_t c = 0; c < 6; ++c) a.push_back(maps[c * 3 + k]);
    const auto seg = attentive_pool(Tensor::from({2, 3}, a), phi);
    for (std::size_t d = 0; d < 4; ++d) EXPECT_EQ(f[k * 4 + d], seg[d]);
  }
}

TEST(BilinearConcat, PermutingRowsPermutesSegments) {
  Rng rng(8);
  const Tensor phi = random_tensor({3, 3, 4}, rng, 0, 1);
  const Tensor w = random_tensor({3, 4}, rng);
  std::vector<double> swapped(w.values().begin(), w.values().end());
  std::swap_ranges(swapped.begin(), swapped.begin() + 4, swapped.begin() + 8);  // rows 0 and 2
  const Tensor w2 = Tensor::from({3, 4}, swapped);
  const Tensor m1 = project_attention_maps(phi, {w}), m2 = project_attention_maps(phi, {w2});
  const auto f1 = bilinear_concat(m1, phi).f, f2 = bilinear_concat(m2, phi).f;
  for (std::size_t d = 0; d < 4; ++d) {
    EXPECT_NEAR(f1[d], f2[8 + d], 1e-12);
    EXPECT_NEAR(f1[4 + d], f2[4 + d], 1e-12);
  }
  const AttentionMap target{random_tensor({3, 3}, rng, 0, 1), AttentionSource::gradcam, 0};
  SamLossConfig cfg;
  cfg.target_kind = TargetKind::gradcam;
  EXPECT_NEAR(sam_bilinear_loss(m1, target, cfg).item(), sam_bilinear_loss(m2, target, cfg).item(), 1e-12);
}

TEST(SignedSqrtL2, UnitNormAndSigns) {
  const auto g = signed_sqrt_l2(Tensor::from({3}, {4.0, -9.0, 0.0}));
  // The root is smoothed by a 1e-12 offset, so zero maps to about 1e-6.
  EXPECT_NEAR(g[0], 2.0 / std::sqrt(13.0), 1e-6);
  EXPECT_NEAR(g[1], -3.0 / std::sqrt(13.0), 1e-6);
  EXPECT_NEAR(g[2], 0.0, 1e-6);
  EXPECT_NEAR(g[0] * g[0] + g[1] * g[1] + g[2] * g[2], 1.0, 1e-12);
}

TEST(BilinearLogits, ShapeAndWidthCheck) {
  Rng rng(9);
  const Tensor phi = random_tensor({2, 2, 3}, rng, 0, 1);
  const ProjectionBank bank{random_tensor({2, 3}, rng)};
  const ClassifierHead head{random_tensor({4, 6}, rng), random_tensor({4}, rng)};
  const Tensor z = bilinear_logits(phi, bank, head);
  ASSERT_EQ(z.shape(), (Shape{4}));
  const auto f = outer_product_oracle(phi, bank.weights);
  for (std::size_t y = 0; y < 4; ++y) {
    double s = head.bias[y];
    for (std::size_t i = 0; i < 6; ++i) s += head.weights[y * 6 + i] * f[i];
    EXPECT_NEAR(z[y], s, 1e-12);
  }
  EXPECT_THROW(bilinear_logits(phi, bank, {random_tensor({4, 5}, rng), random_tensor({4}, rng)}), DimensionError);
}

TEST(SamBilinearLoss, Examples) {
  Rng rng(10);
  SamLossConfig cfg;
  cfg.target_kind = TargetKind::gradcam;
  const Tensor maps = random_tensor({2, 2, 3}, rng);
  const AttentionMap same{detach(union_max(maps).grid), AttentionSource::gradcam, 0};
  EXPECT_LE(std::abs(sam_bilinear_loss(maps, same, cfg).item()), 1e-12);
  const AttentionMap cam_target{same.grid, AttentionSource::cam, 0};
  EXPECT_THROW(sam_bilinear_loss(maps, cam_target, cfg), ContractError);
}

TEST(SamBilinearLoss, SingleMapEqualsSamLoss) {
  Rng rng(11);
  const Tensor maps = random_tensor({3, 3, 1}, rng);
  const AttentionMap target{random_tensor({3, 3}, rng), AttentionSource::gradcam, 2};
  const AttentionMap pred{ops::reshape(maps, {3, 3}), AttentionSource::predicted, std::nullopt};
  EXPECT_EQ(sam_bilinear_loss(maps, target, SamLossConfig{}).item(), sam_loss(pred, target, SamLossConfig{}).item());
}

TEST(SamBilinearLoss, GradientOnlyReachesArgmaxMap) {
  Rng rng(12);
  Tensor maps = random_tensor({2, 2, 3}, rng, -1, 1, true);
  const AttentionMap target{random_tensor({2, 2}, rng), AttentionSource::gradcam, 0};
  backward(sam_bilinear_loss(maps, target, SamLossConfig{}));
  for (std::size_t c = 0; c < 4; ++c) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k) {
      if (maps[c * 3 + k] > maps[c * 3 + best]) best = k;
    }
    for (std::size_t k = 0; k < 3; ++k) {
      if (k != best) EXPECT_EQ(maps.grad()[c * 3 + k], 0.0);
    }
  }
}

}  // namespace
}  // namespace sam
