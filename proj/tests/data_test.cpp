#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "sam/data.hpp"
#include "sam/image_io.hpp"
#include "support.hpp"

namespace sam {
namespace {

namespace fs = std::filesystem;
using testing::random_tensor;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sam_data_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SyntheticSpec small_spec(std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.images_per_class = 10;
  s.test_images_per_class = 5;
  s.seed = seed;
  return s;
}

bool same_pixels(const Dataset& a, const Dataset& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a.items[i].pixels.values(), y = b.items[i].pixels.values();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
    if (a.items[i].label != b.items[i].label || a.items[i].id != b.items[i].id) return false;
  }
  return true;
}

// Contingency table of tint against label.
std::vector<std::vector<double>> tint_table(const Dataset& d, const std::vector<SyntheticMeta>& meta) {
  std::vector<std::vector<double>> t(d.num_classes, std::vector<double>(d.num_classes, 0.0));
  for (std::size_t i = 0; i < d.size(); ++i) t[meta[i].tint][d.items[i].label] += 1.0;
  return t;
}

double chi_square(const std::vector<std::vector<double>>& t) {
  const std::size_t r = t.size(), c = t[0].size();
  std::vector<double> rows(r, 0.0), cols(c, 0.0);
  double n = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      rows[i] += t[i][j];
      cols[j] += t[i][j];
      n += t[i][j];
    }
  }
  double chi = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double e = rows[i] * cols[j] / n;
      chi += (t[i][j] - e) * (t[i][j] - e) / e;
    }
  }
  return chi;
}

double mutual_information(const std::vector<std::vector<double>>& t) {
  const std::size_t r = t.size(), c = t[0].size();
  std::vector<double> rows(r, 0.0), cols(c, 0.0);
  double n = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      rows[i] += t[i][j];
      cols[j] += t[i][j];
      n += t[i][j];
    }
  }
  double mi = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      if (t[i][j] > 0) mi += t[i][j] / n * std::log(t[i][j] * n / (rows[i] * cols[j]));
    }
  }
  return mi;
}

TEST(Synthetic, SpecValidation) {
  SyntheticSpec s;
  EXPECT_NO_THROW(s.validate());
  s.patch_size = s.image_size;
  EXPECT_THROW(s.validate(), ParameterError);
  s = {};
  s.spurious_correlation = 1.5;
  EXPECT_THROW(s.validate(), ParameterError);
  s = {};
  s.num_classes = 1;
  EXPECT_THROW(generate_synthetic(s), ParameterError);
  s = {};
  s.noise_level = -0.1;
  EXPECT_THROW(s.validate(), ParameterError);
}

TEST(Synthetic, ShapesRangesAndIds) {
  const SyntheticData d = generate_synthetic(small_spec());
  EXPECT_EQ(d.train.size(), 80u);
  EXPECT_EQ(d.test.size(), 40u);
  EXPECT_EQ(d.train.num_classes, 8u);
  EXPECT_EQ(d.train.class_counts(), std::vector<std::size_t>(8, 10));
  EXPECT_EQ(d.train_meta.size(), 80u);
  for (const auto* ds : {&d.train, &d.test}) {
    std::set<std::uint32_t> ids;
    for (const auto& item : ds->items) {
      EXPECT_EQ(item.pixels.shape(), (Shape{32, 32, 3}));
      EXPECT_LT(item.label, 8u);
      for (double v : item.pixels.values()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
      EXPECT_TRUE(ids.insert(item.id).second);
    }
  }
}

TEST(Synthetic, Deterministic) {
  const SyntheticData a = generate_synthetic(small_spec(5)), b = generate_synthetic(small_spec(5));
  EXPECT_TRUE(same_pixels(a.train, b.train));
  EXPECT_TRUE(same_pixels(a.test, b.test));
  EXPECT_FALSE(same_pixels(a.train, generate_synthetic(small_spec(6)).train));
}

TEST(Synthetic, PatchPositionsCoverTheValidRange) {
  SyntheticSpec s = small_spec();
  s.images_per_class = 200;
  const SyntheticData d = generate_synthetic(s);
  const std::size_t last = s.image_size - s.patch_size;
  std::set<std::size_t> rows, cols;
  for (const auto& m : d.train_meta) {
    EXPECT_LE(m.patch_row, last);
    EXPECT_LE(m.patch_col, last);
    rows.insert(m.patch_row);
    cols.insert(m.patch_col);
  }
  EXPECT_EQ(rows.size(), last + 1);
  EXPECT_EQ(cols.size(), last + 1);
}

TEST(Synthetic, TrainTintFollowsRho) {
  SyntheticSpec s = small_spec();
  s.images_per_class = 250;
  for (double rho : {0.95, 1.0}) {
    s.spurious_correlation = rho;
    const SyntheticData d = generate_synthetic(s);
    std::size_t match = 0;
    for (std::size_t i = 0; i < d.train.size(); ++i) match += d.train_meta[i].tint == d.train.items[i].label;
    // With probability 1 - rho the tint is drawn uniformly and still matches 1/8 of the time.
    const double expected = rho + (1.0 - rho) / 8.0;
    EXPECT_NEAR(static_cast<double>(match) / d.train.size(), expected, 0.02);
  }
}

TEST(Synthetic, TestTintIndependentOfLabel) {
  SyntheticSpec s = small_spec(11);
  s.images_per_class = 1;
  s.test_images_per_class = 1250;  // 10k test images
  const SyntheticData d = generate_synthetic(s);
  ASSERT_EQ(d.test.size(), 10000u);
  // 49 degrees of freedom; 74.92 is the 0.99 quantile.
  EXPECT_LT(chi_square(tint_table(d.test, d.test_meta)), 74.92);
}

TEST(Synthetic, NoMutualInformationAtRhoZero) {
  SyntheticSpec s = small_spec(12);
  s.spurious_correlation = 0.0;
  s.images_per_class = 1000;
  s.test_images_per_class = 1;
  const SyntheticData d = generate_synthetic(s);
  // Plug-in bias is about (8-1)^2 / (2 n) = 0.003 nats here.
  EXPECT_LT(mutual_information(tint_table(d.train, d.train_meta)), 0.01);
}

// Softmax regression on per-channel mean intensity: sees the tint and
// nothing of the patch texture.
struct TintProbe {
  std::size_t classes;
  std::vector<double> w;  // classes x 4
  std::vector<double> mu, sd;

  static std::vector<double> features(const Tensor& img) {
    std::vector<double> f(3, 0.0);
    const auto v = img.values();
    for (std::size_t i = 0; i < v.size(); ++i) f[i % 3] += v[i];
    for (double& x : f) x /= static_cast<double>(v.size() / 3);
    return f;
  }

  std::vector<double> scores(const std::vector<double>& raw) const {
    std::vector<double> s(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
      s[c] = w[c * 4 + 3];
      for (std::size_t j = 0; j < 3; ++j) s[c] += w[c * 4 + j] * (raw[j] - mu[j]) / sd[j];
    }
    return s;
  }

  void fit(const Dataset& d) {
    classes = d.num_classes;
    std::vector<std::vector<double>> x;
    for (const auto& item : d.items) x.push_back(features(item.pixels));
    mu.assign(3, 0.0);
    sd.assign(3, 0.0);
    for (const auto& f : x) {
      for (std::size_t j = 0; j < 3; ++j) mu[j] += f[j] / x.size();
    }
    for (const auto& f : x) {
      for (std::size_t j = 0; j < 3; ++j) sd[j] += (f[j] - mu[j]) * (f[j] - mu[j]) / x.size();
    }
    for (double& s : sd) s = std::sqrt(s) + 1e-12;
    w.assign(classes * 4, 0.0);
    for (int iter = 0; iter < 2000; ++iter) {
      std::vector<double> g(w.size(), 0.0);
      for (std::size_t i = 0; i < x.size(); ++i) {
        auto s = scores(x[i]);
        const double m = *std::max_element(s.begin(), s.end());
        double z = 0.0;
        for (double& v : s) z += (v = std::exp(v - m));
        for (std::size_t c = 0; c < classes; ++c) {
          const double p = s[c] / z - (c == d.items[i].label ? 1.0 : 0.0);
          for (std::size_t j = 0; j < 3; ++j) g[c * 4 + j] += p * (x[i][j] - mu[j]) / sd[j];
          g[c * 4 + 3] += p;
        }
      }
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= 1.0 * g[k] / x.size();
    }
  }

  double accuracy(const Dataset& d) const {
    std::size_t ok = 0;
    for (const auto& item : d.items) {
      const auto s = scores(features(item.pixels));
      ok += static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin()) == item.label;
    }
    return static_cast<double>(ok) / d.size();
  }
};

TEST(Synthetic, TintProbeFitsTrainButNotTest) {
  SyntheticSpec s;
  s.num_classes = 4;
  s.spurious_correlation = 1.0;
  s.images_per_class = 100;
  s.test_images_per_class = 250;
  s.seed = 13;
  const SyntheticData d = generate_synthetic(s);
  TintProbe probe;
  probe.fit(d.train);
  EXPECT_GE(probe.accuracy(d.train), 0.99);
  EXPECT_NEAR(probe.accuracy(d.test), 0.25, 0.05);
}

TEST(Subsample, Examples) {
  const SyntheticData d = generate_synthetic(small_spec());
  const Dataset all = subsample(d.train, {1.0, 0, 3});
  EXPECT_TRUE(same_pixels(all, d.train));

  SyntheticSpec s = small_spec();
  s.images_per_class = 30;
  const Dataset thirty = generate_synthetic(s).train;
  EXPECT_EQ(subsample(thirty, {0.10, 0, 1}).class_counts(), std::vector<std::size_t>(8, 3));

  s.images_per_class = 100;
  const Dataset hundred = generate_synthetic(s).train;
  EXPECT_EQ(subsample(hundred, {0.15, 0, 1}).class_counts(), std::vector<std::size_t>(8, 15));
  EXPECT_EQ(subsample(hundred, {0.001, 0, 1}).class_counts(), std::vector<std::size_t>(8, 1));
}

TEST(Subsample, SeedsChangeMembersNotCounts) {
  SyntheticSpec s = small_spec();
  s.images_per_class = 40;
  const Dataset d = generate_synthetic(s).train;
  const Dataset a = subsample(d, {0.3, 0, 1}), b = subsample(d, {0.3, 0, 2});
  EXPECT_EQ(a.class_counts(), b.class_counts());
  std::set<std::uint32_t> ia, ib;
  for (const auto& it : a.items) ia.insert(it.id);
  for (const auto& it : b.items) ib.insert(it.id);
  EXPECT_NE(ia, ib);
  EXPECT_TRUE(same_pixels(a, subsample(d, {0.3, 0, 1})));
}

TEST(Subsample, CategoriesAreRelabelledDensely) {
  SyntheticSpec s = small_spec();
  s.images_per_class = 20;
  const Dataset d = generate_synthetic(s).train;
  const Dataset sub = subsample(d, {0.5, 3, 4});
  EXPECT_EQ(sub.num_classes, 3u);
  EXPECT_EQ(sub.class_counts(), std::vector<std::size_t>(3, 10));
  const auto kept = select_categories(8, 3, 4);
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_TRUE(std::is_sorted(kept.begin(), kept.end()));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(sub.class_names[i], d.class_names[kept[i]]);
  EXPECT_THROW(subsample(d, {0.5, 9, 4}), ParameterError);
  EXPECT_THROW(subsample(d, {0.0, 0, 4}), ParameterError);
  EXPECT_THROW(subsample(d, {1.5, 0, 4}), ParameterError);
}

TEST(ImageFolder, MinimalLayoutAndGrayscale) {
  const fs::path root = scratch_dir("minimal");
  fs::create_directories(root / "b_class");
  fs::create_directories(root / "a_class");
  write_pnm(root / "b_class" / "x.pgm", Tensor::filled({4, 4, 1}, 1.0));
  write_pnm(root / "a_class" / "y.pgm", Tensor::filled({4, 4, 1}, 0.0));
  std::ofstream(root / "a_class" / "notes.txt") << "ignored";
  const Dataset d = load_image_folder(root);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.class_names, (std::vector<std::string>{"a_class", "b_class"}));
  EXPECT_EQ(d.items[0].label, 0u);
  EXPECT_EQ(d.items[1].label, 1u);
  EXPECT_EQ(d.items[0].pixels.dim(2), 1u);
  EXPECT_EQ(d.items[1].pixels[0], 1.0);
}

TEST(ImageFolder, Errors) {
  const fs::path root = scratch_dir("errors");
  EXPECT_THROW(load_image_folder(root / "missing"), IoError);
  EXPECT_THROW(load_image_folder(root), IoError);
  fs::create_directories(root / "a");
  fs::create_directories(root / "b");
  write_pnm(root / "a" / "1.ppm", Tensor::filled({4, 4, 3}, 0.5));
  EXPECT_THROW(load_image_folder(root), IoError);  // b is empty
  write_pnm(root / "b" / "1.pgm", Tensor::filled({4, 4, 1}, 0.5));
  EXPECT_THROW(load_image_folder(root), IoError);  // mixed channel counts
}

TEST(ImageFolder, RoundTripWithinQuantization) {
  const SyntheticData d = generate_synthetic(small_spec(21));
  const fs::path root = scratch_dir("roundtrip");
  write_image_folder(d.train, root);
  const Dataset back = load_image_folder(root);
  ASSERT_EQ(back.size(), d.train.size());
  EXPECT_EQ(back.class_names, d.train.class_names);
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back.items[i].label, d.train.items[i].label);
    const auto a = back.items[i].pixels.values(), b = d.train.items[i].pixels.values();
    for (std::size_t j = 0; j < a.size(); ++j) ASSERT_LE(std::abs(a[j] - b[j]), 0.5 / 255.0 + 1e-12);
  }
  // A second load of the same tree is identical.
  EXPECT_TRUE(same_pixels(back, load_image_folder(root)));
}

TEST(BatchIter, PartitionAndReproducibility) {
  const auto batches = batch_iter(50, 24, 7, 3);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[2].size(), 2u);
  std::vector<std::size_t> all;
  for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(batches, batch_iter(50, 24, 7, 3));
  EXPECT_NE(batches, batch_iter(50, 24, 7, 4));
  EXPECT_NE(batches, batch_iter(50, 24, 8, 3));
  EXPECT_EQ(batch_iter(10, 64, 1).size(), 1u);
  EXPECT_THROW(batch_iter(10, 0, 1), ParameterError);
}

TEST(Crop, Windows) {
  Rng rng(1);
  const Tensor img = random_tensor({6, 5, 2}, rng);
  const Tensor c = crop(img, 1, 2, 3, 2);
  EXPECT_EQ(c.shape(), (Shape{3, 2, 2}));
  EXPECT_EQ(c[0], img[(1 * 5 + 2) * 2]);
  EXPECT_EQ(center_crop(img, 4, 3)[0], img[(1 * 5 + 1) * 2]);
  EXPECT_THROW(crop(img, 4, 0, 3, 2), DimensionError);
  EXPECT_THROW(center_crop(img, 7, 5), DimensionError);
  Rng r1(9), r2(9);
  for (int i = 0; i < 5; ++i) {
    const Tensor a = random_crop(img, 4, 4, r1), b = random_crop(img, 4, 4, r2);
    EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  }
}

}  // namespace
}  // namespace sam
