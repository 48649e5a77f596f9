#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sam/random.hpp"
#include "sam/tensor.hpp"

namespace sam {

struct LabeledImage {
  Tensor pixels;  // H x W x C in [0, 1]
  std::size_t label = 0;
  std::uint32_t id = 0;
};

struct Dataset {
  std::vector<LabeledImage> items;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  std::vector<std::size_t> class_counts() const;
};

/// Synthetic fine-grained benchmark. Every image holds one patch whose
/// interior texture identifies the class, framed by a border shared by all
/// classes, on a tinted background. In the training split the tint follows
/// the class with probability `spurious_correlation`; in the test split it
/// is independent of the class.
struct SyntheticSpec {
  std::size_t num_classes = 8;
  std::size_t images_per_class = 100;
  std::size_t test_images_per_class = 200;
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  double spurious_correlation = 0.95;
  double noise_level = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Ground truth the generator used for one image.
struct SyntheticMeta {
  std::size_t tint = 0;
  std::size_t patch_row = 0;
  std::size_t patch_col = 0;
};

struct SyntheticData {
  Dataset train;
  Dataset test;
  std::vector<SyntheticMeta> train_meta;
  std::vector<SyntheticMeta> test_meta;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Low-label protocol: keep `category_count` classes, then
/// max(1, floor(label_proportion * n_class)) images of each.
struct SplitSpec {
  double label_proportion = 1.0;
  std::size_t category_count = 0;  // 0 keeps every class
  std::uint64_t seed = 0;
};

/// Classes retained by a split, ascending. Their position in the result is
/// the dense label used after subsampling.
std::vector<std::size_t> select_categories(std::size_t num_classes, std::size_t category_count, std::uint64_t seed);

/// Items of the given classes only, relabelled densely in the order given.
Dataset restrict_categories(const Dataset& dataset, const std::vector<std::size_t>& classes);

Dataset subsample(const Dataset& dataset, const SplitSpec& split);

/// One sub-directory per class (sorted lexicographically), each holding
/// binary PPM/PGM images (sorted by file name).
Dataset load_image_folder(const std::filesystem::path& root);

/// Writes `dataset` in the layout load_image_folder reads.
void write_image_folder(const Dataset& dataset, const std::filesystem::path& root);

/// Seeded shuffle of [0, dataset_size) cut into batches; the last batch may
/// be short. Order depends only on (epoch_seed, epoch).
std::vector<std::vector<std::size_t>> batch_iter(std::size_t dataset_size, std::size_t batch_size,
                                                 std::uint64_t epoch_seed, std::size_t epoch = 0);

/// Copies the size x size window at (top, left).
Tensor crop(const Tensor& image, std::size_t top, std::size_t left, std::size_t height, std::size_t width);
Tensor center_crop(const Tensor& image, std::size_t height, std::size_t width);
Tensor random_crop(const Tensor& image, std::size_t height, std::size_t width, Rng& rng);

}  // namespace sam
