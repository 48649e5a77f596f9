#include "sam/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "sam/image_io.hpp"

namespace sam {

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& item : items) ++counts.at(item.label);
  return counts;
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ParameterError("synthetic: need at least 2 classes");
  if (images_per_class == 0 || test_images_per_class == 0) {
    throw ParameterError("synthetic: images per class must be positive");
  }
  if (patch_size < 3 || patch_size >= image_size) {
    throw ParameterError("synthetic: patch size must be in [3, image_size)");
  }
  if (!(spurious_correlation >= 0.0 && spurious_correlation <= 1.0)) {
    throw ParameterError("synthetic: spurious correlation must be in [0, 1]");
  }
  if (!(noise_level >= 0.0) || !std::isfinite(noise_level)) {
    throw ParameterError("synthetic: noise level must be non-negative");
  }
}

namespace {

constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kTestStream = 2;
constexpr std::uint64_t kPatternStream = 3;

struct Rgb {
  double r, g, b;
};

// Evenly spaced hues. Low saturation keeps the tint a weak but fully
// learnable cue: neighbouring hues differ by less than 0.1 per channel.
constexpr double kTintSaturation = 0.15;
constexpr double kTintValue = 0.7;

std::vector<Rgb> make_palette(std::size_t n) {
  std::vector<Rgb> palette(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double h = 6.0 * static_cast<double>(i) / static_cast<double>(n);
    const double s = kTintSaturation, v = kTintValue;
    const double c = v * s;
    const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
    const double m = v - c;
    Rgb rgb{0, 0, 0};
    switch (static_cast<int>(h)) {
      case 0: rgb = {c, x, 0}; break;
      case 1: rgb = {x, c, 0}; break;
      case 2: rgb = {0, c, x}; break;
      case 3: rgb = {0, x, c}; break;
      case 4: rgb = {x, 0, c}; break;
      default: rgb = {c, 0, x}; break;
    }
    palette[i] = {rgb.r + m, rgb.g + m, rgb.b + m};
  }
  return palette;
}

// Interior stripe texture of class c: orientation c % 4 (horizontal,
// vertical, diagonal, anti-diagonal), period 2 + c / 4, phase from the seed.
std::vector<std::vector<std::uint8_t>> make_patterns(std::size_t classes, std::size_t side, std::uint64_t seed) {
  std::vector<std::vector<std::uint8_t>> patterns;
  Rng rng(seed);
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t period = 2 + c / 4;
    const std::size_t phase = std::uniform_int_distribution<std::size_t>(0, period - 1)(rng);
    std::vector<std::uint8_t> p(side * side);
    for (std::size_t r = 0; r < side; ++r) {
      for (std::size_t q = 0; q < side; ++q) {
        std::size_t coord = 0;
        switch (c % 4) {
          case 0: coord = r; break;
          case 1: coord = q; break;
          case 2: coord = r + q; break;
          default: coord = r + side - 1 - q; break;
        }
        p[r * side + q] = ((coord + phase) % period) < (period + 1) / 2 ? 1 : 0;
      }
    }
    patterns.push_back(std::move(p));
  }
  return patterns;
}

void render_split(const SyntheticSpec& spec, std::uint64_t stream, std::size_t per_class, bool correlated,
                  const std::vector<Rgb>& palette, const std::vector<std::vector<std::uint8_t>>& patterns,
                  Dataset& out, std::vector<SyntheticMeta>& meta) {
  const std::size_t n = spec.image_size, p = spec.patch_size;
  const double rho = correlated ? spec.spurious_correlation : 0.0;
  out.num_classes = spec.num_classes;
  out.class_names.clear();
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof name, "class_%03zu", c);
    out.class_names.emplace_back(name);
  }
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t index = c * per_class + i;
      Rng rng(derive_seed(derive_seed(spec.seed, stream), index));
      std::bernoulli_distribution linked(rho);
      std::uniform_int_distribution<std::size_t> any_tint(0, spec.num_classes - 1);
      std::uniform_int_distribution<std::size_t> position(0, n - p);
      std::normal_distribution<double> noise(0.0, 1.0);

      SyntheticMeta m;
      m.tint = linked(rng) ? c : any_tint(rng);
      m.patch_row = position(rng);
      m.patch_col = position(rng);

      std::vector<double> px(n * n * 3);
      const Rgb& tint = palette[m.tint];
      for (std::size_t cell = 0; cell < n * n; ++cell) {
        px[cell * 3 + 0] = tint.r;
        px[cell * 3 + 1] = tint.g;
        px[cell * 3 + 2] = tint.b;
      }
      const auto& pattern = patterns[c];
      for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t q = 0; q < p; ++q) {
          const bool border = r == 0 || q == 0 || r == p - 1 || q == p - 1;
          const double v = border ? 1.0 : (pattern[(r - 1) * (p - 2) + (q - 1)] ? 0.85 : 0.05);
          const std::size_t cell = (m.patch_row + r) * n + (m.patch_col + q);
          px[cell * 3 + 0] = px[cell * 3 + 1] = px[cell * 3 + 2] = v;
        }
      }
      for (double& v : px) v = std::clamp(v + spec.noise_level * noise(rng), 0.0, 1.0);

      out.items.push_back({Tensor::from({n, n, 3}, std::move(px)), c, static_cast<std::uint32_t>(index)});
      meta.push_back(m);
    }
  }
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto palette = make_palette(spec.num_classes);
  const auto patterns = make_patterns(spec.num_classes, spec.patch_size - 2, derive_seed(spec.seed, kPatternStream));
  SyntheticData data;
  render_split(spec, kTrainStream, spec.images_per_class, true, palette, patterns, data.train, data.train_meta);
  render_split(spec, kTestStream, spec.test_images_per_class, false, palette, patterns, data.test, data.test_meta);
  return data;
}

std::vector<std::size_t> select_categories(std::size_t num_classes, std::size_t category_count, std::uint64_t seed) {
  if (category_count == 0) category_count = num_classes;
  if (category_count > num_classes) {
    throw ParameterError("subsample: " + std::to_string(category_count) + " categories requested, dataset has " +
                         std::to_string(num_classes));
  }
  std::vector<std::size_t> classes(num_classes);
  std::iota(classes.begin(), classes.end(), 0);
  Rng rng(derive_seed(seed, 0));
  std::shuffle(classes.begin(), classes.end(), rng);
  classes.resize(category_count);
  std::sort(classes.begin(), classes.end());
  return classes;
}

Dataset restrict_categories(const Dataset& dataset, const std::vector<std::size_t>& classes) {
  std::vector<std::size_t> relabel(dataset.num_classes, SIZE_MAX);
  Dataset out;
  out.num_classes = classes.size();
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] >= dataset.num_classes) throw ParameterError("restrict_categories: class out of range");
    relabel[classes[i]] = i;
    if (classes[i] < dataset.class_names.size()) out.class_names.push_back(dataset.class_names[classes[i]]);
  }
  for (const auto& item : dataset.items) {
    if (relabel[item.label] != SIZE_MAX) out.items.push_back({item.pixels, relabel[item.label], item.id});
  }
  return out;
}

Dataset subsample(const Dataset& dataset, const SplitSpec& split) {
  if (!(split.label_proportion > 0.0 && split.label_proportion <= 1.0)) {
    throw ParameterError("subsample: label proportion must be in (0, 1], received " +
                         std::to_string(split.label_proportion));
  }
  const auto classes = select_categories(dataset.num_classes, split.category_count, split.seed);
  const Dataset kept = restrict_categories(dataset, classes);

  std::vector<std::vector<std::size_t>> by_class(kept.num_classes);
  for (std::size_t i = 0; i < kept.items.size(); ++i) by_class[kept.items[i].label].push_back(i);

  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    // The small offset keeps products such as 0.15 * 100 from flooring down.
    const auto quota = static_cast<std::size_t>(std::floor(split.label_proportion * idx.size() + 1e-9));
    Rng rng(derive_seed(split.seed, 1 + classes[c]));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::max<std::size_t>(1, std::min(quota, idx.size())));
    chosen.insert(chosen.end(), idx.begin(), idx.end());
  }
  std::sort(chosen.begin(), chosen.end());
  if (chosen.empty()) throw ParameterError("subsample: the split selects no images");

  Dataset out;
  out.num_classes = kept.num_classes;
  out.class_names = kept.class_names;
  for (std::size_t i : chosen) out.items.push_back(kept.items[i]);
  return out;
}

namespace {

bool is_image_file(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  return ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

}  // namespace

Dataset load_image_folder(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("dataset root is not a directory: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  if (class_dirs.empty()) throw IoError("dataset root has no class directories: " + root.string());

  Dataset out;
  out.num_classes = class_dirs.size();
  std::size_t channels = 0;
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    out.class_names.push_back(class_dirs[c].filename().string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[c])) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    if (files.empty()) throw IoError("class directory has no images: " + class_dirs[c].string());
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    for (const auto& file : files) {
      Tensor pixels = read_pnm(file);
      if (channels == 0) channels = pixels.dim(2);
      if (pixels.dim(2) != channels) {
        throw IoError("image channel count differs from the rest of the dataset: " + file.string());
      }
      out.items.push_back({std::move(pixels), c, static_cast<std::uint32_t>(out.items.size())});
    }
  }
  return out;
}

void write_image_folder(const Dataset& dataset, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  for (std::size_t c = 0; c < dataset.num_classes; ++c) {
    fs::create_directories(root / (c < dataset.class_names.size() ? dataset.class_names[c] : "class_" + std::to_string(c)));
  }
  for (const auto& item : dataset.items) {
    const std::string dir =
        item.label < dataset.class_names.size() ? dataset.class_names[item.label] : "class_" + std::to_string(item.label);
    char name[32];
    std::snprintf(name, sizeof name, "%06u.%s", item.id, item.pixels.dim(2) == 1 ? "pgm" : "ppm");
    write_pnm(root / dir / name, item.pixels);
  }
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t dataset_size, std::size_t batch_size,
                                                 std::uint64_t epoch_seed, std::size_t epoch) {
  if (batch_size == 0) throw ParameterError("batch size must be at least 1");
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(epoch_seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < dataset_size; start += batch_size) {
    const std::size_t end = std::min(dataset_size, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Tensor crop(const Tensor& image, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  if (image.rank() != 3 || top + height > image.dim(0) || left + width > image.dim(1)) {
    throw DimensionError("crop: window " + std::to_string(height) + "x" + std::to_string(width) + " at (" +
                         std::to_string(top) + "," + std::to_string(left) + ") exceeds image " +
                         shape_string(image.shape()));
  }
  const std::size_t w = image.dim(1), c = image.dim(2);
  const auto src = image.values();
  std::vector<double> out;
  out.reserve(height * width * c);
  for (std::size_t r = 0; r < height; ++r) {
    const auto row = src.subspan(((top + r) * w + left) * c, width * c);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor::from({height, width, c}, std::move(out));
}

Tensor center_crop(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3 || height > image.dim(0) || width > image.dim(1)) {
    throw DimensionError("center_crop: image " + shape_string(image.shape()) + " smaller than crop");
  }
  return crop(image, (image.dim(0) - height) / 2, (image.dim(1) - width) / 2, height, width);
}

Tensor random_crop(const Tensor& image, std::size_t height, std::size_t width, Rng& rng) {
  if (image.rank() != 3 || height > image.dim(0) || width > image.dim(1)) {
    throw DimensionError("random_crop: image " + shape_string(image.shape()) + " smaller than crop");
  }
  std::uniform_int_distribution<std::size_t> top(0, image.dim(0) - height);
  std::uniform_int_distribution<std::size_t> left(0, image.dim(1) - width);
  const std::size_t t = top(rng);
  return crop(image, t, left(rng), height, width);
}

}  // namespace sam
