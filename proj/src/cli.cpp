#include "sam/cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "sam/data.hpp"
#include "sam/image_io.hpp"
#include "sam/model.hpp"
#include "sam/trainer.hpp"

namespace sam::cli {

namespace fs = std::filesystem;

namespace {

// Bad flag values caught after parsing; reported like any other usage error.
struct UsageError : Error {
  using Error::Error;
};

enum class LogLevel { quiet, info, debug };

class Log {
 public:
  Log(std::ostream& out, LogLevel level) : out_(out), level_(level) {}
  bool enabled(LogLevel at) const { return level_ != LogLevel::quiet && at <= level_; }
  void info(const std::string& line) const { write(LogLevel::info, line); }
  void debug(const std::string& line) const { write(LogLevel::debug, line); }

 private:
  void write(LogLevel at, const std::string& line) const {
    if (enabled(at)) out_ << line << '\n';
  }
  std::ostream& out_;
  LogLevel level_;
};

LogLevel log_level_from_env() {
  const char* v = std::getenv("SAM_ATTN_LOG");
  if (!v || !*v) return LogLevel::info;
  const std::string s(v);
  if (s == "quiet") return LogLevel::quiet;
  if (s == "info") return LogLevel::info;
  if (s == "debug") return LogLevel::debug;
  throw UsageError("SAM_ATTN_LOG must be quiet, info or debug, got '" + s + "'");
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(std::uint64_t v, int) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

using ConfigLines = std::vector<std::pair<std::string, std::string>>;

void echo_config(const ConfigLines& lines, const Log& log, const std::optional<fs::path>& file) {
  for (const auto& [k, v] : lines) log.info("config " + k + " = " + v);
  if (!file) return;
  std::ofstream out(*file);
  if (!out) throw IoError("cannot write " + file->string());
  for (const auto& [k, v] : lines) out << k << " = " << v << '\n';
  if (!out) throw IoError("failed writing " + file->string());
}

struct TrainFlags {
  std::string mode = "baseline";
  std::string data;
  std::size_t epochs = 60;
  std::size_t batch_size = 24;
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lambda = 0.01;
  double tau = kDefaultTemperature;
  std::size_t k = kDefaultProjections;
  double label_proportion = 1.0;
  std::size_t categories = 0;
  std::uint64_t seed = 0;
  std::string out = "run";
  std::size_t crop = 28;
  std::size_t eval_every = 1;
  bool bilinear_normalize = false;
  bool no_timing = false;
  std::string config;
};

void add_train_flags(CLI::App& sub, TrainFlags& f, bool with_mode) {
  if (with_mode) {
    sub.add_option("--mode", f.mode, "baseline | sam | fbp | sam_bilinear")
        ->check(CLI::IsMember({"baseline", "sam", "fbp", "sam_bilinear"}))
        ->capture_default_str();
  }
  sub.add_option("--data", f.data, "dataset directory (with train/ and test/, or class folders)")->required();
  sub.add_option("--epochs", f.epochs, "training epochs")->check(CLI::PositiveNumber)->capture_default_str();
  sub.add_option("--batch-size", f.batch_size, "mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
  sub.add_option("--lr", f.lr, "learning rate")->capture_default_str();
  sub.add_option("--momentum", f.momentum, "SGD momentum")->capture_default_str();
  sub.add_option("--weight-decay", f.weight_decay, "L2 weight decay")->capture_default_str();
  sub.add_option("--lambda", f.lambda, "SAM loss weight")->capture_default_str();
  sub.add_option("--tau", f.tau, "attention softmax temperature")->capture_default_str();
  sub.add_option("--k", f.k, "projections in the bilinear head")->capture_default_str();
  sub.add_option("--label-proportion", f.label_proportion, "fraction of training labels kept per class")
      ->capture_default_str();
  sub.add_option("--categories", f.categories, "number of classes kept (0 = all)")->capture_default_str();
  sub.add_option("--seed", f.seed, "seed for init, subsampling and shuffling")->capture_default_str();
  sub.add_option("--out", f.out, "output directory")->capture_default_str();
  sub.add_option("--crop", f.crop, "square input window")->check(CLI::PositiveNumber)->capture_default_str();
  sub.add_option("--eval-every", f.eval_every, "test accuracy every n epochs (and after the last)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub.add_flag("--bilinear-normalize", f.bilinear_normalize, "signed sqrt + L2 on the bilinear feature");
  sub.add_flag("--no-timing", f.no_timing, "write 0 in the seconds column");
  sub.add_option("--config", f.config, "key = value file; explicit flags win");
}

TrainConfig make_train_config(const TrainFlags& f, Mode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.epochs = f.epochs;
  cfg.batch_size = f.batch_size;
  cfg.sgd = {f.lr, f.momentum, f.weight_decay};
  cfg.sam.tau = f.tau;
  cfg.sam.lambda = f.lambda;
  cfg.sam.target_kind = mode == Mode::sam_bilinear ? TargetKind::gradcam : TargetKind::cam;
  cfg.k = f.k;
  cfg.bilinear_normalize = f.bilinear_normalize;
  cfg.seeds = {f.seed, f.seed, f.seed};
  cfg.crop = f.crop;
  cfg.eval_every = f.eval_every;
  cfg.record_time = !f.no_timing;
  try {
    cfg.validate();
    if (!(f.label_proportion > 0.0 && f.label_proportion <= 1.0)) {
      throw ParameterError("label proportion must be in (0, 1], got " + fmt(f.label_proportion));
    }
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

ConfigLines train_config_lines(const TrainFlags& f, Mode mode) {
  return {{"mode", to_string(mode)},
          {"data", f.data},
          {"epochs", fmt(f.epochs)},
          {"batch-size", fmt(f.batch_size)},
          {"lr", fmt(f.lr)},
          {"momentum", fmt(f.momentum)},
          {"weight-decay", fmt(f.weight_decay)},
          {"lambda", fmt(f.lambda)},
          {"tau", fmt(f.tau)},
          {"k", fmt(f.k)},
          {"label-proportion", fmt(f.label_proportion)},
          {"categories", fmt(f.categories)},
          {"seed", fmt(f.seed, 0)},
          {"out", f.out},
          {"crop", fmt(f.crop)},
          {"eval-every", fmt(f.eval_every)},
          {"bilinear-normalize", fmt(f.bilinear_normalize)},
          {"no-timing", fmt(f.no_timing)}};
}

struct Splits {
  Dataset train;
  std::optional<Dataset> test;
};

// DIR/train and DIR/test when present, otherwise DIR is the training set.
Splits load_splits(const fs::path& dir) {
  Splits s;
  if (fs::is_directory(dir / "train")) {
    s.train = load_image_folder(dir / "train");
    if (fs::is_directory(dir / "test")) s.test = load_image_folder(dir / "test");
  } else {
    s.train = load_image_folder(dir);
  }
  if (s.test && s.test->class_names != s.train.class_names) {
    throw IoError("train and test class folders differ under " + dir.string());
  }
  return s;
}

// Low-label split of the training set; the test set keeps the same classes.
Splits apply_split(const Splits& full, const TrainFlags& f) {
  SplitSpec split{f.label_proportion, f.categories, f.seed};
  Splits s;
  s.train = subsample(full.train, split);
  if (full.test) s.test = restrict_categories(*full.test, select_categories(full.train.num_classes, f.categories, f.seed));
  return s;
}

std::string count_summary(const Dataset& d) {
  std::string s;
  for (std::size_t n : d.class_counts()) s += (s.empty() ? "" : " ") + std::to_string(n);
  return s;
}

void log_epoch(const Log& log, const EpochRecord& r) {
  char line[200];
  std::snprintf(line, sizeof line, "epoch %zu loss %.6f ce %.6f sam %.6f", r.epoch, r.train_loss, r.train_ce,
                r.train_sam);
  std::string s = line;
  if (r.test_acc) {
    std::snprintf(line, sizeof line, " test_acc %.4f", *r.test_acc);
    s += line;
  }
  log.info(s);
  if (log.enabled(LogLevel::debug)) {
    std::snprintf(line, sizeof line, "epoch %zu took %.3f s", r.epoch, r.seconds);
    log.debug(line);
  }
}

int cmd_gen_data(const SyntheticSpec& spec, const std::string& out, const Log& log) {
  try {
    spec.validate();
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  fs::create_directories(out);
  echo_config({{"out", out},
               {"classes", fmt(spec.num_classes)},
               {"images-per-class", fmt(spec.images_per_class)},
               {"test-images-per-class", fmt(spec.test_images_per_class)},
               {"image-size", fmt(spec.image_size)},
               {"patch-size", fmt(spec.patch_size)},
               {"rho", fmt(spec.spurious_correlation)},
               {"noise", fmt(spec.noise_level)},
               {"seed", fmt(spec.seed, 0)}},
              log, fs::path(out) / "manifest.txt");
  const SyntheticData data = generate_synthetic(spec);
  write_image_folder(data.train, fs::path(out) / "train");
  write_image_folder(data.test, fs::path(out) / "test");
  log.info("wrote " + std::to_string(data.train.size()) + " training and " + std::to_string(data.test.size()) +
           " test images to " + out);
  return kExitOk;
}

int cmd_train(const TrainFlags& f, const Log& log) {
  const Mode mode = parse_mode(f.mode);
  const TrainConfig cfg = make_train_config(f, mode);
  const fs::path out(f.out);
  fs::create_directories(out);
  echo_config(train_config_lines(f, mode), log, out / "run_config.txt");

  const Splits data = apply_split(load_splits(f.data), f);
  log.info("training images per class: " + count_summary(data.train));
  if (data.test) log.info("test images: " + std::to_string(data.test->size()));

  Model model = make_model(cfg, data.train.items.front().pixels.dim(2), data.train.num_classes);
  const RunMetrics metrics =
      train(model, data.train, data.test ? &*data.test : nullptr, cfg, [&](const EpochRecord& r) { log_epoch(log, r); });
  save_checkpoint(model, out / "model.ckpt");
  write_metrics_csv(metrics, out / "metrics.csv");
  if (auto acc = metrics.final_test_accuracy()) {
    char line[64];
    std::snprintf(line, sizeof line, "final test accuracy %.4f", *acc);
    log.info(line);
  }
  log.info("wrote " + (out / "model.ckpt").string() + " and " + (out / "metrics.csv").string());
  return kExitOk;
}

struct EvalFlags {
  std::string checkpoint;
  std::string data;
  std::size_t categories = 0;
  std::uint64_t seed = 0;
  std::string config;
};

int cmd_eval(const EvalFlags& f, std::ostream& out, const Log& log) {
  echo_config({{"checkpoint", f.checkpoint},
               {"data", f.data},
               {"categories", fmt(f.categories)},
               {"seed", fmt(f.seed, 0)}},
              log, std::nullopt);
  const Model model = load_checkpoint(f.checkpoint);
  const fs::path dir(f.data);
  Dataset ds = load_image_folder(fs::is_directory(dir / "test") ? dir / "test" : dir);
  if (f.categories != 0) ds = restrict_categories(ds, select_categories(ds.num_classes, f.categories, f.seed));
  if (ds.num_classes != model.num_classes()) {
    throw ContractError("checkpoint has " + std::to_string(model.num_classes()) + " classes, dataset has " +
                        std::to_string(ds.num_classes));
  }
  char line[64];
  std::snprintf(line, sizeof line, "accuracy %.6f", evaluate(model, ds));
  out << line << '\n';
  return kExitOk;
}

struct AttentionFlags {
  std::string checkpoint;
  std::string image;
  std::string cls = "pred";
  std::string kind = "cam";
  std::string out = "attention";
  std::string config;
};

void write_map(const fs::path& path, const Tensor& grid) {
  write_pgm(path, grid.dim(0), grid.dim(1), scale_map(grid.values()));
}

int cmd_attention(const AttentionFlags& f, const Log& log) {
  echo_config({{"checkpoint", f.checkpoint},
               {"image", f.image},
               {"class", f.cls},
               {"kind", f.kind},
               {"out", f.out}},
              log, std::nullopt);
  const Model model = load_checkpoint(f.checkpoint);
  const auto& bb = model.config().backbone;
  Tensor image = read_pnm(f.image);
  if (image.dim(2) != bb.channels) {
    throw DimensionError(f.image + " has " + std::to_string(image.dim(2)) + " channels, model expects " +
                         std::to_string(bb.channels));
  }
  if (image.dim(0) < bb.height || image.dim(1) < bb.width) {
    throw DimensionError(f.image + " is " + std::to_string(image.dim(0)) + "x" + std::to_string(image.dim(1)) +
                         ", smaller than the model input " + std::to_string(bb.height) + "x" +
                         std::to_string(bb.width));
  }
  image = center_crop(image, bb.height, bb.width);

  const Forward fwd = [&] {
    GradMode no_grad(false);
    return model.forward(image);
  }();
  std::size_t y = 0;
  if (f.cls == "pred") {
    const auto z = fwd.logits.values();
    for (std::size_t c = 1; c < z.size(); ++c) {
      if (z[c] > z[y]) y = c;
    }
  } else {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(f.cls, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != f.cls.size() || f.cls.front() == '-') throw UsageError("--class must be an index or 'pred'");
    if (v >= model.num_classes()) {
      throw ParameterError("class " + f.cls + " out of range: model has " + std::to_string(model.num_classes()) +
                           " classes");
    }
    y = static_cast<std::size_t>(v);
  }
  log.info("class " + std::to_string(y));

  const fs::path out(f.out);
  fs::create_directories(out);
  Tensor grid;
  if (f.kind == "cam") {
    if (uses_bilinear_head(model.mode())) throw ContractError("cam needs a GAP classifier head; use gradcam");
    grid = cam(fwd.features, model.head(), y).grid;
  } else if (f.kind == "gradcam") {
    grid = grad_cam(fwd.features, model.logits_fn(), y).grid;
  } else if (f.kind == "sam-pred") {
    if (!model.projection()) throw ContractError("sam-pred needs a checkpoint trained with --mode sam");
    GradMode no_grad(false);
    grid = predict_attention(fwd.features, *model.projection()).grid;
  } else {
    if (!model.bank()) throw ContractError("union needs a checkpoint with a bilinear head");
    GradMode no_grad(false);
    grid = union_max(fwd.maps).grid;
    const std::size_t h = fwd.maps.dim(0), w = fwd.maps.dim(1), k = fwd.maps.dim(2);
    const auto mv = fwd.maps.values();
    for (std::size_t p = 0; p < k; ++p) {
      std::vector<double> part(h * w);
      for (std::size_t i = 0; i < h * w; ++i) part[i] = mv[i * k + p];
      char name[32];
      std::snprintf(name, sizeof name, "part_%02zu.pgm", p);
      write_map(out / name, Tensor::from({h, w}, std::move(part)));
    }
  }
  write_map(out / (f.kind + ".pgm"), grid);
  const auto scaled = scale_map(grid.values());
  write_ppm(out / (f.kind + "_overlay.ppm"), image.dim(0), image.dim(1),
            overlay(image, scaled, grid.dim(0), grid.dim(1)));
  if (log.enabled(LogLevel::debug)) {
    std::string s = "map";
    for (double v : grid.values()) s += " " + fmt(v);
    log.debug(s);
  }
  log.info("wrote attention maps to " + out.string());
  return kExitOk;
}

struct SweepFlags {
  TrainFlags train;
  std::string k_list = "1,4,8,16,32";
  std::size_t repeats = 3;
  std::size_t jobs = 1;
};

int cmd_sweep_k(const SweepFlags& f, const Log& log) {
  std::vector<std::size_t> ks;
  try {
    ks = parse_k_list(f.k_list);
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  make_train_config(f.train, Mode::sam_bilinear);  // validation only
  const fs::path out(f.train.out);
  fs::create_directories(out);
  ConfigLines lines = train_config_lines(f.train, Mode::sam_bilinear);
  lines.erase(std::remove_if(lines.begin(), lines.end(), [](const auto& kv) { return kv.first == "k"; }),
              lines.end());
  lines.emplace_back("k-list", f.k_list);
  lines.emplace_back("repeats", fmt(f.repeats));
  lines.emplace_back("jobs", fmt(f.jobs));
  echo_config(lines, log, out / "run_config.txt");

  const Splits full = load_splits(f.train.data);
  if (!full.test) throw IoError("sweep-k needs a test/ folder under " + f.train.data);

  struct Row {
    std::size_t k;
    std::uint64_t seed;
    double acc = 0.0;
  };
  std::vector<Row> rows;
  for (std::size_t k : ks) {
    for (std::size_t r = 0; r < f.repeats; ++r) rows.push_back({k, f.train.seed + r});
  }

  // Each row owns its model and data split, so rows may run on separate threads.
  auto run_one = [&](Row& row) {
    TrainFlags tf = f.train;
    tf.k = row.k;
    tf.seed = row.seed;
    TrainConfig cfg = make_train_config(tf, Mode::sam_bilinear);
    cfg.eval_every = cfg.epochs;
    const Splits data = apply_split(full, tf);
    Model model = make_model(cfg, data.train.items.front().pixels.dim(2), data.train.num_classes);
    row.acc = *train(model, data.train, &*data.test, cfg).final_test_accuracy();
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(f.jobs, rows.size()));
  if (jobs == 1) {
    for (Row& row : rows) {
      run_one(row);
      char line[96];
      std::snprintf(line, sizeof line, "k %zu seed %llu test_acc %.4f", row.k,
                    static_cast<unsigned long long>(row.seed), row.acc);
      log.info(line);
    }
  } else {
    std::vector<std::exception_ptr> errors(rows.size());
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (std::size_t t = 0; t < jobs; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < rows.size(); i = next++) {
          try {
            run_one(rows[i]);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  const fs::path csv = out / "sweep_k.csv";
  std::ofstream os(csv);
  if (!os) throw IoError("cannot write " + csv.string());
  os << "k,seed,test_acc\n";
  for (const Row& row : rows) {
    char line[96];
    std::snprintf(line, sizeof line, "%zu,%llu,%.6f\n", row.k, static_cast<unsigned long long>(row.seed), row.acc);
    os << line;
  }
  if (!os) throw IoError("failed writing " + csv.string());
  log.info("wrote " + csv.string());
  return kExitOk;
}

// Puts config-file arguments right after the subcommand name so that any
// explicit flag, coming later, overrides them.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      continue;
    }
    std::vector<std::string> out(args.begin(), args.begin() + 1);
    for (auto& a : config_arguments(path)) out.push_back(std::move(a));
    out.insert(out.end(), args.begin() + 1, args.end());
    return out;
  }
  return args;
}

}  // namespace

std::vector<std::uint8_t> scale_map(std::span<const double> values) {
  std::vector<std::uint8_t> out(values.size(), 128);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0) || !std::isfinite(range)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround((values[i] - *lo) / range * 255.0));
  }
  return out;
}

std::vector<std::uint8_t> overlay(const Tensor& image, std::span<const std::uint8_t> map, std::size_t map_h,
                                  std::size_t map_w) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw DimensionError("overlay: image must be H x W x 1 or H x W x 3, got " + shape_string(image.shape()));
  }
  if (map.size() != map_h * map_w || map_h == 0 || map_w == 0) throw DimensionError("overlay: bad map size");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const auto px = image.values();
  std::vector<std::uint8_t> rgb(h * w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const int v = map[(y * map_h / h) * map_w + x * map_w / w];
      // black -> red -> yellow
      const int heat[3] = {std::min(255, 2 * v), std::max(0, 2 * v - 255), 0};
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double p = px[(y * w + x) * c + (c == 1 ? 0 : ch)];
        const int base = static_cast<int>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0));
        rgb[(y * w + x) * 3 + ch] = static_cast<std::uint8_t>((base + heat[ch] + 1) / 2);
      }
    }
  }
  return rgb;
}

std::vector<std::size_t> parse_k_list(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ParameterError("empty entry in K list '" + text + "'");
    item = item.substr(b, e - b + 1);
    std::size_t k = 0;
    auto res = std::from_chars(item.data(), item.data() + item.size(), k);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw ParameterError("K list entry '" + item + "' is not a positive integer");
    }
    if (k == 0) throw ParameterError("K must be at least 1");
    if (std::find(ks.begin(), ks.end(), k) != ks.end()) {
      throw ParameterError("duplicate K " + std::to_string(k) + " in K list");
    }
    ks.push_back(k);
  }
  if (ks.empty()) throw ParameterError("empty K list");
  return ks;
}

std::vector<std::string> config_arguments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::vector<std::string> args;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto first = s.find_first_not_of(" \t\r");
      if (first == std::string::npos) return std::string();
      return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty() || key == "config") throw UsageError(path + ":" + std::to_string(lineno) + ": bad key");
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-boosting attention training and inspection"};
  app.name("sam_attn");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  SyntheticSpec gen;
  std::string gen_out;
  std::string gen_config;
  auto* gen_cmd = app.add_subcommand("gen-data", "write the synthetic benchmark as image folders");
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_option("--classes", gen.num_classes)->capture_default_str();
  gen_cmd->add_option("--images-per-class", gen.images_per_class)->capture_default_str();
  gen_cmd->add_option("--test-images-per-class", gen.test_images_per_class)->capture_default_str();
  gen_cmd->add_option("--image-size", gen.image_size)->capture_default_str();
  gen_cmd->add_option("--patch-size", gen.patch_size)->capture_default_str();
  gen_cmd->add_option("--rho", gen.spurious_correlation, "tint/class agreement in the training split")
      ->capture_default_str();
  gen_cmd->add_option("--noise", gen.noise_level)->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--config", gen_config, "key = value file; explicit flags win");

  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train a model and write model.ckpt and metrics.csv");
  add_train_flags(*train_cmd, train_flags, true);

  EvalFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("eval", "test accuracy of a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_flags.checkpoint)->required();
  eval_cmd->add_option("--data", eval_flags.data, "dataset directory (its test/ folder if present)")->required();
  eval_cmd->add_option("--categories", eval_flags.categories, "class subset used in training (0 = all)")
      ->capture_default_str();
  eval_cmd->add_option("--seed", eval_flags.seed, "seed the class subset was drawn with")->capture_default_str();
  eval_cmd->add_option("--config", eval_flags.config, "key = value file; explicit flags win");

  AttentionFlags att;
  auto* att_cmd = app.add_subcommand("attention", "export an attention heatmap for one image");
  att_cmd->add_option("--checkpoint", att.checkpoint)->required();
  att_cmd->add_option("--image", att.image, "PGM/PPM image")->required();
  att_cmd->add_option("--class", att.cls, "class index or 'pred'")->capture_default_str();
  att_cmd->add_option("--kind", att.kind, "cam | gradcam | sam-pred | union")
      ->check(CLI::IsMember({"cam", "gradcam", "sam-pred", "union"}))
      ->capture_default_str();
  att_cmd->add_option("--out", att.out, "output directory")->capture_default_str();
  att_cmd->add_option("--config", att.config, "key = value file; explicit flags win");

  SweepFlags sweep;
  auto* sweep_cmd = app.add_subcommand("sweep-k", "test accuracy of sam_bilinear over K values and seeds");
  add_train_flags(*sweep_cmd, sweep.train, false);
  sweep_cmd->add_option("--k-list", sweep.k_list, "comma-separated K values")->capture_default_str();
  sweep_cmd->add_option("--repeats", sweep.repeats, "seeds per K, counting up from --seed")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sweep_cmd->add_option("--jobs", sweep.jobs, "rows trained in parallel")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  try {
    const Log log(out, log_level_from_env());
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    try {
      app.parse(args);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << "\n\n";
      // Usage of the subcommand in play, if one was recognized.
      const CLI::App* shown = &app;
      for (const CLI::App* sub : app.get_subcommands()) shown = sub;
      err << shown->help();
      return kExitUsage;
    }

    if (gen_cmd->parsed()) return cmd_gen_data(gen, gen_out, log);
    if (train_cmd->parsed()) return cmd_train(train_flags, log);
    if (eval_cmd->parsed()) return cmd_eval(eval_flags, out, log);
    if (att_cmd->parsed()) return cmd_attention(att, log);
    return cmd_sweep_k(sweep, log);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace sam::cli
