#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "sam/data.hpp"
#include "sam/model.hpp"
#include "sam/sam_loss.hpp"

namespace sam {

struct SgdConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  void validate() const;
};

/// One velocity buffer per parameter, created lazily on the first step.
struct SgdState {
  std::vector<std::vector<double>> velocity;
};

/// v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v.
void sgd_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, SgdState& state,
              const SgdConfig& cfg);

struct Seeds {
  std::uint64_t init = 0;   // parameter initialization
  std::uint64_t data = 0;   // label subsampling
  std::uint64_t epoch = 0;  // shuffling and crops
};

struct TrainConfig {
  Mode mode = Mode::baseline;
  std::size_t epochs = 60;
  std::size_t batch_size = 24;
  SgdConfig sgd;
  SamLossConfig sam;
  std::size_t k = kDefaultProjections;
  bool bilinear_normalize = false;
  Seeds seeds;
  std::size_t crop = 28;         // square training / evaluation window
  std::size_t eval_every = 1;    // test accuracy every n epochs and after the last
  bool record_time = true;       // false writes 0 seconds, for byte-stable metrics

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_ce = 0.0;
  double train_sam = 0.0;  // lambda-weighted SAM term, so loss = ce + sam
  std::optional<double> test_acc;
  double seconds = 0.0;
};

struct RunMetrics {
  std::vector<EpochRecord> epochs;

  std::optional<double> final_test_accuracy() const;
};

/// Builds a freshly initialized model matching `cfg` for images of
/// `crop x crop x channels` and `num_classes` labels.
Model make_model(const TrainConfig& cfg, std::size_t channels, std::size_t num_classes);

/// The detached attention target for one sample: CAM of the ground-truth
/// class for mode sam, Grad-CAM for mode sam_bilinear.
AttentionMap sam_target(const Model& model, const Forward& fwd, std::size_t label);

/// Mean losses over a batch, all on one graph.
struct BatchLoss {
  Tensor total;
  Tensor ce;
  Tensor sam;  // unweighted mean KL; undefined for modes without SAM
};

BatchLoss batch_loss(const Model& model, std::span<const Tensor> images, std::span<const std::size_t> labels,
                     const SamLossConfig& cfg);

using EpochCallback = std::function<void(const EpochRecord&)>;

RunMetrics train(Model& model, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                 const EpochCallback& on_epoch = {});

/// Fraction of images whose arg-max logit (lowest index on ties) matches the
/// label, on the centre crop of each image.
double evaluate(const Model& model, const Dataset& dataset);

/// Writes `epoch,train_loss,train_ce,train_sam,test_acc,seconds` rows.
void write_metrics_csv(const RunMetrics& metrics, const std::filesystem::path& path);

}  // namespace sam
