#include "sam/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "sam/ops.hpp"

namespace sam {

void SgdConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ParameterError("sgd: learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("sgd: momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ParameterError("sgd: weight decay must be non-negative");
  }
}

void sgd_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, SgdState& state,
              const SgdConfig& cfg) {
  if (params.size() != grads.size()) {
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (state.velocity.empty()) {
    for (const Tensor& p : params) state.velocity.emplace_back(p.size(), 0.0);
  }
  if (state.velocity.size() != params.size()) throw DimensionError("sgd_step: optimizer state size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    auto& v = state.velocity[i];
    const auto& g = grads[i];
    if (g.size() != values.size() || v.size() != values.size()) {
      throw DimensionError("sgd_step: gradient " + std::to_string(i) + " has " + std::to_string(g.size()) +
                           " entries, parameter has " + std::to_string(values.size()));
    }
    for (std::size_t j = 0; j < values.size(); ++j) {
      v[j] = cfg.momentum * v[j] + (g[j] + cfg.weight_decay * values[j]);
      values[j] -= cfg.lr * v[j];
    }
  }
}

void TrainConfig::validate() const {
  sgd.validate();
  sam.validate();
  if (epochs == 0) throw ParameterError("train: epochs must be positive");
  if (batch_size == 0) throw ParameterError("train: batch size must be positive");
  if (uses_bilinear_head(mode) && k == 0) throw ParameterError("train: K must be at least 1");
  if (eval_every == 0) throw ParameterError("train: eval_every must be positive");
}

std::optional<double> RunMetrics::final_test_accuracy() const {
  if (epochs.empty()) return std::nullopt;
  return epochs.back().test_acc;
}

Model make_model(const TrainConfig& cfg, std::size_t channels, std::size_t num_classes) {
  ModelConfig mc;
  mc.backbone.height = cfg.crop;
  mc.backbone.width = cfg.crop;
  mc.backbone.channels = channels;
  mc.backbone.num_classes = num_classes;
  mc.backbone.init_seed = cfg.seeds.init;
  mc.mode = cfg.mode;
  mc.k = cfg.k;
  mc.bilinear.normalize = cfg.bilinear_normalize;
  return Model(mc);
}

AttentionMap sam_target(const Model& model, const Forward& fwd, std::size_t label) {
  switch (model.mode()) {
    case Mode::sam:
      return cam(fwd.features, model.head(), label);
    case Mode::sam_bilinear:
      return grad_cam(fwd.features, model.logits_fn(), label);
    default:
      throw ContractError(std::string("mode ") + to_string(model.mode()) + " has no SAM target");
  }
}

BatchLoss batch_loss(const Model& model, std::span<const Tensor> images, std::span<const std::size_t> labels,
                     const SamLossConfig& cfg) {
  if (images.empty() || images.size() != labels.size()) throw DimensionError("batch_loss: bad batch");
  const bool with_sam = uses_sam_loss(model.mode());
  std::vector<Tensor> ces, sams;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Forward fwd = model.forward(images[i]);
    ces.push_back(cross_entropy(fwd.logits, labels[i]));
    if (!with_sam) continue;
    const AttentionMap target = sam_target(model, fwd, labels[i]);
    if (model.mode() == Mode::sam) {
      sams.push_back(sam_loss(predict_attention(fwd.features, *model.projection()), target, cfg));
    } else {
      sams.push_back(sam_bilinear_loss(fwd.maps, target, cfg));
    }
  }
  const double inv = 1.0 / static_cast<double>(images.size());
  BatchLoss out;
  out.ce = ops::scale(ops::add_all(ces), inv);
  if (with_sam) {
    out.sam = ops::scale(ops::add_all(sams), inv);
    out.total = total_loss(out.ce, out.sam, cfg.lambda);
  } else {
    out.total = out.ce;
  }
  return out;
}

namespace {

void check_model(const Model& model, const TrainConfig& cfg) {
  if (model.mode() != cfg.mode) {
    throw ContractError(std::string("train: model built for mode ") + to_string(model.mode()) +
                        " but config requests " + to_string(cfg.mode));
  }
  if (uses_bilinear_head(cfg.mode) != model.bank().has_value()) {
    throw ContractError("train: projection bank must be present exactly for bilinear modes");
  }
}

Tensor fit_to_input(const Tensor& image, const Model& model) {
  const auto& bb = model.config().backbone;
  if (image.rank() == 3 && image.dim(0) == bb.height && image.dim(1) == bb.width) return image;
  return center_crop(image, bb.height, bb.width);
}

}  // namespace

RunMetrics train(Model& model, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                 const EpochCallback& on_epoch) {
  cfg.validate();
  check_model(model, cfg);
  if (train_set.empty()) throw ParameterError("train: empty training set");
  const auto& bb = model.config().backbone;

  std::vector<Tensor> params = model.parameters();
  SgdState state;
  RunMetrics metrics;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0, ce_sum = 0.0, sam_sum = 0.0;
    for (const auto& batch : batch_iter(train_set.size(), cfg.batch_size, cfg.seeds.epoch, epoch)) {
      std::vector<Tensor> images;
      std::vector<std::size_t> labels;
      for (std::size_t idx : batch) {
        const auto& item = train_set.items[idx];
        Rng rng(derive_seed(derive_seed(cfg.seeds.epoch, 0x10000 + epoch), idx));
        images.push_back(random_crop(item.pixels, bb.height, bb.width, rng));
        labels.push_back(item.label);
      }
      BatchLoss loss;
      try {
        loss = batch_loss(model, images, labels, cfg.sam);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           ": " + e.what());
      }
      backward(loss.total);
      std::vector<std::vector<double>> grads;
      grads.reserve(params.size());
      for (const Tensor& p : params) {
        if (p.has_grad()) {
          grads.emplace_back(p.grad().begin(), p.grad().end());
        } else {
          grads.emplace_back(p.size(), 0.0);
        }
      }
      sgd_step(params, grads, state, cfg.sgd);
      for (Tensor& p : params) p.clear_grad();

      const double n = static_cast<double>(batch.size());
      loss_sum += loss.total.item() * n;
      ce_sum += loss.ce.item() * n;
      if (loss.sam.defined()) sam_sum += cfg.sam.lambda * loss.sam.item() * n;
      ++step;
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    const double count = static_cast<double>(train_set.size());
    rec.train_loss = loss_sum / count;
    rec.train_ce = ce_sum / count;
    rec.train_sam = sam_sum / count;
    const bool last = epoch + 1 == cfg.epochs;
    if (test_set && !test_set->empty() && (last || (epoch + 1) % cfg.eval_every == 0)) {
      rec.test_acc = evaluate(model, *test_set);
    }
    if (cfg.record_time) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    metrics.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return metrics;
}

double evaluate(const Model& model, const Dataset& dataset) {
  if (dataset.empty()) throw ParameterError("evaluate: empty dataset");
  GradMode no_grad(false);
  std::size_t correct = 0;
  for (const auto& item : dataset.items) {
    const Tensor logits = model.logits(model.features(fit_to_input(item.pixels, model)));
    const auto z = logits.values();
    std::size_t best = 0;
    for (std::size_t c = 1; c < z.size(); ++c) {
      if (z[c] > z[best]) best = c;
    }
    if (best == item.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

void write_metrics_csv(const RunMetrics& metrics, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics: " + path.string());
  out << "epoch,train_loss,train_ce,train_sam,test_acc,seconds\n";
  char line[256];
  for (const auto& r : metrics.epochs) {
    char acc[32] = "";
    if (r.test_acc) std::snprintf(acc, sizeof acc, "%.6f", *r.test_acc);
    std::snprintf(line, sizeof line, "%zu,%.10g,%.10g,%.10g,%s,%.3f\n", r.epoch, r.train_loss, r.train_ce,
                  r.train_sam, acc, r.seconds);
    out << line;
  }
  if (!out) throw IoError("failed writing metrics: " + path.string());
}

}  // namespace sam
