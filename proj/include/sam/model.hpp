#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sam/attention.hpp"
#include "sam/backbone.hpp"
#include "sam/bilinear.hpp"
#include "sam/sam_loss.hpp"

namespace sam {

/// baseline: GAP + linear. sam: baseline plus the CAM-fitting projection.
/// fbp: K-projection bilinear head. sam_bilinear: fbp plus Grad-CAM fitting
/// of the max-union of the K maps.
enum class Mode { baseline, sam, fbp, sam_bilinear };

const char* to_string(Mode mode);
Mode parse_mode(const std::string& name);
bool uses_bilinear_head(Mode mode);
bool uses_sam_loss(Mode mode);

struct ModelConfig {
  BackboneConfig backbone;
  Mode mode = Mode::baseline;
  std::size_t k = kDefaultProjections;  // bilinear modes only
  BilinearOptions bilinear;
};

/// Output of one forward pass on a single image.
struct Forward {
  Tensor features;  // phi(I)
  Tensor maps;      // H x W x K projections; undefined for GAP heads
  Tensor logits;
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  Mode mode() const { return config_.mode; }
  std::size_t num_classes() const { return config_.backbone.num_classes; }

  Forward forward(const Tensor& image) const;
  Tensor features(const Tensor& image) const { return backbone_.forward_features(image); }
  /// Logits from a feature map via the configured head.
  Tensor logits(const Tensor& features) const;
  LogitsFn logits_fn() const;

  /// Every trainable tensor, in checkpoint declaration order: block kernels
  /// and biases, classifier weights and bias, then the SAM projection or the
  /// projection bank when present.
  std::vector<Tensor> parameters() const;

  Backbone& backbone() { return backbone_; }
  const Backbone& backbone() const { return backbone_; }
  ClassifierHead& head() { return head_; }
  const ClassifierHead& head() const { return head_; }
  const std::optional<SamProjection>& projection() const { return projection_; }
  const std::optional<ProjectionBank>& bank() const { return bank_; }

 private:
  ModelConfig config_;
  Backbone backbone_;
  ClassifierHead head_;
  std::optional<SamProjection> projection_;
  std::optional<ProjectionBank> bank_;
};

/// Grad-CAM of class y for `image` on the model's own head.
AttentionMap grad_cam(const Model& model, const Tensor& image, std::size_t y);

inline constexpr char kCheckpointMagic[] = "SAMCKPT1";

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace sam
