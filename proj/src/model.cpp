#include "sam/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "sam/ops.hpp"
#include "sam/random.hpp"

namespace sam {

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::baseline:
      return "baseline";
    case Mode::sam:
      return "sam";
    case Mode::fbp:
      return "fbp";
    case Mode::sam_bilinear:
      return "sam_bilinear";
  }
  return "unknown";
}

Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::baseline, Mode::sam, Mode::fbp, Mode::sam_bilinear}) {
    if (name == to_string(m)) return m;
  }
  throw ParameterError("unknown mode '" + name + "' (expected baseline, sam, fbp or sam_bilinear)");
}

bool uses_bilinear_head(Mode mode) { return mode == Mode::fbp || mode == Mode::sam_bilinear; }

bool uses_sam_loss(Mode mode) { return mode == Mode::sam || mode == Mode::sam_bilinear; }

namespace {

ClassifierHead initial_head(const ModelConfig& config) {
  const std::size_t d = config.backbone.feature_shape()[2];
  const std::size_t width = uses_bilinear_head(config.mode) ? d * config.k : d;
  return make_classifier_head(config.backbone.num_classes, width,
                              derive_seed(config.backbone.init_seed, kHeadStream));
}

// Checked before the head is sized from K.
ModelConfig checked(ModelConfig config) {
  if (uses_bilinear_head(config.mode) && config.k == 0) throw ParameterError("bilinear head needs K >= 1");
  return config;
}

}  // namespace

Model::Model(ModelConfig config)
    : config_(checked(std::move(config))), backbone_(config_.backbone), head_(initial_head(config_)) {
  const std::size_t d = config_.backbone.feature_shape()[2];
  if (config_.mode == Mode::sam) {
    projection_ = SamProjection::init(d, derive_seed(config_.backbone.init_seed, kProjectionStream));
  }
  if (uses_bilinear_head(config_.mode)) {
    bank_ = ProjectionBank::init(config_.k, d, derive_seed(config_.backbone.init_seed, kBankStream));
  }
}

Forward Model::forward(const Tensor& image) const {
  Forward out;
  out.features = features(image);
  if (bank_) {
    out.maps = project_attention_maps(out.features, *bank_);
    Tensor f = bilinear_concat(out.maps, out.features).f;
    if (config_.bilinear.normalize) f = signed_sqrt_l2(f);
    out.logits = ops::add(ops::matvec(head_.weights, f), head_.bias);
  } else {
    out.logits = forward_logits(head_, out.features);
  }
  return out;
}

Tensor Model::logits(const Tensor& features) const {
  if (bank_) return bilinear_logits(features, *bank_, head_, config_.bilinear);
  return forward_logits(head_, features);
}

LogitsFn Model::logits_fn() const {
  return [this](const Tensor& features) { return logits(features); };
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> params;
  for (std::size_t b = 0; b < backbone_.kernels().size(); ++b) {
    params.push_back(backbone_.kernels()[b]);
    params.push_back(backbone_.biases()[b]);
  }
  params.push_back(head_.weights);
  params.push_back(head_.bias);
  if (projection_) params.push_back(projection_->w);
  if (bank_) params.push_back(bank_->weights);
  return params;
}

AttentionMap grad_cam(const Model& model, const Tensor& image, std::size_t y) {
  return grad_cam(model.features(image), model.logits_fn(), y);
}

// Checkpoint layout, all integers little-endian:
//   "SAMCKPT1"
//   u8 mode, u32 height, u32 width, u32 channels, u32 kernel_size,
//   u32 num_classes, u32 block count, u32 channels per block,
//   u64 init_seed, u32 K, u8 bilinear normalization
//   u32 tensor count, then per tensor: u32 rank, u32 dims[rank],
//   f64 values (IEEE-754 bit patterns)
namespace {

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw IoError("cannot open checkpoint for writing: " + path.string());
  }
  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint64_t v) {
    if (v > 0xFFFFFFFFULL) throw IoError("checkpoint field exceeds 32 bits: " + path_.string());
    le(v, 4);
  }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("failed writing checkpoint: " + path_.string());
  }

 private:
  void le(std::uint64_t v, int n) {
    unsigned char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf, static_cast<std::size_t>(n));
  }
  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot open checkpoint: " + path.string());
  }
  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (!in_) throw IoError("truncated checkpoint: " + path_.string());
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in checkpoint: " + path_.string());
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::uint64_t le(int n) {
    unsigned char buf[8];
    bytes(buf, static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  std::ifstream in_;
  std::filesystem::path path_;
};

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  Writer w(path);
  w.bytes(kCheckpointMagic, 8);
  const ModelConfig& cfg = model.config();
  const BackboneConfig& bb = cfg.backbone;
  w.u8(static_cast<std::uint8_t>(cfg.mode));
  w.u32(bb.height);
  w.u32(bb.width);
  w.u32(bb.channels);
  w.u32(bb.kernel_size);
  w.u32(bb.num_classes);
  w.u32(bb.block_channels.size());
  for (std::size_t c : bb.block_channels) w.u32(c);
  w.u64(bb.init_seed);
  w.u32(cfg.k);
  w.u8(cfg.bilinear.normalize ? 1 : 0);

  const auto params = model.parameters();
  w.u32(params.size());
  for (const Tensor& t : params) {
    w.u32(t.rank());
    for (std::size_t d : t.shape()) w.u32(d);
    for (double v : t.values()) w.f64(v);
  }
  w.finish();
}

Model load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError("not a checkpoint (bad magic): " + path.string());

  ModelConfig cfg;
  const std::uint8_t mode = r.u8();
  if (mode > static_cast<std::uint8_t>(Mode::sam_bilinear)) throw IoError("unknown mode in checkpoint: " + path.string());
  cfg.mode = static_cast<Mode>(mode);
  BackboneConfig& bb = cfg.backbone;
  bb.height = r.u32();
  bb.width = r.u32();
  bb.channels = r.u32();
  bb.kernel_size = r.u32();
  bb.num_classes = r.u32();
  const std::uint32_t blocks = r.u32();
  if (blocks > 64) throw IoError("implausible block count in checkpoint: " + path.string());
  bb.block_channels.resize(blocks);
  for (auto& c : bb.block_channels) c = r.u32();
  bb.init_seed = r.u64();
  cfg.k = r.u32();
  cfg.bilinear.normalize = r.u8() != 0;

  Model model = [&] {
    try {
      return Model(cfg);
    } catch (const Error& e) {
      throw IoError("invalid model configuration in " + path.string() + ": " + e.what());
    }
  }();
  auto params = model.parameters();
  const std::uint32_t count = r.u32();
  if (count != params.size()) {
    throw IoError("checkpoint " + path.string() + " holds " + std::to_string(count) + " tensors, model expects " +
                  std::to_string(params.size()));
  }
  for (Tensor& t : params) {
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != t.shape()) {
      throw IoError("checkpoint tensor shape " + shape_string(shape) + " does not match expected " +
                    shape_string(t.shape()) + " in " + path.string());
    }
    for (double& v : t.mutable_values()) v = r.f64();
  }
  r.expect_end();
  return model;
}

}  // namespace sam
