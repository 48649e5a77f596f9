#include "sam/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

namespace sam {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in, const std::filesystem::path& path) {
  std::string token;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  if (token.empty()) throw IoError("truncated image header: " + path.string());
  return token;
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path) {
  const std::string token = header_token(in, path);
  std::size_t value = 0;
  for (char ch : token) {
    if (!std::isdigit(static_cast<unsigned char>(ch))) throw IoError("malformed image header in " + path.string());
    value = value * 10 + static_cast<std::size_t>(ch - '0');
    if (value > 1u << 20) throw IoError("image dimension too large in " + path.string());
  }
  return value;
}

std::uint8_t to_byte(double v) {
  const double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

void write_raw(const std::filesystem::path& path, const char* magic, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open image for writing: " + path.string());
  out << magic << '\n' << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing image: " + path.string());
}

}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  const std::string magic = header_token(in, path);
  std::size_t channels;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw IoError("unsupported image format '" + magic + "' (need binary P5 or P6): " + path.string());
  }
  const std::size_t width = header_number(in, path);
  const std::size_t height = header_number(in, path);
  const std::size_t maxval = header_number(in, path);
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) {
    throw IoError("invalid image header values in " + path.string());
  }
  // header_token consumed exactly one whitespace byte after maxval.
  const std::size_t bytes_per_sample = maxval > 255 ? 2 : 1;
  const std::size_t count = width * height * channels;
  std::vector<unsigned char> raw(count * bytes_per_sample);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw IoError("truncated image data: " + path.string());

  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t sample =
        bytes_per_sample == 1 ? raw[i] : (static_cast<std::size_t>(raw[2 * i]) << 8) | raw[2 * i + 1];
    if (sample > maxval) throw IoError("sample exceeds maxval in " + path.string());
    values[i] = static_cast<double>(sample) / static_cast<double>(maxval);
  }
  return Tensor::from({height, width, channels}, std::move(values));
}

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw DimensionError("write_pnm: need H x W x 1 or H x W x 3, received " + shape_string(image.shape()));
  }
  std::vector<std::uint8_t> bytes(image.size());
  const auto v = image.values();
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(v[i]);
  write_raw(path, image.dim(2) == 1 ? "P5" : "P6", image.dim(0), image.dim(1), bytes);
}

void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& gray) {
  if (gray.size() != height * width) throw DimensionError("write_pgm: pixel count does not match size");
  write_raw(path, "P5", height, width, gray);
}

void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != height * width * 3) throw DimensionError("write_ppm: pixel count does not match size");
  write_raw(path, "P6", height, width, rgb);
}

}  // namespace sam
