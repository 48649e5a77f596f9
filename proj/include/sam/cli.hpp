#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sam/tensor.hpp"

namespace sam::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (without the program name) and returns the exit
/// code. Normal output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Min-max scaling to 0..255; a constant map becomes 128 everywhere.
std::vector<std::uint8_t> scale_map(std::span<const double> values);

/// Blends a map_h x map_w gray map, upsampled nearest-neighbour, at 50% over
/// an H x W x C image in [0, 1]. Returns interleaved RGB.
std::vector<std::uint8_t> overlay(const Tensor& image, std::span<const std::uint8_t> map, std::size_t map_h,
                                  std::size_t map_w);

/// "1,4,16" -> {1, 4, 16}. Rejects empty lists, zeros, junk and duplicates.
std::vector<std::size_t> parse_k_list(const std::string& text);

/// Reads a flat `key = value` file (# comments) into `--key=value` arguments.
std::vector<std::string> config_arguments(const std::string& path);

}  // namespace sam::cli
