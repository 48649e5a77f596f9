#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sam/tensor.hpp"

namespace sam {

/// Reads a binary PGM (P5) or PPM (P6) file into an H x W x C tensor with
/// values scaled to [0, 1]. P5 gives C = 1, P6 gives C = 3.
Tensor read_pnm(const std::filesystem::path& path);

/// Writes an H x W x 1 or H x W x 3 tensor in [0, 1] as 8-bit P5 / P6.
void write_pnm(const std::filesystem::path& path, const Tensor& image);

/// Raw 8-bit writers.
void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& gray);
void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& rgb);

}  // namespace sam
