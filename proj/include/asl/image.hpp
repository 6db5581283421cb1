#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "asl/tensor.hpp"

namespace asl {

/// 8-bit luminance, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 0);
  GrayImage(std::size_t w, std::size_t h, std::vector<std::uint8_t> px);

  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

  bool operator==(const GrayImage&) const = default;
};

/// Binary PGM ("P5", maxval 255). Header comments are accepted.
GrayImage decode_pgm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pgm(const GrayImage& img);

/// True when PNG and JPEG decoding were compiled in.
bool external_codecs_available();

/// Decodes PGM, and PNG or JPEG when available; colour input is reduced to luminance.
GrayImage decode_image(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
GrayImage read_image(const std::filesystem::path& path);

/// Center crop to `crop_fraction` of each side, then bilinear resize to
/// target x target. Values are luminance / 255, shape [1, target, target].
Tensor<float> preprocess_image(const GrayImage& img, std::size_t target, double crop_fraction = 1.0);

enum class AugmentPolicy { none, crop_jitter };

AugmentPolicy parse_augment(std::string_view name);
std::string_view to_string(AugmentPolicy p);

/// Crops the window of `area_fraction` of the image (same aspect ratio) whose
/// top-left corner sits at (offset_x, offset_y) pixels and resizes it back to
/// the input size. `x` has shape [C, H, W].
Tensor<float> crop_resize(const Tensor<float>& x, double area_fraction, double offset_x, double offset_y);

/// none returns `x` untouched; crop_jitter draws an area in [0.9, 1] and a
/// uniformly placed window from `rng`.
Tensor<float> augment(const Tensor<float>& x, Prng& rng, AugmentPolicy policy);

}  // namespace asl
