#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "freeflow/errors.hpp"

namespace freeflow {

/// 8-bit RGB image, row-major, interleaved channels.
struct Image8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  Image8() = default;
  Image8(int h, int w) : height(h), width(w) {
    pixels.assign(static_cast<std::size_t>(h) * w * 3, 0);
  }

  std::uint8_t* px(int r, int c) {
    return pixels.data() + (static_cast<std::size_t>(r) * width + c) * 3;
  }
  const std::uint8_t* px(int r, int c) const {
    return pixels.data() + (static_cast<std::size_t>(r) * width + c) * 3;
  }

  void set(int r, int c, std::uint8_t red, std::uint8_t green, std::uint8_t blue) {
    auto* p = px(r, c);
    p[0] = red;
    p[1] = green;
    p[2] = blue;
  }

  bool operator==(const Image8& other) const {
    return height == other.height && width == other.width && pixels == other.pixels;
  }
};

/// Write as 8-bit RGB PNG.
void write_png(const Image8& image, const std::filesystem::path& path);

/// Read a PNG; grayscale and alpha variants are converted to plain RGB.
Image8 read_png(const std::filesystem::path& path);

}  // namespace freeflow
