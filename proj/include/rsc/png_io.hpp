#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "rsc/error.hpp"
#include "rsc/tensor.hpp"

namespace rsc::png {

namespace detail {

struct ImageGuard {
  png_image image{};
  ImageGuard() {
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
  }
  ~ImageGuard() { png_image_free(&image); }
  ImageGuard(const ImageGuard&) = delete;
  ImageGuard& operator=(const ImageGuard&) = delete;
};

inline std::uint8_t quantize(double v) {
  if (!(v > 0.0)) return 0;  // NaN maps to 0
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

inline void write_raw(const std::filesystem::path& path, int width, int height, png_uint_32 format,
                      const std::vector<std::uint8_t>& bytes) {
  ImageGuard g;
  g.image.width = static_cast<png_uint_32>(width);
  g.image.height = static_cast<png_uint_32>(height);
  g.image.format = format;
  if (!png_image_write_to_file(&g.image, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    throw Error(ErrorKind::Io, "cannot write " + path.string() + ": " + g.image.message);
  }
}

}  // namespace detail

// Reads any PNG as 8-bit RGB and returns a 3×H×W tensor of values k/255.
inline Tensor read_rgb(const std::filesystem::path& path) {
  detail::ImageGuard g;
  if (!png_image_begin_read_from_file(&g.image, path.string().c_str())) {
    throw Error(ErrorKind::DecodeFailure, path.string() + ": " + g.image.message);
  }
  g.image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(g.image));
  if (!png_image_finish_read(&g.image, nullptr, buffer.data(), 0, nullptr)) {
    throw Error(ErrorKind::DecodeFailure, path.string() + ": " + g.image.message);
  }
  const int w = static_cast<int>(g.image.width), h = static_cast<int>(g.image.height);
  Tensor out(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out(c, y, x) = buffer[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
  return out;
}

inline void write_rgb(const std::filesystem::path& path, const Tensor& image) {
  require(image.channels() == 3, ErrorKind::ShapeMismatch, "write_rgb expects 3 channels");
  const int w = image.width(), h = image.height();
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        bytes[(static_cast<std::size_t>(y) * w + x) * 3 + c] = detail::quantize(image(c, y, x));
  detail::write_raw(path, w, h, PNG_FORMAT_RGB, bytes);
}

// Binary mask as 8-bit gray: set bits → 255, clear bits → 0.
inline void write_mask(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::uint8_t> bytes(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) bytes[i] = mask[i] ? 255 : 0;
  detail::write_raw(path, mask.width(), mask.height(), PNG_FORMAT_GRAY, bytes);
}

inline Mask read_mask(const std::filesystem::path& path) {
  detail::ImageGuard g;
  if (!png_image_begin_read_from_file(&g.image, path.string().c_str())) {
    throw Error(ErrorKind::DecodeFailure, path.string() + ": " + g.image.message);
  }
  g.image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(g.image));
  if (!png_image_finish_read(&g.image, nullptr, buffer.data(), 0, nullptr)) {
    throw Error(ErrorKind::DecodeFailure, path.string() + ": " + g.image.message);
  }
  Mask m(static_cast<int>(g.image.height), static_cast<int>(g.image.width));
  for (std::size_t i = 0; i < buffer.size(); ++i) m.set(i, buffer[i] >= 128);
  return m;
}

}  // namespace rsc::png
