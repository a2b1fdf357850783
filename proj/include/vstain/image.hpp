#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vstain/errors.hpp"

namespace vstain {

// Interleaved row-major raster (x fastest, channels innermost).
template <typename T>
class Raster {
 public:
  using value_type = T;

  Raster() = default;
  Raster(int width, int height, int channels, T fill = T{0})
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {
    if (width < 0 || height < 0 || channels < 1) throw InputError("invalid raster dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::int64_t pixel_count() const { return static_cast<std::int64_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }
  bool same_size(int w, int h) const { return w == width_ && h == height_; }
  template <typename U>
  bool same_size(const Raster<U>& o) const {
    return o.width() == width_ && o.height() == height_;
  }

  T& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  T at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool operator==(const Raster&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

using Gray16 = Raster<std::uint16_t>;
using Image8 = Raster<std::uint8_t>;  // 1 (grey/mask), 3 (RGB) or 4 (RGBA) channels

// PNG: 8-bit with 1, 3 or 4 channels, or 16-bit grey. Writes are
// byte-deterministic (fixed compression, no timestamps).
Image8 read_png8(const std::filesystem::path& path);
Gray16 read_png16(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);
void write_png(const std::filesystem::path& path, const Gray16& image);

// Single- or multi-page 16-bit grey TIFF.
std::vector<Gray16> read_tiff16(const std::filesystem::path& path);
void write_tiff16(const std::filesystem::path& path, const std::vector<Gray16>& pages);

// Reads a 16-bit grey raster from .png, .tif or .tiff (first page).
Gray16 read_gray16(const std::filesystem::path& path);
void write_gray16(const std::filesystem::path& path, const Gray16& image);

// FNV-1a 64-bit hash of a file's bytes, hex encoded.
std::string file_fingerprint(const std::filesystem::path& path);

}  // namespace vstain
