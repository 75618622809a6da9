#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dnrf {

// Row-major, channel-interleaved float image. Color values live in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int row, int col, int ch) {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  float at(int row, int col, int ch) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  bool same_shape(const Image& other) const {
    return width == other.width && height == other.height && channels == other.channels;
  }
  bool operator==(const Image&) const = default;
};

// Rounds every value to the nearest multiple of 1/255 (what an 8-bit PNG holds).
Image quantize8(const Image& image);

// Bilinear resample at pixel centers; identity when the size is unchanged.
Image resize_bilinear(const Image& image, int width, int height);

// Encoders return PNG bytes. 8-bit images clamp to [0, 1]; channels 1 or 3.
std::vector<std::uint8_t> encode_png8(const Image& image);
// Single-channel 16-bit PNG of values already scaled to [0, 1].
std::vector<std::uint8_t> encode_png16(const Image& image);

void write_png8(const Image& image, const std::filesystem::path& path);
void write_png16(const Image& image, const std::filesystem::path& path);
void write_bytes(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path);

// Reads any PNG as 8-bit RGB mapped to [0, 1]. Throws DataError.
Image read_png_rgb(const std::filesystem::path& path);

}  // namespace dnrf
