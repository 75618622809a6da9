#include "dnrf/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dnrf/errors.hpp"

namespace dnrf {
namespace {

std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::vector<std::uint8_t> encode(png_image& info, const void* pixels) {
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&info, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw DataError(DataErrorCode::kIo, std::string("png encode: ") + info.message);
  }
  std::vector<std::uint8_t> bytes(size);
  if (!png_image_write_to_memory(&info, bytes.data(), &size, 0, pixels, 0, nullptr)) {
    throw DataError(DataErrorCode::kIo, std::string("png encode: ") + info.message);
  }
  bytes.resize(size);
  return bytes;
}

}  // namespace

Image quantize8(const Image& image) {
  Image out = image;
  for (float& v : out.data) v = static_cast<float>(to_u8(v)) / 255.0f;
  return out;
}

Image resize_bilinear(const Image& image, int width, int height) {
  if (width == image.width && height == image.height) return image;
  Image out(width, height, image.channels);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int r = 0; r < height; ++r) {
    const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(y);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double fy = y - y0;
    for (int c = 0; c < width; ++c) {
      const double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(x);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double fx = x - x0;
      for (int ch = 0; ch < image.channels; ++ch) {
        const double top = image.at(y0, x0, ch) * (1 - fx) + image.at(y0, x1, ch) * fx;
        const double bottom = image.at(y1, x0, ch) * (1 - fx) + image.at(y1, x1, ch) * fx;
        out.at(r, c, ch) = static_cast<float>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_png8(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ContractViolation("encode_png8: expected 1 or 3 channels");
  }
  std::vector<std::uint8_t> pixels(image.data.size());
  std::transform(image.data.begin(), image.data.end(), pixels.begin(), to_u8);
  png_image info;
  std::memset(&info, 0, sizeof(info));
  info.version = PNG_IMAGE_VERSION;
  info.width = static_cast<png_uint_32>(image.width);
  info.height = static_cast<png_uint_32>(image.height);
  info.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  return encode(info, pixels.data());
}

std::vector<std::uint8_t> encode_png16(const Image& image) {
  if (image.channels != 1) throw ContractViolation("encode_png16: expected 1 channel");
  std::vector<png_uint_16> pixels(image.data.size());
  std::transform(image.data.begin(), image.data.end(), pixels.begin(), [](float v) {
    return static_cast<png_uint_16>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f));
  });
  png_image info;
  std::memset(&info, 0, sizeof(info));
  info.version = PNG_IMAGE_VERSION;
  info.width = static_cast<png_uint_32>(image.width);
  info.height = static_cast<png_uint_32>(image.height);
  info.format = PNG_FORMAT_LINEAR_Y;
  return encode(info, pixels.data());
}

void write_bytes(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataErrorCode::kIo, "cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(DataErrorCode::kIo, "write failed: " + path.string());
}

void write_png8(const Image& image, const std::filesystem::path& path) {
  write_bytes(encode_png8(image), path);
}

void write_png16(const Image& image, const std::filesystem::path& path) {
  write_bytes(encode_png16(image), path);
}

Image read_png_rgb(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw DataError(DataErrorCode::kMissingFile, "no such image: " + path.string());
  }
  png_image info;
  std::memset(&info, 0, sizeof(info));
  info.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&info, path.c_str())) {
    throw DataError(DataErrorCode::kMalformed, path.string() + ": " + info.message);
  }
  info.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(info));
  if (!png_image_finish_read(&info, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&info);
    throw DataError(DataErrorCode::kMalformed, path.string() + ": " + info.message);
  }
  Image image(static_cast<int>(info.width), static_cast<int>(info.height), 3);
  std::transform(pixels.begin(), pixels.end(), image.data.begin(),
                 [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
  return image;
}

}  // namespace dnrf
