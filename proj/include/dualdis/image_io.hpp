#pragma once

// 8-bit PNG encoding of (C,H,W) float images in [0,1], C = 1 or 3.

#include <png.h>

#include <cstring>
#include <fstream>

#include "dualdis/tensor.hpp"

namespace dualdis {

class ImageError : public Error {
 public:
  using Error::Error;
};

inline std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

/// Encodes a (C,H,W) tensor as PNG bytes; values are clamped to [0,1].
inline std::string encode_png(const Tensor<float>& img) {
  if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) throw ShapeError("encode_png", "(1|3,H,W)", img.shape());
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(C) * H * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) pixels[(static_cast<std::size_t>(y) * W + x) * C + c] = to_byte(img[(static_cast<std::size_t>(c) * H + y) * W + x]);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(W);
  image.height = static_cast<png_uint_32>(H);
  image.format = C == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw ImageError(std::string("PNG encode failed: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw ImageError(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

/// Decodes PNG bytes into a (channels,H,W) tensor in [0,1].
inline Tensor<float> decode_png(std::string_view bytes, int channels) {
  if (channels != 1 && channels != 3) throw ImageError("decode_png: channels must be 1 or 3");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw ImageError(std::string("not a decodable PNG: ") + image.message);
  }
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int H = static_cast<int>(image.height), W = static_cast<int>(image.width);
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ImageError(std::string("corrupt PNG: ") + image.message);
  }
  Tensor<float> out({channels, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < channels; ++c)
        out[(static_cast<std::size_t>(c) * H + y) * W + x] = pixels[(static_cast<std::size_t>(y) * W + x) * channels + c] / 255.0f;
  return out;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(f), {});
}

inline void write_file_bytes(const std::string& path, std::string_view bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ImageError("cannot write '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ImageError("write failed for '" + path + "'");
}

inline Tensor<float> read_png(const std::string& path, int channels) {
  try {
    return decode_png(read_file_bytes(path), channels);
  } catch (const ImageError& e) {
    throw ImageError(path + ": " + e.what());
  }
}

inline void write_png(const std::string& path, const Tensor<float>& img) { write_file_bytes(path, encode_png(img)); }

}  // namespace dualdis
