#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "icanet/tensor.hpp"

namespace icanet::data {

class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::string lower_ext(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return ext;
}

inline std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// Minimal reader for P2/P3 (ASCII) and P5/P6 (binary, 8 or 16 bit) images.
class PnmParser {
 public:
  PnmParser(const std::vector<unsigned char>& bytes, std::string path) : b_(bytes), path_(std::move(path)) {}

  Tensor<float> parse() {
    if (b_.size() < 2 || b_[0] != 'P') fail("not a PNM file");
    const char kind = char(b_[1]);
    pos_ = 2;
    std::size_t channels = 0;
    bool ascii = false;
    switch (kind) {
      case '2': channels = 1; ascii = true; break;
      case '3': channels = 3; ascii = true; break;
      case '5': channels = 1; break;
      case '6': channels = 3; break;
      default: fail(std::string("unsupported PNM variant P") + kind);
    }
    const std::size_t w = header_int(), h = header_int(), maxval = header_int();
    if (w == 0 || h == 0) fail("zero image extent");
    if (maxval == 0 || maxval > 65535) fail("maxval out of range");
    Tensor<float> img(Shape{1, channels, h, w});
    const std::size_t plane = h * w;
    if (!ascii) {
      if (pos_ >= b_.size() || !std::isspace(b_[pos_])) fail("missing separator before raster");
      ++pos_;
    }
    const std::size_t bytes_per = maxval > 255 ? 2 : 1;
    for (std::size_t p = 0; p < plane; ++p) {
      for (std::size_t c = 0; c < channels; ++c) {
        std::size_t v = 0;
        if (ascii) {
          v = header_int();
        } else {
          if (pos_ + bytes_per > b_.size()) fail("truncated raster");
          v = bytes_per == 2 ? (std::size_t(b_[pos_]) << 8 | b_[pos_ + 1]) : b_[pos_];
          pos_ += bytes_per;
        }
        if (v > maxval) fail("sample exceeds maxval");
        img[c * plane + p] = float(double(v) / double(maxval));
      }
    }
    return img;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const { throw IoError(path_ + ": " + why); }

  void skip_space() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t header_int() {
    skip_space();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) fail("malformed header or sample");
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + std::size_t(b_[pos_++] - '0');
      if (v > (1u << 30)) fail("number too large");
    }
    return v;
  }

  const std::vector<unsigned char>& b_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline Tensor<float> read_png(const std::string& path) {
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str())) {
    throw IoError(path + ": " + im.message);
  }
  const bool color = (im.format & PNG_FORMAT_FLAG_COLOR) != 0;
  im.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::size_t c = color ? 3 : 1;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = im.message;
    png_image_free(&im);
    throw IoError(path + ": " + msg);
  }
  const std::size_t h = im.height, w = im.width, plane = h * w;
  Tensor<float> img(Shape{1, c, h, w});
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t k = 0; k < c; ++k) img[k * plane + p] = float(buf[p * c + k]) / 255.0f;
  return img;
}

inline std::vector<png_byte> to_bytes(const Tensor<float>& img) {
  const std::size_t c = img.c(), plane = img.h() * img.w();
  std::vector<png_byte> buf(plane * c);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t k = 0; k < c; ++k)
      buf[p * c + k] = png_byte(std::lround(std::clamp(double(img[k * plane + p]), 0.0, 1.0) * 255.0));
  return buf;
}

}  // namespace detail

/// Decodes PNG, PGM or PPM into a (1, C, H, W) tensor with values in [0, 1].
inline Tensor<float> read_image(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing file: " + path);
  const std::string ext = detail::lower_ext(path);
  if (ext == ".png") return detail::read_png(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
    const auto bytes = detail::slurp(path);
    return detail::PnmParser(bytes, path).parse();
  }
  throw IoError(path + ": unsupported image extension '" + ext + "'");
}

/// Writes a (1, 1|3, H, W) tensor as 8-bit PNG, PGM or PPM chosen by extension.
inline void write_image(const std::string& path, const Tensor<float>& img) {
  if (img.n() != 1 || (img.c() != 1 && img.c() != 3)) {
    throw ShapeError("write_image: expected (1,1|3,H,W), got " + img.shape().str());
  }
  const auto buf = detail::to_bytes(img);
  const std::string ext = detail::lower_ext(path);
  if (ext == ".png") {
    png_image im{};
    im.version = PNG_IMAGE_VERSION;
    im.width = png_uint_32(img.w());
    im.height = png_uint_32(img.h());
    im.format = img.c() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&im, path.c_str(), 0, buf.data(), 0, nullptr)) {
      throw IoError(path + ": " + im.message);
    }
    return;
  }
  if (ext == ".pgm" || ext == ".ppm") {
    if ((ext == ".pgm") != (img.c() == 1)) throw IoError(path + ": extension does not match channel count");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << (img.c() == 1 ? "P5\n" : "P6\n") << img.w() << ' ' << img.h() << "\n255\n";
    f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!f) throw IoError("write failed: " + path);
    return;
  }
  throw IoError(path + ": unsupported image extension '" + ext + "'");
}

}  // namespace icanet::data
