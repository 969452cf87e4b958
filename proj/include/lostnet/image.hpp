#pragma once

// 8-bit RGB rasters: PNG/JPEG decode and encode, resampling, and conversion
// to the normalized network input tensor.

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lostnet/tensor.hpp"

namespace lostnet {

class ImageDecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Interleaved RGB, row-major, 3 bytes per pixel.
struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}

  std::uint8_t* pixel(std::size_t x, std::size_t y) { return rgb.data() + (y * width + x) * 3; }
  const std::uint8_t* pixel(std::size_t x, std::size_t y) const { return rgb.data() + (y * width + x) * 3; }

  friend bool operator==(const Image&, const Image&) = default;
};

enum class ImageFormat { Unknown, Png, Jpeg };

inline ImageFormat sniff_format(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0) return ImageFormat::Png;
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return ImageFormat::Jpeg;
  return ImageFormat::Unknown;
}

namespace detail {

inline Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ImageDecodeError("undecodable PNG: " + msg);
  }
  img.format = PNG_FORMAT_RGB;
  if (img.width == 0 || img.height == 0) {
    png_image_free(&img);
    throw ImageDecodeError("undecodable PNG: empty image");
  }
  Image out(img.width, img.height);
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ImageDecodeError("undecodable PNG: " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

extern "C" inline void jpeg_error_exit_throwing(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

extern "C" inline void jpeg_silent_output(j_common_ptr) {}

// Kept free of non-trivially-destructible locals so longjmp is well defined.
inline bool decode_jpeg_raw(const std::uint8_t* data, std::size_t size, Image* out, char* message) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit_throwing;
  err.pub.output_message = jpeg_silent_output;
  if (setjmp(err.jump)) {
    std::snprintf(message, JMSG_LENGTH_MAX, "%s", err.message);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, const_cast<unsigned char*>(data), static_cast<unsigned long>(size));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  if (cinfo.output_components != 3) {
    std::snprintf(message, JMSG_LENGTH_MAX, "unsupported component count %d", cinfo.output_components);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  out->width = cinfo.output_width;
  out->height = cinfo.output_height;
  out->rgb.resize(static_cast<std::size_t>(cinfo.output_width) * cinfo.output_height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out->rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * cinfo.output_width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

inline bool encode_jpeg_raw(const Image* img, int quality, unsigned char** buf, unsigned long* size, char* message) {
  jpeg_compress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit_throwing;
  err.pub.output_message = jpeg_silent_output;
  if (setjmp(err.jump)) {
    std::snprintf(message, JMSG_LENGTH_MAX, "%s", err.message);
    jpeg_destroy_compress(&cinfo);
    return false;
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, buf, size);
  cinfo.image_width = static_cast<JDIMENSION>(img->width);
  cinfo.image_height = static_cast<JDIMENSION>(img->height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(img->rgb.data() + static_cast<std::size_t>(cinfo.next_scanline) * img->width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  return true;
}

}  // namespace detail

/// Decodes PNG or baseline JPEG to RGB. Alpha is composited onto black by libpng's
/// RGB conversion.
inline Image decode_image(std::span<const std::uint8_t> bytes) {
  switch (sniff_format(bytes)) {
    case ImageFormat::Png:
      return detail::decode_png(bytes);
    case ImageFormat::Jpeg: {
      Image out;
      char message[JMSG_LENGTH_MAX] = {0};
      if (!detail::decode_jpeg_raw(bytes.data(), bytes.size(), &out, message)) {
        throw ImageDecodeError(std::string("undecodable JPEG: ") + message);
      }
      if (out.width == 0 || out.height == 0) throw ImageDecodeError("undecodable JPEG: empty image");
      return out;
    }
    case ImageFormat::Unknown:
      break;
  }
  throw ImageDecodeError("undecodable image: not PNG or JPEG (" + std::to_string(bytes.size()) + " bytes)");
}

inline Image decode_image(const std::string& bytes) {
  return decode_image(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.width == 0 || img.height == 0 || img.rgb.size() != img.width * img.height * 3) {
    throw std::invalid_argument("encode_png: malformed image");
  }
  png_image p;
  std::memset(&p, 0, sizeof p);
  p.version = PNG_IMAGE_VERSION;
  p.width = static_cast<png_uint_32>(img.width);
  p.height = static_cast<png_uint_32>(img.height);
  p.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&p, nullptr, &size, 0, img.rgb.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("encode_png: ") + p.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&p, out.data(), &size, 0, img.rgb.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("encode_png: ") + p.message);
  }
  out.resize(size);
  return out;
}

inline std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality = 90) {
  if (img.width == 0 || img.height == 0 || img.rgb.size() != img.width * img.height * 3) {
    throw std::invalid_argument("encode_jpeg: malformed image");
  }
  unsigned char* buf = nullptr;
  unsigned long size = 0;
  char message[JMSG_LENGTH_MAX] = {0};
  const bool ok = detail::encode_jpeg_raw(&img, quality, &buf, &size, message);
  std::vector<std::uint8_t> out;
  if (ok) out.assign(buf, buf + size);
  std::free(buf);
  if (!ok) throw std::runtime_error(std::string("encode_jpeg: ") + message);
  return out;
}

inline std::string to_string(const std::vector<std::uint8_t>& bytes) { return {bytes.begin(), bytes.end()}; }

/// Bilinear resampling with pixel centers at half-integers (no antialiasing).
inline Image resize_bilinear(const Image& src, std::size_t w, std::size_t h) {
  if (w == 0 || h == 0 || src.width == 0 || src.height == 0) throw std::invalid_argument("resize_bilinear: empty size");
  Image out(w, h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(w);
  const double sy = static_cast<double>(src.height) / static_cast<double>(h);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = src.pixel(x0, y0)[c] * (1 - tx) + src.pixel(x1, y0)[c] * tx;
        const double bot = src.pixel(x0, y1)[c] * (1 - tx) + src.pixel(x1, y1)[c] * tx;
        out.pixel(x, y)[c] = static_cast<std::uint8_t>(std::lround(top * (1 - ty) + bot * ty));
      }
    }
  }
  return out;
}

/// Multiplies every channel by `factor`, rounding and saturating at 255.
inline Image scale_brightness(const Image& src, double factor) {
  Image out = src;
  for (auto& v : out.rgb) v = static_cast<std::uint8_t>(std::clamp(std::lround(v * factor), 0L, 255L));
  return out;
}

struct Normalization {
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> stddev{0.229f, 0.224f, 0.225f};
};

/// resize to res x res (bilinear) -> scale to [0,1] -> (v - mean) / std per channel.
/// Output (1, 3, res, res).
inline Tensor<float> to_network_input(const Image& img, std::size_t res, const Normalization& norm = {}) {
  const Image r = (img.width == res && img.height == res) ? img : resize_bilinear(img, res, res);
  Tensor<float> t(Shape(1, 3, res, res));
  for (std::size_t c = 0; c < 3; ++c) {
    float* plane = t.plane(0, c);
    for (std::size_t i = 0; i < res * res; ++i) {
      plane[i] = (static_cast<float>(r.rgb[i * 3 + c]) / 255.0f - norm.mean[c]) / norm.stddev[c];
    }
  }
  return t;
}

}  // namespace lostnet
