#pragma once

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "pole/errors.hpp"
#include "pole/pseudo_labels.hpp"
#include "pole/tensor.hpp"

namespace pole {

inline std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

/// 8-bit RGB PNG; pixel values are quantized to k/255.
inline void write_png_rgb(const std::string& path, const Image& img) {
  if (img.channels() != 3) throw ArgumentError("write_png_rgb expects 3 channels");
  std::vector<std::uint8_t> buf(img.plane_size() * 3);
  for (std::size_t p = 0; p < img.plane_size(); ++p)
    for (std::size_t c = 0; c < 3; ++c) buf[p * 3 + c] = to_byte(img.plane(c)[p]);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
    throw PipelineError("cannot write PNG '" + path + "': " + image.message);
}

inline Image read_png_rgb(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IngestionError("cannot read PNG '" + path + "': " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr))
    throw IngestionError("cannot decode PNG '" + path + "': " + image.message);
  Image img(3, image.height, image.width);
  for (std::size_t p = 0; p < img.plane_size(); ++p)
    for (std::size_t c = 0; c < 3; ++c) img.plane(c)[p] = buf[p * 3 + c] / 255.0;
  return img;
}

/// Single-channel 8-bit PNG holding label indices.
inline void write_png_labels(const std::string& path, const PseudoMask& mask) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(mask.width);
  image.height = static_cast<png_uint_32>(mask.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, mask.labels.data(), 0, nullptr))
    throw PipelineError("cannot write PNG '" + path + "': " + image.message);
}

/// Reads label indices from a grayscale or palette PNG. Palette images yield
/// the raw palette indices, as in VOC SegmentationClass masks.
inline PseudoMask read_png_labels(const std::string& path, const std::string& image_id) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw IngestionError("cannot open label PNG '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestionError("libpng initialisation failed");
  }
  PseudoMask mask;
  mask.image_id = image_id;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestionError("corrupt label PNG '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_PALETTE) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestionError("label PNG '" + path + "' must be grayscale or palette");
  }
  if (depth == 16) png_set_strip_16(png);
  if (depth < 8) png_set_packing(png);
  png_read_update_info(png, info);
  mask.width = png_get_image_width(png, info);
  mask.height = png_get_image_height(png, info);
  mask.labels.resize(mask.width * mask.height);
  rows.resize(mask.height);
  for (std::size_t y = 0; y < mask.height; ++y) rows[y] = mask.labels.data() + y * mask.width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return mask;
}

namespace detail {

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

}  // namespace detail

inline Image read_jpeg_rgb(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw IngestionError("cannot open JPEG '" + path + "'");
  jpeg_decompress_struct cinfo{};
  detail::JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = detail::jpeg_error_exit;
  Image img;
  std::vector<JSAMPLE> row;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IngestionError("corrupt JPEG '" + path + "'");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img = Image(3, cinfo.output_height, cinfo.output_width);
  row.resize(static_cast<std::size_t>(cinfo.output_width) * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    const std::size_t y = cinfo.output_scanline;
    JSAMPROW rp = row.data();
    jpeg_read_scanlines(&cinfo, &rp, 1);
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c) img(c, y, x) = row[x * 3 + c] / 255.0;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

inline void write_jpeg_rgb(const std::string& path, const Image& img, int quality = 95) {
  if (img.channels() != 3) throw ArgumentError("write_jpeg_rgb expects 3 channels");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw PipelineError("cannot open '" + path + "' for writing");
  jpeg_compress_struct cinfo{};
  detail::JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = detail::jpeg_error_exit;
  std::vector<JSAMPLE> row(img.width() * 3);
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    throw PipelineError("JPEG encoding failed for '" + path + "'");
  }
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, fp.get());
  cinfo.image_width = static_cast<JDIMENSION>(img.width());
  cinfo.image_height = static_cast<JDIMENSION>(img.height());
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    const std::size_t y = cinfo.next_scanline;
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c) row[x * 3 + c] = to_byte(img(c, y, x));
    JSAMPROW rp = row.data();
    jpeg_write_scanlines(&cinfo, &rp, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
}

}  // namespace pole
