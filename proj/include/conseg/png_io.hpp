// conseg/png_io.hpp

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABILITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Thin wrappers around libpng for the two pixel formats the dataset layout
// uses: 8-bit RGB image tiles and 8-bit grayscale masks. Reads normalise
// palette, low-bit-depth, 16-bit and alpha variants down to plain 8-bit.

#ifndef CONSEG_PNG_IO_HPP_
#define CONSEG_PNG_IO_HPP_

#include <png.h>

#include <cstdio>
#include <string>
#include <vector>

#include "conseg/errors.hpp"

namespace conseg {

struct PngBuffer {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (rgb) after normalisation
  std::vector<unsigned char> pixels;  // row-major, interleaved
};

namespace detail {

struct FileCloser {
  std::FILE *f;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

inline PngBuffer ReadPng(const std::string &path) {
  std::FILE *fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw DatasetError("cannot open " + path);
  detail::FileCloser closer{fp};

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DatasetError("libpng init failed reading " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DatasetError("libpng init failed reading " + path);
  }

  PngBuffer out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DatasetError("failed to decode " + path);
  }

  png_init_io(png, fp);
  png_read_info(png, info);

  // fold every encoding down to 8-bit gray or rgb
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = static_cast<int>(png_get_channels(png, info));
  if (out.channels != 1 && out.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DatasetError("unsupported channel count in " + path);
  }

  const std::size_t stride =
      static_cast<std::size_t>(out.width) * out.channels;
  out.pixels.resize(stride * out.height);
  for (int y = 0; y < out.height; ++y)
    png_read_row(png, out.pixels.data() + stride * y, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline void WritePng(const std::string &path, const PngBuffer &img) {
  if (img.channels != 1 && img.channels != 3)
    throw InputError("png write supports 1 or 3 channels, got " +
                     std::to_string(img.channels));
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height *
                               img.channels)
    throw InputError("png buffer size does not match its dimensions");

  std::FILE *fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw DatasetError("cannot open " + path + " for writing");
  detail::FileCloser closer{fp};

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  if (!png) throw DatasetError("libpng init failed writing " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DatasetError("libpng init failed writing " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DatasetError("failed to encode " + path);
  }

  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride =
      static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + stride * y));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace conseg

#endif  // CONSEG_PNG_IO_HPP_
