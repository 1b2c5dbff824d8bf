#include "blurret/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "blurret/errors.hpp"

namespace blurret {

namespace {

uint8_t quantize(double v) {
  if (v <= 0.0) return 0;
  if (v >= 1.0) return 255;
  return static_cast<uint8_t>(std::lround(v * 255.0));
}

struct FileCloser {
  FILE* f;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

}  // namespace

void write_png_rgba(const std::string& path, const Volume<double>& rgb,
                    const GridD& alpha) {
  if (rgb.c != 3 || rgb.h != alpha.h || rgb.w != alpha.w) {
    throw ShapeMismatch("write_png_rgba: rgb " + std::to_string(rgb.c) + "x" +
                        std::to_string(rgb.h) + "x" + std::to_string(rgb.w) +
                        " vs alpha " + std::to_string(alpha.h) + "x" +
                        std::to_string(alpha.w));
  }
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open for writing: " + path);
  FileCloser closer{f};

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write error: " + path);
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, alpha.w, alpha.h, 8, PNG_COLOR_TYPE_RGBA,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<uint8_t> row(static_cast<size_t>(alpha.w) * 4);
  for (int r = 0; r < alpha.h; ++r) {
    for (int c = 0; c < alpha.w; ++c) {
      row[4 * c + 0] = quantize(rgb.at(0, r, c));
      row[4 * c + 1] = quantize(rgb.at(1, r, c));
      row[4 * c + 2] = quantize(rgb.at(2, r, c));
      row[4 * c + 3] = quantize(alpha.at(r, c));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

LoadedImage read_png_rgba(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open for reading: " + path);
  FileCloser closer{f};

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png read error: " + path);
  }
  png_init_io(png, f);
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_GRAY ||
      color == PNG_COLOR_TYPE_PALETTE)
    png_set_filler(png, 0xFF, PNG_FILLER_AFTER);
  png_read_update_info(png, info);

  LoadedImage out;
  out.rgb = Volume<float>(3, static_cast<int>(h), static_cast<int>(w));
  out.alpha = GridF(static_cast<int>(h), static_cast<int>(w));

  std::vector<uint8_t> row(static_cast<size_t>(w) * 4);
  for (png_uint_32 r = 0; r < h; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 c = 0; c < w; ++c) {
      out.rgb.at(0, static_cast<int>(r), static_cast<int>(c)) = row[4 * c + 0] / 255.0f;
      out.rgb.at(1, static_cast<int>(r), static_cast<int>(c)) = row[4 * c + 1] / 255.0f;
      out.rgb.at(2, static_cast<int>(r), static_cast<int>(c)) = row[4 * c + 2] / 255.0f;
      out.alpha.at(static_cast<int>(r), static_cast<int>(c)) = row[4 * c + 3] / 255.0f;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace blurret
