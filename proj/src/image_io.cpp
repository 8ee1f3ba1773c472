#include "dgsp/image_io.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <vector>

#include "dgsp/common.hpp"

namespace dgsp {
namespace {

void quiet_warning(png_structp, png_const_charp) {}

struct FileCloser {
  std::FILE* fp = nullptr;
  ~FileCloser() {
    if (fp) std::fclose(fp);
  }
};

unsigned char level8(float v) {
  v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<unsigned char>(std::lround(v * 255.0f));
}

unsigned level16(float v) {
  v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<unsigned>(std::lround(static_cast<double>(v) * 65535.0));
}

}  // namespace

Tensor<float> read_png_gray(const std::string& path) {
  FileCloser file;
  file.fp = std::fopen(path.c_str(), "rb");
  if (!file.fp) throw IoError("cannot open image: " + path);

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("not a png file: " + path);
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, quiet_warning);
  if (!png) throw IoError("png reader allocation failed: " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png reader allocation failed: " + path);
  }

  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt png: " + path);
  }

  png_init_io(png, file.fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);

  if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("image is not grayscale: " + path);
  }
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  const int out_depth = depth == 16 ? 16 : 8;
  const std::size_t stride = static_cast<std::size_t>(w) * (out_depth / 8);
  pixels.resize(stride * h);
  rows.resize(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = pixels.data() + r * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor<float> img({static_cast<long>(h), static_cast<long>(w)});
  if (out_depth == 8) {
    for (long i = 0; i < img.numel(); ++i) {
      img.data()[i] = static_cast<float>(pixels[i]) / 255.0f;
    }
  } else {
    // 16-bit png samples are stored big-endian.
    for (long i = 0; i < img.numel(); ++i) {
      const unsigned v = (static_cast<unsigned>(pixels[2 * i]) << 8) | pixels[2 * i + 1];
      img.data()[i] = static_cast<float>(static_cast<double>(v) / 65535.0);
    }
  }
  return img;
}

namespace {

void write_png_impl(const std::string& path, const Tensor<float>& img, int out_depth, bool binary) {
  if (img.shape().size() != 2) throw ShapeError("png writer expects a (H,W) tensor");
  const long h = img.shape()[0];
  const long w = img.shape()[1];
  if (h <= 0 || w <= 0) throw ShapeError("png writer expects nonempty image");

  FileCloser file;
  file.fp = std::fopen(path.c_str(), "wb");
  if (!file.fp) throw IoError("cannot create image: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, quiet_warning);
  if (!png) throw IoError("png writer allocation failed: " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png writer allocation failed: " + path);
  }

  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path);
  }

  png_init_io(png, file.fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), out_depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  const std::size_t stride = static_cast<std::size_t>(w) * (out_depth / 8);
  pixels.resize(stride * static_cast<std::size_t>(h));
  const float* src = img.data();
  if (out_depth == 8) {
    for (long i = 0; i < img.numel(); ++i) {
      pixels[i] = binary ? (src[i] > 0.5f ? 255 : 0) : level8(src[i]);
    }
  } else {
    for (long i = 0; i < img.numel(); ++i) {
      const unsigned v = level16(src[i]);
      pixels[2 * i] = static_cast<unsigned char>(v >> 8);
      pixels[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
    }
  }
  rows.resize(static_cast<std::size_t>(h));
  for (long r = 0; r < h; ++r) rows[static_cast<std::size_t>(r)] = pixels.data() + static_cast<std::size_t>(r) * stride;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray8(const std::string& path, const Tensor<float>& img) {
  write_png_impl(path, img, 8, false);
}

void write_png_gray16(const std::string& path, const Tensor<float>& img) {
  write_png_impl(path, img, 16, false);
}

void write_png_mask(const std::string& path, const Tensor<float>& mask) {
  write_png_impl(path, mask, 8, true);
}

}  // namespace dgsp
