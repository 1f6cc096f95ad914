#include "tfill/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "tfill/ops.hpp"

namespace tfill {

MaskedImage make_masked(const Tensor& image, const Tensor& mask) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("masked image: image must be [B,3,H,W], got " + shape_str(image.shape()));
  }
  if (mask.rank() != 4 || mask.dim(1) != 1) {
    throw ShapeError("masked image: mask must be [B,1,H,W], got " + shape_str(mask.shape()));
  }
  if (mask.dim(0) != image.dim(0) || mask.dim(2) != image.dim(2) || mask.dim(3) != image.dim(3)) {
    throw ShapeError("masked image: image " + shape_str(image.shape()) +
                     " and mask " + shape_str(mask.shape()) + " are not spatially aligned");
  }
  for (double v : mask.data()) {
    if (v != 0.0 && v != 1.0) throw ValueError("masked image: mask must be binary");
  }
  for (double v : image.data()) {
    if (v < 0.0 || v > 1.0) throw ValueError("masked image: image values must lie in [0,1]");
  }
  std::int64_t plane = static_cast<std::int64_t>(image.dim(2)) * image.dim(3);
  std::vector<double> zeroed = image.data();
  const auto& mv = mask.data();
  for (int b = 0; b < image.dim(0); ++b) {
    const double* mp = &mv[static_cast<std::size_t>(b * plane)];
    for (int c = 0; c < 3; ++c) {
      double* ip = &zeroed[static_cast<std::size_t>((b * 3 + c) * plane)];
      for (std::int64_t k = 0; k < plane; ++k) ip[k] *= mp[k];
    }
  }
  MaskedImage out;
  out.image = Tensor::from_data(image.shape(), std::move(zeroed));
  out.mask = mask.detach_copy();
  return out;
}

Tensor expand_mask_channels(const Tensor& mask, int channels) {
  if (mask.rank() != 4 || mask.dim(1) != 1) {
    throw ShapeError("expand_mask_channels: expected [B,1,H,W]");
  }
  std::int64_t plane = static_cast<std::int64_t>(mask.dim(2)) * mask.dim(3);
  std::vector<double> out(static_cast<std::size_t>(mask.dim(0) * channels * plane));
  const auto& mv = mask.data();
  for (int b = 0; b < mask.dim(0); ++b) {
    for (int c = 0; c < channels; ++c) {
      std::copy(mv.begin() + b * plane, mv.begin() + (b + 1) * plane,
                out.begin() + (b * channels + c) * plane);
    }
  }
  return Tensor::from_data({mask.dim(0), channels, mask.dim(2), mask.dim(3)}, std::move(out));
}

Tensor invert_mask(const Tensor& mask) {
  std::vector<double> out = mask.data();
  for (auto& v : out) v = 1.0 - v;
  return Tensor::from_data(mask.shape(), std::move(out));
}

Tensor resample_image(const Tensor& image, int out_h, int out_w) {
  if (image.rank() != 3) throw ShapeError("resample_image: expected [C,H,W]");
  if (out_h < 1 || out_w < 1) throw ShapeError("resample_image: invalid output size");
  int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  std::vector<double> out(static_cast<std::size_t>(C) * out_h * out_w);
  const auto& src = image.data();
  double sy = static_cast<double>(H) / out_h;
  double sx = static_cast<double>(W) / out_w;
  for (int c = 0; c < C; ++c) {
    const double* plane = &src[static_cast<std::size_t>(c) * H * W];
    for (int y = 0; y < out_h; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      fy = std::min(std::max(fy, 0.0), static_cast<double>(H - 1));
      int y0 = static_cast<int>(fy);
      int y1 = std::min(y0 + 1, H - 1);
      double wy = fy - y0;
      for (int x = 0; x < out_w; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        fx = std::min(std::max(fx, 0.0), static_cast<double>(W - 1));
        int x0 = static_cast<int>(fx);
        int x1 = std::min(x0 + 1, W - 1);
        double wx = fx - x0;
        out[(static_cast<std::size_t>(c) * out_h + y) * out_w + x] =
            (1.0 - wy) * ((1.0 - wx) * plane[y0 * W + x0] + wx * plane[y0 * W + x1]) +
            wy * ((1.0 - wx) * plane[y1 * W + x0] + wx * plane[y1 * W + x1]);
      }
    }
  }
  return Tensor::from_data({C, out_h, out_w}, std::move(out));
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Tensor read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode PNG " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::size_t rowbytes = png_get_rowbytes(png, info);
  pixels.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = &pixels[y * rowbytes];
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  std::vector<double> data(static_cast<std::size_t>(3) * h * w);
  for (png_uint_32 y = 0; y < h; ++y) {
    for (png_uint_32 x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        data[(static_cast<std::size_t>(c) * h + y) * w + x] =
            pixels[y * rowbytes + 3 * x + static_cast<std::size_t>(c)] / 255.0;
      }
    }
  }
  return Tensor::from_data({3, static_cast<int>(h), static_cast<int>(w)}, std::move(data));
}

void write_png(const std::string& path, const Tensor& image) {
  Tensor img = image;
  Shape s = img.shape();
  int channels, h, w;
  if (s.size() == 2) {
    channels = 1;
    h = s[0];
    w = s[1];
  } else if (s.size() == 3 && (s[0] == 1 || s[0] == 3)) {
    channels = s[0];
    h = s[1];
    w = s[2];
  } else {
    throw ShapeError("write_png: expected [H,W], [1,H,W] or [3,H,W], got " + shape_str(s));
  }

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode PNG " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  const auto& dv = img.data();
  std::vector<png_byte> row(static_cast<std::size_t>(w) * channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        double v = dv[(static_cast<std::size_t>(c) * h + y) * w + x];
        v = std::min(std::max(v, 0.0), 1.0);
        row[static_cast<std::size_t>(x) * channels + c] =
            static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_pgm_mask(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  char magic[3] = {0, 0, 0};
  if (std::fscanf(fp.get(), "%2s", magic) != 1 || magic[0] != 'P' || magic[1] != '5') {
    throw IoError("not a P5 PGM file: " + path);
  }
  auto read_token = [&]() -> long {
    int ch;
    // skip whitespace and comments
    while ((ch = std::fgetc(fp.get())) != EOF) {
      if (ch == '#') {
        while ((ch = std::fgetc(fp.get())) != EOF && ch != '\n') {
        }
      } else if (!std::isspace(ch)) {
        std::ungetc(ch, fp.get());
        break;
      }
    }
    long v = 0;
    if (std::fscanf(fp.get(), "%ld", &v) != 1) throw IoError("malformed PGM header: " + path);
    return v;
  };
  long w = read_token();
  long h = read_token();
  long maxval = read_token();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw IoError("unsupported PGM header in " + path);
  }
  std::fgetc(fp.get());  // single whitespace before raster
  std::vector<unsigned char> raster(static_cast<std::size_t>(w * h));
  if (std::fread(raster.data(), 1, raster.size(), fp.get()) != raster.size()) {
    throw IoError("truncated PGM raster in " + path);
  }
  std::vector<double> data(raster.size());
  for (std::size_t i = 0; i < raster.size(); ++i) data[i] = raster[i] >= 128 ? 1.0 : 0.0;
  return Tensor::from_data({1, static_cast<int>(h), static_cast<int>(w)}, std::move(data));
}

void write_pgm_mask(const std::string& path, const Tensor& mask) {
  Shape s = mask.shape();
  int h, w;
  if (s.size() == 2) {
    h = s[0];
    w = s[1];
  } else if (s.size() == 3 && s[0] == 1) {
    h = s[1];
    w = s[2];
  } else if (s.size() == 4 && s[0] == 1 && s[1] == 1) {
    h = s[2];
    w = s[3];
  } else {
    throw ShapeError("write_pgm_mask: expected a single-channel mask, got " + shape_str(s));
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path + " for writing");
  std::fprintf(fp.get(), "P5\n%d %d\n255\n", w, h);
  const auto& dv = mask.data();
  std::vector<unsigned char> raster(dv.size());
  for (std::size_t i = 0; i < dv.size(); ++i) raster[i] = dv[i] >= 0.5 ? 255 : 0;
  if (std::fwrite(raster.data(), 1, raster.size(), fp.get()) != raster.size()) {
    throw IoError("failed writing PGM raster to " + path);
  }
}

}  // namespace tfill
