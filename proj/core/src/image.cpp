#include "freeevent/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "freeevent/errors.hpp"

namespace freeevent {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

double Mask::sum() const {
  double s = 0.0;
  for (double v : data) s += v;
  return s;
}

Mask Mask::binarized() const {
  Mask out(height, width);
  for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = data[i] >= 0.5 ? 1.0 : 0.0;
  return out;
}

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open image " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw IoError("not a PNG file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> pixels;
  Image img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * img.height);
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  img.data.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int i = 0; i < img.width * img.channels; ++i)
      img.data[static_cast<std::size_t>(y) * img.width * img.channels + i] = rows[y][i] / 255.0;
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw ShapeError("write_png supports 1 or 3 channels");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("cannot write image " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_byte> pixels(image.data.size());
  std::transform(image.data.begin(), image.data.end(), pixels.begin(), quantize);
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y)
    rows[y] = pixels.data() + static_cast<std::size_t>(y) * image.width * image.channels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width, image.height, 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Mask read_mask(const std::filesystem::path& path) {
  if (path.extension() == ".rle") {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open mask " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return decode_mask_rle(ss.str());
  }
  const Image img = read_png(path);
  Mask m(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) m.at(y, x) = img.at(y, x, 0);
  return m;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  Image img(mask.height, mask.width, 1);
  img.data = mask.data;
  write_png(path, img);
}

std::string encode_mask_rle(const Mask& mask) {
  std::ostringstream os;
  os << "rle " << mask.height << ' ' << mask.width;
  bool current = false;
  std::size_t run = 0;
  for (double v : mask.data) {
    const bool on = v >= 0.5;
    if (on != current) {
      os << ' ' << run;
      run = 0;
      current = on;
    }
    ++run;
  }
  os << ' ' << run << '\n';
  return os.str();
}

Mask decode_mask_rle(const std::string& text) {
  std::istringstream is(text);
  std::string tag;
  int h = 0, w = 0;
  if (!(is >> tag >> h >> w) || tag != "rle" || h <= 0 || w <= 0) throw DataError("malformed RLE mask header");
  Mask m(h, w);
  std::size_t pos = 0, run = 0;
  bool on = false;
  while (is >> run) {
    if (pos + run > m.data.size()) throw DataError("RLE runs exceed mask size");
    std::fill_n(m.data.begin() + static_cast<std::ptrdiff_t>(pos), run, on ? 1.0 : 0.0);
    pos += run;
    on = !on;
  }
  if (pos != m.data.size()) throw DataError("RLE runs do not cover the mask");
  return m;
}

void write_mask_rle(const std::filesystem::path& path, const Mask& mask) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write mask " + path.string());
  out << encode_mask_rle(mask);
}

std::vector<double> to_grayscale(const Image& image) {
  std::vector<double> g(static_cast<std::size_t>(image.height) * image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * image.width + x;
      g[i] = image.channels >= 3
                 ? 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) + 0.114 * image.at(y, x, 2)
                 : image.at(y, x, 0);
    }
  return g;
}

}  // namespace freeevent
