#include "agddad/core/io.hpp"

#include <png.h>
#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace agddad {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::filesystem::path& path, const char* what) {
  throw std::runtime_error(std::string(what) + ": " + path.string());
}

void write_png_impl(const std::filesystem::path& path, const std::vector<uint8_t>& pixels,
                    int h, int w, int color_type, int channels) {
  if (static_cast<size_t>(h) * w * channels != pixels.size()) {
    throw std::invalid_argument("write_png: pixel buffer size does not match dimensions");
  }
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) fail(path, "cannot open for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "libpng write error");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, w, h, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) {
    rows[y] = const_cast<png_bytep>(pixels.data() + static_cast<size_t>(y) * w * channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray8(const std::filesystem::path& path, const std::vector<uint8_t>& pixels,
                     int h, int w) {
  write_png_impl(path, pixels, h, w, PNG_COLOR_TYPE_GRAY, 1);
}

void write_png_rgb8(const std::filesystem::path& path, const std::vector<uint8_t>& pixels,
                    int h, int w) {
  write_png_impl(path, pixels, h, w, PNG_COLOR_TYPE_RGB, 3);
}

std::vector<uint8_t> read_png_gray8(const std::filesystem::path& path, int* h, int* w) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) fail(path, "cannot open for reading");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "libpng read error");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);

  // Normalize everything to 8-bit gray.
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR) {
    png_set_rgb_to_gray(png, 1, -1.0, -1.0);
  }
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  const int hh = png_get_image_height(png, info);
  const int ww = png_get_image_width(png, info);
  std::vector<uint8_t> out(static_cast<size_t>(hh) * ww);
  std::vector<png_bytep> rows(hh);
  for (int y = 0; y < hh; ++y) rows[y] = out.data() + static_cast<size_t>(y) * ww;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  *h = hh;
  *w = ww;
  return out;
}

std::vector<uint8_t> quantize_unit(const Image& img) {
  std::vector<uint8_t> px(img.v.size());
  for (size_t i = 0; i < img.v.size(); ++i) {
    double x = std::clamp(img.v[i], -1.0, 1.0);
    px[i] = static_cast<uint8_t>(std::lround((x + 1.0) * 127.5));
  }
  return px;
}

Image dequantize_unit(const std::vector<uint8_t>& px, int h, int w) {
  Image img(1, h, w);
  for (size_t i = 0; i < px.size(); ++i) img.v[i] = px[i] / 127.5 - 1.0;
  return img;
}

Image load_image_gray(const std::filesystem::path& path) {
  int h = 0, w = 0;
  auto px = read_png_gray8(path, &h, &w);
  return dequantize_unit(px, h, w);
}

void save_image_gray(const std::filesystem::path& path, const Image& img) {
  if (img.c != 1) throw std::invalid_argument("save_image_gray: expected single channel");
  write_png_gray8(path, quantize_unit(img), img.h, img.w);
}

void save_map_gray(const std::filesystem::path& path, const Image& img) {
  if (img.c != 1) throw std::invalid_argument("save_map_gray: expected single channel");
  std::vector<uint8_t> px(img.v.size());
  for (size_t i = 0; i < img.v.size(); ++i) {
    px[i] = static_cast<uint8_t>(std::lround(std::clamp(img.v[i], 0.0, 1.0) * 255.0));
  }
  write_png_gray8(path, px, img.h, img.w);
}

void write_npy(const std::filesystem::path& path, const Image& img) {
  std::ostringstream hdr;
  hdr << "{'descr': '<f8', 'fortran_order': False, 'shape': (";
  if (img.c == 1) {
    hdr << img.h << ", " << img.w;
  } else {
    hdr << img.c << ", " << img.h << ", " << img.w;
  }
  hdr << "), }";
  std::string header = hdr.str();
  // Pad so that magic(6)+version(2)+len(2)+header is a multiple of 64.
  const size_t base = 10;
  size_t total = base + header.size() + 1;
  size_t pad = (64 - total % 64) % 64;
  header.append(pad, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  const char magic[] = "\x93NUMPY\x01\x00";
  out.write(magic, 8);
  const uint16_t hlen = static_cast<uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&hlen), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(img.v.data()),
            static_cast<std::streamsize>(img.v.size() * sizeof(double)));
  if (!out) fail(path, "short write");
}

Image read_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open for reading");
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, "\x93NUMPY", 6) != 0) fail(path, "not an npy file");
  uint16_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 2);
  std::string header(hlen, '\0');
  in.read(header.data(), hlen);
  if (header.find("'<f8'") == std::string::npos) fail(path, "npy: expected float64");

  const auto lp = header.find('(');
  const auto rp = header.find(')');
  if (lp == std::string::npos || rp == std::string::npos) fail(path, "npy: bad shape");
  std::string shape = header.substr(lp + 1, rp - lp - 1);
  std::vector<int> dims;
  std::stringstream ss(shape);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.find_first_not_of(" \t") == std::string::npos) continue;
    dims.push_back(std::stoi(tok));
  }
  Image img;
  if (dims.size() == 2) {
    img = Image(1, dims[0], dims[1]);
  } else if (dims.size() == 3) {
    img = Image(dims[0], dims[1], dims[2]);
  } else {
    fail(path, "npy: expected 2 or 3 dims");
  }
  in.read(reinterpret_cast<char*>(img.v.data()),
          static_cast<std::streamsize>(img.v.size() * sizeof(double)));
  if (!in) fail(path, "npy: short read");
  return img;
}

uint32_t crc32_bytes(const void* data, size_t n, uint32_t seed) {
  return static_cast<uint32_t>(
      ::crc32(seed, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  out << text;
  if (!out) fail(path, "short write");
}

}  // namespace agddad
