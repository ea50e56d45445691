#pragma once

// 8-bit PNG (via libpng) and binary PPM/PGM reading and writing.
// Conversion: v / 255 on the way in, round-half-away-from-zero(v * 255) out.

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "aba/tensor.hpp"

namespace aba::io {

inline std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::round(c));  // std::round is half-away-from-zero
}

inline double from_byte(std::uint8_t b) { return b / 255.0; }

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open(const std::filesystem::path& p, const char* mode) {
  FilePtr f(std::fopen(p.string().c_str(), mode));
  if (!f) throw LoadError("cannot open " + p.string());
  return f;
}

}  // namespace detail

inline Frame read_png(const std::filesystem::path& path) {
  auto fp = detail::open(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw LoadError(path.string() + ": not a PNG file");
  // Declared before setjmp so a libpng longjmp never skips their destructors.
  std::vector<png_byte> buf;
  std::vector<png_bytep> rows;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw LoadError(path.string() + ": libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError(path.string() + ": corrupt PNG");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int ch = png_get_channels(png, info);
  buf.resize(static_cast<std::size_t>(png_get_rowbytes(png, info)) * h);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * png_get_rowbytes(png, info);
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  if (ch != 1 && ch != 3) throw LoadError(path.string() + ": unsupported channel count " + std::to_string(ch));
  Frame f(ch, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) f.at(c, y, x) = from_byte(rows[y][x * ch + c]);
  return f;
}

inline void write_png(const std::filesystem::path& path, const Frame& f) {
  require(f.channels == 1 || f.channels == 3, "write_png: frame must have 1 or 3 channels");
  auto fp = detail::open(path, "wb");
  std::vector<png_byte> row(static_cast<std::size_t>(f.width) * f.channels);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw LoadError(path.string() + ": libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw LoadError(path.string() + ": PNG write failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, f.width, f.height, 8, f.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < f.height; ++y) {
    for (int x = 0; x < f.width; ++x)
      for (int c = 0; c < f.channels; ++c) row[x * f.channels + c] = to_byte(f.at(c, y, x));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Binary P5 (gray) / P6 (RGB), maxval 255.
inline Frame read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw LoadError(path.string() + ": expected P5 or P6, got '" + magic + "'");
  auto next_int = [&]() {
    int v = 0;
    while (in >> std::ws && in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
    }
    if (!(in >> v)) throw LoadError(path.string() + ": malformed header");
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw LoadError(path.string() + ": only maxval 255 is supported");
  in.get();
  const int ch = magic == "P5" ? 1 : 3;
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * ch);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw LoadError(path.string() + ": truncated pixel data");
  Frame f(ch, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) f.at(c, y, x) = from_byte(buf[(static_cast<std::size_t>(y) * w + x) * ch + c]);
  return f;
}

inline void write_pnm(const std::filesystem::path& path, const Frame& f) {
  require(f.channels == 1 || f.channels == 3, "write_pnm: frame must have 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  out << (f.channels == 1 ? "P5" : "P6") << "\n" << f.width << " " << f.height << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(f.width) * f.height * f.channels);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x)
      for (int c = 0; c < f.channels; ++c)
        buf[(static_cast<std::size_t>(y) * f.width + x) * f.channels + c] = to_byte(f.at(c, y, x));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

/// Dispatches on extension: .png, .ppm/.pgm/.pnm.
inline Frame read_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return read_pnm(path);
  return read_png(path);
}

inline void write_image(const std::filesystem::path& path, const Frame& f) {
  const auto ext = path.extension().string();
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return write_pnm(path, f);
  write_png(path, f);
}

// Little-endian binary helpers for the FLOWv1 / BPRMv1 / JAMAv1 formats.
namespace bin {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw LoadError(what + ": truncated header");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(out, u);
}

inline double get_f32(std::istream& in, const std::string& what) {
  const std::uint32_t u = get_u32(in, what);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

/// 6-byte magic padded to 8 bytes with zeros.
inline void put_magic(std::ostream& out, const char (&magic)[7]) {
  out.write(magic, 6);
  const char pad[2] = {0, 0};
  out.write(pad, 2);
}

inline void expect_magic(std::istream& in, const char (&magic)[7], const std::string& what) {
  char buf[8];
  if (!in.read(buf, 8) || std::string(buf, 6) != std::string(magic, 6))
    throw LoadError(what + ": bad magic, expected " + std::string(magic, 6));
}

}  // namespace bin

}  // namespace aba::io
