#include "vstain/image.hpp"

#include <png.h>
#include <tiffio.h>

#include <cctype>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace vstain {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* where = static_cast<std::string*>(png_get_error_ptr(png));
  *where = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

struct PngRead {
  int width = 0, height = 0, channels = 0, depth = 0;
  std::vector<std::uint8_t> bytes;  // rows as stored, 16-bit in native order
};

PngRead read_png_raw(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  PngRead out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("PNG read failed for '" + path.string() + "': " + err);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  out.depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && out.depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (out.depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = out.bytes.data() + stride * static_cast<std::size_t>(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png_raw(const std::filesystem::path& path, int width, int height, int channels, int depth,
                   const std::uint8_t* bytes) {
  FilePtr f = open_file(path, "wb");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed for '" + path.string() + "': " + err);
  }
  int color = PNG_COLOR_TYPE_GRAY;
  if (channels == 3) color = PNG_COLOR_TYPE_RGB;
  if (channels == 4) color = PNG_COLOR_TYPE_RGBA;
  if (channels == 2) color = PNG_COLOR_TYPE_GRAY_ALPHA;
  png_init_io(png, f.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (depth == 16) png_set_swap(png);
  const std::size_t stride = static_cast<std::size_t>(width) * channels * (depth / 8);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes + stride * static_cast<std::size_t>(y)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::string lower_ext(const std::filesystem::path& path) {
  std::string e = path.extension().string();
  for (auto& ch : e) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return e;
}

void tiff_quiet(const char*, const char*, va_list) {}

}  // namespace

Image8 read_png8(const std::filesystem::path& path) {
  PngRead raw = read_png_raw(path);
  if (raw.depth != 8) throw IoError("'" + path.string() + "' is not an 8-bit PNG");
  Image8 img(raw.width, raw.height, raw.channels);
  std::copy(raw.bytes.begin(), raw.bytes.end(), img.data());
  return img;
}

Gray16 read_png16(const std::filesystem::path& path) {
  PngRead raw = read_png_raw(path);
  if (raw.channels != 1) throw IoError("'" + path.string() + "' is not a single-channel PNG");
  Gray16 img(raw.width, raw.height, 1);
  if (raw.depth == 16) {
    std::memcpy(img.data(), raw.bytes.data(), raw.bytes.size());
  } else {
    // 8-bit grey promoted by bit replication so 255 maps to 65535.
    for (std::size_t i = 0; i < raw.bytes.size(); ++i) img.values()[i] = static_cast<std::uint16_t>(raw.bytes[i] * 257);
  }
  return img;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  write_png_raw(path, image.width(), image.height(), image.channels(), 8, image.data());
}

void write_png(const std::filesystem::path& path, const Gray16& image) {
  if (image.channels() != 1) throw InputError("16-bit PNG output must be single channel");
  write_png_raw(path, image.width(), image.height(), 1, 16, reinterpret_cast<const std::uint8_t*>(image.data()));
}

std::vector<Gray16> read_tiff16(const std::filesystem::path& path) {
  TIFFSetWarningHandler(tiff_quiet);
  std::unique_ptr<TIFF, void (*)(TIFF*)> tif(TIFFOpen(path.c_str(), "r"), TIFFClose);
  if (!tif) throw IoError("cannot open TIFF '" + path.string() + "'");
  std::vector<Gray16> pages;
  do {
    std::uint32_t w = 0, h = 0;
    std::uint16_t bits = 0, spp = 1;
    TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &w);
    TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &h);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_BITSPERSAMPLE, &bits);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLESPERPIXEL, &spp);
    if (spp != 1 || (bits != 16 && bits != 8)) {
      throw IoError("'" + path.string() + "': only 8/16-bit single-channel TIFF is supported");
    }
    Gray16 page(static_cast<int>(w), static_cast<int>(h), 1);
    std::vector<std::uint8_t> line(static_cast<std::size_t>(TIFFScanlineSize(tif.get())));
    for (std::uint32_t y = 0; y < h; ++y) {
      if (TIFFReadScanline(tif.get(), line.data(), y) < 0) throw IoError("TIFF scanline read failed in '" + path.string() + "'");
      for (std::uint32_t x = 0; x < w; ++x) {
        std::uint16_t v = 0;
        if (bits == 16) {
          std::memcpy(&v, line.data() + 2 * x, 2);
        } else {
          v = static_cast<std::uint16_t>(line[x] * 257);
        }
        page.at(static_cast<int>(x), static_cast<int>(y)) = v;
      }
    }
    pages.push_back(std::move(page));
  } while (TIFFReadDirectory(tif.get()));
  return pages;
}

void write_tiff16(const std::filesystem::path& path, const std::vector<Gray16>& pages) {
  std::unique_ptr<TIFF, void (*)(TIFF*)> tif(TIFFOpen(path.c_str(), "w"), TIFFClose);
  if (!tif) throw IoError("cannot create TIFF '" + path.string() + "'");
  for (const auto& page : pages) {
    TIFFSetField(tif.get(), TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(page.width()));
    TIFFSetField(tif.get(), TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(page.height()));
    TIFFSetField(tif.get(), TIFFTAG_BITSPERSAMPLE, 16);
    TIFFSetField(tif.get(), TIFFTAG_SAMPLESPERPIXEL, 1);
    TIFFSetField(tif.get(), TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
    TIFFSetField(tif.get(), TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    TIFFSetField(tif.get(), TIFFTAG_COMPRESSION, COMPRESSION_NONE);
    TIFFSetField(tif.get(), TIFFTAG_ROWSPERSTRIP, static_cast<std::uint32_t>(page.height()));
    if (pages.size() > 1) TIFFSetField(tif.get(), TIFFTAG_SUBFILETYPE, FILETYPE_PAGE);
    std::vector<std::uint16_t> line(static_cast<std::size_t>(page.width()));
    for (int y = 0; y < page.height(); ++y) {
      for (int x = 0; x < page.width(); ++x) line[static_cast<std::size_t>(x)] = page.at(x, y);
      if (TIFFWriteScanline(tif.get(), line.data(), static_cast<std::uint32_t>(y), 0) < 0) {
        throw IoError("TIFF write failed for '" + path.string() + "'");
      }
    }
    TIFFWriteDirectory(tif.get());
  }
}

Gray16 read_gray16(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".tif" || ext == ".tiff") return read_tiff16(path).front();
  return read_png16(path);
}

void write_gray16(const std::filesystem::path& path, const Gray16& image) {
  const std::string ext = lower_ext(path);
  if (ext == ".tif" || ext == ".tiff") {
    write_tiff16(path, {image});
  } else {
    write_png(path, image);
  }
}

std::string file_fingerprint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace vstain
