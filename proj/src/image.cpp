#include "memesieve/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "memesieve/common.hpp"

namespace memesieve {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
}

void validate_image(const ImageInput& image) {
  if (image.height < 1 || image.width < 1 || image.channels < 1) {
    throw Error(ErrorKind::invalid_input, "image must have positive height, width and channels");
  }
  const auto expected = static_cast<std::size_t>(image.height) * image.width * image.channels;
  if (image.pixels.size() != expected) {
    throw Error(ErrorKind::invalid_input, "image pixel buffer size does not match H x W x C");
  }
  for (float v : image.pixels) {
    if (!std::isfinite(v) || v < 0.0F || v > 1.0F) {
      throw Error(ErrorKind::invalid_input, "image pixel outside [0,1] or non-finite");
    }
  }
}

ImageInput resize_bilinear(const ImageInput& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  ImageInput out(height, width, image.channels);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int y = 0; y < height; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    int y0 = static_cast<int>(std::floor(fy));
    int y1 = std::min(y0 + 1, image.height - 1);
    double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      int x0 = static_cast<int>(std::floor(fx));
      int x1 = std::min(x0 + 1, image.width - 1);
      double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
        double bot = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

namespace {

std::uint8_t quantize8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0F, 1.0F) * 255.0F));
}

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

// Rows are written with fixed compression settings and no time chunk, so
// identical pixels always produce identical bytes.
void write_png_rows(const std::filesystem::path& path, int width, int height, int bit_depth,
                    int color_type, const std::vector<std::vector<png_byte>>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error(ErrorKind::io, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorKind::io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorKind::io, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::io, "libpng error while writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (const auto& row : rows) png_write_row(png, row.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> read_png_simplified(const std::filesystem::path& path, png_uint_32 format,
                                              int& width, int& height) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw Error(ErrorKind::not_found, "cannot read png " + path.string() + ": " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorKind::io, "cannot decode png " + path.string() + ": " + img.message);
  }
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
  return buffer;
}

}  // namespace

std::string image_digest(const ImageInput& image) {
  Fnv1a h;
  h.update_pod(static_cast<std::int32_t>(image.height));
  h.update_pod(static_cast<std::int32_t>(image.width));
  h.update_pod(static_cast<std::int32_t>(image.channels));
  for (float v : image.pixels) h.update_pod(quantize8(v));
  return h.hex();
}

ImageInput read_png(const std::filesystem::path& path) {
  int w = 0;
  int h = 0;
  auto buf = read_png_simplified(path, PNG_FORMAT_RGB, w, h);
  ImageInput out(h, w, 3);
  for (std::size_t i = 0; i < buf.size(); ++i) out.pixels[i] = static_cast<float>(buf[i]) / 255.0F;
  return out;
}

void write_png(const std::filesystem::path& path, const ImageInput& image) {
  if (image.channels != 3 && image.channels != 1) {
    throw Error(ErrorKind::invalid_input, "write_png supports 1 or 3 channels");
  }
  std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) {
    auto& row = rows[static_cast<std::size_t>(y)];
    row.resize(static_cast<std::size_t>(image.width) * image.channels);
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        row[static_cast<std::size_t>(x) * image.channels + c] = quantize8(image.at(y, x, c));
      }
    }
  }
  write_png_rows(path, image.width, image.height, 8,
                 image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, rows);
}

Mask read_mask_png(const std::filesystem::path& path) {
  int w = 0;
  int h = 0;
  auto buf = read_png_simplified(path, PNG_FORMAT_GRAY, w, h);
  Mask m(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) m.data[i] = buf[i] > 127 ? 1 : 0;
  return m;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(mask.height));
  for (int y = 0; y < mask.height; ++y) {
    auto& row = rows[static_cast<std::size_t>(y)];
    row.resize(static_cast<std::size_t>(mask.width));
    for (int x = 0; x < mask.width; ++x) row[static_cast<std::size_t>(x)] = mask.at(y, x) ? 255 : 0;
  }
  write_png_rows(path, mask.width, mask.height, 8, PNG_COLOR_TYPE_GRAY, rows);
}

void write_heatmap_png16(const std::filesystem::path& path, const Heatmap& heatmap) {
  std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(heatmap.height));
  for (int y = 0; y < heatmap.height; ++y) {
    auto& row = rows[static_cast<std::size_t>(y)];
    row.resize(static_cast<std::size_t>(heatmap.width) * 2);
    for (int x = 0; x < heatmap.width; ++x) {
      auto v = static_cast<std::uint16_t>(std::lround(std::clamp(heatmap.at(y, x), 0.0, 1.0) * 65535.0));
      row[static_cast<std::size_t>(x) * 2] = static_cast<png_byte>(v >> 8);  // PNG is big-endian
      row[static_cast<std::size_t>(x) * 2 + 1] = static_cast<png_byte>(v & 0xFF);
    }
  }
  write_png_rows(path, heatmap.width, heatmap.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

void write_npy(const std::filesystem::path& path, const Heatmap& heatmap) {
  std::ostringstream header;
  header << "{'descr': '<f8', 'fortran_order': False, 'shape': (" << heatmap.height << ", "
         << heatmap.width << "), }";
  std::string h = header.str();
  // magic(6) + version(2) + len(2) + header must be a multiple of 64, ending in '\n'.
  std::size_t total = 10 + h.size() + 1;
  h.append((64 - total % 64) % 64, ' ');
  h.push_back('\n');

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out.write("\x93NUMPY", 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  auto len = static_cast<std::uint16_t>(h.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xFF), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(heatmap.values.data()),
            static_cast<std::streamsize>(heatmap.values.size() * sizeof(double)));
}

Heatmap read_npy(const std::filesystem::path& path) {
  std::string raw = read_text_file(path);
  if (raw.size() < 10 || raw.compare(0, 6, "\x93NUMPY") != 0) {
    throw Error(ErrorKind::invalid_input, "not an npy file: " + path.string());
  }
  std::size_t len = static_cast<std::uint8_t>(raw[8]) | (static_cast<std::size_t>(static_cast<std::uint8_t>(raw[9])) << 8);
  std::string header = raw.substr(10, len);
  if (header.find("'<f8'") == std::string::npos || header.find("False") == std::string::npos) {
    throw Error(ErrorKind::invalid_input, "unsupported npy layout in " + path.string());
  }
  auto open = header.find('(');
  auto close = header.find(')');
  int h = 0;
  int w = 0;
  if (open == std::string::npos || close == std::string::npos ||
      std::sscanf(header.substr(open, close - open + 1).c_str(), "(%d, %d)", &h, &w) != 2) {
    throw Error(ErrorKind::invalid_input, "npy file is not two-dimensional: " + path.string());
  }
  Heatmap out(h, w);
  const std::size_t bytes = out.values.size() * sizeof(double);
  if (raw.size() < 10 + len + bytes) throw Error(ErrorKind::invalid_input, "truncated npy " + path.string());
  std::memcpy(out.values.data(), raw.data() + 10 + len, bytes);
  return out;
}

}  // namespace memesieve
