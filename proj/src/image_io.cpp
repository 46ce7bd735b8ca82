#include "photoshape/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "photoshape/error.hpp"

namespace photoshape::io {
namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
  if (!f) throw Error("cannot open '" + path.string() + "'");
  return f;
}

struct PngRead {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngRead() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWrite {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWrite() { png_destroy_write_struct(&png, &info); }
};

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw Error(std::string("png: ") + msg); }
void png_warn(png_structp, png_const_charp) {}

// Decodes to 8- or 16-bit samples with the requested transforms applied.
struct RawPng {
  int width = 0, height = 0, channels = 0, depth = 0;
  std::vector<unsigned char> bytes;
};

RawPng read_png_raw(const std::filesystem::path& path, bool keep16) {
  auto file = open_file(path, "rb");
  PngRead r;
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  r.info = png_create_info_struct(r.png);
  png_init_io(r.png, file.get());
  png_read_info(r.png, r.info);

  const auto color = png_get_color_type(r.png, r.info);
  const int bit_depth = png_get_bit_depth(r.png, r.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
  if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
  if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
  if (bit_depth == 16) {
    if (keep16) png_set_swap(r.png);  // host little-endian order
    else png_set_strip_16(r.png);
  }
  png_read_update_info(r.png, r.info);

  RawPng raw;
  raw.width = static_cast<int>(png_get_image_width(r.png, r.info));
  raw.height = static_cast<int>(png_get_image_height(r.png, r.info));
  raw.channels = png_get_channels(r.png, r.info);
  raw.depth = png_get_bit_depth(r.png, r.info);
  const std::size_t rowbytes = png_get_rowbytes(r.png, r.info);
  raw.bytes.resize(rowbytes * raw.height);
  std::vector<png_bytep> rows(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = raw.bytes.data() + y * rowbytes;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return raw;
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
  RawPng raw = read_png_raw(path, false);
  RgbImage out(raw.width, raw.height, 3);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    const unsigned char* p = &raw.bytes[i * raw.channels];
    std::array<int, 3> rgb{};
    int alpha = 255;
    if (raw.channels <= 2) {
      rgb = {p[0], p[0], p[0]};
      if (raw.channels == 2) alpha = p[1];
    } else {
      rgb = {p[0], p[1], p[2]};
      if (raw.channels == 4) alpha = p[3];
    }
    for (int c = 0; c < 3; ++c)
      out.data[i * 3 + c] = static_cast<std::uint8_t>((rgb[c] * alpha + 255 * (255 - alpha) + 127) / 255);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_fail(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

RgbImage read_jpeg(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_fail;
  RgbImage out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error("jpeg: " + std::string(err.message) + " in '" + path.string() + "'");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out = RgbImage(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height), 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = &out.data[static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3];
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

void write_png_raw(const std::filesystem::path& path, int width, int height, int color_type,
                   int bit_depth, const unsigned char* data, std::size_t rowbytes) {
  auto file = open_file(path, "wb");
  PngWrite w;
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  w.info = png_create_info_struct(w.png);
  png_init_io(w.png, file.get());
  png_set_compression_level(w.png, 6);
  png_set_IHDR(w.png, w.info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  if (bit_depth == 16) png_set_swap(w.png);
  for (int y = 0; y < height; ++y)
    png_write_row(w.png, const_cast<png_bytep>(data + static_cast<std::size_t>(y) * rowbytes));
  png_write_end(w.png, nullptr);
}

}  // namespace

bool is_image_file(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

RgbImage read_image(const std::filesystem::path& path) {
  unsigned char sig[8] = {};
  {
    auto f = open_file(path, "rb");
    if (std::fread(sig, 1, sizeof sig, f.get()) < 3) throw Error("truncated image '" + path.string() + "'");
  }
  if (png_sig_cmp(sig, 0, 8) == 0) return read_png_rgb(path);
  if (sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return read_jpeg(path);
  throw Error("unsupported image format '" + path.string() + "'");
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  if (image.channels != 3) throw Error("write_png expects an RGB image");
  write_png_raw(path, image.width, image.height, PNG_COLOR_TYPE_RGB, 8, image.data.data(),
                static_cast<std::size_t>(image.width) * 3);
}

void write_png(const std::filesystem::path& path, const Mask& mask) {
  std::vector<unsigned char> bytes(mask.values.size());
  std::transform(mask.values.begin(), mask.values.end(), bytes.begin(),
                 [](std::uint8_t v) { return v ? 255 : 0; });
  write_png_raw(path, mask.width, mask.height, PNG_COLOR_TYPE_GRAY, 8, bytes.data(),
                static_cast<std::size_t>(mask.width));
}

Mask read_mask_png(const std::filesystem::path& path) {
  RawPng raw = read_png_raw(path, false);
  Mask m(raw.width, raw.height);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = raw.bytes[i * raw.channels] >= 128 ? 1 : 0;
  return m;
}

void write_png(const std::filesystem::path& path, const LabelMap& labels) {
  write_png_raw(path, labels.width, labels.height, PNG_COLOR_TYPE_GRAY, 16,
                reinterpret_cast<const unsigned char*>(labels.labels.data()),
                static_cast<std::size_t>(labels.width) * 2);
}

LabelMap read_labels_png(const std::filesystem::path& path, int label_count, LabelKind kind) {
  RawPng raw = read_png_raw(path, true);
  if (raw.channels != 1 || raw.depth != 16) throw Error("'" + path.string() + "' is not a 16-bit label map");
  LabelMap map(raw.width, raw.height, label_count, kind);
  std::memcpy(map.labels.data(), raw.bytes.data(), map.labels.size() * 2);
  return map;
}

void write_pfm(const std::filesystem::path& path, int width, int height, const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "'");
  out << "Pf\n" << width << " " << height << "\n-1.0\n";
  for (int y = height - 1; y >= 0; --y)
    out.write(reinterpret_cast<const char*>(&values[static_cast<std::size_t>(y) * width]),
              static_cast<std::streamsize>(width * sizeof(float)));
}

std::vector<float> read_pfm(const std::filesystem::path& path, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string magic;
  double scale = 0.0;
  in >> magic >> width >> height >> scale;
  in.get();
  if (magic != "Pf" || scale >= 0.0) throw Error("'" + path.string() + "' is not a little-endian grayscale PFM");
  std::vector<float> values(static_cast<std::size_t>(width) * height);
  for (int y = height - 1; y >= 0; --y)
    in.read(reinterpret_cast<char*>(&values[static_cast<std::size_t>(y) * width]),
            static_cast<std::streamsize>(width * sizeof(float)));
  if (!in) throw Error("truncated PFM '" + path.string() + "'");
  return values;
}

}  // namespace photoshape::io
