#include "cxr/data/image.hpp"

#include <png.h>

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "cxr/common/error.hpp"

namespace cxr {

ImageBuffer::ImageBuffer(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
  require(w > 0 && h > 0, ErrorKind::kInvalidArgument, "image extents must be positive");
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Parses the PNM header; returns the offset of the first sample byte.
std::size_t parse_pnm_header(const std::vector<std::uint8_t>& bytes, const std::string& magic,
                             int& width, int& height, int& maxval, const std::string& name) {
  std::size_t pos = 2;
  require(bytes.size() >= 2 && std::memcmp(bytes.data(), magic.data(), 2) == 0,
          ErrorKind::kUnsupportedFormat, name + ": not a " + magic + " file");
  int fields[3];
  for (int& field : fields) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    require(pos < bytes.size() && std::isdigit(bytes[pos]), ErrorKind::kParse,
            name + ": truncated or malformed PGM header");
    long value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos++] - '0');
      require(value < (1L << 30), ErrorKind::kParse, name + ": PGM header value too large");
    }
    field = static_cast<int>(value);
  }
  require(pos < bytes.size() && std::isspace(bytes[pos]), ErrorKind::kParse,
          name + ": truncated PGM header");
  ++pos;
  width = fields[0];
  height = fields[1];
  maxval = fields[2];
  require(width > 0 && height > 0, ErrorKind::kParse, name + ": PGM extents must be positive");
  return pos;
}

ImageBuffer decode_pgm(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  int width, height, maxval;
  const std::size_t offset = parse_pnm_header(bytes, "P5", width, height, maxval, name);
  require(maxval == 255, ErrorKind::kUnsupportedFormat,
          name + ": only 8-bit PGM (maxval 255) is supported, got maxval " + std::to_string(maxval));
  const std::size_t count = static_cast<std::size_t>(width) * height;
  require(bytes.size() - offset >= count, ErrorKind::kParse, name + ": truncated PGM pixel data");
  ImageBuffer image(width, height);
  std::memcpy(image.pixels.data(), bytes.data() + offset, count);
  return image;
}

struct PngReader {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void png_read_callback(png_structp png, png_bytep out, png_size_t length) {
  auto* reader = static_cast<PngReader*>(png_get_io_ptr(png));
  if (reader->pos + length > reader->bytes->size()) png_error(png, "truncated PNG");
  std::memcpy(out, reader->bytes->data() + reader->pos, length);
  reader->pos += length;
}

ImageBuffer decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, ErrorKind::kIo, "libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  PngReader reader{&bytes, 0};
  ImageBuffer image;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kParse, name + ": corrupt or truncated PNG");
  }
  png_set_read_fn(png, &reader, png_read_callback);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY || depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kUnsupportedFormat,
         name + ": only 8-bit grayscale PNG is supported (color type " + std::to_string(color) +
             ", depth " + std::to_string(depth) + ")");
  }
  image = ImageBuffer(static_cast<int>(png_get_image_width(png, info)),
                      static_cast<int>(png_get_image_height(png, info)));
  rows.resize(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) rows[y] = image.pixels.data() + static_cast<std::size_t>(y) * image.width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png_rows(int width, int height, int color_type, const std::uint8_t* data, int channels,
                    const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  require(file != nullptr, ErrorKind::kIo, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kIo, "failed writing PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(data + static_cast<std::size_t>(y) * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_bytes(const std::filesystem::path& path, const std::string& header, const void* data,
                 std::size_t size) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  require(out.good(), ErrorKind::kIo, "failed writing " + path.string());
}

}  // namespace

ImageBuffer load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  static const std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0) {
    return decode_png(bytes, path.string());
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes, path.string());
  fail(ErrorKind::kUnsupportedFormat, path.string() + ": not a binary PGM or PNG file");
}

void write_pgm(const ImageBuffer& image, const std::filesystem::path& path) {
  std::ostringstream header;
  header << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  write_bytes(path, header.str(), image.pixels.data(), image.pixels.size());
}

void write_pgm16(int width, int height, const std::vector<std::uint16_t>& samples,
                 const std::filesystem::path& path) {
  require(samples.size() == static_cast<std::size_t>(width) * height, ErrorKind::kShapeMismatch,
          "write_pgm16: sample count mismatch");
  std::vector<std::uint8_t> bytes;
  bytes.reserve(samples.size() * 2);
  for (auto s : samples) {
    bytes.push_back(static_cast<std::uint8_t>(s >> 8));
    bytes.push_back(static_cast<std::uint8_t>(s & 0xff));
  }
  std::ostringstream header;
  header << "P5\n" << width << ' ' << height << "\n65535\n";
  write_bytes(path, header.str(), bytes.data(), bytes.size());
}

std::vector<std::uint16_t> read_pgm16(const std::filesystem::path& path, int& width, int& height) {
  const auto bytes = read_file(path);
  int maxval;
  const std::size_t offset = parse_pnm_header(bytes, "P5", width, height, maxval, path.string());
  require(maxval == 65535, ErrorKind::kUnsupportedFormat, path.string() + ": expected 16-bit PGM");
  const std::size_t count = static_cast<std::size_t>(width) * height;
  require(bytes.size() - offset >= 2 * count, ErrorKind::kParse, path.string() + ": truncated PGM");
  std::vector<std::uint16_t> samples(count);
  for (std::size_t i = 0; i < count; ++i) {
    samples[i] = static_cast<std::uint16_t>((bytes[offset + 2 * i] << 8) | bytes[offset + 2 * i + 1]);
  }
  return samples;
}

void write_png(const ImageBuffer& image, const std::filesystem::path& path) {
  write_png_rows(image.width, image.height, PNG_COLOR_TYPE_GRAY, image.pixels.data(), 1, path);
}

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  require(image.pixels.size() == static_cast<std::size_t>(image.width) * image.height * 3,
          ErrorKind::kShapeMismatch, "write_png: RGB buffer size mismatch");
  write_png_rows(image.width, image.height, PNG_COLOR_TYPE_RGB, image.pixels.data(), 3, path);
}

}  // namespace cxr
