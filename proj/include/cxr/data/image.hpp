#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cxr {

// 8-bit grayscale, row-major.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, std::uint8_t fill = 0);
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB
};

// Binary PGM (P5, maxval 255) or 8-bit grayscale PNG, by signature.
ImageBuffer load_image(const std::filesystem::path& path);

void write_pgm(const ImageBuffer& image, const std::filesystem::path& path);
// 16-bit binary PGM, big-endian samples.
void write_pgm16(int width, int height, const std::vector<std::uint16_t>& samples,
                 const std::filesystem::path& path);
std::vector<std::uint16_t> read_pgm16(const std::filesystem::path& path, int& width, int& height);
void write_png(const ImageBuffer& image, const std::filesystem::path& path);
void write_png(const RgbImage& image, const std::filesystem::path& path);

}  // namespace cxr
