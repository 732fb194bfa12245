#include <png.h>

#include <cstring>

#include "common/error.hpp"
#include "data/image.hpp"

namespace cactus::data {

namespace {

// libpng's simplified API reports errors through png_image.message instead of
// longjmp, so no C frames are unwound by exceptions.
png_image make_header(int width, int height, png_uint_32 format) {
  png_image header;
  std::memset(&header, 0, sizeof header);
  header.version = PNG_IMAGE_VERSION;
  header.width = static_cast<png_uint_32>(width);
  header.height = static_cast<png_uint_32>(height);
  header.format = format;
  return header;
}

void write_file(const std::filesystem::path& path, int width, int height, png_uint_32 format,
                const std::uint8_t* pixels) {
  png_image header = make_header(width, height, format);
  if (!png_image_write_to_file(&header, path.c_str(), 0, pixels, 0, nullptr))
    fail(ErrorCode::Io, "cannot write " + path.string() + ": " + header.message);
}

std::vector<std::uint8_t> write_memory(int width, int height, png_uint_32 format,
                                       const std::uint8_t* pixels) {
  png_image header = make_header(width, height, format);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&header, nullptr, &size, 0, pixels, 0, nullptr))
    fail(ErrorCode::Internal, std::string("png encode: ") + header.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&header, out.data(), &size, 0, pixels, 0, nullptr))
    fail(ErrorCode::Internal, std::string("png encode: ") + header.message);
  out.resize(size);
  return out;
}

}  // namespace

GrayImage read_png_gray(const std::filesystem::path& path) {
  png_image header;
  std::memset(&header, 0, sizeof header);
  header.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&header, path.c_str()))
    fail(ErrorCode::Io, "cannot read " + path.string() + ": " + header.message);
  header.format = PNG_FORMAT_GRAY;
  GrayImage image(static_cast<int>(header.width), static_cast<int>(header.height));
  if (!png_image_finish_read(&header, nullptr, image.pixels.data(), 0, nullptr)) {
    png_image_free(&header);
    fail(ErrorCode::Format, "cannot decode " + path.string() + ": " + header.message);
  }
  if (image.empty()) fail(ErrorCode::Format, path.string() + " has no pixels");
  return image;
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  write_file(path, image.width, image.height, PNG_FORMAT_GRAY, image.pixels.data());
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write_file(path, image.width, image.height, PNG_FORMAT_RGB, image.pixels.data());
}

std::vector<std::uint8_t> encode_png(const GrayImage& image) {
  return write_memory(image.width, image.height, PNG_FORMAT_GRAY, image.pixels.data());
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  return write_memory(image.width, image.height, PNG_FORMAT_RGB, image.pixels.data());
}

}  // namespace cactus::data
