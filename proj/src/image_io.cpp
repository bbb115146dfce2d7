#include "tissueseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tissueseg/errors.hpp"

namespace tissueseg {

namespace fs = std::filesystem;

namespace {

struct PngImage {
  png_image image;
  PngImage() {
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

bool is_png(const std::string& bytes) {
  return bytes.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0;
}

// Decodes `bytes` into the requested simplified-API format.
std::vector<std::uint8_t> decode_png(const std::string& bytes, png_uint_32 format,
                                     const fs::path& path, int& width, int& height) {
  PngImage png;
  if (!png_image_begin_read_from_memory(&png.image, bytes.data(), bytes.size())) {
    throw DataError("cannot decode PNG " + path.string() + ": " + png.image.message);
  }
  png.image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, buffer.data(), 0, nullptr)) {
    throw DataError("cannot decode PNG " + path.string() + ": " + png.image.message);
  }
  width = static_cast<int>(png.image.width);
  height = static_cast<int>(png.image.height);
  return buffer;
}

std::string encode_png(const void* data, int width, int height, png_uint_32 format) {
  PngImage png;
  png.image.width = static_cast<png_uint_32>(width);
  png.image.height = static_cast<png_uint_32>(height);
  png.image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png.image, nullptr, &size, 0, data, 0, nullptr)) {
    throw DataError(std::string("PNG encode failed: ") + png.image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&png.image, out.data(), &size, 0, data, 0, nullptr)) {
    throw DataError(std::string("PNG encode failed: ") + png.image.message);
  }
  out.resize(size);
  return out;
}

// Minimal PPM tokenizer that skips '#' comments.
class PpmReader {
 public:
  explicit PpmReader(const std::string& bytes) : bytes_(bytes) {}

  std::string token() {
    skip_space();
    std::string t;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      t.push_back(bytes_[pos_++]);
    }
    return t;
  }

  int number() {
    const std::string t = token();
    if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      throw DataError("malformed PPM header");
    }
    return std::stoi(t);
  }

  // Exactly one whitespace byte separates the header from binary data.
  std::size_t binary_start() const { return pos_ + 1; }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

RasterImage decode_ppm(const std::string& bytes, const fs::path& path) {
  PpmReader reader(bytes);
  const std::string magic = reader.token();
  if (magic != "P6" && magic != "P3") throw DataError("not a PPM/PNG image: " + path.string());
  const int w = reader.number();
  const int h = reader.number();
  const int maxval = reader.number();
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255) {
    throw DataError("unsupported PPM geometry or depth in " + path.string());
  }
  RasterImage img(w, h);
  const std::size_t n = img.size();
  auto scale = [maxval](int v) {
    return static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
  };
  if (magic == "P6") {
    const std::size_t start = reader.binary_start();
    if (bytes.size() < start + 3 * n) throw DataError("truncated PPM " + path.string());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        img[i][c] = scale(static_cast<unsigned char>(bytes[start + 3 * i + c]));
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        const int v = reader.number();
        if (v > maxval) throw DataError("PPM sample exceeds maxval in " + path.string());
        img[i][c] = scale(v);
      }
    }
  }
  return img;
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw DataError("write failed for " + path.string());
    }
  }
  fs::rename(tmp, path);
}

RasterImage read_image(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (!is_png(bytes)) return decode_ppm(bytes, path);
  int w = 0;
  int h = 0;
  const auto buf = decode_png(bytes, PNG_FORMAT_RGB, path, w, h);
  RasterImage img(w, h);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = {buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]};
  }
  return img;
}

void write_png(const fs::path& path, const RasterImage& img) {
  std::vector<std::uint8_t> buf(3 * img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) buf[3 * i + c] = img[i][c];
  }
  write_file_atomic(path, encode_png(buf.data(), img.width(), img.height(), PNG_FORMAT_RGB));
}

void write_ppm(const fs::path& path, const RasterImage& img) {
  std::string out = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  out.reserve(out.size() + 3 * img.size());
  for (const Rgb& px : img.pixels()) {
    for (std::uint8_t v : px) out.push_back(static_cast<char>(v));
  }
  write_file_atomic(path, out);
}

void write_png_rgba(const fs::path& path, int width, int height,
                    const std::vector<std::uint8_t>& rgba) {
  if (rgba.size() != 4u * static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw UsageError("RGBA buffer size does not match dimensions");
  }
  write_file_atomic(path, encode_png(rgba.data(), width, height, PNG_FORMAT_RGBA));
}

ClassMask read_mask_png(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (!is_png(bytes)) throw DataError("mask is not a PNG: " + path.string());
  ClassMask mask;
  mask.classes = decode_png(bytes, PNG_FORMAT_GRAY, path, mask.width, mask.height);
  return mask;
}

void write_mask_png(const fs::path& path, const ClassMask& mask) {
  write_file_atomic(path, encode_png(mask.classes.data(), mask.width, mask.height, PNG_FORMAT_GRAY));
}

void write_superpixel_map(const fs::path& path, const SuperpixelMap& sp) {
  if (sp.num_segments > 65536) throw UsageError("superpixel map exceeds 16-bit label range");
  std::vector<std::uint16_t> buf(sp.labels.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<std::uint16_t>(sp.labels[i]);
  write_file_atomic(path, encode_png(buf.data(), sp.width, sp.height, PNG_FORMAT_LINEAR_Y));
  fs::path header = path;
  header += ".txt";
  write_file_atomic(header, "num_segments " + std::to_string(sp.num_segments) + "\n");
}

SuperpixelMap read_superpixel_map(const fs::path& path) {
  fs::path header = path;
  header += ".txt";
  std::istringstream hs(read_file(header));
  std::string key;
  SuperpixelMap sp;
  if (!(hs >> key >> sp.num_segments) || key != "num_segments") {
    throw DataError("malformed superpixel header " + header.string());
  }
  const std::string bytes = read_file(path);
  if (!is_png(bytes)) throw DataError("superpixel map is not a PNG: " + path.string());
  const auto buf = decode_png(bytes, PNG_FORMAT_LINEAR_Y, path, sp.width, sp.height);
  sp.labels.resize(buf.size() / 2);
  for (std::size_t i = 0; i < sp.labels.size(); ++i) {
    std::uint16_t v;
    std::memcpy(&v, buf.data() + 2 * i, 2);
    sp.labels[i] = v;
  }
  validate_superpixel_map(sp);
  return sp;
}

}  // namespace tissueseg
