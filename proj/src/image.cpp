#include "bfr/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "bfr/error.hpp"

namespace bfr {

std::vector<double> ImageTensor::plane(std::size_t c) const {
  std::vector<double> out(width * height);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = data[i * channels + c];
  return out;
}

void ImageTensor::set_plane(std::size_t c, std::span<const double> values) {
  for (std::size_t i = 0; i < width * height; ++i) data[i * channels + c] = values[i];
}

void ImageTensor::clamp() {
  for (double& v : data) v = std::clamp(v, 0.0, 1.0);
}

std::uint8_t quantize(double v) {
  const double s = std::floor(v * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(s, 0.0, 255.0));
}

std::vector<std::uint8_t> to_bytes(const ImageTensor& img) {
  std::vector<std::uint8_t> out(img.data.size());
  std::transform(img.data.begin(), img.data.end(), out.begin(), quantize);
  return out;
}

ImageTensor from_bytes(std::size_t width, std::size_t height, std::span<const std::uint8_t> rgb) {
  ImageTensor img(width, height, 3);
  if (rgb.size() != img.data.size()) throw DimensionError("from_bytes: expected w*h*3 bytes");
  for (std::size_t i = 0; i < rgb.size(); ++i) img.data[i] = rgb[i] / 255.0;
  return img;
}

namespace {

struct HeaderReader {
  std::span<const std::uint8_t> bytes;
  const std::string& name;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(name + ": " + what + " at byte offset " + std::to_string(pos));
  }

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      const auto c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::size_t number() {
    skip_space_and_comments();
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9') fail("expected integer");
    std::size_t v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1u << 24) fail("header value too large");
      ++pos;
    }
    return v;
  }
};

}  // namespace

ImageTensor decode_pnm(std::span<const std::uint8_t> bytes, const std::string& name) {
  HeaderReader rd{bytes, name};
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5'))
    rd.fail("not a binary PPM/PGM (expected P6 or P5 magic)");
  const bool rgb = bytes[1] == '6';
  rd.pos = 2;
  const std::size_t w = rd.number();
  const std::size_t h = rd.number();
  const std::size_t maxval = rd.number();
  if (w == 0 || h == 0) rd.fail("zero image extent");
  if (maxval != 255) rd.fail("unsupported maxval " + std::to_string(maxval));
  if (rd.pos >= bytes.size()) rd.fail("missing raster");
  ++rd.pos;  // single whitespace before raster
  const std::size_t need = w * h * (rgb ? 3 : 1);
  if (bytes.size() - rd.pos < need) {
    rd.pos = bytes.size();
    rd.fail("truncated raster (need " + std::to_string(need) + " bytes)");
  }
  ImageTensor img(w, h, 3);
  const auto* px = bytes.data() + rd.pos;
  if (rgb) {
    for (std::size_t i = 0; i < need; ++i) img.data[i] = px[i] / 255.0;
  } else {
    for (std::size_t i = 0; i < need; ++i)
      for (std::size_t c = 0; c < 3; ++c) img.data[i * 3 + c] = px[i] / 255.0;
  }
  return img;
}

ImageTensor load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pnm(bytes, path.string());
}

std::vector<std::uint8_t> encode_ppm(const ImageTensor& img) {
  if (img.channels != 3) throw DimensionError("encode_ppm: expected 3 channels");
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto px = to_bytes(img);
  out.insert(out.end(), px.begin(), px.end());
  return out;
}

void save_image(const ImageTensor& img, const std::filesystem::path& path) {
  const auto bytes = encode_ppm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  return out;
}

std::string image_id(const std::filesystem::path& path) { return path.stem().string(); }

}  // namespace bfr

namespace bfr {

std::pair<std::size_t, std::size_t> image_dimensions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> head(512);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  const std::string name = path.string();
  HeaderReader rd{head, name};
  if (head.size() < 2 || head[0] != 'P' || (head[1] != '6' && head[1] != '5'))
    rd.fail("not a binary PPM/PGM (expected P6 or P5 magic)");
  rd.pos = 2;
  const std::size_t w = rd.number();
  const std::size_t h = rd.number();
  return {w, h};
}

}  // namespace bfr
