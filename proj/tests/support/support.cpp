#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>
#include <sstream>

#include "bfr/rng.hpp"

namespace bfr::testing {

namespace {

double smoothstep(double edge0, double edge1, double x) {
  const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// 1 inside the ellipse, 0 outside, with a soft rim of `soft` (normalized units).
double ellipse(double x, double y, double cx, double cy, double rx, double ry, double soft = 0.08) {
  const double d = std::sqrt((x - cx) * (x - cx) / (rx * rx) + (y - cy) * (y - cy) / (ry * ry));
  return 1.0 - smoothstep(1.0 - soft, 1.0 + soft, d);
}

struct Rgb {
  double r, g, b;
};

Rgb mix(Rgb a, Rgb b, double t) { return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t}; }

}  // namespace

ImageTensor toy_face(std::size_t size, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5eed));
  const Rgb bg0{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
  const Rgb bg1{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
  const double tone = rng.uniform(0.0, 1.0);
  const Rgb skin = mix({0.95, 0.78, 0.66}, {0.45, 0.30, 0.22}, tone);
  const Rgb hair = mix({0.08, 0.06, 0.05}, {0.75, 0.6, 0.35}, rng.uniform(0.0, 1.0) * rng.uniform(0.0, 1.0));
  const Rgb lips{0.65 + 0.2 * rng.uniform(), 0.25 + 0.1 * rng.uniform(), 0.3};
  const Rgb iris = mix({0.2, 0.35, 0.6}, {0.3, 0.2, 0.1}, rng.uniform());
  const double cx = 0.5 + rng.uniform(-0.05, 0.05), cy = 0.55 + rng.uniform(-0.04, 0.04);
  const double rx = rng.uniform(0.26, 0.32), ry = rng.uniform(0.34, 0.4);
  const double eye_dx = rng.uniform(0.1, 0.13), eye_y = cy - rng.uniform(0.06, 0.1);
  const double mouth_y = cy + rng.uniform(0.17, 0.22), mouth_w = rng.uniform(0.08, 0.13);
  const double light = rng.uniform(-0.6, 0.6);
  const double hair_line = cy - ry * rng.uniform(0.45, 0.7);

  ImageTensor img(size, size, 3);
  Rng grain(derive_seed(seed, 0x9a1));
  for (std::size_t py = 0; py < size; ++py)
    for (std::size_t px = 0; px < size; ++px) {
      const double x = (px + 0.5) / size, y = (py + 0.5) / size;
      Rgb c = mix(bg0, bg1, y);
      const double head = ellipse(x, y, cx, cy - 0.05, rx * 1.12, ry * 1.05);
      c = mix(c, hair, head);
      const double face = ellipse(x, y, cx, cy, rx, ry) * smoothstep(hair_line - 0.02, hair_line + 0.02, y);
      const double shade = 0.8 + 0.2 * std::clamp(0.5 - 0.5 * light * (x - cx) / rx, 0.0, 1.0);
      c = mix(c, {skin.r * shade, skin.g * shade, skin.b * shade}, face);
      for (int side : {-1, 1}) {
        const double ex = cx + side * eye_dx;
        const double white = ellipse(x, y, ex, eye_y, 0.055, 0.028, 0.2);
        c = mix(c, {0.92, 0.92, 0.9}, white);
        c = mix(c, iris, ellipse(x, y, ex, eye_y, 0.022, 0.022, 0.25) * white);
        c = mix(c, {0.05, 0.05, 0.05}, ellipse(x, y, ex, eye_y, 0.009, 0.009, 0.3) * white);
        c = mix(c, hair, 0.8 * ellipse(x, y, ex, eye_y - 0.055, 0.06, 0.012, 0.3) * face);
      }
      const double nose = ellipse(x, y, cx + 0.01 * light, cy + 0.06, 0.025, 0.07, 0.5);
      c = mix(c, {skin.r * 0.8, skin.g * 0.75, skin.b * 0.72}, 0.6 * nose * face);
      c = mix(c, lips, ellipse(x, y, cx, mouth_y, mouth_w, 0.022, 0.3) * face);
      const double t = 0.015 * (grain.uniform() - 0.5);
      img.at(py, px, 0) = std::clamp(c.r + t, 0.0, 1.0);
      img.at(py, px, 1) = std::clamp(c.g + t, 0.0, 1.0);
      img.at(py, px, 2) = std::clamp(c.b + t, 0.0, 1.0);
    }
  return img;
}

void write_toy_corpus(const std::filesystem::path& dir, std::size_t count, std::size_t size, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "face_%03zu.ppm", i);
    save_image(toy_face(size, derive_seed(seed, i)), dir / name);
  }
}

ImageTensor smooth_pattern(std::size_t width, std::size_t height, double amplitude) {
  ImageTensor img(width, height, 3);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(y, x, c) = 0.5 + amplitude * std::sin(0.3 * x + static_cast<double>(c)) * std::cos(0.2 * y);
  return img;
}

ImageTensor random_image(std::size_t width, std::size_t height, std::uint64_t seed, double lo, double hi) {
  ImageTensor img(width, height, 3);
  Rng rng(seed);
  for (double& v : img.data) v = rng.uniform(lo, hi);
  return img;
}

TempDir::TempDir(const std::string& tag) {
  static std::uint64_t counter = 0;
  const auto base = std::filesystem::temp_directory_path();
  for (;;) {
    std::ostringstream name;
    name << "bfr_" << tag << "_" << std::hex << mix64(reinterpret_cast<std::uintptr_t>(this) ^ ++counter ^
                                                       static_cast<std::uint64_t>(std::time(nullptr)));
    path_ = base / name.str();
    if (std::filesystem::create_directories(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

GradCheck check_gradients(const std::function<ad::Tensor()>& loss, std::vector<ad::Tensor> wrt, double eps,
                          std::size_t max_per_tensor, double floor) {
  for (auto& t : wrt) t.zero_grad();
  {
    ad::Tape tape;
    ad::TapeScope scope(tape);
    ad::Tensor l = loss();
    tape.backward(l);
  }
  auto eval = [&] { return loss().item(); };
  GradCheck out;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto& t = wrt[ti];
    const std::vector<double> g(t.grad().begin(), t.grad().end());
    const std::size_t n = t.numel();
    const std::size_t count = max_per_tensor == 0 ? n : std::min(n, max_per_tensor);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t i = count == n ? k : (k * 7919 + 13) % n;
      auto data = t.mutable_data();
      const double orig = data[i];
      data[i] = orig + eps;
      const double up = eval();
      data[i] = orig - eps;
      const double down = eval();
      data[i] = orig;
      const double fd = (up - down) / (2.0 * eps);
      const double abs_err = std::abs(fd - g[i]);
      const double rel = abs_err / std::max({std::abs(fd), std::abs(g[i]), floor});
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst_tensor = ti;
        out.worst_index = i;
        out.worst_grad = g[i];
        out.worst_fd = fd;
      }
      out.max_abs_error = std::max(out.max_abs_error, abs_err);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace bfr::testing
