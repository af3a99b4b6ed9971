#include "bfr/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bfr/error.hpp"
#include "bfr/kernels.hpp"

namespace bfr::degrade {

std::string to_string(Setting s) {
  switch (s) {
    case Setting::Blur: return "blur";
    case Setting::Noise: return "noise";
    case Setting::Jpeg: return "jpeg";
    case Setting::LR: return "lr";
    case Setting::Full: return "full";
  }
  return "?";
}

Setting parse_setting(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "blur") return Setting::Blur;
  if (s == "noise") return Setting::Noise;
  if (s == "jpeg") return Setting::Jpeg;
  if (s == "lr") return Setting::LR;
  if (s == "full") return Setting::Full;
  throw ParameterError("unknown degradation setting '" + name + "' (expected blur|noise|jpeg|lr|full)");
}

std::string to_string(NoiseFamily f) {
  switch (f) {
    case NoiseFamily::Gaussian: return "gaussian";
    case NoiseFamily::Laplace: return "laplace";
    case NoiseFamily::Poisson: return "poisson";
  }
  return "?";
}

NoiseFamily parse_noise_family(const std::string& name) {
  if (name == "gaussian") return NoiseFamily::Gaussian;
  if (name == "laplace") return NoiseFamily::Laplace;
  if (name == "poisson") return NoiseFamily::Poisson;
  throw ParameterError("unknown noise family '" + name + "' (expected gaussian|laplace|poisson)");
}

// ---- blur -------------------------------------------------------------------

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("gaussian blur sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += k[i + radius];
  }
  for (double& v : k) v /= s;
  return k;
}

namespace {

template <typename PlaneOp>
ImageTensor per_channel(const ImageTensor& img, PlaneOp op) {
  ImageTensor out = img;
  std::vector<double> dst(img.width * img.height);
  for (std::size_t c = 0; c < img.channels; ++c) {
    const auto src = img.plane(c);
    op(src, dst);
    out.set_plane(c, dst);
  }
  out.role = ImageRole::LQ;
  out.clamp();
  return out;
}

}  // namespace

ImageTensor gaussian_blur(const ImageTensor& img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  return per_channel(img, [&](const std::vector<double>& src, std::vector<double>& dst) {
    kernels::filter_separable(img.height, img.width, src, k, k, dst);
  });
}

std::pair<std::vector<double>, std::size_t> motion_kernel(int length, double angle_degrees) {
  if (length < 3) throw ParameterError("motion blur length must be >= 3, got " + std::to_string(length));
  const int radius = static_cast<int>(std::ceil((length - 1) / 2.0)) + 1;
  const std::size_t size = 2 * radius + 1;
  std::vector<double> k(size * size, 0.0);
  const double theta = angle_degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  for (int i = 0; i < length; ++i) {
    const double t = -(length - 1) / 2.0 + i;
    const double cx = radius + t * c, cy = radius - t * s;  // image y axis points down
    const double fx0 = std::floor(cx), fy0 = std::floor(cy);
    const double fx = cx - fx0, fy = cy - fy0;
    const auto x0 = static_cast<std::size_t>(fx0), y0 = static_cast<std::size_t>(fy0);
    k[y0 * size + x0] += (1 - fx) * (1 - fy);
    k[y0 * size + x0 + 1] += fx * (1 - fy);
    k[(y0 + 1) * size + x0] += (1 - fx) * fy;
    k[(y0 + 1) * size + x0 + 1] += fx * fy;
  }
  double sum = 0.0;
  for (double v : k) sum += v;
  for (double& v : k) v /= sum;
  return {k, size};
}

ImageTensor motion_blur(const ImageTensor& img, int length, double angle_degrees) {
  const auto [k, size] = motion_kernel(length, angle_degrees);
  return per_channel(img, [&](const std::vector<double>& src, std::vector<double>& dst) {
    kernels::filter2d(img.height, img.width, src, size, k, dst);
  });
}

// ---- noise ------------------------------------------------------------------

ImageTensor add_noise(const ImageTensor& img, NoiseFamily family, double strength, Rng& rng) {
  if (strength < 0.0 || !std::isfinite(strength)) throw ParameterError("noise strength must be finite and >= 0");
  ImageTensor out = img;
  out.role = ImageRole::LQ;
  if (strength == 0.0) return out;
  switch (family) {
    case NoiseFamily::Gaussian:
      for (double& v : out.data) v += strength * rng.normal();
      break;
    case NoiseFamily::Laplace: {
      const double b = strength / std::numbers::sqrt2;  // strength is the std-dev
      for (double& v : out.data) v += rng.laplace(b);
      break;
    }
    case NoiseFamily::Poisson:
      for (double& v : out.data)
        v = static_cast<double>(rng.poisson(std::max(0.0, v) * strength)) / strength;
      break;
  }
  out.clamp();
  return out;
}

// ---- resampling -------------------------------------------------------------

namespace {

double cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::vector<std::array<std::size_t, 4>> index;
  std::vector<std::array<double, 4>> weight;
};

Taps make_taps(std::size_t in, std::size_t out) {
  Taps t;
  t.index.resize(out);
  t.weight.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const double base = std::floor(src);
    const double f = src - base;
    for (int k = 0; k < 4; ++k) {
      const auto i = static_cast<std::ptrdiff_t>(base) - 1 + k;
      t.index[o][k] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(in) - 1));
      t.weight[o][k] = cubic(f + 1.0 - k);
    }
  }
  return t;
}

}  // namespace

ImageTensor bicubic_resize(const ImageTensor& img, std::size_t out_w, std::size_t out_h) {
  if (out_w < 4 || out_h < 4) throw ParameterError("bicubic_resize: output must be at least 4x4");
  if (img.width == 0 || img.height == 0) throw ParameterError("bicubic_resize: empty input");
  const std::size_t C = img.channels;
  const Taps tx = make_taps(img.width, out_w), ty = make_taps(img.height, out_h);
  std::vector<double> tmp(img.height * out_w * C);
  const auto H = static_cast<std::ptrdiff_t>(img.height), OH = static_cast<std::ptrdiff_t>(out_h);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < out_w; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += tx.weight[x][k] * img.data[(y * img.width + tx.index[x][k]) * C + c];
        tmp[(y * out_w + x) * C + c] = s;
      }
  ImageTensor out(out_w, out_h, C);
  out.role = ImageRole::LQ;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t y = 0; y < OH; ++y)
    for (std::size_t x = 0; x < out_w; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += ty.weight[y][k] * tmp[(ty.index[y][k] * out_w + x) * C + c];
        out.data[(y * out_w + x) * C + c] = s;
      }
  out.clamp();
  return out;
}

ImageTensor jpeg_roundtrip(const ImageTensor& img, int quality, jpeg::Subsampling subsampling) {
  return jpeg::roundtrip(img, quality, subsampling);
}

// ---- spec -------------------------------------------------------------------

nlohmann::json DegradationSpec::params_json() const {
  nlohmann::json p = nlohmann::json::object();
  if (blur) {
    if (blur->kind == BlurKind::Gaussian)
      p["blur"] = {{"kind", "gaussian"}, {"sigma", blur->sigma}};
    else
      p["blur"] = {{"kind", "motion"}, {"length", blur->length}, {"angle", blur->angle}};
  }
  if (resize) p["resize"] = {{"factor", resize->factor}, {"width", resize->width}, {"height", resize->height}};
  if (noise) p["noise"] = {{"family", to_string(noise->family)}, {"strength", noise->strength}};
  if (jpeg)
    p["jpeg"] = {{"quality", jpeg->quality},
                 {"subsampling", jpeg->subsampling == jpeg::Subsampling::k420 ? "420" : "444"}};
  return p;
}

DegradationSpec DegradationSpec::from_json(Setting setting, std::uint64_t seed, const nlohmann::json& p) {
  DegradationSpec s;
  s.setting = setting;
  s.seed = seed;
  try {
    if (p.contains("blur")) {
      const auto& b = p.at("blur");
      BlurParams bp;
      if (b.at("kind") == "gaussian") {
        bp.kind = BlurKind::Gaussian;
        bp.sigma = b.at("sigma").get<double>();
      } else {
        bp.kind = BlurKind::Motion;
        bp.length = b.at("length").get<int>();
        bp.angle = b.at("angle").get<double>();
      }
      s.blur = bp;
    }
    if (p.contains("resize")) {
      const auto& r = p.at("resize");
      s.resize = ResizeParams{r.at("factor").get<int>(), r.at("width").get<std::size_t>(),
                              r.at("height").get<std::size_t>()};
    }
    if (p.contains("noise"))
      s.noise = NoiseParams{parse_noise_family(p.at("noise").at("family").get<std::string>()),
                            p.at("noise").at("strength").get<double>()};
    if (p.contains("jpeg"))
      s.jpeg = JpegParams{p.at("jpeg").at("quality").get<int>(),
                          p.at("jpeg").value("subsampling", "444") == "420" ? jpeg::Subsampling::k420
                                                                            : jpeg::Subsampling::k444};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed degradation params: ") + e.what());
  }
  return s;
}

namespace {

BlurParams sample_blur(Rng& rng, const Ranges& r) {
  BlurParams b;
  if (rng.bernoulli(0.5)) {
    b.kind = BlurKind::Gaussian;
    b.sigma = rng.uniform(r.gaussian_sigma_min, r.gaussian_sigma_max);
  } else {
    b.kind = BlurKind::Motion;
    b.length = static_cast<int>(rng.uniform_int(r.motion_length_min, r.motion_length_max));
    b.angle = rng.uniform(r.motion_angle_min, r.motion_angle_max);
  }
  return b;
}

NoiseParams sample_noise(Rng& rng, const Ranges& r) {
  NoiseParams n;
  n.family = static_cast<NoiseFamily>(rng.uniform_int(0, 2));
  n.strength = n.family == NoiseFamily::Poisson ? rng.uniform(r.poisson_peak_min, r.poisson_peak_max)
                                                : rng.uniform(r.noise_strength_min, r.noise_strength_max);
  return n;
}

ResizeParams make_resize(int factor, std::size_t width, std::size_t height) {
  if (factor < 1) throw ParameterError("LR factor must be >= 1");
  auto scaled = [&](std::size_t n) {
    return std::max<std::size_t>(4, static_cast<std::size_t>(std::lround(static_cast<double>(n) / factor)));
  };
  return ResizeParams{factor, scaled(width), scaled(height)};
}

}  // namespace

DegradationSpec sample(Setting setting, std::uint64_t seed, std::size_t width, std::size_t height,
                       const Options& options) {
  const Ranges& r = options.ranges;
  Rng rng(derive_seed(seed, 0));
  DegradationSpec s;
  s.setting = setting;
  s.seed = seed;
  auto factor = [&] {
    return options.lr_factor ? *options.lr_factor
                             : static_cast<int>(rng.uniform_int(r.lr_factor_min, r.lr_factor_max));
  };
  auto quality = [&] { return static_cast<int>(rng.uniform_int(r.jpeg_quality_min, r.jpeg_quality_max)); };
  switch (setting) {
    case Setting::Blur: s.blur = sample_blur(rng, r); break;
    case Setting::Noise: s.noise = sample_noise(rng, r); break;
    case Setting::Jpeg: s.jpeg = JpegParams{quality(), r.subsampling}; break;
    case Setting::LR: s.resize = make_resize(factor(), width, height); break;
    case Setting::Full: {
      std::array<bool, 4> stages{};
      if (options.full_stages) {
        stages = *options.full_stages;
        if (std::none_of(stages.begin(), stages.end(), [](bool b) { return b; }))
          throw ParameterError("full setting needs at least one stage");
      } else {
        do {
          for (auto& st : stages) st = rng.bernoulli(r.full_stage_probability);
        } while (std::none_of(stages.begin(), stages.end(), [](bool b) { return b; }));
      }
      if (stages[0]) s.blur = sample_blur(rng, r);
      if (stages[1]) s.resize = make_resize(factor(), width, height);
      if (stages[2]) s.noise = sample_noise(rng, r);
      if (stages[3]) s.jpeg = JpegParams{quality(), r.subsampling};
      break;
    }
  }
  return s;
}

ImageTensor apply(const ImageTensor& hq, const DegradationSpec& spec) {
  if (hq.width < 16 || hq.height < 16) throw ParameterError("degrade: images must be at least 16x16");
  ImageTensor img = hq;
  if (spec.blur) {
    img = spec.blur->kind == BlurKind::Gaussian ? gaussian_blur(img, spec.blur->sigma)
                                                : motion_blur(img, spec.blur->length, spec.blur->angle);
  }
  if (spec.resize) {
    img = bicubic_resize(img, spec.resize->width, spec.resize->height);
    img = bicubic_resize(img, hq.width, hq.height);
  }
  if (spec.noise) {
    Rng noise_rng(derive_seed(spec.seed, 1));
    img = add_noise(img, spec.noise->family, spec.noise->strength, noise_rng);
  }
  if (spec.jpeg) img = jpeg::roundtrip(img, spec.jpeg->quality, spec.jpeg->subsampling);
  img.role = ImageRole::LQ;
  img.clamp();
  return img;
}

std::pair<ImageTensor, DegradationSpec> degrade(const ImageTensor& hq, Setting setting, std::uint64_t seed,
                                                const Options& options) {
  DegradationSpec spec = sample(setting, seed, hq.width, hq.height, options);
  ImageTensor lq = apply(hq, spec);
  return {std::move(lq), std::move(spec)};
}

SynthesizeResult synthesize(const std::filesystem::path& hq_dir, Setting setting, std::uint64_t global_seed,
                            const std::filesystem::path& out_dir, const Options& options) {
  const auto files = list_images(hq_dir);
  SynthesizeResult result;
  result.manifest.base_dir = out_dir;
  auto& rows = result.manifest.rows;
  rows.resize(files.size());

  std::optional<std::pair<std::size_t, std::size_t>> ref;
  std::vector<std::string> offenders;
  for (std::size_t i = 0; i < files.size(); ++i) {
    auto& row = rows[i];
    row.id = image_id(files[i]);
    row.hq = std::filesystem::absolute(files[i]).lexically_normal().string();
    row.setting = to_string(setting);
    row.seed = derive_seed(global_seed, i);
    try {
      const auto dims = image_dimensions(files[i]);
      if (!ref) ref = dims;
      if (dims != *ref)
        offenders.push_back(files[i].filename().string() + " (" + std::to_string(dims.first) + "x" +
                            std::to_string(dims.second) + ")");
    } catch (const Error& e) {
      row.error = e.what();
    }
  }
  if (!offenders.empty()) {
    std::string msg = "mixed image sizes; expected " + std::to_string(ref->first) + "x" +
                      std::to_string(ref->second) + ", offenders:";
    for (const auto& o : offenders) msg += " " + o;
    throw ParameterError(msg);
  }

  std::filesystem::create_directories(out_dir / "lq");
  const auto n = static_cast<std::ptrdiff_t>(files.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    auto& row = rows[i];
    if (!row.error.empty()) continue;
    try {
      const ImageTensor hq = load_image(files[i]);
      auto [lq, spec] = degrade(hq, setting, row.seed, options);
      const std::string rel = "lq/" + row.id + ".ppm";
      save_image(lq, out_dir / rel);
      row.lq = rel;
      row.params = spec.params_json();
    } catch (const Error& e) {
      row.error = e.what();
    }
  }
  for (const auto& row : rows)
    if (!row.error.empty()) ++result.failures;
  write_manifest(result.manifest, out_dir / "manifest.jsonl");
  return result;
}

}  // namespace bfr::degrade
