// One PASS/FAIL line per acceptance criterion. Exit status is nonzero when
// any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "bfr/autodiff.hpp"
#include "bfr/cli.hpp"
#include "bfr/degrade.hpp"
#include "bfr/jpeg.hpp"
#include "bfr/metrics.hpp"
#include "bfr/niqe.hpp"
#include "bfr/stunet.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace bfr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void randomize(ad::Tensor t, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (double& v : t.mutable_data()) v = rng.uniform(-scale, scale);
}

ad::Tensor random_tensor(ad::Shape shape, std::uint64_t seed) {
  ad::Tensor t = ad::Tensor::zeros(shape);
  randomize(t, seed, 1.0);
  return t;
}

ad::Tensor batch_of(const ImageTensor& img) { return stunet::to_batch(std::span<const ImageTensor>(&img, 1)); }

int cli(std::vector<std::string> args, std::string* err = nullptr) {
  args.insert(args.begin(), "bfrbench");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, e;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, e);
  if (err != nullptr) *err = e.str();
  return code;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(testing::read_text(p)); }

// ---- 1 ----------------------------------------------------------------------

void gradient_check(Outcome& o) {
  stunet::Config cfg;
  cfg.base_channels = 8;
  cfg.stl_counts = {1, 1, 1, 1};
  cfg.window_size = 2;
  cfg.height = cfg.width = 16;
  stunet::Weights w = stunet::build(cfg, 1);
  // spread weights so zero-initialized biases and tables carry gradient
  std::uint64_t s = 1000;
  for (auto t : w.parameters()) randomize(t, ++s, 0.3);
  const ImageTensor lq = testing::toy_face(16, 3);
  // targets above the output range keep the L1 kink out of every difference
  const ImageTensor gt = testing::random_image(16, 16, 4, 2.0, 3.0);
  const ad::Tensor x = batch_of(lq), y = batch_of(gt);
  const auto r = testing::check_gradients([&] { return ad::l1_loss(stunet::forward(w, x), y); }, w.parameters(),
                                          1e-5, 8, 1e-5);
  o.detail << "entries " << r.checked << ", max rel " << r.max_rel_error << " at "
           << w.parameter_names()[r.worst_tensor] << "[" << r.worst_index << "]; ";
  o.require(r.max_rel_error < 1e-4, "max relative error < 1e-4");
}

// ---- 2 ----------------------------------------------------------------------

void shape_suite(Outcome& o) {
  std::size_t cases = 0;
  for (std::size_t C : {8, 16})
    for (std::size_t S : {32, 64, 128}) {
      stunet::Config cfg;
      cfg.base_channels = C;
      cfg.stl_counts = {1, 1, 1, 1};
      cfg.window_size = 4;
      cfg.height = cfg.width = S;
      const stunet::Weights w = stunet::build(cfg, 2);
      stunet::ShapeProbe probe;
      const ad::Tensor y = stunet::forward(w, ad::Tensor::full({1, 3, S, S}, 0.5), &probe);
      const std::string tag = "C=" + std::to_string(C) + " S=" + std::to_string(S);
      auto expect = [&](const std::string& name, ad::Shape shape) {
        const auto got = probe.find(name);
        o.require(got && *got == shape, tag + " " + name);
      };
      expect("embed", {1, S, S, C});
      expect("encoder1", {1, S, S, C});
      expect("encoder2", {1, S / 2, S / 2, 2 * C});
      expect("encoder3", {1, S / 4, S / 4, 4 * C});
      expect("encoder4", {1, S / 8, S / 8, 8 * C});
      expect("decoder3", {1, S / 4, S / 4, 4 * C});
      expect("decoder2", {1, S / 2, S / 2, 2 * C});
      expect("decoder1", {1, S, S, C});
      o.require(y.shape() == ad::Shape{1, 3, S, S}, tag + " output");
      ++cases;
    }
  o.detail << cases << " configurations; ";
}

// ---- 3 ----------------------------------------------------------------------

void overfit(Outcome& o) {
  stunet::Config cfg;
  cfg.height = cfg.width = 32;
  cfg.window_size = 4;
  stunet::Weights w = stunet::build(cfg, 0);
  const ImageTensor gt = testing::toy_face(32, 1);
  const auto [lq, spec] = degrade::degrade(gt, degrade::Setting::Noise, 3);
  const ad::Tensor x = batch_of(lq), y = batch_of(gt);
  double first = 0.0;
  for (int step = 0; step < 500; ++step) {
    const double loss = stunet::train_step(w, x, y, 1e-3);
    if (step == 0) first = loss;
  }
  const double last = ad::l1_loss(stunet::forward(w, x), y).item();
  o.detail << "initial " << first << ", final " << last << ", ratio " << last / first << "; ";
  o.require(last <= 0.1 * first, "loss reduced by >= 90%");
}

// ---- 4 ----------------------------------------------------------------------

void inverse_suite(Outcome& o) {
  const ad::Tensor nchw = random_tensor({2, 12, 8, 8}, 5);
  const ad::Tensor a = ad::pixel_shuffle(ad::pixel_unshuffle(nchw, 2), 2);
  o.require(a.shape() == nchw.shape() && max_abs_diff(a.data(), nchw.data()) == 0.0, "shuffle(unshuffle(x))");
  const ad::Tensor b = ad::pixel_unshuffle(ad::pixel_shuffle(nchw, 2), 2);
  o.require(max_abs_diff(b.data(), nchw.data()) == 0.0, "unshuffle(shuffle(x))");

  const ad::Tensor nhwc = random_tensor({2, 8, 12, 6}, 6);
  for (std::size_t win : {2, 4}) {
    const ad::Tensor r = ad::window_reverse(ad::window_partition(nhwc, win), win, 8, 12);
    o.require(r.shape() == nhwc.shape() && max_abs_diff(r.data(), nhwc.data()) == 0.0, "window round trip");
  }
  const ad::Tensor sh = ad::cyclic_shift(ad::cyclic_shift(nhwc, -3, -2), 3, 2);
  o.require(max_abs_diff(sh.data(), nhwc.data()) == 0.0, "cyclic shift round trip");
  o.require(max_abs_diff(ad::cyclic_shift(nhwc, 8, 12).data(), nhwc.data()) == 0.0, "full-period shift");

  stunet::Config cfg;
  cfg.base_channels = 8;
  cfg.stl_counts = {2, 1, 1, 1};
  cfg.window_size = 2;
  cfg.height = cfg.width = 16;
  stunet::Weights w = stunet::build(cfg, 7);
  double worst = 0.0;
  std::uint64_t s = 70;
  for (auto& l : w.encoder[0].layers) {
    for (ad::Tensor t : {l.q_weight, l.k_weight, l.v_weight, l.fc1_weight, l.bias_table}) randomize(t, ++s, 0.5);
    for (ad::Tensor t : {l.proj_weight, l.proj_bias, l.fc2_weight, l.fc2_bias})
      std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  }
  const ad::Tensor x = random_tensor({1, 16, 16, 8}, 8);
  for (bool shifted : {false, true}) {
    const ad::Tensor y = stunet::stl_forward(x, w.encoder[0].layers[shifted ? 1 : 0], 1, 2, shifted);
    worst = std::max(worst, max_abs_diff(x.data(), y.data()));
  }
  o.detail << "zero-branch deviation " << worst << "; ";
  o.require(worst < 1e-12, "zero-branch layer identity");
}

// ---- 5 ----------------------------------------------------------------------

void metric_oracles(Outcome& o) {
  ImageTensor a = testing::random_image(32, 32, 9, 0.1, 0.9);
  for (double& v : a.data) v = quantize(v) / 255.0;
  ImageTensor b = a;
  for (double& v : b.data) v = (quantize(v) + 1) / 255.0;
  const double p = metrics::psnr(a, b).value;
  o.detail << "psnr " << p << "; ";
  o.require(std::abs(p - 48.1308) < 1e-4, "psnr one-level case");

  const ImageTensor face = testing::toy_face(32, 10);
  Rng rng(10);
  const ImageTensor noisy = degrade::add_noise(face, degrade::NoiseFamily::Gaussian, 0.05, rng);
  const double s = metrics::ssim(face, noisy).value, ref = testing::ssim_reference(face, noisy);
  o.detail << "ssim vs oracle " << std::abs(s - ref) << "; ";
  o.require(std::abs(s - ref) < 1e-9, "ssim oracle");
  o.require(std::abs(metrics::ssim(face, face).value - 1.0) < 1e-9, "ssim self");
  const ImageTensor big = testing::toy_face(176, 11);
  o.require(std::abs(metrics::ms_ssim(big, big).value - 1.0) < 1e-9, "ms-ssim self");

  metrics::LandmarkSet gt{"f", {{10, 20}, {64, 64}, {100, 3}}};
  metrics::LandmarkSet moved = gt;
  for (auto& pt : moved.points) pt.x += 128.0 / 100.0;
  const double d = metrics::afld(moved, gt, 128, 128).value;
  o.require(std::abs(d - 0.01) < 1e-12, "afld offset");
  const std::vector<double> e1{0.2, -1.3, 0.8, 2.1}, e2{1.0, 0.5, -0.4, 0.3};
  std::vector<double> e1x2 = e1;
  for (double& v : e1x2) v *= 2.0;
  const double cs = std::abs(metrics::afics(e1x2, e2).value - metrics::afics(e1, e2).value);
  o.require(cs < 1e-12, "afics scale invariance");
}

// ---- 6 ----------------------------------------------------------------------

void degradation_suite(Outcome& o) {
  const ImageTensor face = testing::toy_face(64, 12);
  std::size_t replays = 0;
  for (auto s : {degrade::Setting::Blur, degrade::Setting::Noise, degrade::Setting::Jpeg, degrade::Setting::LR,
                 degrade::Setting::Full})
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const auto [lq, spec] = degrade::degrade(face, s, seed);
      const auto text = nlohmann::json::parse(spec.params_json().dump());
      const ImageTensor again = degrade::apply(face, degrade::DegradationSpec::from_json(s, seed, text));
      o.require(again.data == lq.data, "replay " + degrade::to_string(s));
      ++replays;
    }
  o.detail << replays << " replays; ";

  const double p100 = metrics::psnr(jpeg::roundtrip(face, 100), face).value;
  o.detail << "q100 psnr " << p100 << "; ";
  o.require(p100 > 50.0, "q=100 psnr > 50 dB");
  Rng rng(13);
  double dct_err = 0.0;
  for (int block = 0; block < 16; ++block) {
    std::array<double, 64> px{};
    for (double& v : px) v = rng.uniform(-128.0, 127.0);
    const auto c = jpeg::forward_dct(px);
    for (int v = 0; v < 8; ++v)
      for (int u = 0; u < 8; ++u) dct_err = std::max(dct_err, std::abs(c[v * 8 + u] - testing::naive_dct(px, u, v)));
  }
  for (int q : {100, 50, 10})
    dct_err = std::max(dct_err, max_abs_diff(jpeg::roundtrip(face, q).data, testing::naive_jpeg(face, q).data));
  o.detail << "dct vs oracle " << dct_err << "; ";
  o.require(dct_err < 1e-9, "dct path agrees with naive oracle");
  double prev = 0.0;
  for (int q : {10, 30, 50, 70, 90}) {
    const double p = metrics::psnr(jpeg::roundtrip(face, q), face).value;
    o.require(p > prev, "psnr increasing at q=" + std::to_string(q));
    prev = p;
  }

  ImageTensor gray(256, 256, 3, 0.5);
  Rng nrng(14);
  const double sigma = 10.0 / 255.0;
  const ImageTensor n = degrade::add_noise(gray, degrade::NoiseFamily::Gaussian, sigma, nrng);
  double s1 = 0.0, s2 = 0.0;
  for (double v : n.data) {
    s1 += v - 0.5;
    s2 += (v - 0.5) * (v - 0.5);
  }
  const double m = s1 / n.data.size(), sd = std::sqrt(s2 / n.data.size() - m * m);
  o.detail << "noise std rel err " << std::abs(sd - sigma) / sigma << "; ";
  o.require(std::abs(sd - sigma) / sigma < 0.05, "noise std within 5%");

  std::set<int> factors;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto [lq, spec] = degrade::degrade(face, degrade::Setting::LR, seed);
    factors.insert(spec.resize->factor);
    o.require(lq.width == face.width && lq.height == face.height, "lr output size");
  }
  o.require(factors == std::set<int>{2, 3, 4, 5, 6, 7, 8}, "lr factors cover 2..8");
}

// ---- 7 ----------------------------------------------------------------------

void niqe_separation(Outcome& o) {
  std::vector<ImageTensor> corpus;
  for (std::uint64_t s = 0; s < 24; ++s) corpus.push_back(testing::toy_face(96, 500 + s));
  const niqe::Model model = niqe::fit(corpus);
  double clean = 0.0, noisy = 0.0;
  const int held = 8;
  for (int i = 0; i < held; ++i) {
    const ImageTensor img = testing::toy_face(96, 700 + i);
    Rng rng(derive_seed(7, i));
    clean += niqe::score(img, model).value / held;
    noisy += niqe::score(degrade::add_noise(img, degrade::NoiseFamily::Gaussian, 25.0 / 255.0, rng), model).value / held;
  }
  o.detail << "24 pristine, " << model.patches << " patches; clean " << clean << " vs noisy " << noisy << "; ";
  o.require(clean < noisy, "clean scores below noisy");
}

// ---- 8 ----------------------------------------------------------------------

void pipeline(Outcome& o) {
  testing::TempDir root("accept_pipeline");
  const fs::path hq = root / "hq", pairs = root / "pairs", restored = root / "restored";
  fs::create_directories(hq);
  testing::write_toy_corpus(hq, 32, 32, 21);
  std::string err;
  o.require(cli({"degrade", "--hq", hq.string(), "--setting", "noise", "--seed", "5", "--out", pairs.string()}, &err) == 0,
            "degrade " + err);
  o.require(cli({"train", "--manifest", (pairs / "manifest.jsonl").string(), "--out", (root / "m.ckpt").string()},
                &err) == 0,
            "train " + err);
  o.require(cli({"restore", "--ckpt", (root / "m.ckpt").string(), "--in", (pairs / "lq").string(), "--out",
                 restored.string()},
                &err) == 0,
            "restore " + err);
  const std::vector<std::string> metric_args{"--metrics", "psnr,ssim,ms_ssim", "--ms-ssim-scales", "2"};
  auto evaluate = [&](const fs::path& dir, const std::string& prefix) {
    std::vector<std::string> args{"evaluate", "--restored", dir.string(), "--gt", hq.string(), "--out",
                                  (root / prefix).string()};
    args.insert(args.end(), metric_args.begin(), metric_args.end());
    o.require(cli(args, &err) == 0, "evaluate " + err);
  };
  evaluate(restored, "restored");
  evaluate(pairs / "lq", "lq");
  if (!o.pass) return;

  const auto rep = read_json(root / "restored.json"), base = read_json(root / "lq.json");
  const std::string csv = testing::read_text(root / "restored.csv");
  o.require(csv.rfind("id,psnr,ssim,ms_ssim,niqe,afld,afics\n", 0) == 0, "csv header");
  o.require(std::count(csv.begin(), csv.end(), '\n') == 33, "csv has 32 rows");
  o.require(rep["images"] == 32 && rep["errors"].empty(), "report covers 32 images without errors");
  for (const char* m : {"psnr", "ssim", "ms_ssim"})
    o.require(rep["aggregates"][m]["count"] == 32 && rep["aggregates"][m]["mean"].is_number(),
              std::string("aggregate ") + m);
  const double r = rep["aggregates"]["psnr"]["mean"], l = base["aggregates"]["psnr"]["mean"];
  o.detail << "psnr restored " << r << " dB vs lq " << l << " dB, improvement " << r - l << " dB; ";
  o.require(r - l >= 0.0, "psnr improvement >= 0 dB");
}

// ---- 9 ----------------------------------------------------------------------

std::vector<std::pair<std::string, std::vector<std::uint8_t>>> snapshot(const fs::path& dir) {
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), dir).string(), testing::read_bytes(e.path()));
  std::sort(files.begin(), files.end());
  return files;
}

void determinism(Outcome& o) {
  testing::TempDir root("accept_determinism");
  const fs::path hq = root / "hq";
  fs::create_directories(hq);
  testing::write_toy_corpus(hq, 8, 32, 31);
  std::vector<std::vector<std::pair<std::string, std::vector<std::uint8_t>>>> runs;
  for (const char* threads : {"1", "4", "1", "3"}) {
    const fs::path run = root / ("run" + std::to_string(runs.size()));
    const std::string t = threads;
    std::string err;
    o.require(cli({"--threads", t, "degrade", "--hq", hq.string(), "--setting", "full", "--seed", "9", "--out",
                   (run / "pairs").string(), "--train-fraction", "0.75", "--split-seed", "2"},
                  &err) == 0,
              "degrade " + err);
    o.require(cli({"--threads", t, "train", "--manifest", (run / "pairs" / "manifest.jsonl").string(), "--epochs",
                   "1", "--batch-size", "2", "--channels", "8", "--seed", "4", "--out", (run / "m.ckpt").string()},
                  &err) == 0,
              "train " + err);
    o.require(cli({"--threads", t, "restore", "--ckpt", (run / "m.ckpt").string(), "--in",
                   (run / "pairs" / "lq").string(), "--out", (run / "restored").string()},
                  &err) == 0,
              "restore " + err);
    o.require(cli({"--threads", t, "evaluate", "--restored", (run / "restored").string(), "--gt", hq.string(),
                   "--metrics", "psnr,ssim,ms_ssim", "--ms-ssim-scales", "2", "--out", (run / "report").string()},
                  &err) == 0,
              "evaluate " + err);
    runs.push_back(snapshot(run));
  }
  o.detail << runs[0].size() << " files per run, threads 1/4/1/3; ";
  for (std::size_t i = 1; i < runs.size(); ++i) {
    o.require(runs[i].size() == runs[0].size(), "same file set");
    for (std::size_t k = 0; k < std::min(runs[i].size(), runs[0].size()); ++k)
      o.require(runs[i][k] == runs[0][k], "identical bytes: " + runs[0][k].first);
  }
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"end-to-end gradient check on micro network", gradient_check},
      {"feature-shape ladder", shape_suite},
      {"single-pair overfit, 500 SGD steps", overfit},
      {"inverse and identity suite", inverse_suite},
      {"metric oracles", metric_oracles},
      {"degradation suite", degradation_suite},
      {"NIQE clean/noisy separation", niqe_separation},
      {"end-to-end pipeline on 32 images", pipeline},
      {"determinism across thread counts", determinism},
  };
  const std::array<double, 9> budget_s = {300, 0, 600, 0, 0, 0, 0, 1800, 0};
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "[exception: " << e.what() << "] ";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget_s[i] > 0 && secs > budget_s[i]) {
      o.pass = false;
      o.detail << "[over time budget " << budget_s[i] << " s] ";
    }
    failures += !o.pass;
    std::printf("%s criterion %zu: %s -- %s(%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.str().c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
