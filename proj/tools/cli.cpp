#include "bfr/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <optional>

#include "CLI11.hpp"
#include "bfr/checkpoint.hpp"
#include "bfr/degrade.hpp"
#include "bfr/error.hpp"
#include "bfr/evaluate.hpp"
#include "bfr/kernels.hpp"
#include "bfr/niqe.hpp"
#include "bfr/train.hpp"

namespace bfr {

namespace {

constexpr int kOk = 0, kFailed = 1, kUsage = 2;

// Errors raised by argument validation rather than by the work itself.
struct UsageError : Error {
  using Error::Error;
};

struct DegradeArgs {
  std::string hq, out, setting;
  std::uint64_t seed = 0;
  std::optional<int> lr_factor;
  std::optional<double> train_fraction;
  std::uint64_t split_seed = 0;
};

struct TrainArgs {
  std::string manifest, out, config, log;
  std::size_t epochs = 3;
  double lr = 0.001;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  std::optional<std::size_t> channels, window;
};

struct RestoreArgs {
  std::string ckpt, in, out;
};

struct EvaluateArgs {
  std::string restored, gt, out, metrics = "psnr,ssim,ms_ssim";
  std::string landmarks, gt_landmarks, embeddings, gt_embeddings, niqe_model;
  int ms_ssim_scales = metrics::kMsSsimScales;
};

struct NiqeFitArgs {
  std::string pristine, out;
  int patch = 32;
  double quantile = 0.75;
};

int cmd_degrade(const DegradeArgs& a, std::ostream& out, std::ostream& err) {
  degrade::Setting setting;
  try {
    setting = degrade::parse_setting(a.setting);
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  degrade::Options opts;
  if (a.lr_factor) {
    if (*a.lr_factor < 2 || *a.lr_factor > 8) throw UsageError("--lr-factor must be in 2..8");
    opts.lr_factor = a.lr_factor;
  }
  if (a.train_fraction && !(*a.train_fraction > 0.0 && *a.train_fraction < 1.0))
    throw UsageError("--train-fraction must lie strictly between 0 and 1");
  if (!std::filesystem::is_directory(a.hq)) throw UsageError("--hq is not a directory: " + a.hq);

  auto result = degrade::synthesize(a.hq, setting, a.seed, a.out, opts);
  if (a.train_fraction) {
    result.manifest = split(result.manifest, *a.train_fraction, a.split_seed);
    write_manifest(result.manifest, std::filesystem::path(a.out) / "manifest.jsonl");
  }
  out << "degraded " << result.manifest.rows.size() - result.failures << " of " << result.manifest.rows.size()
      << " images -> " << (std::filesystem::path(a.out) / "manifest.jsonl").string() << "\n";
  if (result.failures > 0) {
    for (const auto& row : result.manifest.rows)
      if (!row.error.empty()) err << "error: " << row.id << ": " << row.error << "\n";
    return kFailed;
  }
  return kOk;
}

stunet::Config infer_config(const Manifest& manifest) {
  for (const auto& row : manifest.rows) {
    if (!row.error.empty()) continue;
    const auto [w, h] = image_dimensions(manifest.resolve(row.hq));
    stunet::Config c;
    c.width = w;
    c.height = h;
    for (std::size_t win : {8, 4, 2, 1})
      if ((h / 8) % win == 0 && (w / 8) % win == 0 && h % 8 == 0 && w % 8 == 0) {
        c.window_size = win;
        break;
      }
    return c;
  }
  throw UsageError("manifest has no usable rows to infer the model input size from");
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.lr < 0.0) throw UsageError("--lr must be >= 0");
  if (a.batch_size == 0) throw UsageError("--batch-size must be positive");
  const Manifest manifest = read_manifest(a.manifest);
  stunet::Config config;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw UsageError("cannot open --config " + a.config);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw UsageError(a.config + ": " + e.what());
    }
    config = stunet::Config::from_json(j);
    if (!j.contains("input_size")) {
      const auto inferred = infer_config(manifest);
      config.height = inferred.height;
      config.width = inferred.width;
    }
  } else {
    config = infer_config(manifest);
  }
  if (a.channels) config.base_channels = *a.channels;
  if (a.window) config.window_size = *a.window;
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  stunet::Weights weights = stunet::build(config, a.seed);
  const std::filesystem::path ckpt(a.out);
  const std::filesystem::path log_path = std::filesystem::path(a.log.empty() ? a.out + ".log.jsonl" : a.log);
  if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write " + log_path.string());
  TrainOptions opts;
  opts.epochs = a.epochs;
  opts.lr = a.lr;
  opts.batch_size = a.batch_size;
  opts.seed = a.seed;
  const TrainLog result = train(weights, manifest, opts, &log);
  save_checkpoint(weights, ckpt);
  out << "trained on " << result.pairs << " pairs for " << a.epochs << " epochs";
  if (!result.entries.empty()) out << ", final loss " << format_number(result.entries.back().loss);
  out << " -> " << ckpt.string() << "\n";
  return kOk;
}

int cmd_restore(const RestoreArgs& a, std::ostream& out) {
  const stunet::Weights weights = load_checkpoint(a.ckpt);
  if (!std::filesystem::is_directory(a.in)) throw UsageError("--in is not a directory: " + a.in);
  const auto files = list_images(a.in);
  std::filesystem::create_directories(a.out);
  for (const auto& f : files) {
    const ImageTensor lq = load_image(f);
    if (lq.width != weights.config.width || lq.height != weights.config.height)
      throw DimensionError(f.filename().string() + " is " + std::to_string(lq.width) + "x" +
                           std::to_string(lq.height) + ", checkpoint expects " + std::to_string(weights.config.width) +
                           "x" + std::to_string(weights.config.height));
    save_image(stunet::restore(weights, lq), std::filesystem::path(a.out) / f.filename());
  }
  out << "restored " << files.size() << " images -> " << a.out << "\n";
  return kOk;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  EvalOptions opts;
  try {
    opts.metrics = parse_metrics(a.metrics);
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  if (a.ms_ssim_scales < 1 || a.ms_ssim_scales > metrics::kMsSsimScales)
    throw UsageError("--ms-ssim-scales must be in 1..5");
  opts.ms_ssim_scales = a.ms_ssim_scales;
  auto opt_path = [](const std::string& s) {
    return s.empty() ? std::nullopt : std::optional<std::filesystem::path>(s);
  };
  opts.landmarks = opt_path(a.landmarks);
  opts.gt_landmarks = opt_path(a.gt_landmarks);
  opts.embeddings = opt_path(a.embeddings);
  opts.gt_embeddings = opt_path(a.gt_embeddings);
  auto requested = [&](Metric m) { return std::find(opts.metrics.begin(), opts.metrics.end(), m) != opts.metrics.end(); };
  if (requested(Metric::Afld) && (!opts.landmarks || !opts.gt_landmarks))
    throw UsageError("afld needs --landmarks and --gt-landmarks");
  if (requested(Metric::Afics) && (!opts.embeddings || !opts.gt_embeddings))
    throw UsageError("afics needs --embeddings and --gt-embeddings");
  if (requested(Metric::Niqe)) {
    if (a.niqe_model.empty()) throw UsageError("niqe needs --niqe-model");
    opts.niqe_model = niqe::Model::load(a.niqe_model);
  }
  for (const auto& p : {opts.landmarks, opts.gt_landmarks, opts.embeddings, opts.gt_embeddings})
    if (p && !std::filesystem::exists(*p)) throw UsageError("auxiliary file not found: " + p->string());

  const EvalReport report = evaluate(a.restored, a.gt, opts);
  write_report(report, a.out + ".csv", a.out + ".json");
  for (const auto& w : report.warnings) err << "warning: " << w << "\n";
  for (const auto& e : report.errors) err << "error: " << e.id << ": " << e.message << "\n";
  out << "evaluated " << report.rows.size() << " pairs";
  for (Metric m : report.metrics) {
    const Aggregate agg = report.aggregate(m);
    out << ", " << metric_name(m) << (higher_is_better(m) ? "↑ " : "↓ ") << (agg.mean ? format_number(*agg.mean) : "-");
  }
  out << " -> " << a.out << ".{csv,json}\n";
  return kOk;
}

int cmd_niqe_fit(const NiqeFitArgs& a, std::ostream& out) {
  if (!std::filesystem::is_directory(a.pristine)) throw UsageError("--pristine is not a directory: " + a.pristine);
  if (!(a.quantile >= 0.0 && a.quantile < 1.0)) throw UsageError("--quantile must be in [0, 1)");
  if (a.patch < 8 || a.patch % 2 != 0) throw UsageError("--patch must be even and >= 8");
  const niqe::Model model = niqe::fit(std::filesystem::path(a.pristine), a.patch, a.quantile);
  const std::filesystem::path path(a.out);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  model.save(path);
  out << "niqe model from " << model.patches << " patches -> " << a.out << "\n";
  return kOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blind face restoration benchmark toolkit", "bfrbench"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolkitVersion);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: BFRBENCH_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);

  DegradeArgs da;
  auto* deg = app.add_subcommand("degrade", "Synthesize LQ images and a manifest from an HQ directory");
  deg->add_option("--hq", da.hq, "Directory of HQ images")->required();
  deg->add_option("--setting", da.setting, "blur|noise|jpeg|lr|full")->required();
  deg->add_option("--seed", da.seed, "Global seed");
  deg->add_option("--out", da.out, "Output directory")->required();
  deg->add_option("--lr-factor", da.lr_factor, "Force the LR downsampling factor (2..8)");
  deg->add_option("--train-fraction", da.train_fraction, "Assign train/test splits with this train fraction");
  deg->add_option("--split-seed", da.split_seed, "Seed for the split assignment");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train STUNet on a manifest");
  tr->add_option("--manifest", ta.manifest, "Manifest (JSON lines)")->required()->check(CLI::ExistingFile);
  tr->add_option("--epochs", ta.epochs, "Epochs")->capture_default_str();
  tr->add_option("--lr", ta.lr, "Learning rate")->capture_default_str();
  tr->add_option("--batch-size", ta.batch_size, "Batch size")->capture_default_str();
  tr->add_option("--config", ta.config, "Model config JSON");
  tr->add_option("--seed", ta.seed, "Initialization and shuffling seed");
  tr->add_option("--out", ta.out, "Checkpoint path")->required();
  tr->add_option("--log", ta.log, "Loss log path (default <out>.log.jsonl)");
  tr->add_option("--channels", ta.channels, "Override base channels");
  tr->add_option("--window", ta.window, "Override window size");

  RestoreArgs ra;
  auto* rs = app.add_subcommand("restore", "Restore a directory of LQ images");
  rs->add_option("--ckpt", ra.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  rs->add_option("--in", ra.in, "Input directory")->required();
  rs->add_option("--out", ra.out, "Output directory")->required();

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Score restored images against ground truth");
  ev->add_option("--restored", ea.restored, "Restored image directory")->required();
  ev->add_option("--gt", ea.gt, "Ground-truth image directory")->required();
  ev->add_option("--metrics", ea.metrics, "Comma-separated psnr,ssim,ms_ssim,niqe,afld,afics")->capture_default_str();
  ev->add_option("--landmarks", ea.landmarks, "Landmarks of restored images (JSON lines)");
  ev->add_option("--gt-landmarks", ea.gt_landmarks, "Landmarks of ground-truth images (JSON lines)");
  ev->add_option("--embeddings", ea.embeddings, "ID embeddings of restored images (JSON lines)");
  ev->add_option("--gt-embeddings", ea.gt_embeddings, "ID embeddings of ground-truth images (JSON lines)");
  ev->add_option("--niqe-model", ea.niqe_model, "NIQE model JSON");
  ev->add_option("--ms-ssim-scales", ea.ms_ssim_scales, "MS-SSIM scale count")->capture_default_str();
  ev->add_option("--out", ea.out, "Report prefix (writes PREFIX.csv and PREFIX.json)")->required();

  NiqeFitArgs na;
  auto* nf = app.add_subcommand("niqe-fit", "Fit a NIQE model on pristine images");
  nf->add_option("--pristine", na.pristine, "Directory of pristine images")->required();
  nf->add_option("--out", na.out, "Model JSON path")->required();
  nf->add_option("--patch", na.patch, "Patch size")->capture_default_str();
  nf->add_option("--quantile", na.quantile, "Sharpness quantile")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  if (threads == 0)
    if (const char* env = std::getenv("BFRBENCH_THREADS")) {
      try {
        threads = std::stoi(env);
      } catch (const std::exception&) {
        err << "error: BFRBENCH_THREADS is not an integer: " << env << "\n";
        return kUsage;
      }
    }
  if (threads > 0) kernels::set_num_threads(threads);

  try {
    if (*deg) return cmd_degrade(da, out, err);
    if (*tr) return cmd_train(ta, out);
    if (*rs) return cmd_restore(ra, out);
    if (*ev) return cmd_evaluate(ea, out, err);
    if (*nf) return cmd_niqe_fit(na, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}

}  // namespace bfr
