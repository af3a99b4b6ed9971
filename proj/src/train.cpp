#include "bfr/train.hpp"

#include <numeric>

#include "bfr/error.hpp"
#include "bfr/rng.hpp"

namespace bfr {

std::string TrainLog::line(const TrainLogEntry& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["iter"] = e.iter;
  j["loss"] = e.loss;
  return j.dump();
}

std::string TrainLog::jsonl() const {
  std::string out;
  for (const auto& e : entries) out += line(e) + "\n";
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

TrainLog train(stunet::Weights& weights, const Manifest& manifest, const TrainOptions& options, std::ostream* log) {
  if (options.batch_size == 0) throw ParameterError("batch size must be positive");
  if (!(options.lr >= 0.0)) throw ParameterError("learning rate must be >= 0");
  const auto& cfg = weights.config;

  std::vector<ImageTensor> lq, gt;
  for (const auto& row : manifest.rows) {
    if (!row.error.empty() || row.split == "test") continue;
    const auto lq_path = manifest.resolve(row.lq), hq_path = manifest.resolve(row.hq);
    ImageTensor a = load_image(lq_path), b = load_image(hq_path);
    auto check = [&](const ImageTensor& img, const std::filesystem::path& path) {
      if (img.width != cfg.width || img.height != cfg.height)
        throw DimensionError(path.string() + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                             ", model expects " + std::to_string(cfg.width) + "x" + std::to_string(cfg.height));
    };
    check(a, lq_path);
    check(b, hq_path);
    lq.push_back(std::move(a));
    gt.push_back(std::move(b));
  }

  TrainLog result;
  result.pairs = lq.size();
  if (lq.empty()) {
    if (options.epochs > 0) throw ParameterError("manifest has no training pairs");
    return result;
  }
  stunet::Sgd sgd(options.lr);
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto order = epoch_order(lq.size(), options.seed, epoch);
    std::size_t iter = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::vector<ImageTensor> bl, bg;
      for (std::size_t k = start; k < end; ++k) {
        bl.push_back(lq[order[k]]);
        bg.push_back(gt[order[k]]);
      }
      ++iter;
      double loss = 0.0;
      try {
        loss = stunet::train_step(weights, stunet::to_batch(bl), stunet::to_batch(bg), sgd);
      } catch (const TrainingError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + " iter " + std::to_string(iter) + ": " + e.what());
      }
      result.entries.push_back({epoch, iter, loss});
      if (log) *log << TrainLog::line(result.entries.back()) << "\n" << std::flush;
    }
  }
  return result;
}

}  // namespace bfr
