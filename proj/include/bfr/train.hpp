#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "bfr/manifest.hpp"
#include "bfr/stunet.hpp"

namespace bfr {

struct TrainOptions {
  std::size_t epochs = 3;
  double lr = 0.001;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
};

struct TrainLogEntry {
  std::size_t epoch = 0;  // 1-based
  std::size_t iter = 0;   // 1-based within the epoch
  double loss = 0.0;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
  std::size_t pairs = 0;

  static std::string line(const TrainLogEntry& e);
  std::string jsonl() const;
};

/// Visit order for one epoch: Fisher-Yates from (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

/// Trains on every row whose split is not "test" and that carries no error.
/// Each log line is also written to `log` as it is produced.
TrainLog train(stunet::Weights& weights, const Manifest& manifest, const TrainOptions& options,
               std::ostream* log = nullptr);

}  // namespace bfr
