#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bfr/stunet.hpp"

namespace bfr {

// Layout: "STUN", u32 version, config record, u64 tensor count, u64 scalar
// count, then every parameter as little-endian f64 in Weights::parameters()
// order. A JSON sidecar (<path>.json) mirrors the config.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize(const stunet::Weights& weights);
stunet::Weights deserialize(std::span<const std::uint8_t> bytes, const std::string& name = "<memory>");

void save_checkpoint(const stunet::Weights& weights, const std::filesystem::path& path);
stunet::Weights load_checkpoint(const std::filesystem::path& path);

}  // namespace bfr
