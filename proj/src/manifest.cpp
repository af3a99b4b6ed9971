#include "bfr/manifest.hpp"

#include <fstream>
#include <set>

#include "bfr/error.hpp"
#include "bfr/rng.hpp"

namespace bfr {

std::filesystem::path Manifest::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

nlohmann::json to_json(const ManifestRow& row) {
  nlohmann::ordered_json j;
  j["id"] = row.id;
  j["hq"] = row.hq;
  j["lq"] = row.lq;
  j["setting"] = row.setting;
  j["seed"] = row.seed;
  j["params"] = row.params;
  if (!row.split.empty()) j["split"] = row.split;
  if (!row.error.empty()) j["error"] = row.error;
  return nlohmann::json(j);
}

ManifestRow row_from_json(const nlohmann::json& j) {
  ManifestRow r;
  r.id = j.at("id").get<std::string>();
  r.hq = j.value("hq", "");
  r.lq = j.value("lq", "");
  r.setting = j.value("setting", "");
  r.seed = j.value("seed", std::uint64_t{0});
  r.params = j.value("params", nlohmann::json::object());
  r.split = j.value("split", "");
  r.error = j.value("error", "");
  return r;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      m.rows.push_back(row_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

namespace {

// Stable key order so manifests are byte-deterministic.
std::string dump_row(const ManifestRow& row) {
  nlohmann::ordered_json j;
  j["id"] = row.id;
  j["hq"] = row.hq;
  j["lq"] = row.lq;
  j["setting"] = row.setting;
  j["seed"] = row.seed;
  j["params"] = nlohmann::ordered_json::parse(row.params.dump());
  if (!row.split.empty()) j["split"] = row.split;
  if (!row.error.empty()) j["error"] = row.error;
  return j.dump();
}

}  // namespace

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& row : manifest.rows) out << dump_row(row) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void validate(const Manifest& manifest) {
  std::set<std::string> ids;
  for (const auto& row : manifest.rows) {
    if (!ids.insert(row.id).second) throw PairingError("duplicate manifest id " + row.id);
    if (!row.error.empty()) continue;
    for (const auto* p : {&row.hq, &row.lq})
      if (!std::filesystem::exists(manifest.resolve(*p)))
        throw IoError("manifest row " + row.id + ": missing file " + *p);
  }
}

bool assign_train(const std::string& id, double train_fraction, std::uint64_t split_seed) {
  const std::uint64_t h = mix64(fnv1a(id) ^ mix64(split_seed));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < train_fraction;
}

Manifest split(const Manifest& manifest, double train_fraction, std::uint64_t split_seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ParameterError("train fraction must lie strictly between 0 and 1");
  Manifest out = manifest;
  for (auto& row : out.rows) row.split = assign_train(row.id, train_fraction, split_seed) ? "train" : "test";
  return out;
}

}  // namespace bfr
