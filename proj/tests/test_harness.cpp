#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bfr/checkpoint.hpp"
#include "bfr/degrade.hpp"
#include "bfr/error.hpp"
#include "bfr/image.hpp"
#include "bfr/manifest.hpp"
#include "bfr/report.hpp"
#include "bfr/stunet.hpp"
#include "bfr/train.hpp"
#include "support.hpp"

using namespace bfr;

namespace {

stunet::Config micro_config() {
  stunet::Config c;
  c.base_channels = 8;
  c.stl_counts = {1, 1, 1, 1};
  c.window_size = 4;
  c.height = 32;
  c.width = 32;
  return c;
}

std::vector<std::uint8_t> bytes_of(std::string_view s) { return {s.begin(), s.end()}; }

}  // namespace

// ---- images -----------------------------------------------------------------

TEST_CASE("P6 decode maps bytes to v/255") {
  auto file = bytes_of("P6\n2 2\n255\n");
  for (std::uint8_t b = 0; b < 12; ++b) file.push_back(b);
  const ImageTensor img = decode_pnm(file);
  CHECK(img.width == 2);
  CHECK(img.height == 2);
  REQUIRE(img.data.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) CHECK(img.data[i] == static_cast<double>(i) / 255.0);
  CHECK(img.at(1, 0, 2) == 8.0 / 255.0);
}

TEST_CASE("P6 header comments and P5 grayscale") {
  auto file = bytes_of("P6 # c\n# full line\n1 1 255\n");
  file.insert(file.end(), {10, 20, 30});
  CHECK(decode_pnm(file).data[2] == 30.0 / 255.0);
  auto gray = bytes_of("P5\n2 1\n255\n");
  gray.insert(gray.end(), {7, 200});
  const ImageTensor g = decode_pnm(gray);
  CHECK(g.channels == 3);
  CHECK(g.at(0, 1, 0) == 200.0 / 255.0);
  CHECK(g.at(0, 1, 2) == 200.0 / 255.0);
}

TEST_CASE("quantization rule") {
  CHECK(quantize(0.5) == 128);
  CHECK(quantize(1.2) == 255);
  CHECK(quantize(-0.3) == 0);
  CHECK(quantize(127.5 / 255.0 - 1e-9) == 127);
  CHECK(quantize(2.5 / 255.0) == 3);
}

TEST_CASE("save/load round trip is byte identical") {
  testing::TempDir d("img");
  ImageTensor img = testing::toy_face(17, 2);
  save_image(img, d / "a.ppm");
  const auto first = testing::read_bytes(d / "a.ppm");
  const ImageTensor back = load_image(d / "a.ppm");
  CHECK(back.data == from_bytes(17, 17, to_bytes(img)).data);
  save_image(back, d / "b.ppm");
  CHECK(testing::read_bytes(d / "b.ppm") == first);
  CHECK(image_dimensions(d / "a.ppm") == std::pair<std::size_t, std::size_t>{17, 17});
  CHECK(image_id(d / "a.ppm") == "a");
}

TEST_CASE("malformed files raise format errors with offsets") {
  auto trunc = bytes_of("P6\n2 2\n255\n");
  trunc.insert(trunc.end(), {1, 2, 3});
  CHECK_THROWS_AS(decode_pnm(trunc), FormatError);
  try {
    decode_pnm(bytes_of("P6\n2 x\n255\n"));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_pnm(bytes_of("P6\n1 1\n65535\n\x01\x02\x03\x04\x05\x06")), FormatError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P3\n1 1\n255\n1 2 3")), FormatError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("")), FormatError);
  CHECK_THROWS_AS(load_image("/nonexistent/x.ppm"), IoError);
}

TEST_CASE("list_images sorts and filters by extension") {
  testing::TempDir d("ls");
  save_image(ImageTensor(2, 2), d / "b.ppm");
  save_image(ImageTensor(2, 2), d / "a.ppm");
  std::ofstream(d / "notes.txt") << "x";
  const auto files = list_images(d.path());
  REQUIRE(files.size() == 2);
  CHECK(files[0].filename() == "a.ppm");
}

// ---- manifest / split -------------------------------------------------------

TEST_CASE("manifest round trip and validation") {
  testing::TempDir d("man");
  save_image(ImageTensor(4, 4), d / "x.ppm");
  Manifest m;
  ManifestRow r;
  r.id = "x";
  r.hq = (d / "x.ppm").string();
  r.lq = "x.ppm";
  r.setting = "noise";
  r.seed = 18446744073709551615ull;
  r.params = {{"noise", {{"family", "gaussian"}, {"strength", 0.1}}}};
  r.split = "train";
  m.rows.push_back(r);
  write_manifest(m, d / "m.jsonl");
  const Manifest back = read_manifest(d / "m.jsonl");
  REQUIRE(back.rows.size() == 1);
  CHECK(back.rows[0].seed == r.seed);
  CHECK(back.rows[0].params == r.params);
  CHECK(back.rows[0].split == "train");
  CHECK(back.resolve("x.ppm") == d / "x.ppm");
  CHECK_NOTHROW(validate(back));
  Manifest dup = back;
  dup.rows.push_back(dup.rows[0]);
  CHECK_THROWS_AS(validate(dup), PairingError);
  Manifest missing = back;
  missing.rows[0].lq = "gone.ppm";
  CHECK_THROWS_AS(validate(missing), IoError);
}

TEST_CASE("split: fraction, regression count, purity and growth stability") {
  Manifest m;
  for (int i = 0; i < 1000; ++i) {
    ManifestRow r;
    char id[16];
    std::snprintf(id, sizeof id, "img_%04d", i);
    r.id = id;
    m.rows.push_back(r);
  }
  const Manifest s = split(m, 0.9, 7);
  std::size_t train = 0;
  for (const auto& r : s.rows) train += r.split == "train";
  MESSAGE("train rows: " << train);
  CHECK(train >= 870);
  CHECK(train <= 930);
  CHECK(train == 901);
  const Manifest again = split(m, 0.9, 7);
  for (std::size_t i = 0; i < s.rows.size(); ++i) CHECK(again.rows[i].split == s.rows[i].split);
  Manifest grown = m;
  for (int i = 0; i < 300; ++i) {
    ManifestRow r;
    r.id = "extra_" + std::to_string(i);
    grown.rows.push_back(r);
  }
  const Manifest g = split(grown, 0.9, 7);
  for (std::size_t i = 0; i < s.rows.size(); ++i) CHECK(g.rows[i].split == s.rows[i].split);
  // a different seed reassigns some rows
  const Manifest other = split(m, 0.9, 8);
  std::size_t moved = 0;
  for (std::size_t i = 0; i < s.rows.size(); ++i) moved += other.rows[i].split != s.rows[i].split;
  CHECK(moved > 0);
  CHECK_THROWS_AS(split(m, 1.0, 0), ParameterError);
  CHECK_THROWS_AS(split(m, 0.0, 0), ParameterError);
}

// ---- reports ----------------------------------------------------------------

TEST_CASE("metric list parsing") {
  const auto ms = parse_metrics("afics,PSNR, ms-ssim,psnr");
  REQUIRE(ms.size() == 3);
  CHECK(ms[0] == Metric::Psnr);
  CHECK(ms[1] == Metric::MsSsim);
  CHECK(ms[2] == Metric::Afics);
  CHECK_THROWS_AS(parse_metrics("lpips"), ParameterError);
  CHECK_THROWS_AS(parse_metrics(""), ParameterError);
  CHECK_FALSE(higher_is_better(Metric::Niqe));
  CHECK_FALSE(higher_is_better(Metric::Afld));
  CHECK(higher_is_better(Metric::Afics));
}

TEST_CASE("number formatting round-trips") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(1.0 / 3.0) == "0.3333333333333333");
  CHECK(std::stod(format_number(48.130803608679104)) == 48.130803608679104);
  CHECK(format_number(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(format_number(std::nan("")) == "nan");
}

TEST_CASE("empty report is header only") {
  EvalReport r;
  r.metrics = {Metric::Psnr};
  CHECK(report_csv(r) == "id,psnr,ssim,ms_ssim,niqe,afld,afics\n");
  const auto j = nlohmann::json::parse(report_json(r));
  CHECK(j["aggregates"]["psnr"]["mean"].is_null());
  CHECK(j["aggregates"]["psnr"]["count"] == 0);
  CHECK(j["images"] == 0);
}

TEST_CASE("report rows, aggregates, capped psnr and determinism") {
  EvalReport r;
  r.metrics = {Metric::Psnr, Metric::Ssim, Metric::Afld};
  ReportRow b{"b", {}}, a{"a", {}}, c{"c", {}};
  b[Metric::Psnr] = 30.0;
  b[Metric::Ssim] = 0.8;
  b[Metric::Afld] = 0.02;
  a[Metric::Psnr] = std::numeric_limits<double>::infinity();
  a[Metric::Ssim] = 1.0;
  c[Metric::Psnr] = 20.5;
  c[Metric::Ssim] = 0.5;
  r.rows = {b, a, c};
  r.errors = {{"z", "unpaired"}};
  r.warnings = {"afld: no landmarks for 'c'"};
  r.config_hash = "abc";
  r.sort();
  CHECK(r.rows[0].id == "a");
  CHECK(*r.aggregate(Metric::Psnr).mean == doctest::Approx((99.0 + 30.0 + 20.5) / 3));
  CHECK(std::abs(*r.aggregate(Metric::Ssim).mean - (1.0 + 0.8 + 0.5) / 3) < 1e-15);
  CHECK(r.aggregate(Metric::Afld).count == 1);
  CHECK_FALSE(r.aggregate(Metric::Niqe).mean);

  const std::string csv = report_csv(r);
  CHECK(csv ==
        "id,psnr,ssim,ms_ssim,niqe,afld,afics\n"
        "a,inf,1,,,,\n"
        "b,30,0.8,,,0.02,\n"
        "c,20.5,0.5,,,,\n");
  const auto j = nlohmann::json::parse(report_json(r));
  CHECK(j["metadata"]["version"] == kToolkitVersion);
  CHECK(j["metadata"]["config_hash"] == "abc");
  CHECK(j["aggregates"]["afld"]["higher_is_better"] == false);
  CHECK(j["aggregates"]["psnr"]["higher_is_better"] == true);
  CHECK(j["errors"][0]["id"] == "z");
  CHECK(j["warnings"].size() == 1);

  testing::TempDir d("rep");
  write_report(r, d / "r1.csv", d / "r1.json");
  write_report(r, d / "r2.csv", d / "r2.json");
  CHECK(testing::read_bytes(d / "r1.csv") == testing::read_bytes(d / "r2.csv"));
  CHECK(testing::read_bytes(d / "r1.json") == testing::read_bytes(d / "r2.json"));
  CHECK(testing::read_text(d / "r1.csv") == csv);
}

// ---- checkpoints ------------------------------------------------------------

TEST_CASE("checkpoint layout and round trip") {
  stunet::Config cfg = micro_config();
  cfg.heads = {1, 2, 0, 0};
  const stunet::Weights w = stunet::build(cfg, 5);
  const auto bytes = serialize(w);
  CHECK(std::memcmp(bytes.data(), "STUN", 4) == 0);
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  // last 8 bytes: the final restore bias scalar, little-endian
  const double last = w.restore_bias.data().back();
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
  CHECK(std::bit_cast<double>(bits) == last);
  const stunet::Weights back = deserialize(bytes);
  CHECK(back.checksum() == w.checksum());
  CHECK(back.config.to_json() == w.config.to_json());
  CHECK(back.config.level_heads(1) == 2);

  testing::TempDir d("ckpt");
  save_checkpoint(w, d / "m.ckpt");
  CHECK(testing::read_bytes(d / "m.ckpt") == bytes);
  CHECK(std::filesystem::exists(d.path() / "m.ckpt.json"));
  CHECK(load_checkpoint(d / "m.ckpt").checksum() == w.checksum());
}

TEST_CASE("checkpoint format errors") {
  const auto bytes = serialize(stunet::build(micro_config(), 1));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK_THROWS_AS(deserialize(bad_version), FormatError);
  CHECK_THROWS_AS(deserialize(std::span(bytes).first(bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(deserialize(std::span(bytes).first(10)), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(deserialize(extra), FormatError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent.ckpt"), IoError);
}

// ---- training ---------------------------------------------------------------

TEST_CASE("epoch order is a deterministic permutation") {
  const auto a = epoch_order(10, 3, 1), b = epoch_order(10, 3, 1), c = epoch_order(10, 3, 2);
  CHECK(a == b);
  CHECK(a != c);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("training on a toy manifest") {
  testing::TempDir hq("hq"), out("pairs");
  testing::write_toy_corpus(hq.path(), 16, 32, 40);
  const auto syn = degrade::synthesize(hq.path(), degrade::Setting::Noise, 3, out.path());
  const Manifest m = read_manifest(out / "manifest.jsonl");
  REQUIRE(m.rows.size() == 16);

  const stunet::Weights init = stunet::build(micro_config(), 9);

  SUBCASE("zero epochs leave weights untouched") {
    stunet::Weights w = stunet::build(micro_config(), 9);
    TrainOptions o;
    o.epochs = 0;
    const TrainLog log = train(w, m, o);
    CHECK(log.entries.empty());
    CHECK(w.checksum() == init.checksum());
  }

  SUBCASE("deterministic, logged and decreasing by epoch") {
    TrainOptions o;
    o.epochs = 3;
    o.batch_size = 4;
    o.seed = 11;
    stunet::Weights w1 = stunet::build(micro_config(), 9), w2 = stunet::build(micro_config(), 9);
    std::ostringstream stream;
    const TrainLog l1 = train(w1, m, o, &stream);
    const TrainLog l2 = train(w2, m, o);
    CHECK(w1.checksum() == w2.checksum());
    CHECK(w1.checksum() != init.checksum());
    CHECK(l1.jsonl() == l2.jsonl());
    CHECK(stream.str() == l1.jsonl());
    REQUIRE(l1.entries.size() == 12);
    CHECK(l1.pairs == 16);
    CHECK(l1.entries[0].epoch == 1);
    CHECK(l1.entries[0].iter == 1);
    CHECK(l1.entries[11].epoch == 3);
    CHECK(l1.entries[11].iter == 4);
    const auto first = nlohmann::json::parse(TrainLog::line(l1.entries[0]));
    CHECK(first["loss"].get<double>() == l1.entries[0].loss);
    std::array<double, 3> means{};
    for (const auto& e : l1.entries) means[e.epoch - 1] += e.loss / 4.0;
    MESSAGE("epoch means " << means[0] << " " << means[1] << " " << means[2]);
    CHECK(means[1] < means[0]);
    CHECK(means[2] < means[1]);
  }

  SUBCASE("test rows and failed rows are excluded") {
    Manifest s = m;
    for (std::size_t i = 0; i < 6; ++i) s.rows[i].split = "test";
    s.rows[6].error = "broken";
    stunet::Weights w = stunet::build(micro_config(), 9);
    TrainOptions o;
    o.epochs = 1;
    const TrainLog log = train(w, s, o);
    CHECK(log.pairs == 9);
    CHECK(log.entries.size() == 3);
  }

  SUBCASE("size mismatch names the file") {
    stunet::Config big = micro_config();
    big.height = big.width = 64;
    stunet::Weights w = stunet::build(big, 9);
    TrainOptions o;
    o.epochs = 1;
    try {
      train(w, m, o);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("face_") != std::string::npos);
    }
  }
}
