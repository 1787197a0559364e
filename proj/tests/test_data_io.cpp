#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "scrl/audio.hpp"
#include "scrl/data_io.hpp"
#include "scrl/fileio.hpp"
#include "test_util.hpp"

using namespace scrl;
namespace fs = std::filesystem;

namespace {

void touch(const fs::path& p) { std::ofstream(p) << "x"; }

// Bitwise reflected CRC-32 (poly 0xEDB88320), independent of zlib.
std::uint32_t slow_crc32(const std::vector<std::uint8_t>& b) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::uint8_t byte : b) {
    crc ^= byte;
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

std::size_t manifest_error_line(const fs::path& p) {
  try {
    load_manifest(p);
  } catch (const ManifestError& e) {
    return e.line();
  }
  return SIZE_MAX;
}

RgbImage solid(std::size_t w, std::size_t h, std::uint8_t v) {
  return RgbImage{w, h, std::vector<std::uint8_t>(w * h * 3, v)};
}

SynthSpec small_spec() {
  SynthSpec s;
  s.classes = 4;
  s.per_class = 3;
  s.seed = 99;
  s.image_side = 24;
  s.voice_seconds = 0.1;
  return s;
}

}  // namespace

TEST_CASE("load_manifest examples") {
  auto dir = scrl::testing::scratch_dir("manifest");
  for (auto name : {"a.ppm", "a.wav", "b.ppm", "b.wav"}) touch(dir / name);
  write_text_atomic(dir / "ok.tsv", "s1\ta.ppm\ta.wav\t0\tforest\ns2\tb.ppm\tb.wav\t1\triver\n");
  auto m = load_manifest(dir / "ok.tsv");
  REQUIRE(m.size() == 2);
  CHECK(m.records[1].id == "s2");
  CHECK(m.records[1].label == 1);
  CHECK(m.records[1].class_name == "river");
  CHECK(m.records[0].image_path == dir / "a.ppm");
  CHECK(m.class_count() == 2);

  write_text_atomic(dir / "dup.tsv", "s1\ta.ppm\ta.wav\t0\tforest\ns1\tb.ppm\tb.wav\t1\triver\n");
  CHECK(manifest_error_line(dir / "dup.tsv") == 2);
  CHECK_THROWS_WITH_AS(load_manifest(dir / "dup.tsv"), doctest::Contains("line 2"), ManifestError);

  write_text_atomic(dir / "gap.tsv", "s1\ta.ppm\ta.wav\t0\tforest\ns2\tb.ppm\tb.wav\t2\triver\n");
  CHECK_THROWS_AS(load_manifest(dir / "gap.tsv"), ManifestError);

  write_text_atomic(dir / "missing.tsv", "s1\ta.ppm\ta.wav\t0\tforest\ns2\tb.ppm\tnope.wav\t1\triver\n");
  CHECK(manifest_error_line(dir / "missing.tsv") == 2);

  write_text_atomic(dir / "fields.tsv", "s1\ta.ppm\ta.wav\t0\n");
  CHECK(manifest_error_line(dir / "fields.tsv") == 1);

  write_text_atomic(dir / "label.tsv", "s1\ta.ppm\ta.wav\t-1\tforest\n");
  CHECK(manifest_error_line(dir / "label.tsv") == 1);
}

TEST_CASE("synthetic manifest round-trips through write and load") {
  auto dir = scrl::testing::scratch_dir("manifest_rt");
  SynthSpec spec = small_spec();
  spec.classes = 8;
  spec.per_class = 50;
  spec.image_side = 4;
  spec.voice_seconds = 0.02;
  auto m = synth_dataset(spec, dir);
  REQUIRE(m.size() == 400);
  auto loaded = load_manifest(dir / "manifest.tsv");
  REQUIRE(loaded.size() == m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK(loaded.records[i].id == m.records[i].id);
    CHECK(fs::equivalent(loaded.records[i].image_path, m.records[i].image_path));
    CHECK(fs::equivalent(loaded.records[i].voice_path, m.records[i].voice_path));
    CHECK(loaded.records[i].label == m.records[i].label);
    CHECK(loaded.records[i].class_name == m.records[i].class_name);
  }
  // Re-writing the loaded manifest reproduces the same bytes.
  write_manifest(loaded, dir / "again.tsv");
  CHECK(read_file_bytes(dir / "again.tsv") == read_file_bytes(dir / "manifest.tsv"));
}

TEST_CASE("stratified split keeps per-class order and proportions") {
  Manifest m;
  for (std::size_t i = 0; i < 30; ++i) {
    m.records.push_back({"r" + std::to_string(i), "i", "v", i % 3, "c" + std::to_string(i % 3)});
  }
  auto split = stratified_split(m, 0.2);
  CHECK(split.train.size() == 24);
  CHECK(split.test.size() == 6);
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t n = 0;
    for (const auto& r : split.test.records) n += r.label == c;
    CHECK(n == 2);
  }
  // Class 0 records are r0, r3, ..., r27; the last two go to test.
  CHECK(split.test.records[0].id == "r24");
  CHECK(stratified_split(m, 0.0).test.size() == 0);
  CHECK_THROWS_AS(stratified_split(m, 1.0), ContractError);
}

TEST_CASE("SCRLT round trip and corruption") {
  std::mt19937_64 rng(17);
  auto dir = scrl::testing::scratch_dir("scrlt");
  for (int trial = 0; trial < 20; ++trial) {
    const Shape shape{1 + rng() % 5, 1 + rng() % 7, 1 + rng() % 3};
    auto d = scrl::testing::random_tensor(shape, rng, -1e6, 1e6);
    write_tensor(d, dir / "d.scrlt");
    auto back = read_tensor<double>(dir / "d.scrlt");
    REQUIRE(back.shape() == shape);
    CHECK(std::memcmp(back.data().data(), d.data().data(), d.size() * sizeof(double)) == 0);

    auto f = d.cast<float>();
    write_tensor(f, dir / "f.scrlt");
    auto fb = read_tensor<float>(dir / "f.scrlt");
    CHECK(std::memcmp(fb.data().data(), f.data().data(), f.size() * sizeof(float)) == 0);
  }

  auto bytes = encode_tensor(Tensor<float>(Shape{3, 3}, 1.5f));
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= 0x10;
    CHECK_THROWS_AS(decode_tensor<float>(bad), FormatError);
  }
  CHECK_THROWS_AS(decode_tensor<float>(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 10)),
                  FormatError);
  CHECK_THROWS_AS(read_tensor<float>(dir / "absent.scrlt"), IoError);
}

TEST_CASE("SCRLT byte layout of a 2x2 f32 tensor") {
  Tensor<float> t(Shape{2, 2}, {1.0f, -2.0f, 0.5f, 3.25f});
  std::vector<std::uint8_t> want = {'S', 'C', 'R', 'L', 'T', 1, 0, 0, 0, 1, 0, 0, 0,
                                    2,   0,   0,   0,   2,   0, 0, 0, 2, 0, 0, 0};
  // IEEE-754 little-endian encodings of 1, -2, 0.5, 3.25.
  for (std::uint32_t bits : {0x3F800000u, 0xC0000000u, 0x3F000000u, 0x40500000u}) {
    for (int k = 0; k < 4; ++k) want.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
  }
  const std::uint32_t crc = slow_crc32(want);
  for (int k = 0; k < 4; ++k) want.push_back(static_cast<std::uint8_t>(crc >> (8 * k)));
  CHECK(encode_tensor(t) == want);
  CHECK(tensor_dtype(want) == DType::kF32);
}

TEST_CASE("read_image examples") {
  auto dir = scrl::testing::scratch_dir("ppm");
  write_file_atomic(dir / "white.ppm", encode_ppm(solid(224, 224, 255)));
  auto white = read_image(dir / "white.ppm");
  CHECK(white.shape() == Shape{224, 224, 3});
  for (float v : white.data()) REQUIRE(v == 1.0f);

  write_file_atomic(dir / "big.ppm", encode_ppm(solid(448, 448, 0)));
  CHECK(read_image(dir / "big.ppm").shape() == Shape{224, 224, 3});

  // Checkerboard of 3x3 cells at 100x70 against direct index mapping.
  RgbImage board{100, 70, std::vector<std::uint8_t>(100 * 70 * 3)};
  for (std::size_t y = 0; y < 70; ++y)
    for (std::size_t x = 0; x < 100; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        board.pixels[(y * 100 + x) * 3 + c] =
            static_cast<std::uint8_t>(((x / 3 + y / 3) % 2) * 200 + c * 10);
  auto resized = image_to_tensor(board);
  for (std::size_t y = 0; y < 224; ++y)
    for (std::size_t x = 0; x < 224; ++x) {
      const std::size_t sy = static_cast<std::size_t>(std::floor(y * 70.0 / 224.0));
      const std::size_t sx = static_cast<std::size_t>(std::floor(x * 100.0 / 224.0));
      for (std::size_t c = 0; c < 3; ++c)
        REQUIRE(resized(y, x, c) == board.pixels[(sy * 100 + sx) * 3 + c] / 255.0f);
    }

  auto header_comment = std::string("P6\n# made by hand\n2 1\n255\n");
  std::vector<std::uint8_t> commented(header_comment.begin(), header_comment.end());
  for (int i = 0; i < 6; ++i) commented.push_back(static_cast<std::uint8_t>(i * 50));
  auto img = decode_ppm(commented);
  CHECK(img.width == 2);
  CHECK(img.pixels[5] == 250);

  auto p3 = encode_ppm(solid(2, 2, 1));
  p3[1] = '3';
  CHECK_THROWS_AS(decode_ppm(p3), FormatError);
  std::string deep = "P6 2 2 65535\n";
  CHECK_THROWS_AS(decode_ppm(std::vector<std::uint8_t>(deep.begin(), deep.end())), FormatError);
  auto cut = encode_ppm(solid(4, 4, 1));
  cut.pop_back();
  CHECK_THROWS_AS(decode_ppm(cut), FormatError);
}

TEST_CASE("synth_dataset is deterministic per seed") {
  auto a = scrl::testing::scratch_dir("synth_a"), b = scrl::testing::scratch_dir("synth_b");
  auto ma = synth_dataset(small_spec(), a);
  auto mb = synth_dataset(small_spec(), b);
  REQUIRE(ma.size() == 12);
  for (std::size_t i = 0; i < ma.size(); ++i) {
    CHECK(read_file_bytes(ma.records[i].image_path) == read_file_bytes(mb.records[i].image_path));
    CHECK(read_file_bytes(ma.records[i].voice_path) == read_file_bytes(mb.records[i].voice_path));
  }
  CHECK(read_file_bytes(a / "manifest.tsv") == read_file_bytes(b / "manifest.tsv"));

  auto spec = small_spec();
  spec.seed = 100;
  auto c = scrl::testing::scratch_dir("synth_c");
  auto mc = synth_dataset(spec, c);
  CHECK(read_file_bytes(mc.records[0].voice_path) != read_file_bytes(ma.records[0].voice_path));
}

TEST_CASE("default synthetic dataset: balance, voice pitch and separability") {
  auto dir = scrl::testing::scratch_dir("synth_default");
  SynthSpec spec;  // 8 classes x 50
  auto m = synth_dataset(spec, dir);
  REQUIRE(m.size() == 400);
  std::vector<std::size_t> counts(8, 0);
  for (const auto& r : m.records) ++counts[r.label];
  for (std::size_t n : counts) CHECK(n == 50);

  auto img = read_image(m.records[0].image_path);
  CHECK(img.shape() == Shape{224, 224, 3});

  // Dominant frequency over a 0.2 s excerpt (5 Hz bins), naive DFT.
  for (std::size_t c = 0; c < 8; ++c) {
    auto w = read_wav_file(m.records[c * 50].voice_path);
    CHECK(w.sample_rate == 22050);
    CHECK(w.samples.size() == 44100);
    const std::size_t n = 4410;
    std::size_t best = 0;
    double best_mag = -1;
    for (std::size_t k = 1; k <= n / 2; ++k) {
      std::complex<double> acc = 0;
      for (std::size_t t = 0; t < n; ++t)
        acc += w.samples[t] * std::polar(1.0, -2 * std::numbers::pi * static_cast<double>(k * t % n) / n);
      if (std::abs(acc) > best_mag) best_mag = std::abs(acc), best = k;
    }
    const double bin = 22050.0 / n;
    CHECK(std::abs(best * bin - synth_fundamental_hz(c)) <= bin);
  }

  // Nearest centroid on mean MFCC vectors: fit on train, score on test.
  auto split = stratified_split(m, 0.2);
  auto mean_mfcc = [](const ManifestRecord& r) {
    auto mf = compute_mfcc(read_wav_file(r.voice_path));
    std::vector<double> mu(mf.n_coeffs(), 0.0);
    for (std::size_t f = 0; f < mf.n_frames(); ++f)
      for (std::size_t k = 0; k < mu.size(); ++k) mu[k] += mf.frames(f, k) / mf.n_frames();
    return mu;
  };
  std::vector<std::vector<double>> centroid(8, std::vector<double>(12, 0.0));
  for (const auto& r : split.train.records) {
    auto mu = mean_mfcc(r);
    for (std::size_t k = 0; k < 12; ++k) centroid[r.label][k] += mu[k] / 40.0;
  }
  std::size_t correct = 0;
  for (const auto& r : split.test.records) {
    auto mu = mean_mfcc(r);
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < 8; ++c) {
      double d = 0;
      for (std::size_t k = 0; k < 12; ++k) d += (mu[k] - centroid[c][k]) * (mu[k] - centroid[c][k]);
      if (d < best_d) best_d = d, best = c;
    }
    correct += best == r.label;
  }
  const double accuracy = static_cast<double>(correct) / split.test.size();
  INFO("nearest-centroid accuracy " << accuracy);
  CHECK(accuracy >= 0.95);
}
