#include "scrl/data_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "scrl/audio.hpp"
#include "scrl/binary.hpp"
#include "scrl/fileio.hpp"

namespace scrl {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- manifest

std::size_t Manifest::class_count() const {
  std::size_t c = 0;
  for (const auto& r : records) c = std::max(c, r.label + 1);
  return c;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

void check_records(const Manifest& m, const std::vector<std::size_t>& line_of) {
  auto line = [&](std::size_t i) { return line_of.empty() ? 0 : line_of[i]; };
  std::unordered_set<std::string> ids;
  std::map<std::size_t, std::string> names;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    if (r.id.empty()) throw ManifestError("empty id", line(i));
    if (!ids.insert(r.id).second) throw ManifestError("duplicate id '" + r.id + "'", line(i));
    auto [it, fresh] = names.emplace(r.label, r.class_name);
    if (!fresh && it->second != r.class_name) {
      throw ManifestError("label " + std::to_string(r.label) + " named both '" + it->second +
                              "' and '" + r.class_name + "'",
                          line(i));
    }
  }
  std::size_t expect = 0;
  for (const auto& [label, name] : names) {
    if (label != expect) {
      throw ManifestError("labels are not contiguous: missing label " + std::to_string(expect), 0);
    }
    ++expect;
  }
}

}  // namespace

void validate_manifest(const Manifest& m) { check_records(m, {}); }

Manifest parse_manifest(const std::string& text, const fs::path& base_dir, bool check_files) {
  Manifest m;
  std::vector<std::size_t> line_of;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 5) {
      throw ManifestError("expected 5 tab-separated fields, got " + std::to_string(f.size()), lineno);
    }
    ManifestRecord r;
    r.id = f[0];
    r.image_path = fs::path(f[1]).is_absolute() ? fs::path(f[1]) : base_dir / f[1];
    r.voice_path = fs::path(f[2]).is_absolute() ? fs::path(f[2]) : base_dir / f[2];
    const auto* end = f[3].data() + f[3].size();
    auto [ptr, ec] = std::from_chars(f[3].data(), end, r.label);
    if (ec != std::errc{} || ptr != end || f[3].empty()) {
      throw ManifestError("label '" + f[3] + "' is not a non-negative integer", lineno);
    }
    r.class_name = f[4];
    if (check_files) {
      for (const auto* p : {&r.image_path, &r.voice_path}) {
        if (!fs::is_regular_file(*p)) throw ManifestError("missing file " + p->string(), lineno);
      }
    }
    m.records.push_back(std::move(r));
    line_of.push_back(lineno);
  }
  check_records(m, line_of);
  return m;
}

Manifest load_manifest(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_manifest(std::string(bytes.begin(), bytes.end()), path.parent_path(), true);
}

void write_manifest(const Manifest& m, const fs::path& path) {
  const fs::path base = fs::absolute(path).parent_path().lexically_normal();
  auto rel = [&](const fs::path& p) {
    const fs::path abs = fs::absolute(p).lexically_normal();
    const fs::path r = abs.lexically_relative(base);
    return (!r.empty() && *r.begin() != "..") ? r.generic_string() : abs.generic_string();
  };
  std::string out;
  for (const auto& r : m.records) {
    out += r.id + '\t' + rel(r.image_path) + '\t' + rel(r.voice_path) + '\t' +
           std::to_string(r.label) + '\t' + r.class_name + '\n';
  }
  write_text_atomic(path, out);
}

ManifestSplit stratified_split(const Manifest& m, double test_fraction) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ContractError("stratified_split: test_fraction must lie in [0, 1)");
  }
  std::map<std::size_t, std::size_t> per_class;
  for (const auto& r : m.records) ++per_class[r.label];
  std::map<std::size_t, std::size_t> seen;
  ManifestSplit out;
  for (const auto& r : m.records) {
    const auto n = static_cast<double>(per_class[r.label]);
    const auto n_train = static_cast<std::size_t>(std::floor((1.0 - test_fraction) * n + 1e-9));
    (seen[r.label]++ < n_train ? out.train : out.test).records.push_back(r);
  }
  return out;
}

// -------------------------------------------------------------------- SCRLT

namespace {

constexpr std::string_view kTensorMagic = "SCRLT";
constexpr std::uint32_t kTensorVersion = 1;

template <typename T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::kF32 : DType::kF64;
}

struct TensorHeader {
  DType dtype;
  Shape shape;
};

TensorHeader read_header(ByteReader& r) {
  if (r.text(kTensorMagic.size(), "magic") != kTensorMagic) r.fail("bad magic", 0);
  const auto version_at = r.offset();
  if (r.pod<std::uint32_t>("version") != kTensorVersion) r.fail("unsupported version", version_at);
  const auto dtype_at = r.offset();
  const auto dtype = r.pod<std::uint32_t>("dtype");
  if (dtype != 1 && dtype != 2) r.fail("unknown dtype " + std::to_string(dtype), dtype_at);
  const auto rank_at = r.offset();
  const auto rank = r.pod<std::uint32_t>("rank");
  if (rank == 0 || rank > 16) r.fail("invalid rank " + std::to_string(rank), rank_at);
  TensorHeader h{static_cast<DType>(dtype), {}};
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto dim_at = r.offset();
    const auto d = r.pod<std::uint32_t>("dims");
    if (d == 0) r.fail("zero dimension", dim_at);
    h.shape.push_back(d);
  }
  return h;
}

template <typename S, typename T>
Tensor<T> read_payload(ByteReader& r, const Shape& shape) {
  auto raw = r.array<S>(numel(shape), "payload");
  if (r.remaining() != 0) r.fail("trailing bytes after payload", r.offset());
  return Tensor<T>(shape, std::vector<T>(raw.begin(), raw.end()));
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_tensor(const Tensor<T>& t) {
  ByteWriter w;
  w.text(kTensorMagic);
  w.pod<std::uint32_t>(kTensorVersion);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(dtype_of<T>()));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.pod<std::uint32_t>(static_cast<std::uint32_t>(d));
  w.array<T>(t.data());
  w.seal();
  return std::move(w.buffer());
}

DType tensor_dtype(std::span<const std::uint8_t> bytes) {
  ByteReader r(ByteReader::verify_crc(bytes, "tensor"), "tensor");
  return read_header(r).dtype;
}

template <typename T>
Tensor<T> decode_tensor(std::span<const std::uint8_t> bytes) {
  ByteReader r(ByteReader::verify_crc(bytes, "tensor"), "tensor");
  const TensorHeader h = read_header(r);
  return h.dtype == DType::kF32 ? read_payload<float, T>(r, h.shape)
                                : read_payload<double, T>(r, h.shape);
}

template <typename T>
void write_tensor(const Tensor<T>& t, const fs::path& path) {
  write_file_atomic(path, encode_tensor(t));
}

template <typename T>
Tensor<T> read_tensor(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_tensor<T>(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

template std::vector<std::uint8_t> encode_tensor(const Tensor<float>&);
template std::vector<std::uint8_t> encode_tensor(const Tensor<double>&);
template Tensor<float> decode_tensor<float>(std::span<const std::uint8_t>);
template Tensor<double> decode_tensor<double>(std::span<const std::uint8_t>);
template void write_tensor(const Tensor<float>&, const fs::path&);
template void write_tensor(const Tensor<double>&, const fs::path&);
template Tensor<float> read_tensor<float>(const fs::path&);
template Tensor<double> read_tensor<double>(const fs::path&);

// ---------------------------------------------------------------------- PPM

namespace {

// Skips whitespace and '#' comments, then reads a decimal field.
std::size_t ppm_field(std::span<const std::uint8_t> b, std::size_t& pos, const char* what) {
  for (;;) {
    while (pos < b.size() && std::isspace(b[pos])) ++pos;
    if (pos < b.size() && b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  std::size_t v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos] - '0');
    if (v > (1u << 24)) throw FormatError(std::string("ppm: ") + what + " too large", start);
    ++pos;
  }
  if (pos == start) throw FormatError(std::string("ppm: expected ") + what, start);
  return v;
}

}  // namespace

RgbImage decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw FormatError("ppm: bad magic, expected P6", 0);
  }
  std::size_t pos = 2;
  RgbImage img;
  img.width = ppm_field(bytes, pos, "width");
  img.height = ppm_field(bytes, pos, "height");
  const std::size_t maxval_at = pos;
  const std::size_t maxval = ppm_field(bytes, pos, "maxval");
  if (maxval != 255) throw FormatError("ppm: maxval must be 255", maxval_at);
  if (img.width == 0 || img.height == 0) throw FormatError("ppm: zero image size", 2);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw FormatError("ppm: missing separator before pixel data", pos);
  }
  ++pos;
  const std::size_t n = img.width * img.height * 3;
  if (bytes.size() - pos < n) throw FormatError("ppm: truncated pixel data", bytes.size());
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
  if (img.pixels.size() != img.width * img.height * 3) {
    throw ContractError("encode_ppm: pixel buffer does not match dimensions");
  }
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

Tensor<float> image_to_tensor(const RgbImage& img, std::size_t side) {
  Tensor<float> out(Shape{side, side, 3});
  for (std::size_t y = 0; y < side; ++y) {
    const std::size_t sy = y * img.height / side;
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t sx = x * img.width / side;
      for (std::size_t c = 0; c < 3; ++c) {
        out(y, x, c) = static_cast<float>(img.pixels[(sy * img.width + sx) * 3 + c]) / 255.0f;
      }
    }
  }
  return out;
}

Tensor<float> read_image(const fs::path& path, std::size_t side) {
  const auto bytes = read_file_bytes(path);
  try {
    return image_to_tensor(decode_ppm(bytes), side);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

// ---------------------------------------------------------------- synthetic

double synth_fundamental_hz(std::size_t label) { return 200.0 * static_cast<double>(label + 1); }

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Oriented grating; orientation, frequency and per-channel contrast are keyed
// by class, phase is random.
RgbImage synth_image(std::size_t label, std::size_t classes, std::size_t side, double noise,
                     std::mt19937_64& rng) {
  const double theta = std::numbers::pi * static_cast<double>(label) / static_cast<double>(classes);
  const double cycles = 6.0 + 3.0 * static_cast<double>(label % 3);
  double gain[3];
  for (std::size_t c = 0; c < 3; ++c) gain[c] = 0.5 + 0.5 * static_cast<double>((label >> c) & 1u);
  const double phase = std::uniform_real_distribution<double>(0.0, kTwoPi)(rng);
  std::normal_distribution<double> jitter(0.0, noise);
  RgbImage img{side, side, std::vector<std::uint8_t>(side * side * 3)};
  const double ct = std::cos(theta), st = std::sin(theta), s = static_cast<double>(side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double wave = std::sin(kTwoPi * cycles * (static_cast<double>(x) * ct +
                                                      static_cast<double>(y) * st) / s + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(0.5 + 0.35 * gain[c] * wave + jitter(rng), 0.0, 1.0);
        img.pixels[(y * side + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return img;
}

// Fundamental plus second harmonic with random amplitudes and phases.
Waveform synth_voice(std::size_t label, const SynthSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  const double a1 = std::uniform_real_distribution<double>(0.3, 0.5)(rng);
  const double a2 = std::uniform_real_distribution<double>(0.1, 0.2)(rng);
  const double p1 = phase(rng), p2 = phase(rng);
  std::normal_distribution<double> jitter(0.0, spec.voice_noise);
  const double f0 = synth_fundamental_hz(label);
  const auto n = static_cast<std::size_t>(std::lround(spec.voice_seconds * spec.sample_rate));
  Waveform w{std::vector<double>(n), spec.sample_rate};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / spec.sample_rate;
    const double v = a1 * std::sin(kTwoPi * f0 * t + p1) + a2 * std::sin(kTwoPi * 2 * f0 * t + p2) +
                     jitter(rng);
    w.samples[i] = std::clamp(v, -1.0, 1.0);
  }
  return w;
}

}  // namespace

Manifest synth_dataset(const SynthSpec& spec, const fs::path& out_dir) {
  if (spec.classes == 0 || spec.per_class == 0) {
    throw ContractError("synth_dataset: classes and per_class must be positive");
  }
  if (synth_fundamental_hz(spec.classes - 1) * 2 >= spec.sample_rate / 2.0) {
    throw ContractError("synth_dataset: harmonics of the top class exceed Nyquist");
  }
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "voices");
  std::mt19937_64 rng(spec.seed);
  Manifest m;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "c%02zu_%04zu", c, i);
      ManifestRecord r{id, out_dir / "images" / (std::string(id) + ".ppm"),
                       out_dir / "voices" / (std::string(id) + ".wav"), c,
                       "class" + std::to_string(c)};
      write_file_atomic(r.image_path,
                        encode_ppm(synth_image(c, spec.classes, spec.image_side, spec.image_noise, rng)));
      write_wav_file(r.voice_path, synth_voice(c, spec, rng));
      m.records.push_back(std::move(r));
    }
  }
  write_manifest(m, out_dir / "manifest.tsv");
  return m;
}

}  // namespace scrl
