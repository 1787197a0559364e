#include "scrl/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include <unsupported/Eigen/FFT>

#include "scrl/errors.hpp"
#include "scrl/fileio.hpp"

namespace scrl {

namespace {

std::uint32_t le32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

std::uint16_t le16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | b[at + 1] << 8);
}

bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
  return std::equal(tag, tag + 4, b.begin() + static_cast<std::ptrdiff_t>(at));
}

void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

Waveform read_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw FormatError("wav: truncated RIFF header", bytes.size());
  if (!tag_is(bytes, 0, "RIFF")) throw FormatError("wav: missing RIFF tag", 0);
  if (!tag_is(bytes, 8, "WAVE")) throw FormatError("wav: missing WAVE tag", 8);

  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos < bytes.size()) {
    if (pos + 8 > bytes.size()) throw FormatError("wav: truncated chunk header", pos);
    const std::size_t body = pos + 8;
    const std::size_t size = le32(bytes, pos + 4);
    const bool is_fmt = tag_is(bytes, pos, "fmt ");
    const bool is_data = tag_is(bytes, pos, "data");
    if ((is_fmt || is_data) && body + size > bytes.size()) {
      throw FormatError("wav: truncated chunk", pos);
    }
    if (is_fmt) {
      if (size < 16) throw FormatError("wav: fmt chunk too short", pos);
      std::uint16_t format = le16(bytes, body);
      if (format == kFormatExtensible && size >= 26) format = le16(bytes, body + 24);
      if (format != kFormatPcm) throw FormatError("wav: non-PCM format", body);
      channels = le16(bytes, body + 2);
      if (channels != 1 && channels != 2) {
        throw FormatError("wav: unsupported channel count " + std::to_string(channels), body + 2);
      }
      rate = le32(bytes, body + 4);
      if (rate == 0) throw FormatError("wav: zero sample rate", body + 4);
      const std::uint16_t bits = le16(bytes, body + 14);
      if (bits != 16) {
        throw FormatError("wav: unsupported bit depth " + std::to_string(bits), body + 14);
      }
      have_fmt = true;
    } else if (is_data) {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk", pos);
      const std::size_t frame_bytes = 2u * channels;
      if (size % frame_bytes != 0) {
        throw FormatError("wav: data chunk ends mid-frame", body + size - size % frame_bytes);
      }
      Waveform w;
      w.sample_rate = rate;
      const std::size_t n = size / frame_bytes;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          acc += static_cast<std::int16_t>(le16(bytes, body + i * frame_bytes + 2 * c));
        }
        w.samples[i] = acc / (32768.0 * channels);
      }
      return w;
    }
    pos = body + size + (size & 1u);  // chunks are word aligned
  }
  throw FormatError("wav: no data chunk", bytes.size());
}

Waveform read_wav_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return read_wav(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(const Waveform& w) {
  if (w.sample_rate == 0) throw ContractError("encode_wav: zero sample rate");
  const auto data_bytes = static_cast<std::uint32_t>(2 * w.samples.size());
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(out, 16);
  put16(out, kFormatPcm);
  put16(out, 1);
  put32(out, w.sample_rate);
  put32(out, w.sample_rate * 2);
  put16(out, 2);
  put16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put32(out, data_bytes);
  for (double s : w.samples) {
    const long q = std::clamp(std::lround(s * 32768.0), -32768L, 32767L);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

void write_wav_file(const std::filesystem::path& path, const Waveform& w) {
  write_file_atomic(path, encode_wav(w));
}

Waveform resample_linear(const Waveform& w, std::uint32_t target_rate) {
  if (target_rate == 0) throw ContractError("resample_linear: target rate must be positive");
  if (w.samples.empty()) throw FormatError("resample_linear: empty input");
  if (w.sample_rate == 0) throw ContractError("resample_linear: source rate must be positive");
  if (w.sample_rate == target_rate) return w;

  const double ratio = static_cast<double>(w.sample_rate) / target_rate;
  const auto n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(w.samples.size()) * target_rate / w.sample_rate));
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  const std::size_t last = w.samples.size() - 1;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double t = static_cast<double>(i) * ratio;
    const auto j = std::min(static_cast<std::size_t>(t), last);
    const std::size_t j1 = std::min(j + 1, last);
    const double frac = std::min(t - static_cast<double>(j), 1.0);
    out.samples[i] = w.samples[j] + frac * (w.samples[j1] - w.samples[j]);
  }
  return out;
}

std::vector<double> magnitude_spectrum(std::span<const double> frame, std::size_t fft_size) {
  if (frame.size() > fft_size) throw ContractError("magnitude_spectrum: frame longer than fft");
  std::vector<double> padded(fft_size, 0.0);
  std::copy(frame.begin(), frame.end(), padded.begin());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, padded);
  std::vector<double> mag(fft_size / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::abs(spec[k]);
  return mag;
}

std::vector<double> hamming_window(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n - 1));
  }
  return w;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank mel_filterbank(std::size_t n_mels, std::size_t fft_size, double sample_rate) {
  if (n_mels == 0 || fft_size < 2 || !(sample_rate > 0)) {
    throw ContractError("mel_filterbank: invalid geometry");
  }
  const std::size_t n_bins = fft_size / 2 + 1;
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  MelFilterbank fb{Tensor<double>(Shape{n_mels, n_bins}), {}};
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    fb.centers_hz.push_back(mid);
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
      const double rise = (f - lo) / (mid - lo);
      const double fall = (hi - f) / (hi - mid);
      fb.weights(m, k) = std::max(0.0, std::min(rise, fall));
    }
  }
  return fb;
}

Tensor<double> dct_matrix(std::size_t n) {
  if (n == 0) throw ContractError("dct_matrix: size must be positive");
  Tensor<double> m(Shape{n, n});
  const double dn = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / dn) : std::sqrt(2.0 / dn);
    for (std::size_t i = 0; i < n; ++i) {
      m(k, i) = scale * std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) *
                                 static_cast<double>(k) / dn);
    }
  }
  return m;
}

std::size_t MfccConfig::frame_length() const {
  return static_cast<std::size_t>(std::lround(window_ms * target_rate / 1000.0));
}

std::size_t MfccConfig::hop_length() const {
  return static_cast<std::size_t>(std::lround(hop_ms * target_rate / 1000.0));
}

void MfccConfig::validate() const {
  if (target_rate == 0) throw ContractError("mfcc: target_rate must be positive");
  if (frame_length() == 0 || hop_length() == 0) {
    throw ContractError("mfcc: window and hop must cover at least one sample");
  }
  if (fft_size < frame_length()) throw ContractError("mfcc: fft_size smaller than the window");
  if (n_mels == 0 || n_coeffs == 0 || n_coeffs > n_mels) {
    throw ContractError("mfcc: need 0 < n_coeffs <= n_mels");
  }
  if (target_frames == 0) throw ContractError("mfcc: target_frames must be positive");
  if (!(log_floor > 0)) throw ContractError("mfcc: log_floor must be positive");
}

std::size_t mfcc_frame_count(std::size_t n_samples, const MfccConfig& cfg) {
  const std::size_t len = cfg.frame_length();
  if (n_samples < len) return 0;
  return (n_samples - len) / cfg.hop_length() + 1;
}

Tensor<double> mel_energies(const Waveform& w, const MfccConfig& cfg) {
  cfg.validate();
  if (w.sample_rate != cfg.target_rate) {
    throw ContractError("mfcc: waveform rate " + std::to_string(w.sample_rate) +
                        " differs from target " + std::to_string(cfg.target_rate));
  }
  const std::size_t n_frames = mfcc_frame_count(w.samples.size(), cfg);
  if (n_frames == 0) throw FormatError("mfcc: signal shorter than one frame");

  const std::size_t len = cfg.frame_length(), hop = cfg.hop_length();
  const auto window = hamming_window(len);
  const auto fb = mel_filterbank(cfg.n_mels, cfg.fft_size, cfg.target_rate);
  const std::size_t n_bins = cfg.fft_size / 2 + 1;

  Tensor<double> out(Shape{n_frames, cfg.n_mels});
  std::vector<double> frame(len);
  for (std::size_t f = 0; f < n_frames; ++f) {
    for (std::size_t i = 0; i < len; ++i) frame[i] = w.samples[f * hop + i] * window[i];
    const auto mag = magnitude_spectrum(frame, cfg.fft_size);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k) e += fb.weights(m, k) * mag[k];
      out(f, m) = e;
    }
  }
  return out;
}

MfccMatrix compute_mfcc(const Waveform& w, const MfccConfig& cfg) {
  const Tensor<double> energies = mel_energies(w, cfg);
  const Tensor<double> dct = dct_matrix(cfg.n_mels);
  const std::size_t n_frames = energies.dim(0);
  MfccMatrix out{Tensor<double>(Shape{n_frames, cfg.n_coeffs})};
  std::vector<double> logs(cfg.n_mels);
  for (std::size_t f = 0; f < n_frames; ++f) {
    for (std::size_t m = 0; m < cfg.n_mels; ++m) logs[m] = std::log(energies(f, m) + cfg.log_floor);
    for (std::size_t c = 0; c < cfg.n_coeffs; ++c) {
      double acc = 0.0;
      for (std::size_t m = 0; m < cfg.n_mels; ++m) acc += dct(c, m) * logs[m];
      out.frames(f, c) = acc;
    }
  }
  return out;
}

Tensor<double> canonicalize_mfcc(const MfccMatrix& m, const MfccConfig& cfg) {
  if (m.n_coeffs() != cfg.n_coeffs) {
    throw ShapeError("canonicalize_mfcc: matrix has " + std::to_string(m.n_coeffs()) +
                     " coefficients, config expects " + std::to_string(cfg.n_coeffs));
  }
  Tensor<double> flat(Shape{cfg.flat_length()});
  const std::size_t keep = std::min(m.n_frames(), cfg.target_frames);
  std::copy_n(m.frames.data().begin(), keep * cfg.n_coeffs, flat.data().begin());
  return flat;
}

Tensor<double> voice_input_from_wav(const std::filesystem::path& path, const MfccConfig& cfg) {
  Waveform w = read_wav_file(path);
  if (w.sample_rate != cfg.target_rate) w = resample_linear(w, cfg.target_rate);
  return canonicalize_mfcc(compute_mfcc(w, cfg), cfg);
}

}  // namespace scrl
