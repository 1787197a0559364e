#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "scrl/tensor.hpp"

namespace scrl {

// Mono PCM signal, samples in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  std::uint32_t sample_rate = 0;
};

struct MfccConfig {
  std::uint32_t target_rate = 22050;
  double window_ms = 16.0;
  double hop_ms = 5.0;
  std::size_t n_mels = 26;
  std::size_t n_coeffs = 12;
  std::size_t fft_size = 512;
  std::size_t target_frames = 2000;
  double log_floor = 1e-10;

  std::size_t frame_length() const;  // samples per window at target_rate
  std::size_t hop_length() const;
  std::size_t flat_length() const { return n_coeffs * target_frames; }
  // Throws ContractError on an inconsistent configuration.
  void validate() const;
};

// [n_frames x n_coeffs], frame-major.
struct MfccMatrix {
  Tensor<double> frames;
  std::size_t n_frames() const { return frames.dim(0); }
  std::size_t n_coeffs() const { return frames.dim(1); }
};

// RIFF/WAVE PCM16, mono or stereo. Stereo is averaged to mono.
Waveform read_wav(std::span<const std::uint8_t> bytes);
Waveform read_wav_file(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_wav(const Waveform& w);
void write_wav_file(const std::filesystem::path& path, const Waveform& w);

Waveform resample_linear(const Waveform& w, std::uint32_t target_rate);

// |DFT| of `frame` zero-padded to fft_size, bins 0..fft_size/2.
std::vector<double> magnitude_spectrum(std::span<const double> frame, std::size_t fft_size);

std::vector<double> hamming_window(std::size_t n);

struct MelFilterbank {
  Tensor<double> weights;           // [n_mels x (fft_size/2 + 1)]
  std::vector<double> centers_hz;   // strictly increasing
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);
MelFilterbank mel_filterbank(std::size_t n_mels, std::size_t fft_size, double sample_rate);

// Orthonormal DCT-II, row k is basis function k: [n x n].
Tensor<double> dct_matrix(std::size_t n);

std::size_t mfcc_frame_count(std::size_t n_samples, const MfccConfig& cfg);

// Filterbank outputs before the log: [n_frames x n_mels].
Tensor<double> mel_energies(const Waveform& w, const MfccConfig& cfg);

MfccMatrix compute_mfcc(const Waveform& w, const MfccConfig& cfg = {});

// Truncates or zero-pads to target_frames, then flattens frame-major.
Tensor<double> canonicalize_mfcc(const MfccMatrix& m, const MfccConfig& cfg = {});

// Read, resample to the target rate, MFCC, canonicalize.
Tensor<double> voice_input_from_wav(const std::filesystem::path& path, const MfccConfig& cfg = {});

}  // namespace scrl
