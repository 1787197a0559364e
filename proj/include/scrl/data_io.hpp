#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scrl/errors.hpp"
#include "scrl/tensor.hpp"

namespace scrl {

// Manifest problem tied to a 1-based line number (0 when not line specific).
class ManifestError : public Error {
 public:
  ManifestError(const std::string& what, std::size_t line)
      : Error(line ? "manifest line " + std::to_string(line) + ": " + what : "manifest: " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct ManifestRecord {
  std::string id;
  std::filesystem::path image_path;
  std::filesystem::path voice_path;
  std::size_t label = 0;
  std::string class_name;
};

struct Manifest {
  std::vector<ManifestRecord> records;

  std::size_t size() const { return records.size(); }
  std::size_t class_count() const;
};

// TSV: id, image_path, voice_path, label, class_name. Relative paths resolve
// against the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                        bool check_files = true);
// Paths below the manifest's directory are written relative to it.
void write_manifest(const Manifest& m, const std::filesystem::path& path);

// Checks the invariants load_manifest enforces, without touching the disk.
void validate_manifest(const Manifest& m);

// Deterministic per-class split: within each class, in manifest order, the
// first floor((1 - test_fraction) * n) records train and the rest test.
struct ManifestSplit {
  Manifest train;
  Manifest test;
};
ManifestSplit stratified_split(const Manifest& m, double test_fraction = 0.2);

// SCRLT tensor files.
enum class DType : std::uint32_t { kF32 = 1, kF64 = 2 };

template <typename T>
std::vector<std::uint8_t> encode_tensor(const Tensor<T>& t);
// Decodes either dtype and converts to T.
template <typename T>
Tensor<T> decode_tensor(std::span<const std::uint8_t> bytes);
DType tensor_dtype(std::span<const std::uint8_t> bytes);

template <typename T>
void write_tensor(const Tensor<T>& t, const std::filesystem::path& path);
template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path);

// PPM P6 images.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB
};

constexpr std::size_t kImageSide = 224;

RgbImage decode_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const RgbImage& img);
// Nearest-neighbour resize to side x side, scaled to [0, 1]: [side x side x 3].
Tensor<float> image_to_tensor(const RgbImage& img, std::size_t side = kImageSide);
Tensor<float> read_image(const std::filesystem::path& path, std::size_t side = kImageSide);

// Deterministic class-keyed image/voice pairs.
struct SynthSpec {
  std::size_t classes = 8;
  std::size_t per_class = 50;
  std::uint64_t seed = 0;
  std::size_t image_side = kImageSide;
  double voice_seconds = 2.0;
  std::uint32_t sample_rate = 22050;
  double image_noise = 0.05;
  double voice_noise = 0.01;
};

double synth_fundamental_hz(std::size_t label);

// Writes images/, voices/ and manifest.tsv under out_dir.
Manifest synth_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace scrl
