#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "recon_ood/tensor.hpp"

namespace recon_ood {

inline constexpr int kImageSide = 16;
inline constexpr int kImagePixels = kImageSide * kImageSide;
inline constexpr int kNumClasses = 4;
inline constexpr int kNumOodFamilies = 4;

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "disk", "plus-cross", "horizontal-stripes", "checkerboard"};
inline constexpr std::array<std::string_view, kNumOodFamilies> kOodFamilies = {
    "ring", "triangle", "vertical-stripes", "uniform-noise"};

inline constexpr std::string_view kIdTag = "id";
inline constexpr std::string_view kOodTagPrefix = "ood:";

/// Single-channel 16×16 image, row-major, pixels in [-1, 1].
struct ImageGrid {
  std::array<float, kImagePixels> pixels{};

  float at(int row, int col) const { return pixels[row * kImageSide + col]; }
  float& at(int row, int col) { return pixels[row * kImageSide + col]; }
  // 1×256 row tensor.
  Tensor as_row() const;
  static ImageGrid from_span(std::span<const float> values);

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;
};

// Per-render perturbation: integer shift, intensity scale, pixel noise.
struct Jitter {
  int dx = 0;
  int dy = 0;
  double intensity = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;

  static Jitter none() { return {}; }
  // Shift in [-2, 2] per axis, intensity in [0.8, 1.2], sigma 0.05.
  static Jitter draw(std::uint64_t jitter_seed);
};

ImageGrid render_class(int class_id, std::uint64_t jitter_seed);
ImageGrid render_class(int class_id, const Jitter& jitter);
ImageGrid render_ood(std::string_view family, std::uint64_t jitter_seed);
ImageGrid render_ood(std::string_view family, const Jitter& jitter);

int ood_family_index(std::string_view family);  // DomainError if unknown
std::string ood_tag(std::string_view family);

struct LabeledSample {
  ImageGrid image;
  int class_id = -1;        // -1 for OOD
  std::string family_tag;   // "id" or "ood:<family>"

  bool is_id() const { return family_tag == kIdTag; }
};

enum class Split { train, calibration, test };
std::string_view split_name(Split split);

struct DatasetManifest {
  std::string name = "synth";
  std::uint64_t seed = 42;
  int train_per_class = 100;
  int calibration_per_class = 25;
  int test_id_per_class = 50;
  int test_ood_per_family = 200;

  void validate() const;  // DomainError
  std::size_t count(Split split) const;
  // Global id of the first record of a split; ids run train → calibration → test.
  std::uint64_t id_base(Split split) const;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

// Jitter seed of one record. Distinct (split, group, index) keys map to
// distinct seeds because the mixing function is a bijection.
std::uint64_t record_jitter_seed(std::uint64_t dataset_seed, Split split, int group, int index);

std::vector<LabeledSample> generate_split(const DatasetManifest& manifest, Split split);

// Observes every record handed out by read_dataset.
struct ReadAudit {
  std::size_t id_records = 0;
  std::size_t ood_records = 0;
  std::function<void(const LabeledSample&)> on_record;
};

// Record layout: "RDS1", u32 count, then (u8 tag length, tag, i32 class_id, 256 f32).
std::string encode_dataset(std::span<const LabeledSample> samples);
std::vector<LabeledSample> decode_dataset(std::string_view bytes, ReadAudit* audit = nullptr);
void write_dataset(const std::filesystem::path& path, std::span<const LabeledSample> samples);
std::vector<LabeledSample> read_dataset(const std::filesystem::path& path, ReadAudit* audit = nullptr);

struct DatasetFiles {
  std::filesystem::path train;
  std::filesystem::path calibration;
  std::filesystem::path test;
  std::filesystem::path manifest;

  static DatasetFiles in(const std::filesystem::path& dir, const std::string& name);
};

// Writes all three splits plus `<name>.manifest.json` under `dir`.
DatasetFiles build_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir);

}  // namespace recon_ood
