#include "recon_ood/synth_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "recon_ood/errors.hpp"
#include "recon_ood/rng.hpp"

namespace recon_ood {

namespace {

constexpr double kCenter = (kImageSide - 1) / 2.0;
constexpr double kDiskRadius = 5.0;
constexpr double kCrossHalfWidth = 1.0;
constexpr double kCrossArm = 7.0;
constexpr int kStripeBand = 6;
constexpr int kCheckerCell = 4;
constexpr double kRingInner = 3.5;
constexpr double kRingOuter = 6.5;
constexpr double kTriangleHalfHeight = 7.0;
constexpr double kTriangleHalfBase = 6.0;

bool even_band(int coord, int band) {
  return (static_cast<int>(std::floor(static_cast<double>(coord) / band)) & 1) == 0;
}

// Foreground mask of a shape at pixel (row, col) under shift (dx, dy).
using Mask = bool (*)(int row, int col, int dx, int dy);

bool disk_mask(int row, int col, int dx, int dy) {
  const double u = col - kCenter - dx, v = row - kCenter - dy;
  return std::hypot(u, v) <= kDiskRadius;
}

bool cross_mask(int row, int col, int dx, int dy) {
  const double u = std::abs(col - kCenter - dx), v = std::abs(row - kCenter - dy);
  return (u <= kCrossHalfWidth && v <= kCrossArm) || (v <= kCrossHalfWidth && u <= kCrossArm);
}

bool hstripe_mask(int row, int, int, int dy) { return even_band(row - dy, kStripeBand); }

bool vstripe_mask(int, int col, int dx, int) { return even_band(col - dx, kStripeBand); }

bool checker_mask(int row, int col, int dx, int dy) {
  const int a = static_cast<int>(std::floor(static_cast<double>(col - dx) / kCheckerCell));
  const int b = static_cast<int>(std::floor(static_cast<double>(row - dy) / kCheckerCell));
  return ((a + b) & 1) == 0;
}

bool ring_mask(int row, int col, int dx, int dy) {
  const double r = std::hypot(col - kCenter - dx, row - kCenter - dy);
  return r >= kRingInner && r <= kRingOuter;
}

bool triangle_mask(int row, int col, int dx, int dy) {
  const double u = col - kCenter - dx, v = row - kCenter - dy;
  if (v < -kTriangleHalfHeight || v > kTriangleHalfHeight) return false;
  return std::abs(u) <= (v + kTriangleHalfHeight) * kTriangleHalfBase / (2.0 * kTriangleHalfHeight);
}

constexpr std::array<Mask, kNumClasses> kClassMasks = {disk_mask, cross_mask, hstripe_mask, checker_mask};
// uniform-noise has no template.
constexpr std::array<Mask, kNumOodFamilies> kOodMasks = {ring_mask, triangle_mask, vstripe_mask, nullptr};

float finish_pixel(double value, double sigma, Rng& noise) {
  if (sigma > 0.0) value += sigma * noise.normal();
  return static_cast<float>(std::clamp(value, -1.0, 1.0));
}

ImageGrid render_mask(Mask mask, const Jitter& j) {
  ImageGrid img;
  Rng noise(j.noise_seed);
  for (int r = 0; r < kImageSide; ++r) {
    for (int c = 0; c < kImageSide; ++c) {
      const double base = mask(r, c, j.dx, j.dy) ? 1.0 : -1.0;
      img.at(r, c) = finish_pixel(j.intensity * base, j.noise_sigma, noise);
    }
  }
  return img;
}

ImageGrid render_uniform_noise(const Jitter& j) {
  ImageGrid img;
  Rng noise(j.noise_seed);
  for (auto& p : img.pixels) {
    const double u = noise.uniform(-1.0, 1.0);
    p = finish_pixel(u, j.noise_sigma, noise);
  }
  return img;
}

template <typename U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

}  // namespace

Tensor ImageGrid::as_row() const {
  return Tensor({1, static_cast<std::size_t>(kImagePixels)}, std::vector<float>(pixels.begin(), pixels.end()));
}

ImageGrid ImageGrid::from_span(std::span<const float> values) {
  if (values.size() != static_cast<std::size_t>(kImagePixels)) {
    throw DimensionError("image needs " + std::to_string(kImagePixels) + " pixels, got " +
                         std::to_string(values.size()));
  }
  ImageGrid img;
  std::copy(values.begin(), values.end(), img.pixels.begin());
  return img;
}

Jitter Jitter::draw(std::uint64_t jitter_seed) {
  Rng rng(jitter_seed);
  Jitter j;
  j.dx = static_cast<int>(rng.uniform_int(-2, 2));
  j.dy = static_cast<int>(rng.uniform_int(-2, 2));
  j.intensity = rng.uniform(0.8, 1.2);
  j.noise_sigma = 0.05;
  j.noise_seed = rng.next_u64();
  return j;
}

ImageGrid render_class(int class_id, const Jitter& jitter) {
  if (class_id < 0 || class_id >= kNumClasses) {
    throw DomainError("class id " + std::to_string(class_id) + " outside [0, " + std::to_string(kNumClasses) + ")");
  }
  return render_mask(kClassMasks[class_id], jitter);
}

ImageGrid render_class(int class_id, std::uint64_t jitter_seed) {
  return render_class(class_id, Jitter::draw(jitter_seed));
}

int ood_family_index(std::string_view family) {
  for (int i = 0; i < kNumOodFamilies; ++i) {
    if (kOodFamilies[i] == family) return i;
  }
  throw DomainError("unknown OOD family '" + std::string(family) + "'");
}

std::string ood_tag(std::string_view family) { return std::string(kOodTagPrefix) + std::string(family); }

ImageGrid render_ood(std::string_view family, const Jitter& jitter) {
  const int idx = ood_family_index(family);
  if (!kOodMasks[idx]) return render_uniform_noise(jitter);
  return render_mask(kOodMasks[idx], jitter);
}

ImageGrid render_ood(std::string_view family, std::uint64_t jitter_seed) {
  return render_ood(family, Jitter::draw(jitter_seed));
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::calibration: return "calibration";
    case Split::test: return "test";
  }
  return "?";
}

void DatasetManifest::validate() const {
  if (name.empty()) throw DomainError("manifest name must not be empty");
  if (train_per_class <= 0 || calibration_per_class <= 0 || test_id_per_class <= 0 || test_ood_per_family <= 0) {
    throw DomainError("manifest counts must be positive");
  }
}

std::size_t DatasetManifest::count(Split split) const {
  switch (split) {
    case Split::train: return static_cast<std::size_t>(train_per_class) * kNumClasses;
    case Split::calibration: return static_cast<std::size_t>(calibration_per_class) * kNumClasses;
    case Split::test:
      return static_cast<std::size_t>(test_id_per_class) * kNumClasses +
             static_cast<std::size_t>(test_ood_per_family) * kNumOodFamilies;
  }
  return 0;
}

std::uint64_t DatasetManifest::id_base(Split split) const {
  switch (split) {
    case Split::train: return 0;
    case Split::calibration: return count(Split::train);
    case Split::test: return count(Split::train) + count(Split::calibration);
  }
  return 0;
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json classes = nlohmann::json::array();
  for (auto c : kClassNames) classes.push_back(c);
  nlohmann::json families = nlohmann::json::array();
  for (auto f : kOodFamilies) families.push_back(f);
  return {
      {"name", name},
      {"seed", seed},
      {"image_side", kImageSide},
      {"counts",
       {{"train_per_class", train_per_class},
        {"calibration_per_class", calibration_per_class},
        {"test_id_per_class", test_id_per_class},
        {"test_ood_per_family", test_ood_per_family}}},
      {"split_records",
       {{"train", count(Split::train)},
        {"calibration", count(Split::calibration)},
        {"test", count(Split::test)}}},
      {"classes", classes},
      {"ood_families", families},
  };
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.name = j.at("name").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  const auto& c = j.at("counts");
  m.train_per_class = c.at("train_per_class").get<int>();
  m.calibration_per_class = c.at("calibration_per_class").get<int>();
  m.test_id_per_class = c.at("test_id_per_class").get<int>();
  m.test_ood_per_family = c.at("test_ood_per_family").get<int>();
  m.validate();
  return m;
}

std::uint64_t record_jitter_seed(std::uint64_t dataset_seed, Split split, int group, int index) {
  const std::uint64_t key = (static_cast<std::uint64_t>(split) << 56) |
                            (static_cast<std::uint64_t>(group) << 48) |
                            static_cast<std::uint64_t>(static_cast<std::uint32_t>(index));
  return derive_seed(dataset_seed, key);
}

std::vector<LabeledSample> generate_split(const DatasetManifest& manifest, Split split) {
  manifest.validate();
  int per_class = 0;
  switch (split) {
    case Split::train: per_class = manifest.train_per_class; break;
    case Split::calibration: per_class = manifest.calibration_per_class; break;
    case Split::test: per_class = manifest.test_id_per_class; break;
  }
  std::vector<LabeledSample> out;
  out.reserve(manifest.count(split));
  for (int k = 0; k < kNumClasses; ++k) {
    for (int i = 0; i < per_class; ++i) {
      out.push_back({render_class(k, record_jitter_seed(manifest.seed, split, k, i)), k, std::string(kIdTag)});
    }
  }
  if (split == Split::test) {
    for (int f = 0; f < kNumOodFamilies; ++f) {
      for (int i = 0; i < manifest.test_ood_per_family; ++i) {
        const auto seed = record_jitter_seed(manifest.seed, split, kNumClasses + f, i);
        out.push_back({render_ood(kOodFamilies[f], seed), -1, ood_tag(kOodFamilies[f])});
      }
    }
  }
  return out;
}

std::string encode_dataset(std::span<const LabeledSample> samples) {
  static_assert(std::endian::native == std::endian::little);
  std::string out = "RDS1";
  put<std::uint32_t>(out, static_cast<std::uint32_t>(samples.size()));
  for (const auto& s : samples) {
    if (s.family_tag.size() > 255) throw ContractError("family tag too long: " + s.family_tag);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(s.family_tag.size()));
    out.append(s.family_tag);
    put<std::int32_t>(out, s.class_id);
    for (float p : s.image.pixels) put<float>(out, p);
  }
  return out;
}

std::vector<LabeledSample> decode_dataset(std::string_view bytes, ReadAudit* audit) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) throw ParseError("dataset truncated at byte " + std::to_string(pos));
  };
  need(8);
  if (bytes.substr(0, 4) != "RDS1") throw ParseError("not a dataset file (bad magic)");
  std::uint32_t count = 0;
  std::memcpy(&count, bytes.data() + 4, 4);
  pos = 8;
  std::vector<LabeledSample> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    need(1);
    const auto tag_len = static_cast<std::uint8_t>(bytes[pos]);
    pos += 1;
    need(tag_len + 4 + kImagePixels * 4);
    LabeledSample s;
    s.family_tag.assign(bytes.data() + pos, tag_len);
    pos += tag_len;
    std::memcpy(&s.class_id, bytes.data() + pos, 4);
    pos += 4;
    std::memcpy(s.image.pixels.data(), bytes.data() + pos, kImagePixels * 4);
    pos += kImagePixels * 4;
    if (s.is_id()) {
      if (s.class_id < 0 || s.class_id >= kNumClasses) {
        throw ParseError("record " + std::to_string(i) + ": ID sample with class id " + std::to_string(s.class_id));
      }
    } else if (!s.family_tag.starts_with(kOodTagPrefix) || s.class_id != -1) {
      throw ParseError("record " + std::to_string(i) + ": malformed OOD record '" + s.family_tag + "'");
    }
    if (audit) {
      (s.is_id() ? audit->id_records : audit->ood_records) += 1;
      if (audit->on_record) audit->on_record(s);
    }
    out.push_back(std::move(s));
  }
  if (pos != bytes.size()) throw ParseError("trailing bytes after " + std::to_string(count) + " records");
  return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const LabeledSample> samples) {
  const std::string bytes = encode_dataset(samples);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open dataset for writing", path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing dataset", path.string());
}

std::vector<LabeledSample> read_dataset(const std::filesystem::path& path, ReadAudit* audit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset", path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_dataset(bytes, audit);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

DatasetFiles DatasetFiles::in(const std::filesystem::path& dir, const std::string& name) {
  return {dir / (name + ".train.rds"), dir / (name + ".calibration.rds"), dir / (name + ".test.rds"),
          dir / (name + ".manifest.json")};
}

DatasetFiles build_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir) {
  manifest.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory (" + ec.message() + ")", dir.string());
  const auto files = DatasetFiles::in(dir, manifest.name);
  write_dataset(files.train, generate_split(manifest, Split::train));
  write_dataset(files.calibration, generate_split(manifest, Split::calibration));
  write_dataset(files.test, generate_split(manifest, Split::test));
  std::ofstream out(files.manifest, std::ios::trunc);
  if (!out) throw IoError("cannot open manifest for writing", files.manifest.string());
  out << manifest.to_json().dump(2) << '\n';
  if (!out) throw IoError("failed writing manifest", files.manifest.string());
  return files;
}

}  // namespace recon_ood
