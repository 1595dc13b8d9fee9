#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "recon_ood/digest.hpp"
#include "recon_ood/errors.hpp"
#include "recon_ood/synth_data.hpp"

using namespace recon_ood;

namespace {

// Mean over rows of the variance along each row, and the same for columns.
std::pair<double, double> row_col_variance(const ImageGrid& img) {
  auto var = [](const std::vector<double>& xs) {
    double m = 0, v = 0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    for (double x : xs) v += (x - m) * (x - m);
    return v / static_cast<double>(xs.size());
  };
  double rows = 0, cols = 0;
  for (int i = 0; i < kImageSide; ++i) {
    std::vector<double> r, c;
    for (int j = 0; j < kImageSide; ++j) {
      r.push_back(img.at(i, j));
      c.push_back(img.at(j, i));
    }
    rows += var(r);
    cols += var(c);
  }
  return {rows / kImageSide, cols / kImageSide};
}

double sq_dist(const ImageGrid& a, const std::array<double, kImagePixels>& b) {
  double d = 0;
  for (int i = 0; i < kImagePixels; ++i) d += (a.pixels[i] - b[i]) * (a.pixels[i] - b[i]);
  return d;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("recon_ood_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Render, DeterministicPerSeed) {
  EXPECT_EQ(render_class(0, 7), render_class(0, 7));
  EXPECT_NE(render_class(0, 7), render_class(0, 8));
  EXPECT_EQ(render_ood("ring", 3), render_ood("ring", 3));
}

TEST(Render, RejectsUnknownClassOrFamily) {
  EXPECT_THROW(render_class(-1, 0), DomainError);
  EXPECT_THROW(render_class(kNumClasses, 0), DomainError);
  EXPECT_THROW(render_ood("spiral", 0), DomainError);
  EXPECT_THROW(render_ood("disk", 0), DomainError);
}

TEST(Render, PixelsStayInRange) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (int c = 0; c < kNumClasses; ++c) {
      for (float p : render_class(c, seed).pixels) ASSERT_TRUE(p >= -1.0f && p <= 1.0f);
    }
    for (auto f : kOodFamilies) {
      for (float p : render_ood(f, seed).pixels) ASSERT_TRUE(p >= -1.0f && p <= 1.0f);
    }
  }
}

TEST(Render, DiskTemplateConcentratesInsideRadiusFive) {
  const auto img = render_class(0, Jitter::none());
  double in = 0, out = 0;
  int n_in = 0, n_out = 0;
  for (int r = 0; r < kImageSide; ++r) {
    for (int c = 0; c < kImageSide; ++c) {
      const double d = std::hypot(r - 7.5, c - 7.5);
      if (d <= 5.0) {
        in += img.at(r, c);
        ++n_in;
      } else {
        out += img.at(r, c);
        ++n_out;
      }
    }
  }
  EXPECT_GE(in / n_in - out / n_out, 1.0);
}

TEST(Render, HorizontalStripesVaryDownColumnsOnly) {
  const auto [rows, cols] = row_col_variance(render_class(2, Jitter::none()));
  EXPECT_GT(cols, 0.5);
  EXPECT_LT(rows / cols, 0.2);
}

TEST(Render, VerticalStripesAreTheTranspose) {
  const auto [rows, cols] = row_col_variance(render_ood("vertical-stripes", Jitter::none()));
  EXPECT_GT(rows, 0.5);
  EXPECT_LT(cols / rows, 0.2);
  const auto h = render_class(2, Jitter::none());
  const auto v = render_ood("vertical-stripes", Jitter::none());
  for (int r = 0; r < kImageSide; ++r) {
    for (int c = 0; c < kImageSide; ++c) EXPECT_EQ(h.at(r, c), v.at(c, r));
  }
}

TEST(Render, UniformNoiseHistogramIsFlat) {
  double ks_total = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto px = render_ood("uniform-noise", seed).pixels;
    std::sort(px.begin(), px.end());
    double ks = 0;
    const double n = kImagePixels;
    for (int i = 0; i < kImagePixels; ++i) {
      const double cdf = (px[i] + 1.0) / 2.0;
      ks = std::max({ks, std::abs((i + 1) / n - cdf), std::abs(cdf - i / n)});
    }
    ks_total += ks;
  }
  EXPECT_LT(ks_total / 100.0, 0.1);
}

TEST(Render, JitterDrawWithinBounds) {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto j = Jitter::draw(seed);
    ASSERT_GE(j.dx, -2);
    ASSERT_LE(j.dx, 2);
    ASSERT_GE(j.dy, -2);
    ASSERT_LE(j.dy, 2);
    ASSERT_GE(j.intensity, 0.8);
    ASSERT_LE(j.intensity, 1.2);
    ASSERT_EQ(j.noise_sigma, 0.05);
  }
}

TEST(Render, ClassesAreSeparableByNearestCentroid) {
  std::array<std::array<double, kImagePixels>, kNumClasses> centroid{};
  const int per_class = 100;
  for (int c = 0; c < kNumClasses; ++c) {
    for (int i = 0; i < per_class; ++i) {
      const auto img = render_class(c, 1000 + static_cast<std::uint64_t>(i));
      for (int p = 0; p < kImagePixels; ++p) centroid[c][p] += img.pixels[p] / per_class;
    }
  }
  int correct = 0, total = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    for (int i = 0; i < per_class; ++i) {
      const auto img = render_class(c, 50000 + static_cast<std::uint64_t>(i));
      int best = 0;
      for (int k = 1; k < kNumClasses; ++k) {
        if (sq_dist(img, centroid[k]) < sq_dist(img, centroid[best])) best = k;
      }
      correct += best == c;
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(correct) / total, 0.95);
}

TEST(Manifest, CountsAndIdRanges) {
  DatasetManifest m;
  EXPECT_EQ(m.count(Split::train), 400u);
  EXPECT_EQ(m.count(Split::calibration), 100u);
  EXPECT_EQ(m.count(Split::test), 200u + 800u);
  EXPECT_EQ(m.id_base(Split::train), 0u);
  EXPECT_EQ(m.id_base(Split::calibration), 400u);
  EXPECT_EQ(m.id_base(Split::test), 500u);
  const auto back = DatasetManifest::from_json(m.to_json());
  EXPECT_EQ(back.to_json(), m.to_json());
  DatasetManifest bad;
  bad.train_per_class = 0;
  EXPECT_THROW(bad.validate(), DomainError);
}

TEST(Manifest, RecordSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (auto split : {Split::train, Split::calibration, Split::test}) {
    for (int g = 0; g < 8; ++g) {
      for (int i = 0; i < 300; ++i) ASSERT_TRUE(seen.insert(record_jitter_seed(42, split, g, i)).second);
    }
  }
}

TEST(Splits, TagsLabelsAndDisjointness) {
  DatasetManifest m;
  const auto train = generate_split(m, Split::train);
  const auto cal = generate_split(m, Split::calibration);
  const auto test = generate_split(m, Split::test);
  ASSERT_EQ(train.size(), 400u);
  ASSERT_EQ(cal.size(), 100u);
  ASSERT_EQ(test.size(), 1000u);
  for (const auto& s : train) EXPECT_TRUE(s.is_id() && s.class_id >= 0 && s.class_id < kNumClasses);
  for (const auto& s : cal) EXPECT_TRUE(s.is_id());
  std::map<std::string, int> fam;
  for (const auto& s : test) {
    ++fam[s.family_tag];
    if (!s.is_id()) EXPECT_EQ(s.class_id, -1);
  }
  EXPECT_EQ(fam["id"], 200);
  for (auto f : kOodFamilies) EXPECT_EQ(fam[ood_tag(f)], 200);
  // Records are disjoint by seed. Identical pixels can only come from renders
  // whose every pixel saturated at the clamp.
  std::set<std::uint64_t> train_seeds;
  for (int k = 0; k < kNumClasses; ++k) {
    for (int i = 0; i < m.train_per_class; ++i) train_seeds.insert(record_jitter_seed(m.seed, Split::train, k, i));
  }
  for (int k = 0; k < kNumClasses; ++k) {
    for (int i = 0; i < m.calibration_per_class; ++i) {
      EXPECT_FALSE(train_seeds.contains(record_jitter_seed(m.seed, Split::calibration, k, i)));
    }
  }
  std::set<std::vector<float>> train_images;
  for (const auto& s : train) train_images.insert({s.image.pixels.begin(), s.image.pixels.end()});
  std::size_t duplicates = 0;
  for (const auto& s : cal) {
    if (!train_images.contains({s.image.pixels.begin(), s.image.pixels.end()})) continue;
    ++duplicates;
    for (float p : s.image.pixels) EXPECT_TRUE(p == 1.0f || p == -1.0f);
  }
  EXPECT_LT(duplicates, cal.size() / 4);
}

TEST(DatasetFile, BuildIsByteIdenticalAndRoundTrips) {
  DatasetManifest m;
  m.train_per_class = 10;
  m.calibration_per_class = 3;
  m.test_id_per_class = 4;
  m.test_ood_per_family = 5;
  const auto a = build_dataset(m, scratch_dir("ds_a") / "nested");
  const auto b = build_dataset(m, scratch_dir("ds_b"));
  EXPECT_EQ(sha256_file(a.train), sha256_file(b.train));
  EXPECT_EQ(sha256_file(a.test), sha256_file(b.test));
  EXPECT_EQ(slurp(a.manifest), slurp(b.manifest));

  ReadAudit audit;
  int callbacks = 0;
  audit.on_record = [&](const LabeledSample&) { ++callbacks; };
  const auto train = read_dataset(a.train, &audit);
  ASSERT_EQ(train.size(), 40u);
  EXPECT_EQ(audit.id_records, 40u);
  EXPECT_EQ(audit.ood_records, 0u);
  const auto expected = generate_split(m, Split::train);
  for (std::size_t i = 0; i < train.size(); ++i) {
    EXPECT_EQ(train[i].image, expected[i].image);
    EXPECT_EQ(train[i].class_id, expected[i].class_id);
  }
  read_dataset(a.test, &audit);
  EXPECT_EQ(audit.ood_records, 20u);
  EXPECT_EQ(callbacks, 40 + 16 + 20);
}

TEST(DatasetFile, RejectsCorruption) {
  const auto samples = generate_split(DatasetManifest{}, Split::calibration);
  const auto bytes = encode_dataset(samples);
  EXPECT_THROW(decode_dataset(bytes.substr(0, bytes.size() - 3)), ParseError);
  EXPECT_THROW(decode_dataset("RDS2" + bytes.substr(4)), ParseError);
  LabeledSample bogus{ImageGrid{}, 0, "elsewhere"};
  EXPECT_THROW(decode_dataset(encode_dataset(std::vector<LabeledSample>{bogus})), ParseError);
  EXPECT_THROW(read_dataset("/nonexistent/file.rds"), IoError);
}
