#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "../support/oracles.hpp"
#include "recon_ood/errors.hpp"
#include "recon_ood/metrics.hpp"
#include "recon_ood/rng.hpp"

using namespace recon_ood;
using V = std::vector<double>;

namespace {

// Tie-heavy instances draw from a handful of levels.
V draw_scores(Rng& rng, std::size_t n, bool ties, double shift) {
  V out(n);
  for (auto& v : out) v = ties ? std::floor(rng.uniform(0, 5)) / 4.0 + shift : rng.uniform(0, 1) + shift;
  return out;
}

}  // namespace

TEST(Threshold, CalibrationExamples) {
  EXPECT_EQ(calibrate_threshold(V{0.1, 0.3, 0.2}).tau, 0.3);
  EXPECT_EQ(calibrate_threshold(V{0.1, 0.3, 0.2}).calibration_max_id, 1u);
  EXPECT_EQ(calibrate_threshold(V{0.7}).tau, 0.7);
  EXPECT_EQ(calibrate_threshold(V{0.2, 0.1, 0.3}).tau, 0.3);
  EXPECT_EQ(calibrate_threshold(V{0.2, 0.1, 0.3}).calibration_count, 3u);
  EXPECT_THROW(calibrate_threshold(V{}), ContractError);
  EXPECT_THROW(calibrate_threshold(V{0.1, -0.2}), ContractError);
  EXPECT_THROW(calibrate_threshold(V{0.1, NAN}), ContractError);
}

TEST(Threshold, BoundaryRule) {
  const auto t = calibrate_threshold(V{0.25, 0.5});
  EXPECT_EQ(classify(0.5, t), Decision::in_distribution);
  EXPECT_EQ(classify(0.5 + 1e-9, t), Decision::out_of_distribution);
  EXPECT_EQ(classify(0.0, t), Decision::in_distribution);
}

TEST(Threshold, CalibrationSetAlwaysId) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    V errs(1 + static_cast<std::size_t>(rng.uniform_int(0, 50)));
    for (auto& e : errs) e = rng.uniform(0, 2);
    const auto t = calibrate_threshold(errs);
    for (double e : errs) ASSERT_EQ(classify(e, t), Decision::in_distribution);
    std::reverse(errs.begin(), errs.end());
    EXPECT_EQ(calibrate_threshold(errs).tau, t.tau);
  }
}

TEST(Auroc, Examples) {
  EXPECT_EQ(auroc(V{0.1, 0.2}, V{0.8, 0.9}), 1.0);
  EXPECT_EQ(auroc(V{0.5}, V{0.5}), 0.5);
  EXPECT_EQ(auroc(V{1, 3}, V{2, 4}), 0.75);
  EXPECT_THROW(auroc(V{}, V{1}), ContractError);
  EXPECT_THROW(auroc(V{1}, V{}), ContractError);
}

TEST(Auroc, RankPathMatchesPairCounting) {
  Rng rng(10);
  for (bool ties : {false, true}) {
    const V id = draw_scores(rng, 1200, ties, 0.0);
    const V ood = draw_scores(rng, 1000, ties, 0.1);  // 1.2e6 pairs takes the rank path
    EXPECT_NEAR(auroc(id, ood), oracle::auroc(id, ood), 1e-12);
  }
}

TEST(Auroc, InvariantUnderMonotoneTransform) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const V id = draw_scores(rng, 40, trial % 2 == 0, 0.0);
    const V ood = draw_scores(rng, 30, trial % 2 == 0, 0.2);
    const double base = auroc(id, ood);
    for (auto f : {+[](double x) { return 2 * x + 1; }, +[](double x) { return x * x * x; }}) {
      V a(id), b(ood);
      std::transform(a.begin(), a.end(), a.begin(), f);
      std::transform(b.begin(), b.end(), b.begin(), f);
      EXPECT_NEAR(auroc(a, b), base, 1e-12);
    }
    EXPECT_NEAR(auroc(id, ood) + auroc(ood, id), 1.0, 1e-12);
  }
}

TEST(Fpr95, Examples) {
  EXPECT_EQ(fpr_at_tpr(V(10, 0.0), V(10, 1.0)), 0.0);
  const V same = {0.1, 0.2, 0.3, 0.4, 0.5};
  const double f = fpr_at_tpr(same, same);
  EXPECT_EQ(f, oracle::fpr_at_tpr(same, same, 0.95));
  EXPECT_GE(f, 0.95);
  EXPECT_THROW(fpr_at_tpr(V{}, V{1}), ContractError);
  EXPECT_THROW(fpr_at_tpr(V{1}, V{1}, 0.0), DomainError);
}

TEST(Fpr95, TwentyElementHandEnumeration) {
  // OOD = 1..20. frac{ood > t} >= 0.95 needs 19 of 20 above t, so t < 2.
  V ood;
  for (int i = 1; i <= 20; ++i) ood.push_back(i);
  // Largest candidate below 2 is the ID score 1.5; above it are 2.5 and 30.
  EXPECT_DOUBLE_EQ(fpr_at_tpr(V{0.5, 1.0, 1.5, 2.5, 30.0}, ood), 2.0 / 5.0);
  // Candidates between 1 and 2 are admissible; 1.2 is the largest here.
  EXPECT_DOUBLE_EQ(fpr_at_tpr(V{0.5, 1.0, 1.2, 2.5, 30.0}, ood), 2.0 / 5.0);
  // No ID score in (1, 2): t falls to the OOD score 1 and only 2.5, 30 exceed it.
  EXPECT_DOUBLE_EQ(fpr_at_tpr(V{0.5, 2.5, 30.0}, ood), 2.0 / 3.0);
  // Every ID score at or below 1 → nothing above t = 1.
  EXPECT_DOUBLE_EQ(fpr_at_tpr(V{0.1, 0.9, 1.0}, ood), 0.0);
  // One OOD score below all ID scores is tolerated; two are not.
  V ood2 = ood;
  ood2[0] = ood2[1] = -5.0;  // now 18 of 20 above any t >= -5
  EXPECT_DOUBLE_EQ(fpr_at_tpr(V{0.5, 3.5}, ood2), 1.0);
}

TEST(Fpr95, MonotoneAsOodShiftsUp) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const V id = draw_scores(rng, 50, trial % 2 == 0, 0.0);
    V ood = draw_scores(rng, 50, trial % 2 == 0, 0.0);
    double prev = fpr_at_tpr(id, ood);
    for (int k = 0; k < 10; ++k) {
      for (auto& v : ood) v += 0.07;
      const double f = fpr_at_tpr(id, ood);
      ASSERT_LE(f, prev);
      prev = f;
    }
  }
}

TEST(PrCurve, Examples) {
  const auto perfect = pr_curve(V{0.1, 0.2}, V{0.8, 0.9});
  EXPECT_TRUE(std::any_of(perfect.begin(), perfect.end(),
                          [](const PrPoint& p) { return p.recall == 1.0 && p.precision == 1.0; }));
  const auto flat = pr_curve(V(3, 0.5), V(2, 0.5));
  ASSERT_EQ(flat.size(), 1u);
  EXPECT_EQ(flat[0].recall, 1.0);
  EXPECT_DOUBLE_EQ(flat[0].precision, 2.0 / 5.0);
}

TEST(PrCurve, RecallNonDecreasing) {
  Rng rng(13);
  const auto curve = pr_curve(draw_scores(rng, 30, true, 0), draw_scores(rng, 30, false, 0.3));
  for (std::size_t i = 1; i < curve.size(); ++i) {
    EXPECT_LT(curve[i].threshold, curve[i - 1].threshold);
    EXPECT_GE(curve[i].recall, curve[i - 1].recall);
  }
}

TEST(MetricOracles, AgreeOnTwoHundredRandomInstances) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 100));
    const auto m = static_cast<std::size_t>(rng.uniform_int(1, 100));
    const bool ties = trial % 3 != 0;
    const V id = draw_scores(rng, n, ties, 0.0);
    const V ood = draw_scores(rng, m, ties, rng.uniform(-0.3, 0.6));
    ASSERT_NEAR(auroc(id, ood), oracle::auroc(id, ood), 1e-12) << trial;
    ASSERT_NEAR(fpr_at_tpr(id, ood), oracle::fpr_at_tpr(id, ood, 0.95), 1e-12) << trial;
    const auto got = pr_curve(id, ood);
    const auto want = oracle::pr_curve(id, ood);
    ASSERT_EQ(got.size(), want.size()) << trial;
    for (std::size_t i = 0; i < got.size(); ++i) {
      ASSERT_EQ(got[i].threshold, want[i].threshold);
      ASSERT_NEAR(got[i].recall, want[i].recall, 1e-12);
      ASSERT_NEAR(got[i].precision, want[i].precision, 1e-12);
    }
  }
}

TEST(Confusion, CountsFollowStrictRule) {
  const Threshold t{0.5, 2, 0};
  const auto c = confusion_at(V{0.1, 0.5, 0.6}, V{0.5, 0.7, 0.9, 0.2}, t);
  EXPECT_EQ(c.false_positive, 1u);
  EXPECT_EQ(c.true_negative, 2u);
  EXPECT_EQ(c.true_positive, 2u);
  EXPECT_EQ(c.false_negative, 2u);
}
