#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "recon_ood/errors.hpp"
#include "recon_ood/report.hpp"
#include "recon_ood/rng.hpp"

using namespace recon_ood;

namespace {

std::vector<ScoredSample> synthetic_scores(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ScoredSample> out;
  std::uint64_t id = 0;
  for (int i = 0; i < 40; ++i) out.push_back({id++, "id", rng.uniform(0, 1)});
  for (const char* f : {"ood:ring", "ood:triangle", "ood:uniform-noise"}) {
    for (int i = 0; i < 30; ++i) out.push_back({id++, f, rng.uniform(0.3, 1.5)});
  }
  return out;
}

}  // namespace

TEST(Report, AverageOfTwoFamilies) {
  // ring sits above every ID score; triangle wins 3 + 5 of 10 pairs.
  std::vector<ScoredSample> s;
  for (int i = 0; i < 5; ++i) s.push_back({static_cast<std::uint64_t>(i), "id", 0.1 * (i + 1)});
  for (int i = 0; i < 2; ++i) s.push_back({10u + i, "ood:ring", 1.0 + i});
  s.push_back({20, "ood:triangle", 0.35});  // beats 3
  s.push_back({21, "ood:triangle", 0.6});   // beats 5
  const auto r = build_report(s, Threshold{0.5, 5, 4});
  ASSERT_EQ(r.detector.rows.size(), 2u);
  EXPECT_EQ(r.detector.rows[0].family, "ring");
  EXPECT_DOUBLE_EQ(r.detector.rows[0].auroc, 1.0);
  EXPECT_DOUBLE_EQ(r.detector.rows[1].auroc, 0.8);
  EXPECT_NEAR(r.detector.average_auroc, 0.9, 1e-12);
}

TEST(Report, AverageRowIsMeanOfFamilies) {
  const auto r = build_report(synthetic_scores(1), Threshold{0.9, 40, 0});
  double f = 0, a = 0;
  for (const auto& row : r.detector.rows) {
    f += row.fpr95;
    a += row.auroc;
    EXPECT_EQ(row.n_id, 40u);
    EXPECT_EQ(row.n_ood, 30u);
    ASSERT_TRUE(row.at_threshold.has_value());
  }
  EXPECT_NEAR(r.detector.average_fpr95, f / 3, 1e-9);
  EXPECT_NEAR(r.detector.average_auroc, a / 3, 1e-9);
}

TEST(Report, PermutationGivesIdenticalBytes) {
  auto s = synthetic_scores(2);
  const Threshold t{0.8, 40, 3};
  const auto base = report_to_json(build_report(s, t)).dump(2);
  Rng rng(5);
  for (int k = 0; k < 5; ++k) {
    for (std::size_t i = s.size(); i > 1; --i) {
      std::swap(s[i - 1], s[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
    }
    EXPECT_EQ(report_to_json(build_report(s, t)).dump(2), base);
  }
}

TEST(Report, Contracts) {
  std::vector<ScoredSample> no_id = {{0, "ood:ring", 0.3}};
  EXPECT_THROW(build_report(no_id, Threshold{}), ContractError);
  std::vector<ScoredSample> no_ood = {{0, "id", 0.3}};
  EXPECT_THROW(build_report(no_ood, Threshold{}), ContractError);
  std::vector<ScoredSample> bad = {{0, "id", 0.3}, {1, "ring", 0.5}};
  EXPECT_THROW(build_report(bad, Threshold{}), ContractError);
}

TEST(Report, JsonRoundTrip) {
  auto r = build_report(synthetic_scores(3), Threshold{0.7, 40, 1});
  r.baselines.push_back(evaluate_method("msp", synthetic_scores(4)));
  r.config = {{"seed", 42}};
  r.manifest_digest = "abc";
  const auto j = report_to_json(r);
  EXPECT_EQ(report_to_json(report_from_json(j)), j);
  EXPECT_THROW(report_from_json(nlohmann::json::object()), ParseError);
}

TEST(Report, TableLayout) {
  auto r = build_report(synthetic_scores(5), Threshold{0.7, 40, 1});
  r.baselines.push_back(evaluate_method("msp", synthetic_scores(6)));
  const auto table = render_table(r);
  EXPECT_EQ(table, render_table(report_from_json(report_to_json(r))));
  std::istringstream in(table);
  std::string header, metrics, msp, ours;
  std::getline(in, header);
  std::getline(in, metrics);
  std::getline(in, msp);
  std::getline(in, ours);
  EXPECT_NE(header.find("ring"), std::string::npos);
  EXPECT_NE(header.find("triangle"), std::string::npos);
  EXPECT_NE(header.find("uniform-noise"), std::string::npos);
  EXPECT_LT(header.find("uniform-noise"), header.find("Average"));
  std::size_t pairs = 0;
  for (std::size_t pos = metrics.find("FPR95"); pos != std::string::npos; pos = metrics.find("FPR95", pos + 1)) ++pairs;
  EXPECT_EQ(pairs, 4u);  // three families plus Average
  EXPECT_EQ(msp.rfind("msp", 0), 0u);
  EXPECT_EQ(ours.rfind("reconstruction", 0), 0u);
}

TEST(Report, PrCsvRowsMatchDistinctThresholds) {
  const auto s = synthetic_scores(7);
  const auto r = build_report(s, Threshold{0.7, 40, 1});
  for (const auto& row : r.detector.rows) {
    std::set<double> distinct;
    for (const auto& x : s) {
      if (x.is_id() || x.family == "ood:" + row.family) distinct.insert(x.error);
    }
    const auto csv = pr_curve_csv(row);
    EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), distinct.size() + 1);
    EXPECT_EQ(csv.rfind("threshold,recall,precision\n", 0), 0u);
  }
}

TEST(ScoreCsv, FormatAndRoundTrip) {
  const std::vector<ScoredSample> s = {{0, "id", 0.1}, {7, "ood:ring", 1.0 / 3.0}};
  const auto csv = score_csv(s);
  EXPECT_EQ(csv, "sample_id,family,error\n0,id,0.100000001\n7,ood:ring,0.333333343\n");
  const auto back = parse_score_csv(csv);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].family, "ood:ring");
  EXPECT_EQ(static_cast<float>(back[1].error), static_cast<float>(1.0 / 3.0));
  EXPECT_THROW(parse_score_csv("a,b\n"), ParseError);
  EXPECT_THROW(parse_score_csv("sample_id,family,error\nx,id,1\n"), ParseError);
}
