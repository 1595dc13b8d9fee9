#include "recon_ood/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "recon_ood/errors.hpp"

namespace recon_ood {

namespace {

void require_both(std::span<const double> id_scores, std::span<const double> ood_scores, const char* op) {
  if (id_scores.empty() || ood_scores.empty()) {
    throw ContractError(std::string(op) + " needs non-empty ID and OOD score lists");
  }
}

double auroc_pairs(std::span<const double> id_scores, std::span<const double> ood_scores) {
  std::uint64_t wins = 0, ties = 0;
  for (double o : ood_scores) {
    for (double i : id_scores) {
      if (o > i) ++wins;
      else if (o == i) ++ties;
    }
  }
  const double pairs = static_cast<double>(id_scores.size()) * static_cast<double>(ood_scores.size());
  return (static_cast<double>(wins) + 0.5 * static_cast<double>(ties)) / pairs;
}

double auroc_ranks(std::span<const double> id_scores, std::span<const double> ood_scores) {
  struct Entry {
    double score;
    bool ood;
  };
  std::vector<Entry> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) all.push_back({s, false});
  for (double s : ood_scores) all.push_back({s, true});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });
  // Sum of OOD ranks with midranks for tied groups; ranks are 1-based.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].ood) rank_sum += midrank;
    }
    i = j;
  }
  const double m = static_cast<double>(ood_scores.size());
  const double n = static_cast<double>(id_scores.size());
  return (rank_sum - m * (m + 1.0) / 2.0) / (m * n);
}

}  // namespace

Threshold calibrate_threshold(std::span<const double> errors) {
  std::vector<ScoredSample> samples;
  samples.reserve(errors.size());
  for (std::size_t i = 0; i < errors.size(); ++i) samples.push_back({i, "id", errors[i]});
  return calibrate_threshold(samples);
}

Threshold calibrate_threshold(std::span<const ScoredSample> calibration) {
  if (calibration.empty()) throw ContractError("threshold calibration needs at least one error");
  Threshold t;
  t.tau = -std::numeric_limits<double>::infinity();
  for (const auto& s : calibration) {
    if (!std::isfinite(s.error) || s.error < 0.0) {
      throw ContractError("calibration error must be finite and non-negative (sample " +
                          std::to_string(s.sample_id) + ")");
    }
    if (s.error > t.tau) {
      t.tau = s.error;
      t.calibration_max_id = s.sample_id;
    }
  }
  t.calibration_count = calibration.size();
  return t;
}

Decision classify(double error, const Threshold& threshold) {
  return error > threshold.tau ? Decision::out_of_distribution : Decision::in_distribution;
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  require_both(id_scores, ood_scores, "auroc");
  const double pairs = static_cast<double>(id_scores.size()) * static_cast<double>(ood_scores.size());
  return pairs <= 1e6 ? auroc_pairs(id_scores, ood_scores) : auroc_ranks(id_scores, ood_scores);
}

double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double tpr_target) {
  require_both(id_scores, ood_scores, "fpr_at_tpr");
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) throw DomainError("tpr_target must lie in (0, 1]");
  std::vector<double> ids(id_scores.begin(), id_scores.end());
  std::vector<double> oods(ood_scores.begin(), ood_scores.end());
  std::sort(ids.begin(), ids.end(), std::greater<>());
  std::sort(oods.begin(), oods.end(), std::greater<>());
  std::vector<double> candidates;
  candidates.reserve(ids.size() + oods.size());
  std::merge(ids.begin(), ids.end(), oods.begin(), oods.end(), std::back_inserter(candidates), std::greater<>());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  candidates.push_back(-std::numeric_limits<double>::infinity());

  const double n = static_cast<double>(ids.size());
  const double m = static_cast<double>(oods.size());
  std::size_t id_above = 0, ood_above = 0;
  for (double t : candidates) {
    while (id_above < ids.size() && ids[id_above] > t) ++id_above;
    while (ood_above < oods.size() && oods[ood_above] > t) ++ood_above;
    if (static_cast<double>(ood_above) / m >= tpr_target) return static_cast<double>(id_above) / n;
  }
  return 1.0;  // unreachable: at -inf every OOD score is above t
}

std::vector<PrPoint> pr_curve(std::span<const double> id_scores, std::span<const double> ood_scores) {
  require_both(id_scores, ood_scores, "pr_curve");
  std::vector<double> ids(id_scores.begin(), id_scores.end());
  std::vector<double> oods(ood_scores.begin(), ood_scores.end());
  std::sort(ids.begin(), ids.end(), std::greater<>());
  std::sort(oods.begin(), oods.end(), std::greater<>());
  std::vector<double> thresholds;
  std::merge(ids.begin(), ids.end(), oods.begin(), oods.end(), std::back_inserter(thresholds), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::vector<PrPoint> out;
  out.reserve(thresholds.size());
  std::size_t fp = 0, tp = 0;
  const double m = static_cast<double>(oods.size());
  for (double t : thresholds) {
    while (fp < ids.size() && ids[fp] >= t) ++fp;
    while (tp < oods.size() && oods[tp] >= t) ++tp;
    out.push_back({t, static_cast<double>(tp) / m, static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }
  return out;
}

ConfusionCounts confusion_at(std::span<const double> id_scores, std::span<const double> ood_scores,
                             const Threshold& threshold) {
  ConfusionCounts c;
  for (double s : id_scores) {
    (classify(s, threshold) == Decision::out_of_distribution ? c.false_positive : c.true_negative) += 1;
  }
  for (double s : ood_scores) {
    (classify(s, threshold) == Decision::out_of_distribution ? c.true_positive : c.false_negative) += 1;
  }
  return c;
}

}  // namespace recon_ood
