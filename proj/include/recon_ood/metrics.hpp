#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace recon_ood {

// Scores follow the convention "higher = more OOD"; the positive class is OOD.

struct ScoredSample {
  std::uint64_t sample_id = 0;
  std::string family;  // "id" or "ood:<name>"
  double error = 0.0;

  bool is_id() const { return family == "id"; }
};

struct Threshold {
  double tau = 0.0;
  std::size_t calibration_count = 0;
  std::uint64_t calibration_max_id = 0;
};

enum class Decision { in_distribution, out_of_distribution };

// tau = max(errors). Ids default to positions. Throws ContractError on an
// empty list or a negative / non-finite error.
Threshold calibrate_threshold(std::span<const double> errors);
Threshold calibrate_threshold(std::span<const ScoredSample> calibration);

// OOD iff error > tau; equality stays ID.
Decision classify(double error, const Threshold& threshold);

// P(ood > id) + 0.5 P(tie). Exact pair counting up to 1e6 pairs, midrank
// Mann-Whitney above that.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

// Candidate thresholds are -inf and every observed score; picks the largest
// t with fraction{ood > t} >= tpr_target and returns fraction{id > t}.
double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double tpr_target = 0.95);

struct PrPoint {
  double threshold = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

// One point per distinct score, descending; a sample is flagged when score >= threshold.
std::vector<PrPoint> pr_curve(std::span<const double> id_scores, std::span<const double> ood_scores);

struct ConfusionCounts {
  std::size_t true_positive = 0;   // OOD flagged OOD
  std::size_t false_negative = 0;  // OOD kept as ID
  std::size_t false_positive = 0;  // ID flagged OOD
  std::size_t true_negative = 0;   // ID kept as ID
};

ConfusionCounts confusion_at(std::span<const double> id_scores, std::span<const double> ood_scores,
                             const Threshold& threshold);

}  // namespace recon_ood
