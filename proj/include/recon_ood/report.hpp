#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "recon_ood/metrics.hpp"

namespace recon_ood {

struct MetricsRow {
  std::string family;  // OOD family name without the "ood:" prefix
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
  double fpr95 = 0.0;
  double auroc = 0.0;
  std::vector<PrPoint> pr_curve;
  std::optional<ConfusionCounts> at_threshold;
};

struct MethodResult {
  std::string method;
  std::vector<MetricsRow> rows;  // sorted by family
  double average_fpr95 = 0.0;    // unweighted mean over rows
  double average_auroc = 0.0;
};

struct DetectionReport {
  MethodResult detector;
  std::vector<MethodResult> baselines;
  Threshold threshold;
  nlohmann::json config = nlohmann::json::object();
  std::string manifest_digest;
};

inline constexpr std::string_view kDetectorMethod = "reconstruction";
inline constexpr std::string_view kMspMethod = "msp";

// Per-family metrics against the shared ID set. Input order does not matter.
// Throws ContractError without ID samples or without any OOD family.
MethodResult evaluate_method(std::string method, std::span<const ScoredSample> scored,
                             const Threshold* threshold = nullptr);
DetectionReport build_report(std::span<const ScoredSample> scored, const Threshold& threshold);

nlohmann::json report_to_json(const DetectionReport& report);
DetectionReport report_from_json(const nlohmann::json& j);  // ParseError on schema problems

// Families as column groups with FPR95/AUROC pairs (percent), Average last.
std::string render_table(const DetectionReport& report);
// Header "threshold,recall,precision"; one row per PR point.
std::string pr_curve_csv(const MetricsRow& row);

// Header "sample_id,family,error"; errors as f32 with 9 significant digits.
std::string score_csv(std::span<const ScoredSample> scored);
std::vector<ScoredSample> parse_score_csv(std::string_view text);

}  // namespace recon_ood
