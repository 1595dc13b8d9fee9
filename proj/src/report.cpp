#include "recon_ood/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "recon_ood/errors.hpp"

namespace recon_ood {

namespace {

constexpr std::string_view kOodPrefix = "ood:";

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

nlohmann::json row_to_json(const MetricsRow& r) {
  nlohmann::json pr = nlohmann::json::array();
  for (const auto& p : r.pr_curve) pr.push_back({p.threshold, p.recall, p.precision});
  nlohmann::json j = {{"family", r.family}, {"n_id", r.n_id},   {"n_ood", r.n_ood},
                      {"fpr95", r.fpr95},   {"auroc", r.auroc}, {"pr_curve", pr}};
  if (r.at_threshold) {
    const auto& c = *r.at_threshold;
    j["at_threshold"] = {{"true_positive", c.true_positive},
                         {"false_negative", c.false_negative},
                         {"false_positive", c.false_positive},
                         {"true_negative", c.true_negative}};
  }
  return j;
}

MetricsRow row_from_json(const nlohmann::json& j) {
  MetricsRow r;
  r.family = j.at("family").get<std::string>();
  r.n_id = j.at("n_id").get<std::size_t>();
  r.n_ood = j.at("n_ood").get<std::size_t>();
  r.fpr95 = j.at("fpr95").get<double>();
  r.auroc = j.at("auroc").get<double>();
  for (const auto& p : j.at("pr_curve")) {
    r.pr_curve.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
  }
  if (j.contains("at_threshold")) {
    const auto& c = j.at("at_threshold");
    r.at_threshold = ConfusionCounts{c.at("true_positive").get<std::size_t>(), c.at("false_negative").get<std::size_t>(),
                                     c.at("false_positive").get<std::size_t>(), c.at("true_negative").get<std::size_t>()};
  }
  return r;
}

nlohmann::json method_to_json(const MethodResult& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : m.rows) rows.push_back(row_to_json(r));
  return {{"method", m.method},
          {"families", rows},
          {"average", {{"fpr95", m.average_fpr95}, {"auroc", m.average_auroc}}}};
}

MethodResult method_from_json(const nlohmann::json& j) {
  MethodResult m;
  m.method = j.at("method").get<std::string>();
  for (const auto& r : j.at("families")) m.rows.push_back(row_from_json(r));
  m.average_fpr95 = j.at("average").at("fpr95").get<double>();
  m.average_auroc = j.at("average").at("auroc").get<double>();
  return m;
}

}  // namespace

MethodResult evaluate_method(std::string method, std::span<const ScoredSample> scored, const Threshold* threshold) {
  std::vector<ScoredSample> sorted(scored.begin(), scored.end());
  std::sort(sorted.begin(), sorted.end(), [](const ScoredSample& a, const ScoredSample& b) {
    return a.family != b.family ? a.family < b.family : a.sample_id < b.sample_id;
  });
  std::vector<double> id_scores;
  std::map<std::string, std::vector<double>> families;
  for (const auto& s : sorted) {
    if (s.is_id()) {
      id_scores.push_back(s.error);
    } else if (s.family.starts_with(kOodPrefix)) {
      families[s.family.substr(kOodPrefix.size())].push_back(s.error);
    } else {
      throw ContractError("unrecognised family tag '" + s.family + "' for sample " + std::to_string(s.sample_id));
    }
  }
  if (id_scores.empty()) throw ContractError("report needs ID samples");
  if (families.empty()) throw ContractError("report needs at least one OOD family");

  MethodResult out;
  out.method = std::move(method);
  for (const auto& [family, ood] : families) {
    MetricsRow r;
    r.family = family;
    r.n_id = id_scores.size();
    r.n_ood = ood.size();
    r.fpr95 = fpr_at_tpr(id_scores, ood, 0.95);
    r.auroc = auroc(id_scores, ood);
    r.pr_curve = pr_curve(id_scores, ood);
    if (threshold) r.at_threshold = confusion_at(id_scores, ood, *threshold);
    out.average_fpr95 += r.fpr95;
    out.average_auroc += r.auroc;
    out.rows.push_back(std::move(r));
  }
  out.average_fpr95 /= static_cast<double>(out.rows.size());
  out.average_auroc /= static_cast<double>(out.rows.size());
  return out;
}

DetectionReport build_report(std::span<const ScoredSample> scored, const Threshold& threshold) {
  DetectionReport r;
  r.detector = evaluate_method(std::string(kDetectorMethod), scored, &threshold);
  r.threshold = threshold;
  return r;
}

nlohmann::json report_to_json(const DetectionReport& report) {
  nlohmann::json baselines = nlohmann::json::array();
  for (const auto& b : report.baselines) baselines.push_back(method_to_json(b));
  return {{"detector", method_to_json(report.detector)},
          {"baselines", baselines},
          {"threshold",
           {{"tau", report.threshold.tau},
            {"calibration_count", report.threshold.calibration_count},
            {"calibration_max_id", report.threshold.calibration_max_id}}},
          {"config", report.config},
          {"manifest_digest", report.manifest_digest}};
}

DetectionReport report_from_json(const nlohmann::json& j) {
  try {
    DetectionReport r;
    r.detector = method_from_json(j.at("detector"));
    for (const auto& b : j.at("baselines")) r.baselines.push_back(method_from_json(b));
    const auto& t = j.at("threshold");
    r.threshold.tau = t.at("tau").get<double>();
    r.threshold.calibration_count = t.at("calibration_count").get<std::size_t>();
    r.threshold.calibration_max_id = t.at("calibration_max_id").get<std::uint64_t>();
    r.config = j.value("config", nlohmann::json::object());
    r.manifest_digest = j.value("manifest_digest", "");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report JSON: ") + e.what());
  }
}

std::string render_table(const DetectionReport& report) {
  std::vector<const MethodResult*> methods;
  for (const auto& b : report.baselines) methods.push_back(&b);
  methods.push_back(&report.detector);

  const auto& families = report.detector.rows;
  constexpr std::size_t kLabel = 16;
  std::size_t label_width = kLabel;
  for (const auto* m : methods) label_width = std::max(label_width, m->method.size() + 2);
  std::vector<std::size_t> widths;
  for (const auto& f : families) widths.push_back(std::max<std::size_t>(16, f.family.size() + 2));
  widths.push_back(16);

  std::ostringstream os;
  os << pad("Dataset", label_width);
  for (std::size_t i = 0; i < families.size(); ++i) os << pad(families[i].family, widths[i]);
  os << "Average\n";
  os << pad("Metrics", label_width);
  for (std::size_t i = 0; i < families.size(); ++i) os << pad("FPR95   AUROC", widths[i]);
  os << "FPR95   AUROC\n";
  for (const auto* m : methods) {
    if (m->rows.size() != families.size()) throw ContractError("method '" + m->method + "' has a different family set");
    os << pad(m->method, label_width);
    for (std::size_t i = 0; i < families.size(); ++i) {
      const auto& r = m->rows[i];
      if (r.family != families[i].family) throw ContractError("method '" + m->method + "' has a different family set");
      os << pad(pad(fmt("%.2f", 100.0 * r.fpr95), 8) + fmt("%.2f", 100.0 * r.auroc), widths[i]);
    }
    os << pad(fmt("%.2f", 100.0 * m->average_fpr95), 8) << fmt("%.2f", 100.0 * m->average_auroc) << '\n';
  }
  os << '\n' << "threshold tau = " << fmt("%.9g", report.threshold.tau) << " (max over "
     << report.threshold.calibration_count << " calibration samples, sample " << report.threshold.calibration_max_id
     << ")\n";
  for (const auto& r : families) {
    if (!r.at_threshold) continue;
    const auto& c = *r.at_threshold;
    os << "  " << pad(r.family, 18) << "TP " << c.true_positive << "  FN " << c.false_negative << "  FP "
       << c.false_positive << "  TN " << c.true_negative << '\n';
  }
  return os.str();
}

std::string pr_curve_csv(const MetricsRow& row) {
  std::string out = "threshold,recall,precision\n";
  for (const auto& p : row.pr_curve) {
    out += fmt("%.17g", p.threshold) + "," + fmt("%.17g", p.recall) + "," + fmt("%.17g", p.precision) + "\n";
  }
  return out;
}

std::string score_csv(std::span<const ScoredSample> scored) {
  std::string out = "sample_id,family,error\n";
  for (const auto& s : scored) {
    out += std::to_string(s.sample_id) + "," + s.family + "," + fmt("%.9g", static_cast<float>(s.error)) + "\n";
  }
  return out;
}

std::vector<ScoredSample> parse_score_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "sample_id,family,error") throw ParseError("score CSV: bad header");
  std::vector<ScoredSample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto a = line.find(',');
    const auto b = line.rfind(',');
    if (a == std::string::npos || a == b) throw ParseError("score CSV line " + std::to_string(lineno) + ": expected 3 fields");
    try {
      out.push_back({std::stoull(line.substr(0, a)), line.substr(a + 1, b - a - 1), std::stod(line.substr(b + 1))});
    } catch (const std::exception&) {
      throw ParseError("score CSV line " + std::to_string(lineno) + ": bad number");
    }
  }
  return out;
}

}  // namespace recon_ood
