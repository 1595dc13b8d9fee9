#pragma once

// Independent reference implementations used by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "recon_ood/autograd.hpp"
#include "recon_ood/metrics.hpp"
#include "recon_ood/param_store.hpp"
#include "recon_ood/rng.hpp"

namespace oracle {

inline double auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  double acc = 0.0;
  for (double o : ood) {
    for (double i : id) acc += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
  }
  return acc / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

inline double frac_above(const std::vector<double>& xs, double t) {
  std::size_t c = 0;
  for (double x : xs) c += x > t ? 1 : 0;
  return static_cast<double>(c) / static_cast<double>(xs.size());
}

// Sweeps every candidate threshold independently and keeps the largest
// admissible one.
inline double fpr_at_tpr(const std::vector<double>& id, const std::vector<double>& ood, double tpr) {
  std::vector<double> candidates = {-std::numeric_limits<double>::infinity()};
  candidates.insert(candidates.end(), id.begin(), id.end());
  candidates.insert(candidates.end(), ood.begin(), ood.end());
  double best_t = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (double t : candidates) {
    if (frac_above(ood, t) >= tpr && (!found || t > best_t)) {
      best_t = t;
      found = true;
    }
  }
  return frac_above(id, best_t);
}

struct PrOraclePoint {
  double threshold;
  double recall;
  double precision;
};

inline std::vector<PrOraclePoint> pr_curve(const std::vector<double>& id, const std::vector<double>& ood) {
  std::set<double, std::greater<>> thresholds(id.begin(), id.end());
  thresholds.insert(ood.begin(), ood.end());
  std::vector<PrOraclePoint> out;
  for (double t : thresholds) {
    double tp = 0, fp = 0, fn = 0;
    for (double o : ood) (o >= t ? tp : fn) += 1;
    for (double i : id) fp += i >= t ? 1 : 0;
    out.push_back({t, tp / (tp + fn), tp / (tp + fp)});
  }
  return out;
}

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double worst_excess = 0.0;  // max of |a-n| / (rtol·max(|a|,|n|) + atol)
  std::string worst;
};

using LossFn = std::function<recon_ood::Var<double>(recon_ood::Graph<double>&, recon_ood::ParamStore<double>&)>;

// Central differences on `coords` distinct randomly chosen parameter
// coordinates, compared against one reverse pass.
inline GradCheckReport gradcheck(recon_ood::ParamStore<double>& store, const LossFn& loss_fn, std::size_t coords,
                                 std::uint64_t seed, double rtol = 1e-3, double atol = 1e-6, double h = 1e-3) {
  struct Coord {
    std::string name;
    std::size_t index;
  };
  std::vector<Coord> all;
  for (const auto& [name, p] : store) {
    for (std::size_t i = 0; i < p.value.size(); ++i) all.push_back({name, i});
  }
  recon_ood::Rng rng(seed);
  for (std::size_t i = all.size(); i > 1; --i) {
    std::swap(all[i - 1], all[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
  }
  if (all.size() > coords) all.resize(coords);

  store.zero_grad();
  {
    recon_ood::Graph<double> g;
    auto loss = loss_fn(g, store);
    g.backward(loss);
  }
  auto eval = [&] {
    recon_ood::Graph<double> g;
    return loss_fn(g, store).value()[0];
  };

  GradCheckReport rep;
  for (const auto& c : all) {
    auto& p = store.at(c.name);
    const double analytic = p.has_grad ? p.grad[c.index] : 0.0;
    const double orig = p.value[c.index];
    p.value[c.index] = orig + h;
    const double up = eval();
    p.value[c.index] = orig - h;
    const double down = eval();
    p.value[c.index] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double allowed = rtol * std::max(std::abs(analytic), std::abs(numeric)) + atol;
    const double excess = std::abs(analytic - numeric) / allowed;
    ++rep.checked;
    if (excess > 1.0) ++rep.failures;
    if (excess > rep.worst_excess) {
      rep.worst_excess = excess;
      rep.worst = c.name + "[" + std::to_string(c.index) + "] analytic " + std::to_string(analytic) + " numeric " +
                  std::to_string(numeric);
    }
  }
  store.zero_grad();
  return rep;
}

inline recon_ood::TensorD uniform_tensor(recon_ood::Shape shape, recon_ood::Rng& rng, double lo, double hi) {
  recon_ood::TensorD t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline recon_ood::TensorD random_tensor(recon_ood::Shape shape, recon_ood::Rng& rng, double scale = 1.0) {
  recon_ood::TensorD t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

}  // namespace oracle
