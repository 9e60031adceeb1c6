#pragma once

// Evaluation metrics for multi-step duration forecasts: per-step RMSE, thresholded
// F1, the time-weighted action RMSE (TARMSE) and the composite CTA score.

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vmas/diagnostics.hpp"
#include "vmas/domain.hpp"

namespace vmas::metrics {

using Matrix = Eigen::MatrixXd;                        // samples x steps
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// RMSE per prediction step over unmasked samples (mask true = keep).
/// A step with every sample masked has no value.
inline std::vector<std::optional<double>> rmse_per_step(const Matrix& preds, const Matrix& targets, const Mask& keep) {
  if (preds.rows() != targets.rows() || preds.cols() != targets.cols() || keep.rows() != preds.rows() ||
      keep.cols() != preds.cols())
    throw MetricError("rmse_per_step: shape mismatch");
  std::vector<std::optional<double>> out(static_cast<std::size_t>(preds.cols()));
  for (Eigen::Index j = 0; j < preds.cols(); ++j) {
    double ss = 0;
    std::size_t n = 0;
    for (Eigen::Index i = 0; i < preds.rows(); ++i) {
      if (!keep(i, j)) continue;
      const double e = preds(i, j) - targets(i, j);
      ss += e * e;
      ++n;
    }
    if (n) out[static_cast<std::size_t>(j)] = std::sqrt(ss / static_cast<double>(n));
  }
  return out;
}

inline std::vector<std::optional<double>> rmse_per_step(const Matrix& preds, const Matrix& targets) {
  return rmse_per_step(preds, targets, Mask::Constant(preds.rows(), preds.cols(), true));
}

struct KEstimate {
  double k = 0.0;
  bool degenerate = false;  // k == 0: TARMSE undefined
};

/// Noise floor: square root of the mean per-action (population) variance, i.e. the
/// RMSE of predicting every action by its own mean.
inline KEstimate estimate_k(const std::map<ActionKey, std::vector<double>>& durations) {
  double sum_var = 0;
  std::size_t actions = 0;
  for (const auto& [_, ds] : durations) {
    if (ds.empty()) continue;
    double mean = 0;
    for (double d : ds) mean += d;
    mean /= static_cast<double>(ds.size());
    double var = 0;
    for (double d : ds) var += (d - mean) * (d - mean);
    sum_var += var / static_cast<double>(ds.size());
    ++actions;
  }
  if (!actions) throw MetricError("estimate_k: EmptyInput");
  KEstimate e;
  e.k = std::sqrt(sum_var / static_cast<double>(actions));
  e.degenerate = e.k == 0.0;
  return e;
}

/// Collects durations not above each action's d_max and estimates k from them.
inline KEstimate estimate_k(const std::vector<ActionSequence>& seqs, const std::map<ActionKey, double>& d_max,
                            std::string_view skip_action = {}) {
  std::map<ActionKey, std::vector<double>> by_key;
  for (const auto& s : seqs)
    for (const auto& t : s.tuples) {
      if (t.key.action_id == skip_action) continue;
      auto it = d_max.find(t.key);
      if (it != d_max.end() && t.duration <= it->second) by_key[t.key].push_back(t.duration);
    }
  return estimate_k(by_key);
}

/// Sum of e^-i for i = 1..n.
inline double weight_sum(std::size_t n) {
  double s = 0;
  for (std::size_t i = 1; i <= n; ++i) s += std::exp(-static_cast<double>(i));
  return s;
}

/// Time-weighted action RMSE: exponentially discounted mean of (k - R_i) / k.
/// Equals 1 for a perfect forecaster; negative when errors exceed the noise floor k.
inline double tarmse(std::span<const double> rmse, double k) {
  if (!(k > 0)) throw MetricError("tarmse: DegenerateK (k must be positive)");
  if (rmse.empty()) throw MetricError("tarmse: no steps");
  double acc = 0;
  for (std::size_t i = 0; i < rmse.size(); ++i) acc += std::exp(-static_cast<double>(i + 1)) * (1.0 - rmse[i] / k);
  return acc / weight_sum(rmse.size());
}

struct F1Result {
  std::vector<double> f1;
  Diagnostics diagnostics;
};

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double f1() const {
    const auto denom = 2 * tp + fp + fn;
    return denom ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
  }
};

/// A duration is anomalous when it exceeds nominal * (1 + b).
inline bool anomalous(double duration, double nominal, double b) { return duration > nominal * (1.0 + b); }

inline Confusion step_confusion(const Matrix& preds, const Matrix& targets, const Matrix& nominal, double b,
                                Eigen::Index step, const Mask* keep) {
  Confusion c;
  for (Eigen::Index i = 0; i < preds.rows(); ++i) {
    if (keep && !(*keep)(i, step)) continue;
    const bool p = anomalous(preds(i, step), nominal(i, step), b);
    const bool t = anomalous(targets(i, step), nominal(i, step), b);
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
    c.tn += !p && !t;
  }
  return c;
}

/// F1 of the anomalous class per step. A step without any predicted or actual
/// anomaly scores 0 and yields a NoPositives diagnostic.
inline F1Result f1_per_step(const Matrix& preds, const Matrix& targets, const Matrix& nominal, double b,
                            const Mask* keep = nullptr) {
  if (!(b > 0)) throw MetricError("f1_per_step: b must be positive");
  if (preds.rows() != targets.rows() || preds.cols() != targets.cols() || nominal.rows() != preds.rows() ||
      nominal.cols() != preds.cols())
    throw MetricError("f1_per_step: shape mismatch");
  F1Result r;
  for (Eigen::Index j = 0; j < preds.cols(); ++j) {
    auto c = step_confusion(preds, targets, nominal, b, j, keep);
    if (c.tp + c.fp + c.fn == 0)
      r.diagnostics.push_back({static_cast<std::size_t>(j + 1), "NoPositives", "no anomalies at this step"});
    r.f1.push_back(c.f1());
  }
  return r;
}

/// Micro-averaged F1 over all steps.
inline double f1_pooled(const Matrix& preds, const Matrix& targets, const Matrix& nominal, double b,
                        const Mask* keep = nullptr) {
  Confusion total;
  for (Eigen::Index j = 0; j < preds.cols(); ++j) {
    auto c = step_confusion(preds, targets, nominal, b, j, keep);
    total.tp += c.tp;
    total.fp += c.fp;
    total.fn += c.fn;
  }
  return total.f1();
}

inline double mean(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double cta(double tarmse_value, double f1_mean, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw MetricError("cta: tau must be in [0,1]");
  return tau * tarmse_value + (1.0 - tau) * f1_mean;
}

/// CTA as a percentage with two decimals, e.g. "60.50%".
inline std::string format_percent(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", value * 100.0);
  return buf;
}

struct ModelScore {
  std::string name;
  double tarmse = 0.0;
  double f1 = 0.0;
};

struct Crossover {
  std::string a, b;
  std::optional<double> tau;  // none when parallel or outside [0,1]
};

/// CTA is linear in tau, so two models' curves cross where
/// tau* = (f1_a - f1_b) / ((f1_a - f1_b) - (tarmse_a - tarmse_b)).
inline std::optional<double> crossover(const ModelScore& a, const ModelScore& b) {
  const double df = a.f1 - b.f1;
  const double denom = df - (a.tarmse - b.tarmse);
  if (denom == 0.0) return std::nullopt;
  const double t = df / denom;
  if (!(t >= 0.0 && t <= 1.0)) return std::nullopt;
  return t;
}

inline std::vector<Crossover> tau_sweep(const std::vector<ModelScore>& models) {
  if (models.size() < 2) throw MetricError("tau_sweep: need at least two models");
  std::vector<Crossover> out;
  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = i + 1; j < models.size(); ++j)
      out.push_back({models[i].name, models[j].name, crossover(models[i], models[j])});
  return out;
}

/// CTA of one model on an evenly spaced tau grid (for plotting).
inline std::vector<std::pair<double, double>> cta_curve(const ModelScore& m, std::size_t points = 101) {
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < points; ++i) {
    const double tau = points > 1 ? static_cast<double>(i) / static_cast<double>(points - 1) : 0.0;
    out.emplace_back(tau, cta(m.tarmse, m.f1, tau));
  }
  return out;
}

struct MetricParams {
  double tau = 0.5;
  double b = 0.10;
  double k = 5.14;
  bool pooled_f1 = false;
};

struct MetricReport {
  std::vector<std::optional<double>> rmse;
  std::vector<double> f1;
  double tarmse = 0.0;
  double f1_mean = 0.0;
  double cta = 0.0;
  double k = 0.0;
  double tau = 0.0;
  double b = 0.0;
  Diagnostics diagnostics;
};

/// Full report from predictions and targets in seconds. Samples whose target exceeds
/// the action's global maximum are masked out of both RMSE and F1.
inline MetricReport evaluate(const Matrix& preds, const Matrix& targets, const Matrix& nominal,
                             const Matrix& global_max, const MetricParams& p) {
  Mask keep = (targets.array() <= global_max.array());
  MetricReport r;
  r.k = p.k;
  r.tau = p.tau;
  r.b = p.b;
  r.rmse = rmse_per_step(preds, targets, keep);
  std::vector<double> rs;
  for (std::size_t i = 0; i < r.rmse.size(); ++i) {
    if (!r.rmse[i]) throw DataError("AllMasked(step " + std::to_string(i + 1) + ")");
    rs.push_back(*r.rmse[i]);
  }
  auto f = f1_per_step(preds, targets, nominal, p.b, &keep);
  r.f1 = f.f1;
  r.diagnostics = f.diagnostics;
  r.tarmse = tarmse(rs, p.k);
  r.f1_mean = p.pooled_f1 ? f1_pooled(preds, targets, nominal, p.b, &keep) : mean(r.f1);
  r.cta = cta(r.tarmse, r.f1_mean, p.tau);
  return r;
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json rmse = nlohmann::json::array();
  for (const auto& v : r.rmse) rmse.push_back(v ? nlohmann::json(*v) : nlohmann::json());
  return {{"rmse", rmse},         {"f1", r.f1}, {"tarmse", r.tarmse}, {"f1_mean", r.f1_mean},
          {"cta", r.cta},         {"cta_percent", format_percent(r.cta)}, {"k", r.k},
          {"tau", r.tau},         {"b", r.b}};
}

inline MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  for (const auto& v : j.at("rmse")) r.rmse.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
  j.at("f1").get_to(r.f1);
  j.at("tarmse").get_to(r.tarmse);
  j.at("f1_mean").get_to(r.f1_mean);
  j.at("cta").get_to(r.cta);
  j.at("k").get_to(r.k);
  j.at("tau").get_to(r.tau);
  j.at("b").get_to(r.b);
  return r;
}

}  // namespace vmas::metrics
