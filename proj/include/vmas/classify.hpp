#pragma once

// Error classification: per-action duration histograms, a Gaussian fitted around
// the histogram mode, and labelling of each sequence as normal, source error,
// knock-on error, both, or misc.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "vmas/diagnostics.hpp"
#include "vmas/domain.hpp"

namespace vmas::classify {

/// Integer duration bin: seconds truncated toward negative infinity.
using Bin = std::int64_t;

inline Bin duration_bin(double seconds) { return static_cast<Bin>(std::floor(seconds)); }

struct DurationHistogram {
  ActionKey key;
  std::map<Bin, std::size_t> bins;
  std::size_t total = 0;
};

struct FittedGaussian {
  double mu = 0.0;
  double sigma = 0.0;
  std::size_t n = 0;
  bool degenerate = false;
};

struct SignificanceResult {
  ActionKey key;
  std::set<Bin> significant_durations;
  Bin mode = 0;
  std::map<Bin, double> threshold_curve;

  bool is_significant(double duration) const { return significant_durations.contains(duration_bin(duration)); }
};

inline DurationHistogram build_histogram(const ActionKey& key, std::span<const double> durations) {
  if (durations.empty()) throw DataError("EmptyInput: no durations for " + key.str());
  DurationHistogram h{key, {}, durations.size()};
  for (double d : durations) ++h.bins[duration_bin(d)];
  return h;
}

/// Mode of the histogram; ties go to the shorter duration.
inline Bin histogram_mode(const DurationHistogram& h) {
  Bin best = h.bins.begin()->first;
  std::size_t best_count = 0;
  for (const auto& [d, c] : h.bins)
    if (c > best_count) {
      best = d;
      best_count = c;
    }
  return best;
}

/// Gaussian log-likelihood of the histogram for a given spread, mean held at `mu`.
inline double log_likelihood(const DurationHistogram& h, double mu, double sigma) {
  double ll = 0.0;
  for (const auto& [d, c] : h.bins) {
    const double z = (static_cast<double>(d) - mu) / sigma;
    ll += static_cast<double>(c) * (-0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi));
  }
  return ll;
}

/// Maximum-likelihood fit with the mean pinned to the histogram mode. With the mean
/// fixed, the likelihood maximizer over sigma is the root mean squared deviation.
inline FittedGaussian fit_mle(const DurationHistogram& h) {
  if (h.total < 2) throw DataError("InsufficientData: need at least 2 samples for " + h.key.str());
  FittedGaussian g;
  g.n = h.total;
  g.mu = static_cast<double>(histogram_mode(h));
  double ss = 0.0;
  for (const auto& [d, c] : h.bins) {
    const double dev = static_cast<double>(d) - g.mu;
    ss += static_cast<double>(c) * dev * dev;
  }
  g.sigma = std::sqrt(ss / static_cast<double>(h.total));
  g.degenerate = g.sigma == 0.0;
  return g;
}

inline double normal_density(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

/// Flags every non-mode bin whose relative frequency exceeds the fitted density.
/// A degenerate fit flags nothing: all data of that action count as normal.
inline SignificanceResult detect_significant(const DurationHistogram& h, const FittedGaussian& g) {
  SignificanceResult r;
  r.key = h.key;
  r.mode = static_cast<Bin>(g.mu);
  if (g.degenerate) return r;
  const double total = static_cast<double>(h.total);
  for (const auto& [d, c] : h.bins) {
    const double f = normal_density(static_cast<double>(d), g.mu, g.sigma);
    r.threshold_curve[d] = f;
    if (d != r.mode && static_cast<double>(c) / total > f) r.significant_durations.insert(d);
  }
  return r;
}

/// Writes `duration,count,frequency,density,flagged` rows for plotting.
inline void write_histogram_csv(std::ostream& os, const DurationHistogram& h, const FittedGaussian& g,
                                const SignificanceResult& s) {
  os << "duration,count,frequency,density,flagged\n";
  for (const auto& [d, c] : h.bins) {
    const double density = g.degenerate ? (d == s.mode ? 1.0 : 0.0) : normal_density(double(d), g.mu, g.sigma);
    os << d << ',' << c << ',' << static_cast<double>(c) / static_cast<double>(h.total) << ',' << density << ','
       << (s.significant_durations.contains(d) ? 1 : 0) << '\n';
  }
}

struct MatchOptions {
  /// When set, a report must also carry the action's area (looked up in `action_area`).
  bool match_area = false;
  std::map<ActionKey, std::string> action_area;
};

/// Report index sorted by start time, for interval containment queries.
class ReportIndex {
 public:
  explicit ReportIndex(std::vector<ErrorReport> reports) : reports_(std::move(reports)) {
    std::stable_sort(reports_.begin(), reports_.end(),
                     [](const ErrorReport& a, const ErrorReport& b) { return a.start_ts < b.start_ts; });
  }

  /// Reports whose interval lies within [start, end] on the given station.
  template <class Fn>
  void for_each_within(TimestampMs start, TimestampMs end, const std::string& station, Fn&& fn) const {
    auto it = std::lower_bound(reports_.begin(), reports_.end(), start,
                               [](const ErrorReport& r, TimestampMs t) { return r.start_ts < t; });
    for (; it != reports_.end() && it->start_ts <= end; ++it)
      if (it->end_ts <= end && it->station == station) fn(*it);
  }

 private:
  std::vector<ErrorReport> reports_;
};

/// Labels one sequence from its significant tuples: a significant tuple with a
/// contained same-station error report is a source error, otherwise knock-on.
inline SequenceLabel match_errors(const ActionSequence& seq, const std::map<ActionKey, SignificanceResult>& sig,
                                  const ReportIndex& reports, const MatchOptions& opts = {}) {
  SequenceLabel label;
  label.sequence_id = seq.sequence_id;
  bool any_source = false, any_knockon = false;
  for (std::size_t i = 0; i < seq.tuples.size(); ++i) {
    const auto& t = seq.tuples[i];
    auto it = sig.find(t.key);
    if (it == sig.end() || !it->second.is_significant(t.duration)) continue;
    SignificantTuple st{i, t.key.action_id, t.duration, false, {}};
    const std::string* area = nullptr;
    if (opts.match_area) {
      auto a = opts.action_area.find(t.key);
      if (a != opts.action_area.end()) area = &a->second;
    }
    reports.for_each_within(t.start_ts, t.end_ts, t.key.station, [&](const ErrorReport& r) {
      if (area && r.area != *area) return;
      st.matched_error_ids.push_back(r.error_id);
    });
    st.source = !st.matched_error_ids.empty();
    for (const auto& id : st.matched_error_ids) label.matched_error_ids.push_back(id);
    (st.source ? any_source : any_knockon) = true;
    label.significant.push_back(std::move(st));
  }
  if (any_source && any_knockon)
    label.cls = SequenceClass::SourceAndKnockOn;
  else if (any_source)
    label.cls = SequenceClass::SourceError;
  else if (any_knockon)
    label.cls = SequenceClass::KnockOnError;
  else
    label.cls = SequenceClass::Normal;
  return label;
}

inline SequenceLabel match_errors(const ActionSequence& seq, const std::map<ActionKey, SignificanceResult>& sig,
                                  const std::vector<ErrorReport>& reports, const MatchOptions& opts = {}) {
  return match_errors(seq, sig, ReportIndex(reports), opts);
}

/// Everything the classifier learned about one action.
struct ActionModel {
  ActionSpec spec;
  double d_nominal = 0.0;
  double d_globalmax = 0.0;
  std::optional<DurationHistogram> histogram;
  std::optional<FittedGaussian> fit;
  SignificanceResult significance;
};

struct ClassifyOptions {
  double global_mult = 10.0;
  MatchOptions match;
};

struct ClassificationReport {
  std::vector<SequenceLabel> labels;
  std::map<SequenceClass, double> fractions;
  std::map<SequenceClass, std::size_t> counts;
  std::size_t outlier_removed_count = 0;  // sequences above the global threshold
  std::map<ActionKey, ActionModel> actions;
};

namespace detail {

inline std::map<ActionKey, std::vector<double>> durations_by_key(const std::vector<ActionSequence>& seqs,
                                                                 const std::vector<bool>* skip = nullptr) {
  std::map<ActionKey, std::vector<double>> out;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    if (skip && (*skip)[s]) continue;
    for (const auto& t : seqs[s].tuples) out[t.key].push_back(t.duration);
  }
  return out;
}

}  // namespace detail

/// Fallback specs when the plant provides none: d_max = mode + 3 sigma.
inline std::map<ActionKey, ActionSpec> default_specs(const std::vector<ActionSequence>& seqs) {
  std::map<ActionKey, ActionSpec> out;
  for (auto& [key, ds] : detail::durations_by_key(seqs)) {
    auto h = build_histogram(key, ds);
    const double mode = static_cast<double>(histogram_mode(h));
    double d_max = mode + 1.0;
    if (h.total >= 2) {
      auto g = fit_mle(h);
      if (!g.degenerate) d_max = mode + 3.0 * g.sigma;
    }
    out[key] = ActionSpec{key, std::max(d_max, 1.0), std::nullopt};
  }
  return out;
}

/// Labels every sequence. Misc takes precedence: first sequences holding a duration
/// above `global_mult * d_max`, then sequences whose every duration exceeds nominal
/// without any being significant. The remaining ones go through match_errors.
inline ClassificationReport classify_dataset(const std::vector<ActionSequence>& seqs,
                                             const std::vector<ErrorReport>& reports,
                                             const std::map<ActionKey, ActionSpec>& specs,
                                             const ClassifyOptions& opts = {}) {
  if (!(opts.global_mult > 1.0)) throw DataError("global_mult must exceed 1");
  ClassificationReport rep;

  for (const auto& s : seqs)
    for (const auto& t : s.tuples) {
      auto it = specs.find(t.key);
      if (it == specs.end()) throw DataError("MissingSpec(" + t.key.action_id + ")");
      if (!rep.actions.contains(t.key)) {
        ActionModel m;
        m.spec = it->second;
        m.d_globalmax = opts.global_mult * it->second.d_max;
        rep.actions.emplace(t.key, std::move(m));
      }
    }

  std::vector<bool> above_global(seqs.size(), false);
  for (std::size_t s = 0; s < seqs.size(); ++s)
    for (const auto& t : seqs[s].tuples)
      if (t.duration > rep.actions.at(t.key).d_globalmax) {
        above_global[s] = true;
        break;
      }
  rep.outlier_removed_count = static_cast<std::size_t>(std::count(above_global.begin(), above_global.end(), true));

  // Fit on the sequences that survive the global threshold.
  std::map<ActionKey, SignificanceResult> sig;
  for (auto& [key, ds] : detail::durations_by_key(seqs, &above_global)) {
    auto& m = rep.actions.at(key);
    m.histogram = build_histogram(key, ds);
    if (m.histogram->total >= 2) {
      m.fit = fit_mle(*m.histogram);
      m.significance = detect_significant(*m.histogram, *m.fit);
    } else {
      m.significance.key = key;
      m.significance.mode = histogram_mode(*m.histogram);
    }
    sig.emplace(key, m.significance);
  }
  for (auto& [key, m] : rep.actions) {
    if (m.spec.d_nominal)
      m.d_nominal = *m.spec.d_nominal;
    else if (m.histogram)
      m.d_nominal = static_cast<double>(m.significance.mode);
    else
      m.d_nominal = m.spec.d_max;
  }

  const ReportIndex index(reports);
  rep.labels.reserve(seqs.size());
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    if (above_global[s]) {
      rep.labels.push_back({seq.sequence_id, SequenceClass::Misc, {}, {}});
      continue;
    }
    auto label = match_errors(seq, sig, index, opts.match.match_area ? opts.match : MatchOptions{});
    if (label.significant.empty()) {
      const bool all_exceed = std::all_of(seq.tuples.begin(), seq.tuples.end(), [&](const ActionDurationTuple& t) {
        return static_cast<double>(duration_bin(t.duration)) > rep.actions.at(t.key).d_nominal;
      });
      if (all_exceed) label.cls = SequenceClass::Misc;
    }
    rep.labels.push_back(std::move(label));
  }

  for (auto c : kAllClasses) rep.counts[c] = 0;
  for (const auto& l : rep.labels) ++rep.counts[l.cls];
  for (auto c : kAllClasses)
    rep.fractions[c] = seqs.empty() ? 0.0 : static_cast<double>(rep.counts[c]) / static_cast<double>(seqs.size());
  return rep;
}

inline nlohmann::json summary_json(const ClassificationReport& rep) {
  nlohmann::json fractions = nlohmann::json::object(), counts = nlohmann::json::object();
  for (auto c : kAllClasses) {
    fractions[to_string(c)] = rep.fractions.at(c);
    counts[to_string(c)] = rep.counts.at(c);
  }
  std::size_t with_error = rep.counts.at(SequenceClass::SourceError) + rep.counts.at(SequenceClass::KnockOnError) +
                           rep.counts.at(SequenceClass::SourceAndKnockOn);
  return {{"sequences", rep.labels.size()},
          {"fractions", fractions},
          {"counts", counts},
          {"fraction_with_error", rep.labels.empty() ? 0.0 : double(with_error) / double(rep.labels.size())},
          {"outlier_removed_count", rep.outlier_removed_count}};
}

/// Per-action parameters handed to later stages (nominal, thresholds, fit).
inline nlohmann::json actions_json(const ClassificationReport& rep) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [key, m] : rep.actions) {
    nlohmann::json j = {{"key", key},
                        {"d_max", m.spec.d_max},
                        {"d_nominal", m.d_nominal},
                        {"d_globalmax", m.d_globalmax},
                        {"mode", m.significance.mode},
                        {"significant_durations", m.significance.significant_durations}};
    if (m.fit) j["fit"] = {{"mu", m.fit->mu}, {"sigma", m.fit->sigma}, {"n", m.fit->n}, {"degenerate", m.fit->degenerate}};
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace vmas::classify
