#pragma once

// Turns labelled sequences into normalized look-back windows for the forecasting
// models: outlier filtering, misc removal, feature encoding, windowing and the
// chronological train/test split.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <istream>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vmas/diagnostics.hpp"
#include "vmas/domain.hpp"

namespace vmas::pipeline {

inline constexpr std::size_t kFeatures = 5;
enum Feature : std::size_t { kTime = 0, kAction = 1, kDuration = 2, kErrorType = 3, kErrorCount = 4 };
inline constexpr const char* kFeatureNames[kFeatures] = {"time", "action", "duration", "error_type", "error_count"};

enum class ErrorType : int { Normal = 1, Source = 2, KnockOn = 3, Undefined = 4 };

enum class OutlierMode { None, AA, APS };

inline const char* to_string(OutlierMode m) {
  switch (m) {
    case OutlierMode::AA: return "AA";
    case OutlierMode::APS: return "APS";
    case OutlierMode::None: return "none";
  }
  return "none";
}

inline OutlierMode outlier_mode_from_string(const std::string& s) {
  if (s == "AA") return OutlierMode::AA;
  if (s == "APS") return OutlierMode::APS;
  if (s == "none") return OutlierMode::None;
  throw std::invalid_argument("unknown outlier_mode '" + s + "' (expected AA, APS or none)");
}

struct PipelineConfig {
  std::size_t n_back = 5;
  std::size_t m_fwd = 2;
  bool separate = true;
  OutlierMode outlier_mode = OutlierMode::APS;
  double global_mult = 10.0;
  double split_fraction = 0.8;
  bool legacy_norm = false;  // fit normalization on the whole corpus before splitting
  bool drop_misc = true;
  std::string boundary_action = "AC000";
};

/// Named n-m setups.
inline std::pair<std::size_t, std::size_t> preset(const std::string& name) {
  static const std::map<std::string, std::pair<std::size_t, std::size_t>> presets{
      {"5-2", {5, 2}}, {"5-5", {5, 5}}, {"5-7", {5, 7}}, {"7-5", {7, 5}}, {"7-7", {7, 7}}};
  auto it = presets.find(name);
  if (it == presets.end()) throw std::invalid_argument("unknown preset '" + name + "'");
  return it->second;
}

inline void validate(const PipelineConfig& c) {
  if (c.n_back < 1 || c.m_fwd < 1) throw std::invalid_argument("n_back and m_fwd must be at least 1");
  if (!(c.split_fraction > 0.0 && c.split_fraction < 1.0)) throw std::invalid_argument("split_fraction must be in (0,1)");
  if (!(c.global_mult > 1.0)) throw std::invalid_argument("global_mult must exceed 1");
}

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = {{"n_back", c.n_back},
       {"m_fwd", c.m_fwd},
       {"separate", c.separate},
       {"outlier_mode", to_string(c.outlier_mode)},
       {"global_mult", c.global_mult},
       {"split_fraction", c.split_fraction},
       {"legacy_norm", c.legacy_norm},
       {"drop_misc", c.drop_misc},
       {"boundary_action", c.boundary_action}};
}

inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
  c = PipelineConfig{};
  if (j.contains("preset")) std::tie(c.n_back, c.m_fwd) = preset(j.at("preset").get<std::string>());
  if (j.contains("n_back")) j.at("n_back").get_to(c.n_back);
  if (j.contains("m_fwd")) j.at("m_fwd").get_to(c.m_fwd);
  if (j.contains("separate")) j.at("separate").get_to(c.separate);
  if (j.contains("outlier_mode")) c.outlier_mode = outlier_mode_from_string(j.at("outlier_mode").get<std::string>());
  if (j.contains("global_mult")) j.at("global_mult").get_to(c.global_mult);
  if (j.contains("split_fraction")) j.at("split_fraction").get_to(c.split_fraction);
  if (j.contains("legacy_norm")) j.at("legacy_norm").get_to(c.legacy_norm);
  if (j.contains("drop_misc")) j.at("drop_misc").get_to(c.drop_misc);
  if (j.contains("boundary_action")) j.at("boundary_action").get_to(c.boundary_action);
}

/// One tuple with the raw (unnormalized) feature values attached.
struct RawRow {
  ActionKey key;
  TimestampMs start_ts = 0;
  double duration = 0.0;
  ErrorType error_type = ErrorType::Normal;
  std::size_t error_count = 0;
};

struct RowSequence {
  std::string sequence_id;
  SequenceClass cls = SequenceClass::Normal;
  std::vector<RawRow> rows;
};

/// Joins sequences with their labels. Tuples of misc sequences are "undefined";
/// significant tuples are source or knock-on; everything else is normal.
inline std::vector<RowSequence> attach_labels(const std::vector<ActionSequence>& seqs,
                                              const std::vector<SequenceLabel>& labels) {
  std::map<std::string, const SequenceLabel*> by_id;
  for (const auto& l : labels) by_id[l.sequence_id] = &l;
  std::vector<RowSequence> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) {
    auto it = by_id.find(s.sequence_id);
    if (it == by_id.end()) throw DataError("missing label for sequence " + s.sequence_id);
    const auto& label = *it->second;
    RowSequence rs{s.sequence_id, label.cls, {}};
    for (const auto& t : s.tuples)
      rs.rows.push_back({t.key, t.start_ts, t.duration,
                         label.cls == SequenceClass::Misc ? ErrorType::Undefined : ErrorType::Normal, 0});
    if (label.cls != SequenceClass::Misc)
      for (const auto& sig : label.significant) {
        if (sig.index >= rs.rows.size()) throw DataError("label index out of range in " + s.sequence_id);
        auto& r = rs.rows[sig.index];
        r.error_type = sig.source ? ErrorType::Source : ErrorType::KnockOn;
        r.error_count = sig.matched_error_ids.size();
      }
    out.push_back(std::move(rs));
  }
  return out;
}

template <class Seq>
struct FilterResult {
  std::vector<Seq> seqs;
  std::size_t removed_count = 0;
};

namespace detail {
inline auto& items(ActionSequence& s) { return s.tuples; }
inline auto& items(RowSequence& s) { return s.rows; }
inline const auto& items(const ActionSequence& s) { return s.tuples; }
inline const auto& items(const RowSequence& s) { return s.rows; }
}  // namespace detail

/// Removes durations above the action's global maximum: the offending tuple (AA) or
/// its whole sequence (APS). Actions without a limit are never outliers. Sequences
/// emptied by AA are dropped.
template <class Seq>
FilterResult<Seq> filter_outliers(const std::vector<Seq>& seqs, const std::map<ActionKey, double>& d_globalmax,
                                  OutlierMode mode) {
  auto is_outlier = [&](const auto& t) {
    auto it = d_globalmax.find(t.key);
    return it != d_globalmax.end() && t.duration > it->second;
  };
  FilterResult<Seq> r;
  for (const auto& s : seqs) {
    const auto& xs = detail::items(s);
    const auto bad = static_cast<std::size_t>(std::count_if(xs.begin(), xs.end(), is_outlier));
    if (mode == OutlierMode::None || bad == 0) {
      r.seqs.push_back(s);
    } else if (mode == OutlierMode::APS) {
      r.removed_count += xs.size();
    } else {
      Seq kept = s;
      auto& ks = detail::items(kept);
      ks.erase(std::remove_if(ks.begin(), ks.end(), is_outlier), ks.end());
      r.removed_count += bad;
      if (!ks.empty()) r.seqs.push_back(std::move(kept));
    }
  }
  return r;
}

struct DropResult {
  std::vector<RowSequence> seqs;
  std::size_t removed = 0;
  Diagnostics diagnostics;
};

inline DropResult drop_misc(const std::vector<RowSequence>& seqs) {
  DropResult r;
  for (const auto& s : seqs) {
    if (s.cls == SequenceClass::Misc)
      ++r.removed;
    else
      r.seqs.push_back(s);
  }
  if (r.seqs.empty() && !seqs.empty()) r.diagnostics.push_back({0, "Warning", "all sequences are misc; corpus is empty"});
  return r;
}

using Features = std::array<double, kFeatures>;

/// Integer codes for action ids in order of first appearance, starting at 1.
struct Vocabulary {
  std::vector<ActionKey> keys;
  std::map<ActionKey, int> code;

  int add(const ActionKey& k) {
    auto [it, inserted] = code.emplace(k, static_cast<int>(keys.size()) + 1);
    if (inserted) keys.push_back(k);
    return it->second;
  }
  int at(const ActionKey& k) const {
    auto it = code.find(k);
    if (it == code.end()) throw DataError("action not in vocabulary: " + k.str());
    return it->second;
  }
};

inline Vocabulary build_vocabulary(const std::vector<RowSequence>& seqs) {
  Vocabulary v;
  for (const auto& s : seqs)
    for (const auto& r : s.rows) v.add(r.key);
  return v;
}

inline Features raw_features(const RawRow& r, const Vocabulary& vocab) {
  return {ms_to_seconds(r.start_ts), static_cast<double>(vocab.at(r.key)), r.duration,
          static_cast<double>(static_cast<int>(r.error_type)), static_cast<double>(r.error_count)};
}

struct FeatureRange {
  double min = 0.0;
  double max = 0.0;
  bool constant = false;
};

/// Per-feature min/max. A constant feature maps to 0 and is flagged.
struct NormalizationParams {
  std::array<FeatureRange, kFeatures> ranges{};

  double normalize(std::size_t f, double v) const {
    const auto& r = ranges[f];
    if (r.constant) return 0.0;
    return std::clamp(2.0 * (v - r.min) / (r.max - r.min) - 1.0, -1.0, 1.0);
  }
  double denormalize(std::size_t f, double v) const {
    const auto& r = ranges[f];
    if (r.constant) return r.min;
    return (v + 1.0) * (r.max - r.min) / 2.0 + r.min;
  }
};

inline NormalizationParams fit_normalization(const std::vector<Features>& rows) {
  if (rows.empty()) throw DataError("EmptyCorpus: nothing to fit normalization on");
  NormalizationParams p;
  for (std::size_t f = 0; f < kFeatures; ++f) {
    double lo = rows.front()[f], hi = lo;
    for (const auto& r : rows) {
      lo = std::min(lo, r[f]);
      hi = std::max(hi, r[f]);
    }
    p.ranges[f] = {lo, hi, !(hi > lo)};
  }
  return p;
}

inline void to_json(nlohmann::json& j, const NormalizationParams& p) {
  j = nlohmann::json::array();
  for (std::size_t f = 0; f < kFeatures; ++f)
    j.push_back({{"feature", kFeatureNames[f]}, {"min", p.ranges[f].min}, {"max", p.ranges[f].max},
                 {"constant", p.ranges[f].constant}});
}

inline void from_json(const nlohmann::json& j, NormalizationParams& p) {
  if (!j.is_array() || j.size() != kFeatures) throw DataError("normalization params must list 5 features");
  for (std::size_t f = 0; f < kFeatures; ++f) {
    j[f].at("min").get_to(p.ranges[f].min);
    j[f].at("max").get_to(p.ranges[f].max);
    j[f].at("constant").get_to(p.ranges[f].constant);
  }
}

/// Position of a row: (sequence index, row index within the sequence).
using RowRef = std::pair<std::size_t, std::size_t>;

struct WindowSet {
  std::vector<std::vector<RowRef>> streams;
  std::vector<std::pair<std::size_t, std::size_t>> windows;  // (stream, first row)
  Diagnostics diagnostics;
};

/// Number of stride-1 windows of n inputs and m targets over `len` rows.
inline std::size_t window_count(std::size_t len, std::size_t n_back, std::size_t m_fwd) {
  return len >= n_back + m_fwd ? len - n_back - m_fwd + 1 : 0;
}

/// Sliding windows. With `separate`, each sequence is its own stream with boundary
/// rows removed; otherwise all rows form one stream and windows may straddle sequences.
/// `seq_lengths[i]` and `is_boundary(i, j)` describe the corpus.
template <class IsBoundary>
WindowSet make_windows(const std::vector<std::size_t>& seq_lengths, std::size_t n_back, std::size_t m_fwd,
                       bool separate, IsBoundary is_boundary) {
  if (n_back < 1 || m_fwd < 1) throw std::invalid_argument("n_back and m_fwd must be at least 1");
  WindowSet w;
  if (separate) {
    for (std::size_t i = 0; i < seq_lengths.size(); ++i) {
      std::vector<RowRef> s;
      for (std::size_t j = 0; j < seq_lengths[i]; ++j)
        if (!is_boundary(i, j)) s.emplace_back(i, j);
      w.streams.push_back(std::move(s));
    }
  } else {
    w.streams.emplace_back();
    for (std::size_t i = 0; i < seq_lengths.size(); ++i)
      for (std::size_t j = 0; j < seq_lengths[i]; ++j) w.streams.back().emplace_back(i, j);
  }
  for (std::size_t s = 0; s < w.streams.size(); ++s) {
    const auto count = window_count(w.streams[s].size(), n_back, m_fwd);
    if (count == 0) {
      const std::size_t row = separate ? s + 1 : 0;
      w.diagnostics.push_back({row, "SequenceTooShort",
                               std::to_string(w.streams[s].size()) + " rows, need " + std::to_string(n_back + m_fwd)});
    }
    for (std::size_t k = 0; k < count; ++k) w.windows.emplace_back(s, k);
  }
  return w;
}

inline WindowSet make_windows(const std::vector<RowSequence>& seqs, std::size_t n_back, std::size_t m_fwd,
                              bool separate, const std::string& boundary_action) {
  std::vector<std::size_t> lens;
  for (const auto& s : seqs) lens.push_back(s.rows.size());
  return make_windows(lens, n_back, m_fwd, separate, [&](std::size_t i, std::size_t j) {
    return seqs[i].rows[j].key.action_id == boundary_action;
  });
}

template <class T>
struct Split {
  std::vector<T> train, test;
  Diagnostics diagnostics;
};

/// Number of training items for a chronological split: ceil(f * n), computed so that
/// exact products such as 0.8 * 137605 are not pushed up by rounding.
inline std::size_t train_count(std::size_t n, double f) {
  if (!(f > 0.0 && f < 1.0)) throw std::invalid_argument("split fraction must be in (0,1)");
  const double t = f * static_cast<double>(n);
  const double r = std::round(t);
  const auto c = std::abs(t - r) <= 1e-9 * std::max(1.0, t) ? r : std::ceil(t);
  return std::min(n, static_cast<std::size_t>(c));
}

template <class T>
Split<T> split_train_test(std::vector<T> items, double f) {
  Split<T> s;
  const auto n_train = train_count(items.size(), f);
  s.test.assign(std::make_move_iterator(items.begin() + static_cast<std::ptrdiff_t>(n_train)),
                std::make_move_iterator(items.end()));
  items.resize(n_train);
  s.train = std::move(items);
  if (s.test.empty()) s.diagnostics.push_back({0, "Warning", "test split is empty"});
  return s;
}

/// A normalized training/evaluation sample. `y_seconds` and `y_actions` keep the raw
/// targets and their action codes for evaluation in seconds.
struct WindowedPair {
  std::string sequence_id;  // sequence of the first target
  std::vector<Features> x;
  std::vector<double> y;
  std::vector<double> y_seconds;
  std::vector<int> y_actions;

  friend bool operator==(const WindowedPair&, const WindowedPair&) = default;
};

inline void to_json(nlohmann::json& j, const WindowedPair& p) {
  j = {{"sequence_id", p.sequence_id}, {"x", p.x}, {"y", p.y}, {"y_seconds", p.y_seconds}, {"y_actions", p.y_actions}};
}

inline void from_json(const nlohmann::json& j, WindowedPair& p) {
  j.at("sequence_id").get_to(p.sequence_id);
  j.at("x").get_to(p.x);
  j.at("y").get_to(p.y);
  j.at("y_seconds").get_to(p.y_seconds);
  j.at("y_actions").get_to(p.y_actions);
}

inline void write_pairs(std::ostream& os, const std::vector<WindowedPair>& pairs) {
  for (const auto& p : pairs) os << nlohmann::json(p).dump() << '\n';
}

inline std::vector<WindowedPair> read_pairs(std::istream& is) {
  std::vector<WindowedPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<WindowedPair>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError("pairs line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

struct PreparedData {
  std::vector<WindowedPair> train, test;
  NormalizationParams norm;
  Vocabulary vocab;
  std::size_t outliers_removed = 0;
  std::size_t misc_removed = 0;
  std::size_t sequences_used = 0;
  Diagnostics diagnostics;
};

/// Full preparation: filter outliers, optionally drop misc sequences, window, split
/// chronologically and normalize with statistics from the training windows only
/// (or the whole corpus with `legacy_norm`).
inline PreparedData prepare(const std::vector<ActionSequence>& seqs, const std::vector<SequenceLabel>& labels,
                            const std::map<ActionKey, double>& d_globalmax, const PipelineConfig& cfg) {
  validate(cfg);
  PreparedData out;
  auto rows = attach_labels(seqs, labels);
  std::stable_sort(rows.begin(), rows.end(), [](const RowSequence& a, const RowSequence& b) {
    const auto ta = a.rows.empty() ? 0 : a.rows.front().start_ts;
    const auto tb = b.rows.empty() ? 0 : b.rows.front().start_ts;
    return ta < tb;
  });
  auto filtered = filter_outliers(rows, d_globalmax, cfg.outlier_mode);
  out.outliers_removed = filtered.removed_count;
  rows = std::move(filtered.seqs);
  if (cfg.drop_misc) {
    auto d = drop_misc(rows);
    out.misc_removed = d.removed;
    out.diagnostics.insert(out.diagnostics.end(), d.diagnostics.begin(), d.diagnostics.end());
    rows = std::move(d.seqs);
  }
  if (rows.empty()) throw DataError("EmptyCorpus: no sequences left after filtering");
  out.sequences_used = rows.size();
  out.vocab = build_vocabulary(rows);

  std::vector<std::vector<Features>> raw(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (const auto& r : rows[i].rows) raw[i].push_back(raw_features(r, out.vocab));

  auto w = make_windows(rows, cfg.n_back, cfg.m_fwd, cfg.separate, cfg.boundary_action);
  out.diagnostics.insert(out.diagnostics.end(), w.diagnostics.begin(), w.diagnostics.end());
  if (w.windows.empty()) throw DataError("EmptyCorpus: no windows (sequences too short)");
  auto split = split_train_test(w.windows, cfg.split_fraction);
  out.diagnostics.insert(out.diagnostics.end(), split.diagnostics.begin(), split.diagnostics.end());

  const std::size_t span = cfg.n_back + cfg.m_fwd;
  std::vector<Features> fit_rows;
  if (cfg.legacy_norm) {
    for (const auto& s : raw) fit_rows.insert(fit_rows.end(), s.begin(), s.end());
  } else {
    std::set<RowRef> used;
    for (const auto& [s, k] : split.train)
      for (std::size_t o = 0; o < span; ++o) used.insert(w.streams[s][k + o]);
    for (const auto& [i, j] : used) fit_rows.push_back(raw[i][j]);
  }
  out.norm = fit_normalization(fit_rows);

  auto build = [&](const std::pair<std::size_t, std::size_t>& win) {
    const auto& stream = w.streams[win.first];
    WindowedPair p;
    for (std::size_t o = 0; o < cfg.n_back; ++o) {
      const auto [i, j] = stream[win.second + o];
      Features f;
      for (std::size_t c = 0; c < kFeatures; ++c) f[c] = out.norm.normalize(c, raw[i][j][c]);
      p.x.push_back(f);
    }
    for (std::size_t o = 0; o < cfg.m_fwd; ++o) {
      const auto [i, j] = stream[win.second + cfg.n_back + o];
      if (o == 0) p.sequence_id = rows[i].sequence_id;
      p.y.push_back(out.norm.normalize(kDuration, raw[i][j][kDuration]));
      p.y_seconds.push_back(raw[i][j][kDuration]);
      p.y_actions.push_back(static_cast<int>(raw[i][j][kAction]));
    }
    return p;
  };
  for (const auto& win : split.train) out.train.push_back(build(win));
  for (const auto& win : split.test) out.test.push_back(build(win));
  return out;
}

}  // namespace vmas::pipeline
