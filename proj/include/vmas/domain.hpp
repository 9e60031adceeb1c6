#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "json.hpp"

namespace vmas {

/// Milliseconds since the configured epoch (default 2020-01-01T00:00:00Z).
using TimestampMs = std::int64_t;

/// 2020-01-01T00:00:00Z as Unix milliseconds.
inline constexpr TimestampMs kDefaultEpochUnixMs = 1577836800000;

inline double ms_to_seconds(TimestampMs ms) { return static_cast<double>(ms) / 1000.0; }
inline TimestampMs seconds_to_ms(double s) { return static_cast<TimestampMs>(std::llround(s * 1000.0)); }

/// Identifies an action `a = (station, vehicle code, action id)`.
struct ActionKey {
  std::string station;
  std::string vehicle_code;
  std::string action_id;

  friend bool operator==(const ActionKey&, const ActionKey&) = default;
  friend auto operator<=>(const ActionKey&, const ActionKey&) = default;

  std::string str() const { return station + "/" + vehicle_code + "/" + action_id; }
};

/// One executed action with its measured duration in seconds.
struct ActionDurationTuple {
  ActionKey key;
  TimestampMs start_ts = 0;
  TimestampMs end_ts = 0;
  double duration = 0.0;

  friend bool operator==(const ActionDurationTuple&, const ActionDurationTuple&) = default;
};

/// Builds a tuple whose duration is derived from its timestamps.
inline ActionDurationTuple make_action_tuple(ActionKey key, TimestampMs start, TimestampMs end) {
  return ActionDurationTuple{std::move(key), start, end, ms_to_seconds(end - start)};
}

struct ActionSpec {
  ActionKey key;
  double d_max = 0.0;
  std::optional<double> d_nominal;
};

struct ActionSequence {
  std::string sequence_id;
  std::string vehicle_code;
  std::vector<ActionDurationTuple> tuples;

  friend bool operator==(const ActionSequence&, const ActionSequence&) = default;
};

struct ErrorReport {
  std::string error_id;
  TimestampMs start_ts = 0;
  TimestampMs end_ts = 0;
  std::string station;
  std::string area;
  std::string message;

  friend bool operator==(const ErrorReport&, const ErrorReport&) = default;
};

enum class SequenceClass { Normal, SourceError, KnockOnError, SourceAndKnockOn, Misc };

inline constexpr SequenceClass kAllClasses[] = {SequenceClass::Normal, SequenceClass::SourceError,
                                               SequenceClass::KnockOnError, SequenceClass::SourceAndKnockOn,
                                               SequenceClass::Misc};

inline const char* to_string(SequenceClass c) {
  switch (c) {
    case SequenceClass::Normal: return "normal";
    case SequenceClass::SourceError: return "source";
    case SequenceClass::KnockOnError: return "knockon";
    case SequenceClass::SourceAndKnockOn: return "source_and_knockon";
    case SequenceClass::Misc: return "misc";
  }
  return "unknown";
}

inline std::optional<SequenceClass> sequence_class_from_string(std::string_view s) {
  for (auto c : kAllClasses)
    if (s == to_string(c)) return c;
  return std::nullopt;
}

/// A tuple flagged as a significant duration within its sequence.
struct SignificantTuple {
  std::size_t index = 0;
  std::string action_id;
  double duration = 0.0;
  bool source = false;  // false means knock-on
  std::vector<std::string> matched_error_ids;
};

struct SequenceLabel {
  std::string sequence_id;
  SequenceClass cls = SequenceClass::Normal;
  std::vector<SignificantTuple> significant;
  std::vector<std::string> matched_error_ids;
};

/// Canonical tuple order: start time, then action id.
inline bool canonical_less(const ActionDurationTuple& a, const ActionDurationTuple& b) {
  return std::tie(a.start_ts, a.key.action_id) < std::tie(b.start_ts, b.key.action_id);
}

inline ActionSequence sort_canonical(ActionSequence seq) {
  std::stable_sort(seq.tuples.begin(), seq.tuples.end(), canonical_less);
  return seq;
}

/// Lists every broken invariant of `seq`; empty when the sequence is well formed.
inline std::vector<std::string> validate_sequence(const ActionSequence& seq) {
  std::vector<std::string> out;
  if (seq.tuples.empty()) out.emplace_back("empty tuples");
  for (std::size_t i = 0; i < seq.tuples.size(); ++i) {
    const auto& t = seq.tuples[i];
    const auto at = " at index " + std::to_string(i);
    if (t.key.station.empty()) out.push_back("empty station" + at);
    if (t.key.vehicle_code.empty()) out.push_back("empty vehicle_code" + at);
    if (t.key.action_id.empty()) out.push_back("empty action_id" + at);
    if (std::abs(t.duration - ms_to_seconds(t.end_ts - t.start_ts)) > 1e-6) out.push_back("duration mismatch" + at);
    if (t.duration < 0.0) out.push_back("negative duration" + at);
    if (i > 0 && canonical_less(t, seq.tuples[i - 1])) out.push_back("ordering violation" + at);
  }
  return out;
}

// JSON (de)serialization. Field names follow the type definitions.

inline void to_json(nlohmann::json& j, const ActionKey& k) {
  j = {{"station", k.station}, {"vehicle_code", k.vehicle_code}, {"action_id", k.action_id}};
}
inline void from_json(const nlohmann::json& j, ActionKey& k) {
  j.at("station").get_to(k.station);
  j.at("vehicle_code").get_to(k.vehicle_code);
  j.at("action_id").get_to(k.action_id);
}

inline void to_json(nlohmann::json& j, const ActionDurationTuple& t) {
  j = {{"key", t.key}, {"start_ts", t.start_ts}, {"end_ts", t.end_ts}, {"duration", t.duration}};
}
inline void from_json(const nlohmann::json& j, ActionDurationTuple& t) {
  j.at("key").get_to(t.key);
  j.at("start_ts").get_to(t.start_ts);
  j.at("end_ts").get_to(t.end_ts);
  j.at("duration").get_to(t.duration);
}

inline void to_json(nlohmann::json& j, const ActionSequence& s) {
  j = {{"sequence_id", s.sequence_id}, {"vehicle_code", s.vehicle_code}, {"tuples", s.tuples}};
}
inline void from_json(const nlohmann::json& j, ActionSequence& s) {
  j.at("sequence_id").get_to(s.sequence_id);
  j.at("vehicle_code").get_to(s.vehicle_code);
  j.at("tuples").get_to(s.tuples);
}

inline void to_json(nlohmann::json& j, const ActionSpec& s) {
  j = {{"key", s.key}, {"d_max", s.d_max}};
  if (s.d_nominal) j["d_nominal"] = *s.d_nominal;
}
inline void from_json(const nlohmann::json& j, ActionSpec& s) {
  j.at("key").get_to(s.key);
  j.at("d_max").get_to(s.d_max);
  if (j.contains("d_nominal") && !j.at("d_nominal").is_null()) s.d_nominal = j.at("d_nominal").get<double>();
}

inline void to_json(nlohmann::json& j, const SignificantTuple& s) {
  j = {{"index", s.index},
       {"action_id", s.action_id},
       {"duration", s.duration},
       {"kind", s.source ? "source" : "knockon"},
       {"matched_error_ids", s.matched_error_ids}};
}
inline void from_json(const nlohmann::json& j, SignificantTuple& s) {
  j.at("index").get_to(s.index);
  j.at("action_id").get_to(s.action_id);
  j.at("duration").get_to(s.duration);
  s.source = j.at("kind").get<std::string>() == "source";
  j.at("matched_error_ids").get_to(s.matched_error_ids);
}

inline void to_json(nlohmann::json& j, const SequenceLabel& l) {
  j = {{"sequence_id", l.sequence_id},
       {"class", to_string(l.cls)},
       {"significant", l.significant},
       {"matched_error_ids", l.matched_error_ids}};
}
inline void from_json(const nlohmann::json& j, SequenceLabel& l) {
  j.at("sequence_id").get_to(l.sequence_id);
  auto c = sequence_class_from_string(j.at("class").get<std::string>());
  if (!c) throw std::runtime_error("unknown sequence class " + j.at("class").dump());
  l.cls = *c;
  j.at("significant").get_to(l.significant);
  if (j.contains("matched_error_ids")) j.at("matched_error_ids").get_to(l.matched_error_ids);
}

}  // namespace vmas
