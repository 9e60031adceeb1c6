#pragma once

// Synthetic single-station production line. Emits PDA-style logs together with
// the ground truth of every injected delay.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "vmas/classify.hpp"
#include "vmas/diagnostics.hpp"
#include "vmas/domain.hpp"
#include "vmas/ingest.hpp"

namespace vmas::simgen {

struct ActionTemplate {
  std::string action_id;
  double nominal = 1.0;    // seconds
  double jitter_sd = 0.25; // seconds
};

struct DelaySpec {
  double mean = 25.0;
  double sd = 2.0;
};

struct PropagationSpec {
  std::size_t horizon = 2;
  double decay = 0.7;
};

struct LineSpec {
  std::string station = "ST7240";
  std::string vehicle_code = "0021";
  std::string area = "A1";
  std::vector<ActionTemplate> actions;
  std::string boundary_action = "AC000";
  double boundary_duration = 1.0;
  double source_rate = 0.1;
  DelaySpec source_delay;
  PropagationSpec propagation;
  double misc_rate = 0.01;
  double misc_scale = 20.0;
  /// Emitted d_max per action is d_max_factor * nominal.
  double d_max_factor = 1.5;
  double gap_between_sequences = 5.0;
  std::uint64_t seed = 42;
};

/// Twelve actions with half-second nominals, so jitter stays inside one integer bin.
inline LineSpec default_line_spec() {
  LineSpec s;
  const std::array<double, 12> nominals{12.5, 30.5, 8.5, 20.5, 15.5, 25.5, 10.5, 18.5, 35.5, 6.5, 22.5, 14.5};
  for (std::size_t i = 0; i < nominals.size(); ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "AC%03zu", i + 1);
    s.actions.push_back({id, nominals[i], 0.25});
  }
  return s;
}

inline std::vector<std::string> validate(const LineSpec& s) {
  std::vector<std::string> v;
  auto prob = [&](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) v.push_back(std::string(name) + " must be in [0,1]");
  };
  prob(s.source_rate, "source_rate");
  prob(s.misc_rate, "misc_rate");
  if (s.actions.empty()) v.emplace_back("actions must be non-empty");
  for (const auto& a : s.actions) {
    if (!(a.nominal > 0)) v.push_back("nominal must be positive for " + a.action_id);
    if (!(a.jitter_sd >= 0)) v.push_back("jitter_sd must be non-negative for " + a.action_id);
    if (a.action_id.empty() || a.action_id == s.boundary_action) v.emplace_back("invalid action id");
  }
  if (!(s.propagation.decay > 0 && s.propagation.decay < 1)) v.emplace_back("decay must be in (0,1)");
  if (!(s.misc_scale > 1)) v.emplace_back("misc_scale must exceed 1");
  if (!(s.boundary_duration > 0)) v.emplace_back("boundary_duration must be positive");
  if (!(s.source_delay.sd >= 0)) v.emplace_back("source_delay.sd must be non-negative");
  if (!(s.d_max_factor >= 1)) v.emplace_back("d_max_factor must be at least 1");
  if (s.station.empty() || s.vehicle_code.empty() || s.boundary_action.empty()) v.emplace_back("empty identifier");
  return v;
}

enum class Cause { None, Source, KnockOn, Misc };

inline const char* to_string(Cause c) {
  switch (c) {
    case Cause::None: return "none";
    case Cause::Source: return "source";
    case Cause::KnockOn: return "knockon";
    case Cause::Misc: return "misc";
  }
  return "none";
}

struct TupleTruth {
  double delay = 0.0;  // seconds added on top of the jittered nominal
  Cause cause = Cause::None;
};

struct SequenceTruth {
  std::string sequence_id;
  SequenceClass cls = SequenceClass::Normal;
  std::vector<TupleTruth> tuples;  // aligned with the sequence's tuples
};

struct GroundTruth {
  std::vector<SequenceTruth> sequences;
};

struct Generated {
  std::vector<ActionSequence> sequences;
  std::vector<ErrorReport> reports;
  GroundTruth truth;
  std::map<ActionKey, ActionSpec> specs;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct SequenceDraw {
  std::vector<double> durations;  // one per action template
  std::vector<TupleTruth> truth;
  std::optional<std::size_t> source_action;
};

inline SequenceDraw draw_sequence(const LineSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t n = spec.actions.size();
  SequenceDraw d;
  d.durations.resize(n);
  d.truth.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& a = spec.actions[j];
    d.durations[j] = std::max(0.1, a.nominal + a.jitter_sd * unit(rng));
  }
  // Fixed draw order keeps the stream independent of which branches fire.
  const double source_u = u01(rng), source_pick = u01(rng), delay_z = unit(rng);
  const double misc_u = u01(rng), misc_pick = u01(rng);
  auto pick = [n](double u) { return std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n))); };

  if (source_u < spec.source_rate) {
    const std::size_t s = pick(source_pick);
    const double delay = std::max(0.0, spec.source_delay.mean + spec.source_delay.sd * delay_z);
    d.source_action = s;
    d.durations[s] += delay;
    d.truth[s] = {delay, Cause::Source};
    double factor = 1.0;
    for (std::size_t k = 1; k <= spec.propagation.horizon && s + k < n; ++k) {
      factor *= spec.propagation.decay;
      d.durations[s + k] += delay * factor;
      d.truth[s + k] = {delay * factor, Cause::KnockOn};
    }
  }
  if (misc_u < spec.misc_rate) {
    const std::size_t m = pick(misc_pick);
    const double before = d.durations[m];
    d.durations[m] *= spec.misc_scale;
    d.truth[m] = {d.truth[m].delay + d.durations[m] - before, Cause::Misc};
  }
  return d;
}

}  // namespace detail

inline Generated generate(const LineSpec& spec, std::size_t n_sequences) {
  if (auto v = validate(spec); !v.empty()) throw DataError("InvalidSpec: " + v.front());
  if (n_sequences < 1) throw DataError("InvalidSpec: n_sequences must be at least 1");

  Generated g;
  auto key_of = [&](const std::string& id) { return ActionKey{spec.station, spec.vehicle_code, id}; };
  g.specs[key_of(spec.boundary_action)] = {key_of(spec.boundary_action), spec.boundary_duration * spec.d_max_factor,
                                           spec.boundary_duration};
  for (const auto& a : spec.actions)
    g.specs[key_of(a.action_id)] = {key_of(a.action_id), a.nominal * spec.d_max_factor, std::nullopt};

  TimestampMs clock = 0;
  std::size_t error_counter = 0;
  for (std::size_t i = 0; i < n_sequences; ++i) {
    auto draw = detail::draw_sequence(spec, detail::splitmix64(spec.seed ^ detail::splitmix64(i)));
    char sid[32];
    std::snprintf(sid, sizeof sid, "S%06zu", i + 1);
    ActionSequence seq{sid, spec.vehicle_code, {}};
    SequenceTruth truth{sid, SequenceClass::Normal, {}};

    TimestampMs t = clock;
    auto emit = [&](const std::string& id, double seconds) {
      const TimestampMs dur = std::max<TimestampMs>(1, seconds_to_ms(seconds));
      seq.tuples.push_back(make_action_tuple(key_of(id), t, t + dur));
      t += dur;
    };
    emit(spec.boundary_action, spec.boundary_duration);
    truth.tuples.push_back({});
    bool misc = false, knockon = false;
    for (std::size_t j = 0; j < spec.actions.size(); ++j) {
      emit(spec.actions[j].action_id, draw.durations[j]);
      truth.tuples.push_back(draw.truth[j]);
      misc |= draw.truth[j].cause == Cause::Misc;
      knockon |= draw.truth[j].cause == Cause::KnockOn;
    }
    if (draw.source_action) {
      const auto& src = seq.tuples[*draw.source_action + 1];
      const TimestampMs len = src.end_ts - src.start_ts;
      char eid[32];
      std::snprintf(eid, sizeof eid, "E%06zu", ++error_counter);
      g.reports.push_back({eid, src.start_ts + len / 4, src.start_ts + (3 * len) / 4, spec.station, spec.area,
                           "fault during " + src.key.action_id});
    }
    if (misc)
      truth.cls = SequenceClass::Misc;
    else if (draw.source_action)
      truth.cls = knockon ? SequenceClass::SourceAndKnockOn : SequenceClass::SourceError;
    clock = t + seconds_to_ms(spec.gap_between_sequences);
    g.sequences.push_back(std::move(seq));
    g.truth.sequences.push_back(std::move(truth));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Scoring a classification against the ground truth.

/// Four scoring classes; SourceAndKnockOn is folded into Source.
enum class ScoreClass { Normal = 0, Source = 1, KnockOn = 2, Misc = 3 };

inline ScoreClass score_class(SequenceClass c) {
  switch (c) {
    case SequenceClass::Normal: return ScoreClass::Normal;
    case SequenceClass::SourceError:
    case SequenceClass::SourceAndKnockOn: return ScoreClass::Source;
    case SequenceClass::KnockOnError: return ScoreClass::KnockOn;
    case SequenceClass::Misc: return ScoreClass::Misc;
  }
  return ScoreClass::Normal;
}

struct ClassifierScore {
  std::array<std::array<std::size_t, 4>, 4> confusion{};  // [truth][predicted]
  double accuracy = 0.0;
  std::size_t total = 0;
};

inline ClassifierScore score_classifier(const GroundTruth& truth, const std::vector<SequenceLabel>& labels) {
  std::map<std::string, SequenceClass> predicted;
  for (const auto& l : labels) predicted[l.sequence_id] = l.cls;
  if (predicted.size() != truth.sequences.size()) throw DataError("IdMismatch: sequence counts differ");
  ClassifierScore sc;
  std::size_t hits = 0;
  for (const auto& t : truth.sequences) {
    auto it = predicted.find(t.sequence_id);
    if (it == predicted.end()) throw DataError("IdMismatch: " + t.sequence_id + " not labelled");
    auto a = static_cast<std::size_t>(score_class(t.cls)), b = static_cast<std::size_t>(score_class(it->second));
    ++sc.confusion[a][b];
    hits += a == b;
  }
  sc.total = truth.sequences.size();
  sc.accuracy = sc.total ? static_cast<double>(hits) / static_cast<double>(sc.total) : 0.0;
  return sc;
}

inline ClassifierScore score_classifier(const GroundTruth& truth, const classify::ClassificationReport& rep) {
  return score_classifier(truth, rep.labels);
}

struct MatchScore {
  std::size_t true_positive = 0, false_positive = 0, false_negative = 0;
  double precision() const {
    return true_positive + false_positive ? double(true_positive) / double(true_positive + false_positive) : 0.0;
  }
  double recall() const {
    return true_positive + false_negative ? double(true_positive) / double(true_positive + false_negative) : 0.0;
  }
};

/// Tuple-level agreement between predicted source errors and injected sources.
/// Only sequences the truth does not mark as misc are considered.
inline MatchScore score_source_matching(const GroundTruth& truth, const std::vector<SequenceLabel>& labels) {
  std::map<std::string, const SequenceLabel*> by_id;
  for (const auto& l : labels) by_id[l.sequence_id] = &l;
  MatchScore m;
  for (const auto& t : truth.sequences) {
    if (t.cls == SequenceClass::Misc) continue;
    auto it = by_id.find(t.sequence_id);
    if (it == by_id.end()) throw DataError("IdMismatch: " + t.sequence_id + " not labelled");
    std::set<std::size_t> predicted;
    for (const auto& s : it->second->significant)
      if (s.source) predicted.insert(s.index);
    for (std::size_t i = 0; i < t.tuples.size(); ++i) {
      const bool is_source = t.tuples[i].cause == Cause::Source;
      const bool hit = predicted.contains(i);
      m.true_positive += is_source && hit;
      m.false_positive += !is_source && hit;
      m.false_negative += is_source && !hit;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Serialization.

inline void to_json(nlohmann::json& j, const ActionTemplate& a) {
  j = {{"action_id", a.action_id}, {"nominal", a.nominal}, {"jitter_sd", a.jitter_sd}};
}
inline void from_json(const nlohmann::json& j, ActionTemplate& a) {
  j.at("action_id").get_to(a.action_id);
  j.at("nominal").get_to(a.nominal);
  a.jitter_sd = j.value("jitter_sd", a.jitter_sd);
}

inline void to_json(nlohmann::json& j, const LineSpec& s) {
  j = {{"station", s.station},
       {"vehicle_code", s.vehicle_code},
       {"area", s.area},
       {"actions", s.actions},
       {"boundary_action", s.boundary_action},
       {"boundary_duration", s.boundary_duration},
       {"source_rate", s.source_rate},
       {"source_delay", {{"mean", s.source_delay.mean}, {"sd", s.source_delay.sd}}},
       {"propagation", {{"horizon", s.propagation.horizon}, {"decay", s.propagation.decay}}},
       {"misc_rate", s.misc_rate},
       {"misc_scale", s.misc_scale},
       {"d_max_factor", s.d_max_factor},
       {"gap_between_sequences", s.gap_between_sequences},
       {"seed", s.seed}};
}

/// Missing fields keep their defaults (including the default action list).
inline void from_json(const nlohmann::json& j, LineSpec& s) {
  s = default_line_spec();
  s.station = j.value("station", s.station);
  s.vehicle_code = j.value("vehicle_code", s.vehicle_code);
  s.area = j.value("area", s.area);
  if (j.contains("actions")) j.at("actions").get_to(s.actions);
  s.boundary_action = j.value("boundary_action", s.boundary_action);
  s.boundary_duration = j.value("boundary_duration", s.boundary_duration);
  s.source_rate = j.value("source_rate", s.source_rate);
  if (j.contains("source_delay")) {
    s.source_delay.mean = j["source_delay"].value("mean", s.source_delay.mean);
    s.source_delay.sd = j["source_delay"].value("sd", s.source_delay.sd);
  }
  if (j.contains("propagation")) {
    s.propagation.horizon = j["propagation"].value("horizon", s.propagation.horizon);
    s.propagation.decay = j["propagation"].value("decay", s.propagation.decay);
  }
  s.misc_rate = j.value("misc_rate", s.misc_rate);
  s.misc_scale = j.value("misc_scale", s.misc_scale);
  s.d_max_factor = j.value("d_max_factor", s.d_max_factor);
  s.gap_between_sequences = j.value("gap_between_sequences", s.gap_between_sequences);
  s.seed = j.value("seed", s.seed);
}

inline void write_cycle_csv(std::ostream& os, const Generated& g) {
  ingest::write_cycle_header(os);
  for (const auto& s : g.sequences)
    for (const auto& t : s.tuples) ingest::write_cycle_events(os, s.sequence_id, t);
}

inline void write_truth_jsonl(std::ostream& os, const GroundTruth& truth) {
  for (const auto& s : truth.sequences) {
    nlohmann::json tuples = nlohmann::json::array();
    for (std::size_t i = 0; i < s.tuples.size(); ++i)
      tuples.push_back({{"index", i}, {"delay", s.tuples[i].delay}, {"cause", to_string(s.tuples[i].cause)}});
    os << nlohmann::json{{"sequence_id", s.sequence_id}, {"class", to_string(s.cls)}, {"tuples", tuples}}.dump()
       << '\n';
  }
}

inline GroundTruth read_truth_jsonl(std::istream& in) {
  GroundTruth truth;
  csv::for_each_line(in, [&](std::size_t, const std::string& line) {
    auto j = nlohmann::json::parse(line);
    SequenceTruth s;
    s.sequence_id = j.at("sequence_id").get<std::string>();
    s.cls = sequence_class_from_string(j.at("class").get<std::string>()).value();
    for (const auto& t : j.at("tuples")) {
      const auto c = t.at("cause").get<std::string>();
      Cause cause = c == "source" ? Cause::Source : c == "knockon" ? Cause::KnockOn : c == "misc" ? Cause::Misc : Cause::None;
      s.tuples.push_back({t.at("delay").get<double>(), cause});
    }
    truth.sequences.push_back(std::move(s));
  });
  return truth;
}

inline void write_specs_json(std::ostream& os, const std::map<ActionKey, ActionSpec>& specs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [_, s] : specs) arr.push_back(s);
  os << arr.dump(2) << '\n';
}

inline std::map<ActionKey, ActionSpec> read_specs_json(std::istream& in) {
  std::map<ActionKey, ActionSpec> out;
  for (const auto& j : nlohmann::json::parse(in)) {
    auto s = j.get<ActionSpec>();
    if (!(s.d_max > 0)) throw DataError("spec d_max must be positive for " + s.key.str());
    out[s.key] = s;
  }
  return out;
}

}  // namespace vmas::simgen
