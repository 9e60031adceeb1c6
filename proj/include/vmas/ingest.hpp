#pragma once

// Reading PDA exports: cycle-time events and error reports.

#include <algorithm>
#include <cstdlib>
#include <charconv>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "vmas/csv.hpp"
#include "vmas/diagnostics.hpp"
#include "vmas/domain.hpp"

namespace vmas::ingest {

inline constexpr std::string_view kCycleHeader =
    "sequence_id,station,vehicle_code,action_id,event,timestamp_ms,duration_ms";
inline constexpr std::string_view kErrorHeader = "error_id,start_ts_ms,end_ts_ms,station,area,message";

enum class EventKind { Start, End };

struct RawEvent {
  std::string sequence_id;
  std::string station;
  std::string vehicle_code;
  std::string action_id;
  EventKind event = EventKind::Start;
  TimestampMs timestamp_ms = 0;
  std::optional<std::int64_t> duration_ms;  // present iff event == End
  std::size_t row = 0;                      // source line, for diagnostics
};

struct HierarchySpec {
  std::set<std::string> superordinate_ids;
};

/// A paired tuple together with the sequence id it was logged under.
struct SourcedTuple {
  std::string sequence_id;
  ActionDurationTuple tuple;
};

template <class T>
struct Parsed {
  std::vector<T> items;
  Diagnostics diagnostics;
};

namespace detail {

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline void expect_header(std::istream& in, std::string_view header) {
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line != header) throw DataError("MissingHeader: expected '" + std::string(header) + "'");
    return;
  }
  throw DataError("MissingHeader: input is empty");
}

}  // namespace detail

inline Parsed<RawEvent> parse_cycle_times(std::istream& in) {
  detail::expect_header(in, kCycleHeader);
  Parsed<RawEvent> out;
  std::size_t lineno = 1;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = csv::split_row(line);
    if (f.size() != 7) {
      out.diagnostics.push_back({lineno, "FieldCount", "expected 7 fields, got " + std::to_string(f.size())});
      continue;
    }
    RawEvent ev{f[0], f[1], f[2], f[3], EventKind::Start, 0, std::nullopt, lineno};
    if (f[4] == "start") {
      ev.event = EventKind::Start;
    } else if (f[4] == "end") {
      ev.event = EventKind::End;
    } else {
      out.diagnostics.push_back({lineno, "ParseFailure", "unknown event '" + f[4] + "'"});
      continue;
    }
    if (ev.sequence_id.empty() || ev.station.empty() || ev.vehicle_code.empty() || ev.action_id.empty()) {
      out.diagnostics.push_back({lineno, "ParseFailure", "empty identifier field"});
      continue;
    }
    auto ts = detail::parse_int(f[5]);
    if (!ts) {
      out.diagnostics.push_back({lineno, "ParseFailure", "bad timestamp_ms '" + f[5] + "'"});
      continue;
    }
    ev.timestamp_ms = *ts;
    if (ev.event == EventKind::End) {
      auto d = detail::parse_int(f[6]);
      if (!d || *d < 0) {
        out.diagnostics.push_back({lineno, "ParseFailure", "end row needs non-negative duration_ms"});
        continue;
      }
      ev.duration_ms = *d;
    } else if (!f[6].empty()) {
      out.diagnostics.push_back({lineno, "ParseFailure", "start row must not carry duration_ms"});
      continue;
    }
    out.items.push_back(std::move(ev));
  }
  return out;
}

/// Matches each start event with the next end event of the same action in the same sequence.
/// A repeated start supersedes the open one (reported as OrphanStart).
inline Parsed<SourcedTuple> pair_events(std::vector<RawEvent> events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const RawEvent& a, const RawEvent& b) { return a.timestamp_ms < b.timestamp_ms; });
  using Slot = std::tuple<std::string, std::string, std::string, std::string>;
  std::map<Slot, RawEvent> open;
  Parsed<SourcedTuple> out;
  for (auto& ev : events) {
    Slot slot{ev.sequence_id, ev.station, ev.vehicle_code, ev.action_id};
    if (ev.event == EventKind::Start) {
      auto [it, inserted] = open.try_emplace(slot, ev);
      if (!inserted) {
        out.diagnostics.push_back({it->second.row, "OrphanStart", "superseded by start at row " + std::to_string(ev.row)});
        it->second = ev;
      }
      continue;
    }
    auto it = open.find(slot);
    if (it == open.end()) {
      out.diagnostics.push_back({ev.row, "OrphanEnd", "no open start for action " + ev.action_id});
      continue;
    }
    const RawEvent& start = it->second;
    const std::int64_t measured = ev.timestamp_ms - start.timestamp_ms;
    if (std::abs(measured - *ev.duration_ms) > 1)
      out.diagnostics.push_back({ev.row, "DurationMismatch",
                                 "duration_ms " + std::to_string(*ev.duration_ms) + " vs timestamps " +
                                     std::to_string(measured)});
    ActionDurationTuple t{{ev.station, ev.vehicle_code, ev.action_id},
                          start.timestamp_ms,
                          ev.timestamp_ms,
                          ms_to_seconds(*ev.duration_ms)};
    out.items.push_back({ev.sequence_id, std::move(t)});
    open.erase(it);
  }
  // Leftover starts, reported in row order.
  std::vector<const RawEvent*> left;
  for (const auto& [_, ev] : open) left.push_back(&ev);
  std::sort(left.begin(), left.end(), [](auto* a, auto* b) { return a->row < b->row; });
  for (auto* ev : left) out.diagnostics.push_back({ev->row, "OrphanStart", "no end for action " + ev->action_id});

  std::stable_sort(out.items.begin(), out.items.end(),
                   [](const SourcedTuple& a, const SourcedTuple& b) { return canonical_less(a.tuple, b.tuple); });
  return out;
}

/// Cuts the canonical tuple stream at every occurrence of `boundary_action`.
/// The boundary tuple stays at the head of the sequence it opens.
inline std::vector<ActionSequence> assemble_sequences(const std::vector<SourcedTuple>& tuples,
                                                      std::string_view boundary_action) {
  std::vector<ActionSequence> out;
  for (const auto& st : tuples) {
    if (out.empty() || st.tuple.key.action_id == boundary_action)
      out.push_back({st.sequence_id, st.tuple.key.vehicle_code, {}});
    out.back().tuples.push_back(st.tuple);
  }
  return out;
}

inline std::vector<ActionSequence> strip_hierarchy(std::vector<ActionSequence> seqs, const HierarchySpec& spec,
                                                   std::string_view boundary_action = {}) {
  if (spec.superordinate_ids.empty()) return seqs;
  std::vector<ActionSequence> out;
  for (auto& s : seqs) {
    std::erase_if(s.tuples, [&](const ActionDurationTuple& t) {
      return t.key.action_id != boundary_action && spec.superordinate_ids.contains(t.key.action_id);
    });
    if (!s.tuples.empty()) out.push_back(std::move(s));
  }
  return out;
}

inline Parsed<ErrorReport> parse_error_reports(std::istream& in) {
  detail::expect_header(in, kErrorHeader);
  Parsed<ErrorReport> out;
  std::set<std::string> seen;
  std::size_t lineno = 1;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = csv::split_row(line);
    if (f.size() != 6) {
      out.diagnostics.push_back({lineno, "FieldCount", "expected 6 fields, got " + std::to_string(f.size())});
      continue;
    }
    auto start = detail::parse_int(f[1]);
    auto end = detail::parse_int(f[2]);
    if (!start || !end) {
      out.diagnostics.push_back({lineno, "ParseFailure", "bad timestamp"});
      continue;
    }
    if (*start > *end) {
      out.diagnostics.push_back({lineno, "ParseFailure", "start_ts_ms after end_ts_ms"});
      continue;
    }
    if (f[0].empty()) {
      out.diagnostics.push_back({lineno, "ParseFailure", "empty error_id"});
      continue;
    }
    if (!seen.insert(f[0]).second) out.diagnostics.push_back({lineno, "Warning", "duplicate error_id " + f[0]});
    out.items.push_back({f[0], *start, *end, f[3], f[4], f[5]});
  }
  return out;
}

// Writers for the same formats.

inline void write_cycle_header(std::ostream& os) { os << kCycleHeader << '\n'; }

inline void write_cycle_events(std::ostream& os, const std::string& sequence_id, const ActionDurationTuple& t) {
  const auto& k = t.key;
  os << csv::join_row({sequence_id, k.station, k.vehicle_code, k.action_id, "start", std::to_string(t.start_ts), ""})
     << '\n';
  os << csv::join_row({sequence_id, k.station, k.vehicle_code, k.action_id, "end", std::to_string(t.end_ts),
                       std::to_string(seconds_to_ms(t.duration))})
     << '\n';
}

inline void write_error_reports(std::ostream& os, const std::vector<ErrorReport>& reports) {
  os << kErrorHeader << '\n';
  for (const auto& r : reports)
    os << csv::join_row({r.error_id, std::to_string(r.start_ts), std::to_string(r.end_ts), r.station, r.area,
                         r.message})
       << '\n';
}

inline void write_dataset(std::ostream& os, const std::vector<ActionSequence>& seqs) {
  for (const auto& s : seqs) os << nlohmann::json(s).dump() << '\n';
}

inline std::vector<ActionSequence> read_dataset(std::istream& in) {
  std::vector<ActionSequence> out;
  csv::for_each_line(in, [&](std::size_t lineno, const std::string& line) {
    try {
      out.push_back(nlohmann::json::parse(line).get<ActionSequence>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace vmas::ingest
