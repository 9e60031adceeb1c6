#pragma once

// Subcommand implementations for the `vmas` tool. Each stage reads its predecessor's
// files from an input directory and writes its own into an output directory, so the
// flow generate -> ingest -> label -> prep -> train -> eval -> report can be driven
// from the shell or from tests.

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vmas/classify.hpp"
#include "vmas/diagnostics.hpp"
#include "vmas/ingest.hpp"
#include "vmas/metrics.hpp"
#include "vmas/nn/train.hpp"
#include "vmas/pipeline.hpp"
#include "vmas/reference_table.hpp"
#include "vmas/simgen.hpp"

namespace vmas::cli {

namespace fs = std::filesystem;

// Artifact names.
inline constexpr const char* kCycleCsv = "cycle_times.csv";
inline constexpr const char* kErrorCsv = "error_reports.csv";
inline constexpr const char* kTruth = "truth.jsonl";
inline constexpr const char* kSpecs = "specs.json";
inline constexpr const char* kLineSpec = "line_spec.json";
inline constexpr const char* kSequences = "sequences.jsonl";
inline constexpr const char* kIngestSummary = "ingest_summary.json";
inline constexpr const char* kLabels = "labels.jsonl";
inline constexpr const char* kLabelSummary = "label_summary.json";
inline constexpr const char* kActions = "actions.json";
inline constexpr const char* kTrainPairs = "train.jsonl";
inline constexpr const char* kTestPairs = "test.jsonl";
inline constexpr const char* kPrepMeta = "prep_meta.json";
inline constexpr const char* kCheckpoint = "model.ckpt";
inline constexpr const char* kPartialCheckpoint = "model.partial.ckpt";
inline constexpr const char* kHistory = "train_history.json";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kPerStep = "per_step.csv";
inline constexpr const char* kCurveCsv = "cta_curve.csv";
inline constexpr const char* kCurveSvg = "cta_curve.svg";
inline constexpr const char* kReportJson = "report.json";
inline constexpr const char* kReportTxt = "report.txt";
inline constexpr const char* kReplicateJson = "replicate_table2.json";

struct MetricConfig {
  double tau = 0.5;
  double b = 0.10;
  std::optional<double> k;  // unset: use the noise floor estimated by prep
  bool pooled_f1 = false;
};

/// Everything a run needs. One seed feeds the generator and the model.
struct RunConfig {
  std::uint64_t seed = 42;
  std::size_t n_sequences = 5000;
  simgen::LineSpec line = simgen::default_line_spec();
  std::string boundary_action = "AC000";
  std::vector<std::string> superordinate_ids;
  pipeline::PipelineConfig pipeline;
  nn::ModelConfig model;
  nn::TrainConfig train;
  MetricConfig metrics;
  /// Set when n_back/m_fwd were given for the model explicitly; otherwise `train`
  /// takes the window shape from the prepared data.
  bool model_shape_pinned = false;
};

inline void to_json(nlohmann::json& j, const MetricConfig& m) {
  j = {{"tau", m.tau}, {"b", m.b}, {"k", m.k ? nlohmann::json(*m.k) : nlohmann::json("estimate")},
       {"pooled_f1", m.pooled_f1}};
}

inline void from_json(const nlohmann::json& j, MetricConfig& m) {
  m = MetricConfig{};
  m.tau = j.value("tau", m.tau);
  m.b = j.value("b", m.b);
  m.pooled_f1 = j.value("pooled_f1", m.pooled_f1);
  if (j.contains("k")) {
    const auto& k = j.at("k");
    if (k.is_number())
      m.k = k.get<double>();
    else if (!(k.is_string() && k.get<std::string>() == "estimate"))
      throw std::invalid_argument("metrics.k must be a number or \"estimate\"");
  }
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"seed", c.seed},
       {"n_sequences", c.n_sequences},
       {"line_spec", c.line},
       {"boundary_action", c.boundary_action},
       {"superordinate_ids", c.superordinate_ids},
       {"pipeline", c.pipeline},
       {"model", c.model},
       {"train", c.train},
       {"metrics", c.metrics}};
}

/// Missing sections keep their defaults. The model's window shape follows the
/// pipeline section unless the model section names it.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  c = RunConfig{};
  c.seed = j.value("seed", c.seed);
  c.n_sequences = j.value("n_sequences", c.n_sequences);
  if (j.contains("line_spec")) c.line = j.at("line_spec").get<simgen::LineSpec>();
  c.boundary_action = j.value("boundary_action", c.boundary_action);
  c.superordinate_ids = j.value("superordinate_ids", c.superordinate_ids);
  if (j.contains("pipeline")) c.pipeline = j.at("pipeline").get<pipeline::PipelineConfig>();
  c.pipeline.boundary_action = c.boundary_action;
  if (j.contains("model")) c.model = j.at("model").get<nn::ModelConfig>();
  const auto& m = j.contains("model") ? j.at("model") : nlohmann::json::object();
  if (!m.contains("n_back")) c.model.n_back = c.pipeline.n_back;
  if (!m.contains("m_fwd")) c.model.m_fwd = c.pipeline.m_fwd;
  c.model_shape_pinned = m.contains("n_back") || m.contains("m_fwd");
  if (j.contains("train")) c.train = j.at("train").get<nn::TrainConfig>();
  if (j.contains("metrics")) c.metrics = j.at("metrics").get<MetricConfig>();
}

/// Seed precedence: explicit flag, then VMAS_SEED, then the config file.
inline std::uint64_t resolve_seed(std::uint64_t config_seed, const char* env, std::optional<std::uint64_t> flag) {
  if (flag) return *flag;
  if (env && *env) {
    std::uint64_t v = 0;
    const std::string s(env);
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw std::invalid_argument("VMAS_SEED must be an unsigned integer");
    return v;
  }
  return config_seed;
}

inline RunConfig load_config(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::invalid_argument("cannot open config " + p.string());
  try {
    return nlohmann::json::parse(in).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + p.string() + ": " + e.what());
  }
}

/// Non-fatal findings plus a small JSON summary printed by the tool.
struct StageResult {
  Diagnostics diagnostics;
  nlohmann::json summary = nlohmann::json::object();
};

namespace detail {

inline std::ifstream open_in(const fs::path& p, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(p, mode);
  if (!in) throw DataError("MissingArtifact: " + p.string());
  return in;
}

inline std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, mode | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

inline nlohmann::json read_json(const fs::path& p) {
  auto in = open_in(p);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { open_out(p) << j.dump(2) << '\n'; }

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline void append(Diagnostics& to, const Diagnostics& from) { to.insert(to.end(), from.begin(), from.end()); }

}  // namespace detail

// ---------------------------------------------------------------------------
// generate

inline StageResult run_generate(const RunConfig& c, const fs::path& out) {
  auto spec = c.line;
  spec.seed = c.seed;
  const auto g = simgen::generate(spec, c.n_sequences);
  fs::create_directories(out);
  {
    auto os = detail::open_out(out / kCycleCsv);
    simgen::write_cycle_csv(os, g);
  }
  {
    auto os = detail::open_out(out / kErrorCsv);
    ingest::write_error_reports(os, g.reports);
  }
  {
    auto os = detail::open_out(out / kTruth);
    simgen::write_truth_jsonl(os, g.truth);
  }
  {
    auto os = detail::open_out(out / kSpecs);
    simgen::write_specs_json(os, g.specs);
  }
  detail::write_json(out / kLineSpec, spec);
  StageResult r;
  r.summary = {{"sequences", g.sequences.size()}, {"error_reports", g.reports.size()}, {"seed", spec.seed}};
  return r;
}

// ---------------------------------------------------------------------------
// ingest

inline StageResult run_ingest(const RunConfig& c, const fs::path& in, const fs::path& out) {
  StageResult r;
  auto cycles = detail::open_in(in / kCycleCsv);
  auto events = ingest::parse_cycle_times(cycles);
  detail::append(r.diagnostics, events.diagnostics);
  auto paired = ingest::pair_events(std::move(events.items));
  detail::append(r.diagnostics, paired.diagnostics);
  auto seqs = ingest::assemble_sequences(paired.items, c.boundary_action);
  ingest::HierarchySpec h{{c.superordinate_ids.begin(), c.superordinate_ids.end()}};
  seqs = ingest::strip_hierarchy(std::move(seqs), h, c.boundary_action);
  for (const auto& s : seqs)
    for (const auto& v : validate_sequence(s)) r.diagnostics.push_back({0, "InvalidSequence", s.sequence_id + ": " + v});
  if (seqs.empty()) throw DataError("EmptyCorpus: no complete action tuples in " + (in / kCycleCsv).string());

  std::vector<ErrorReport> reports;
  if (fs::exists(in / kErrorCsv)) {
    auto es = detail::open_in(in / kErrorCsv);
    auto parsed = ingest::parse_error_reports(es);
    detail::append(r.diagnostics, parsed.diagnostics);
    reports = std::move(parsed.items);
  } else {
    r.diagnostics.push_back({0, "Warning", "no " + std::string(kErrorCsv) + "; every delay will count as knock-on"});
  }

  fs::create_directories(out);
  {
    auto os = detail::open_out(out / kSequences);
    ingest::write_dataset(os, seqs);
  }
  {
    auto os = detail::open_out(out / kErrorCsv);
    ingest::write_error_reports(os, reports);
  }
  // Plant specs travel with the data when present.
  if (fs::exists(in / kSpecs) && !fs::equivalent(in, out))
    fs::copy_file(in / kSpecs, out / kSpecs, fs::copy_options::overwrite_existing);

  std::size_t tuples = 0;
  for (const auto& s : seqs) tuples += s.tuples.size();
  r.summary = {{"sequences", seqs.size()},
               {"tuples", tuples},
               {"error_reports", reports.size()},
               {"diagnostics", r.diagnostics.size()}};
  detail::write_json(out / kIngestSummary, r.summary);
  return r;
}

// ---------------------------------------------------------------------------
// label

inline std::vector<ActionSequence> read_sequences(const fs::path& p) {
  auto is = detail::open_in(p);
  return ingest::read_dataset(is);
}

inline std::vector<ErrorReport> read_reports(const fs::path& p) {
  if (!fs::exists(p)) return {};
  auto is = detail::open_in(p);
  return ingest::parse_error_reports(is).items;
}

/// `specs` may be empty: then `in/specs.json` is used, or specs are derived from the data.
inline StageResult run_label(const RunConfig& c, const fs::path& in, const fs::path& out, const fs::path& specs = {}) {
  StageResult r;
  const auto seqs = read_sequences(in / kSequences);
  const auto reports = read_reports(in / kErrorCsv);
  std::map<ActionKey, ActionSpec> spec_map;
  const fs::path sp = !specs.empty() ? specs : in / kSpecs;
  if (!specs.empty() || fs::exists(sp)) {
    auto is = detail::open_in(sp);
    spec_map = simgen::read_specs_json(is);
  } else {
    r.diagnostics.push_back({0, "Warning", "no specs file; d_max derived from the data as mode + 3 sigma"});
    spec_map = classify::default_specs(seqs);
  }
  classify::ClassifyOptions opts;
  opts.global_mult = c.pipeline.global_mult;
  const auto rep = classify::classify_dataset(seqs, reports, spec_map, opts);

  fs::create_directories(out);
  {
    auto os = detail::open_out(out / kLabels);
    for (const auto& l : rep.labels) os << nlohmann::json(l).dump() << '\n';
  }
  detail::write_json(out / kActions, classify::actions_json(rep));
  r.summary = classify::summary_json(rep);
  detail::write_json(out / kLabelSummary, r.summary);
  return r;
}

// ---------------------------------------------------------------------------
// prep

struct ActionInfo {
  double d_max = 0.0;
  double d_nominal = 0.0;
};

inline std::map<ActionKey, ActionInfo> read_actions(const fs::path& p) {
  std::map<ActionKey, ActionInfo> out;
  for (const auto& j : detail::read_json(p))
    out[j.at("key").get<ActionKey>()] = {j.at("d_max").get<double>(), j.at("d_nominal").get<double>()};
  return out;
}

inline std::vector<SequenceLabel> read_labels(const fs::path& p) {
  std::vector<SequenceLabel> out;
  auto is = detail::open_in(p);
  csv::for_each_line(is, [&](std::size_t lineno, const std::string& line) {
    try {
      out.push_back(nlohmann::json::parse(line).get<SequenceLabel>());
    } catch (const std::exception& e) {
      throw DataError("labels line " + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

inline StageResult run_prep(const RunConfig& c, const fs::path& in, const fs::path& out) {
  StageResult r;
  const auto seqs = read_sequences(in / kSequences);
  const auto labels = read_labels(in / kLabels);
  const auto actions = read_actions(in / kActions);

  auto cfg = c.pipeline;
  cfg.boundary_action = c.boundary_action;
  std::map<ActionKey, double> gmax, dmax;
  for (const auto& [key, a] : actions) {
    gmax[key] = cfg.global_mult * a.d_max;
    dmax[key] = a.d_max;
  }
  auto prep = pipeline::prepare(seqs, labels, gmax, cfg);
  r.diagnostics = prep.diagnostics;
  const auto k = metrics::estimate_k(seqs, dmax, c.boundary_action);
  if (k.degenerate) r.diagnostics.push_back({0, "Warning", "noise floor k is 0; TARMSE needs an explicit k"});

  nlohmann::json vocab = nlohmann::json::array();
  for (std::size_t i = 0; i < prep.vocab.keys.size(); ++i) {
    const auto& key = prep.vocab.keys[i];
    auto it = actions.find(key);
    if (it == actions.end()) throw DataError("MissingSpec(" + key.action_id + ")");
    vocab.push_back({{"code", i + 1},
                     {"key", key},
                     {"d_nominal", it->second.d_nominal},
                     {"d_max", it->second.d_max},
                     {"d_globalmax", gmax.at(key)}});
  }
  fs::create_directories(out);
  {
    auto os = detail::open_out(out / kTrainPairs);
    pipeline::write_pairs(os, prep.train);
  }
  {
    auto os = detail::open_out(out / kTestPairs);
    pipeline::write_pairs(os, prep.test);
  }
  r.summary = {{"sequences_used", prep.sequences_used},
               {"outliers_removed", prep.outliers_removed},
               {"misc_removed", prep.misc_removed},
               {"train_pairs", prep.train.size()},
               {"test_pairs", prep.test.size()}};
  detail::write_json(out / kPrepMeta, {{"pipeline", cfg},
                                       {"normalization", prep.norm},
                                       {"vocabulary", vocab},
                                       {"k", {{"value", k.k}, {"degenerate", k.degenerate}}},
                                       {"counts", r.summary}});
  return r;
}

// ---------------------------------------------------------------------------
// train

struct PrepMeta {
  pipeline::PipelineConfig pipeline;
  pipeline::NormalizationParams norm;
  std::map<int, ActionInfo> by_code;
  std::map<int, double> gmax_by_code;
  double k = 0.0;
  bool k_degenerate = false;
};

inline PrepMeta read_prep_meta(const fs::path& p) {
  const auto j = detail::read_json(p);
  PrepMeta m;
  try {
    m.pipeline = j.at("pipeline").get<pipeline::PipelineConfig>();
    m.norm = j.at("normalization").get<pipeline::NormalizationParams>();
    for (const auto& v : j.at("vocabulary")) {
      const int code = v.at("code").get<int>();
      m.by_code[code] = {v.at("d_max").get<double>(), v.at("d_nominal").get<double>()};
      m.gmax_by_code[code] = v.at("d_globalmax").get<double>();
    }
    m.k = j.at("k").at("value").get<double>();
    m.k_degenerate = j.at("k").at("degenerate").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
  return m;
}

inline std::vector<pipeline::WindowedPair> read_pairs(const fs::path& p) {
  auto is = detail::open_in(p);
  return pipeline::read_pairs(is);
}

inline void write_checkpoint(const fs::path& p, const nn::Checkpoint& cp) {
  auto os = detail::open_out(p, std::ios::binary);
  nn::save_checkpoint(os, cp);
}

inline nn::Checkpoint read_checkpoint(const fs::path& p) {
  auto is = detail::open_in(p, std::ios::binary);
  return nn::load_checkpoint(is);
}

inline StageResult run_train(const RunConfig& c, const fs::path& in, const fs::path& out) {
  StageResult r;
  const auto meta = read_prep_meta(in / kPrepMeta);
  auto mc = c.model;
  mc.seed = c.seed;
  if (!c.model_shape_pinned) {
    mc.n_back = meta.pipeline.n_back;
    mc.m_fwd = meta.pipeline.m_fwd;
  }
  if (mc.n_back != meta.pipeline.n_back || mc.m_fwd != meta.pipeline.m_fwd)
    throw DataError("ShapeMismatch: model is " + std::to_string(mc.n_back) + "-" + std::to_string(mc.m_fwd) +
                    " but data was prepared as " + std::to_string(meta.pipeline.n_back) + "-" +
                    std::to_string(meta.pipeline.m_fwd));
  nn::validate(mc);
  nn::validate(c.train);
  const auto pairs = read_pairs(in / kTrainPairs);
  const auto data = nn::to_dataset(pairs, mc.n_back, mc.m_fwd);
  nn::Model model(mc);
  nlohmann::json info = {{"train_pairs", pairs.size()}, {"parameters", model.parameter_count()}};
  fs::create_directories(out);
  try {
    auto res = nn::train(model, data, c.train);
    res.checkpoint.normalization = meta.norm;
    res.checkpoint.meta = info;
    r.diagnostics = res.diagnostics;
    write_checkpoint(out / kCheckpoint, res.checkpoint);
    detail::write_json(out / kHistory, res.checkpoint.history);
    const auto& h = res.checkpoint.history.back();
    r.summary = info;
    r.summary["arch"] = nn::to_string(mc.arch);
    r.summary["final_train_loss"] = h.train_loss;
    if (h.val_loss) r.summary["final_val_loss"] = *h.val_loss;
  } catch (nn::NonFiniteLoss& e) {
    e.checkpoint.normalization = meta.norm;
    e.checkpoint.meta = info;
    write_checkpoint(out / kPartialCheckpoint, e.checkpoint);
    throw DataError(std::string(e.what()) + "; last finite state in " + (out / kPartialCheckpoint).string());
  }
  return r;
}

// ---------------------------------------------------------------------------
// eval

/// Short model label in the style "GRU 5-2" / "TF 7-7".
inline std::string model_label(const nn::ModelConfig& m) {
  const std::string a = m.arch == nn::Arch::Transformer ? "TF" : nn::to_string(m.arch);
  return a + " " + std::to_string(m.n_back) + "-" + std::to_string(m.m_fwd);
}

struct Curve {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// CTA against tau as a standalone SVG line chart.
inline std::string cta_svg(const std::vector<Curve>& curves) {
  constexpr double W = 640, H = 400, L = 60, R = 150, T = 20, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  double lo = 1.0, hi = 0.0;
  for (const auto& c : curves)
    for (const auto& [_, v] : c.points) lo = std::min(lo, v), hi = std::max(hi, v);
  if (curves.empty() || hi < lo) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-9) lo -= 0.05, hi += 0.05;
  auto x = [&](double tau) { return L + tau * pw; };
  auto y = [&](double v) { return T + (hi - v) / (hi - lo) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#000\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double tau = i / 4.0, v = lo + (hi - lo) * i / 4.0;
    s << "<text x=\"" << detail::fmt("%.1f", x(tau)) << "\" y=\"" << H - B + 18
      << "\" font-size=\"11\" text-anchor=\"middle\">" << detail::fmt("%.2f", tau) << "</text>\n";
    s << "<text x=\"" << L - 6 << "\" y=\"" << detail::fmt("%.1f", y(v) + 4)
      << "\" font-size=\"11\" text-anchor=\"end\">" << detail::fmt("%.1f%%", 100 * v) << "</text>\n";
  }
  s << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" font-size=\"12\" text-anchor=\"middle\">tau</text>\n";
  s << "<text x=\"14\" y=\"" << T + ph / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << T + ph / 2
    << ")\" text-anchor=\"middle\">CTA</text>\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* col = colors[i % std::size(colors)];
    s << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t p = 0; p < curves[i].points.size(); ++p)
      s << (p ? " " : "") << detail::fmt("%.2f", x(curves[i].points[p].first)) << ','
        << detail::fmt("%.2f", y(curves[i].points[p].second));
    s << "\"/>\n";
    const double ly = T + 14 + 16.0 * static_cast<double>(i);
    s << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << W - R + 36 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << curves[i].name << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline void write_curves_csv(const fs::path& p, const std::vector<Curve>& curves) {
  auto os = detail::open_out(p);
  os << "model,tau,cta\n";
  for (const auto& c : curves)
    for (const auto& [tau, v] : c.points)
      os << csv::quote(c.name) << ',' << detail::fmt("%.2f", tau) << ',' << detail::fmt("%.6f", v) << '\n';
}

inline StageResult run_eval(const RunConfig& c, const fs::path& in, const fs::path& ckpt, const fs::path& out) {
  StageResult r;
  const auto meta = read_prep_meta(in / kPrepMeta);
  const auto cp = read_checkpoint(ckpt);
  const auto pairs = read_pairs(in / kTestPairs);
  if (pairs.empty()) throw DataError("EmptyCorpus: no test pairs in " + (in / kTestPairs).string());
  if (cp.model.n_back != meta.pipeline.n_back || cp.model.m_fwd != meta.pipeline.m_fwd)
    throw DataError("ShapeMismatch: checkpoint " + model_label(cp.model) + " does not fit the prepared windows");

  const auto pred = nn::predict_dataset(cp, pairs);
  const auto N = static_cast<Eigen::Index>(pairs.size());
  const auto M = static_cast<Eigen::Index>(cp.model.m_fwd);
  metrics::Matrix targets(N, M), nominal(N, M), gmax(N, M);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index s = 0; s < M; ++s) {
      const auto& p = pairs[static_cast<std::size_t>(i)];
      const int code = p.y_actions[static_cast<std::size_t>(s)];
      auto it = meta.by_code.find(code);
      if (it == meta.by_code.end()) throw DataError("unknown action code " + std::to_string(code));
      targets(i, s) = p.y_seconds[static_cast<std::size_t>(s)];
      nominal(i, s) = it->second.d_nominal;
      gmax(i, s) = meta.gmax_by_code.at(code);
    }

  metrics::MetricParams mp{c.metrics.tau, c.metrics.b, c.metrics.k.value_or(meta.k), c.metrics.pooled_f1};
  if (!c.metrics.k && meta.k_degenerate) throw DataError("DegenerateK: estimated noise floor is 0; pass --k");
  const auto rep = metrics::evaluate(pred.seconds, targets, nominal, gmax, mp);
  r.diagnostics = rep.diagnostics;

  const auto name = model_label(cp.model);
  auto j = metrics::to_json(rep);
  j["model"] = name;
  j["samples"] = pairs.size();
  fs::create_directories(out);
  detail::write_json(out / kMetrics, j);
  {
    auto os = detail::open_out(out / kPerStep);
    os << "model,step,rmse,f1\n";
    for (std::size_t i = 0; i < rep.f1.size(); ++i)
      os << csv::quote(name) << ',' << i + 1 << ',' << detail::fmt("%.6f", *rep.rmse[i]) << ','
         << detail::fmt("%.6f", rep.f1[i]) << '\n';
  }
  const std::vector<Curve> curves{{name, metrics::cta_curve({name, rep.tarmse, rep.f1_mean})}};
  write_curves_csv(out / kCurveCsv, curves);
  detail::open_out(out / kCurveSvg) << cta_svg(curves);
  r.summary = j;
  return r;
}

// ---------------------------------------------------------------------------
// report

struct ReportRow {
  std::string model;
  std::vector<double> rmse, f1;
  double tarmse = 0.0, f1_mean = 0.0, cta = 0.0;
};

/// Table with one column per model, rows RMSE_i, F1_i, TARMSE, F1 and CTA.
inline std::string format_table(const std::vector<ReportRow>& rows) {
  std::size_t steps = 0;
  for (const auto& r : rows) steps = std::max(steps, r.rmse.size());
  std::vector<std::vector<std::string>> lines;
  std::vector<std::string> head{"Metric"};
  for (const auto& r : rows) head.push_back(r.model);
  lines.push_back(head);
  auto add = [&](const std::string& label, auto&& cell) {
    std::vector<std::string> l{label};
    for (const auto& r : rows) l.push_back(cell(r));
    lines.push_back(std::move(l));
  };
  for (std::size_t i = 0; i < steps; ++i)
    add("RMSE_" + std::to_string(i + 1),
        [&](const ReportRow& r) { return i < r.rmse.size() ? detail::fmt("%.2f", r.rmse[i]) : std::string("-"); });
  for (std::size_t i = 0; i < steps; ++i)
    add("F1_" + std::to_string(i + 1),
        [&](const ReportRow& r) { return i < r.f1.size() ? detail::fmt("%.2f", r.f1[i]) : std::string("-"); });
  add("TARMSE", [](const ReportRow& r) { return detail::fmt("%.2f", r.tarmse); });
  add("F1", [](const ReportRow& r) { return detail::fmt("%.2f", r.f1_mean); });
  add("CTA", [](const ReportRow& r) { return metrics::format_percent(r.cta); });

  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& l : lines)
    for (std::size_t c = 0; c < l.size(); ++c) width[c] = std::max(width[c], l[c].size());
  std::ostringstream s;
  for (const auto& l : lines) {
    for (std::size_t c = 0; c < l.size(); ++c) {
      if (c) s << "  ";
      s << std::string(c ? width[c] - l[c].size() : 0, ' ') << l[c] << std::string(c ? 0 : width[c] - l[c].size(), ' ');
    }
    s << '\n';
  }
  return s.str();
}

inline StageResult run_report(const std::vector<fs::path>& metric_files, const fs::path& out) {
  if (metric_files.empty()) throw std::invalid_argument("report needs at least one metrics file");
  StageResult r;
  std::vector<ReportRow> rows;
  std::vector<metrics::ModelScore> scores;
  std::vector<Curve> curves;
  nlohmann::json models = nlohmann::json::array();
  for (const auto& f : metric_files) {
    const auto j = detail::read_json(f);
    auto m = metrics::metric_report_from_json(j);
    ReportRow row{j.value("model", f.stem().string()), {}, m.f1, m.tarmse, m.f1_mean, m.cta};
    for (const auto& v : m.rmse) row.rmse.push_back(v.value_or(std::nan("")));
    scores.push_back({row.model, row.tarmse, row.f1_mean});
    curves.push_back({row.model, metrics::cta_curve(scores.back())});
    models.push_back(j);
    rows.push_back(std::move(row));
  }
  nlohmann::json crossings = nlohmann::json::array();
  if (scores.size() >= 2)
    for (const auto& x : metrics::tau_sweep(scores))
      crossings.push_back({{"a", x.a}, {"b", x.b}, {"tau", x.tau ? nlohmann::json(*x.tau) : nlohmann::json()}});

  const auto table = format_table(rows);
  fs::create_directories(out);
  r.summary = {{"models", models}, {"crossovers", crossings}};
  detail::write_json(out / kReportJson, r.summary);
  detail::open_out(out / kReportTxt) << table;
  write_curves_csv(out / kCurveCsv, curves);
  detail::open_out(out / kCurveSvg) << cta_svg(curves);
  r.summary["table"] = table;
  return r;
}

/// Input rows for the replication: model name, per-step RMSE and F1, and optionally
/// the F1 summary value (defaults to the mean of the per-step F1).
struct ReplicationInput {
  std::string model;
  std::vector<double> rmse, f1;
  std::optional<double> f1_summary;
};

inline std::vector<ReplicationInput> published_inputs() {
  std::vector<ReplicationInput> out;
  for (const auto& p : reference::published_rows()) out.push_back({p.model, p.rmse, p.f1, p.f1_summary});
  return out;
}

inline std::vector<ReplicationInput> read_replication_inputs(const fs::path& p) {
  std::vector<ReplicationInput> out;
  try {
    for (const auto& j : detail::read_json(p)) {
      ReplicationInput r{j.at("model").get<std::string>(), j.at("rmse").get<std::vector<double>>(),
                         j.at("f1").get<std::vector<double>>(), std::nullopt};
      if (j.contains("f1_summary")) r.f1_summary = j.at("f1_summary").get<double>();
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
  return out;
}

inline constexpr double kTarmseTolerance = 0.01;
inline constexpr double kCtaTolerancePp = 0.5;

/// Recomputes TARMSE and CTA from the given per-step values and compares every row
/// whose model name appears in the reference table.
inline StageResult run_replicate(const std::vector<ReplicationInput>& inputs, const fs::path& out) {
  StageResult r;
  std::map<std::string, const reference::PublishedRow*> published;
  for (const auto& p : reference::published_rows()) published[p.model] = &p;
  std::vector<ReportRow> rows;
  nlohmann::json cells = nlohmann::json::array();
  std::size_t tarmse_ok = 0, cta_ok = 0, compared = 0;
  for (const auto& in : inputs) {
    if (in.rmse.empty() || in.rmse.size() != in.f1.size())
      throw DataError("replication row " + in.model + ": rmse and f1 need the same non-zero length");
    ReportRow row{in.model, in.rmse, in.f1, 0, 0, 0};
    row.tarmse = metrics::tarmse(in.rmse, reference::kPublishedK);
    row.f1_mean = in.f1_summary.value_or(metrics::mean(in.f1));
    row.cta = metrics::cta(row.tarmse, row.f1_mean, reference::kPublishedTau);
    nlohmann::json cell = {{"model", in.model}, {"tarmse", row.tarmse}, {"f1", row.f1_mean}, {"cta_percent", 100 * row.cta}};
    if (auto it = published.find(in.model); it != published.end()) {
      const auto& p = *it->second;
      const bool t_ok = std::abs(row.tarmse - p.tarmse) <= kTarmseTolerance;
      const bool c_ok = std::abs(100 * row.cta - p.cta_percent) <= kCtaTolerancePp;
      tarmse_ok += t_ok;
      cta_ok += c_ok;
      ++compared;
      cell["published_tarmse"] = p.tarmse;
      cell["published_cta_percent"] = p.cta_percent;
      cell["tarmse_within"] = t_ok;
      cell["cta_within"] = c_ok;
      if (!c_ok)
        r.diagnostics.push_back({0, "Mismatch", in.model + ": CTA " + detail::fmt("%.2f", 100 * row.cta) +
                                                    "% vs published " + detail::fmt("%.2f", p.cta_percent) + "%"});
      if (!t_ok)
        r.diagnostics.push_back({0, "Mismatch", in.model + ": TARMSE " + detail::fmt("%.3f", row.tarmse) +
                                                    " vs published " + detail::fmt("%.2f", p.tarmse)});
    }
    cells.push_back(std::move(cell));
    rows.push_back(std::move(row));
  }
  const auto table = format_table(rows);
  r.summary = {{"k", reference::kPublishedK},
               {"tau", reference::kPublishedTau},
               {"compared", compared},
               {"tarmse_within", tarmse_ok},
               {"cta_within", cta_ok},
               {"rows", cells}};
  fs::create_directories(out);
  detail::write_json(out / kReplicateJson, r.summary);
  detail::open_out(out / kReportTxt) << table;
  r.summary["table"] = table;
  return r;
}

}  // namespace vmas::cli
