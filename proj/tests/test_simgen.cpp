#include <gtest/gtest.h>

#include <sstream>

#include "vmas/classify.hpp"
#include "vmas/ingest.hpp"
#include "vmas/simgen.hpp"

using namespace vmas;
using namespace vmas::simgen;

namespace {

LineSpec quiet_spec() {
  auto s = default_line_spec();
  s.source_rate = 0;
  s.misc_rate = 0;
  return s;
}

std::string cycle_csv(const Generated& g) {
  std::ostringstream os;
  write_cycle_csv(os, g);
  return os.str();
}

}  // namespace

TEST(Generate, NoInjectionMeansAllNormal) {
  auto g = generate(quiet_spec(), 200);
  EXPECT_TRUE(g.reports.empty());
  for (const auto& t : g.truth.sequences) {
    EXPECT_EQ(t.cls, SequenceClass::Normal);
    for (const auto& u : t.tuples) EXPECT_EQ(u.cause, Cause::None);
  }
}

TEST(Generate, SourceAlwaysWithTwoDecayingKnockOns) {
  auto spec = quiet_spec();
  spec.source_rate = 1;
  spec.source_delay = {20, 0.5};
  spec.propagation = {2, 0.5};
  auto g = generate(spec, 300);
  const double jitter = spec.actions[0].jitter_sd;
  for (std::size_t i = 0; i < g.sequences.size(); ++i) {
    const auto& truth = g.truth.sequences[i];
    const auto& seq = g.sequences[i];
    std::size_t src = 0;
    for (std::size_t k = 0; k < truth.tuples.size(); ++k)
      if (truth.tuples[k].cause == Cause::Source) src = k;
    ASSERT_GT(src, 0u);
    // Observed delay against nominal, within 3 jitter sd plus delay spread and ms rounding.
    auto observed = [&](std::size_t k) { return seq.tuples[k].duration - spec.actions[k - 1].nominal; };
    EXPECT_NEAR(observed(src), 20.0, 3 * jitter + 3 * 0.5 + 1e-3);
    if (src + 1 < seq.tuples.size()) {
      EXPECT_EQ(truth.tuples[src + 1].cause, Cause::KnockOn);
      EXPECT_NEAR(observed(src + 1), 10.0, 3 * jitter + 3 * 0.25 + 1e-3);
    }
    if (src + 2 < seq.tuples.size()) {
      EXPECT_EQ(truth.tuples[src + 2].cause, Cause::KnockOn);
      EXPECT_NEAR(observed(src + 2), 5.0, 3 * jitter + 3 * 0.125 + 1e-3);
    }
    if (src + 3 < seq.tuples.size()) {
      EXPECT_EQ(truth.tuples[src + 3].cause, Cause::None);
    }
  }
  EXPECT_EQ(g.reports.size(), 300u);
}

TEST(Generate, SameSeedSameBytes) {
  auto spec = default_line_spec();
  auto a = generate(spec, 100), b = generate(spec, 100);
  EXPECT_EQ(cycle_csv(a), cycle_csv(b));
  spec.seed = 43;
  EXPECT_NE(cycle_csv(a), cycle_csv(generate(spec, 100)));
}

TEST(Generate, InvalidSpecThrows) {
  auto spec = default_line_spec();
  spec.source_rate = 1.5;
  EXPECT_THROW(generate(spec, 10), DataError);
  spec = default_line_spec();
  spec.propagation.decay = 1.0;
  EXPECT_THROW(generate(spec, 10), DataError);
  EXPECT_THROW(generate(default_line_spec(), 0), DataError);
}

TEST(Generate, ShapesAndReportContainment) {
  auto spec = default_line_spec();
  spec.source_rate = 0.5;
  auto g = generate(spec, 400);
  ASSERT_EQ(g.sequences.size(), 400u);
  for (std::size_t i = 0; i < g.sequences.size(); ++i) {
    const auto& s = g.sequences[i];
    ASSERT_EQ(s.tuples.size(), spec.actions.size() + 1);
    EXPECT_EQ(s.tuples[0].key.action_id, spec.boundary_action);
    EXPECT_TRUE(validate_sequence(s).empty());
  }
  // Every report sits inside exactly one tuple, and that tuple carries the injected source.
  for (const auto& rep : g.reports) {
    std::size_t hosts = 0;
    for (std::size_t i = 0; i < g.sequences.size(); ++i)
      for (std::size_t k = 0; k < g.sequences[i].tuples.size(); ++k) {
        const auto& u = g.sequences[i].tuples[k];
        if (rep.start_ts < u.start_ts || rep.end_ts > u.end_ts || rep.station != u.key.station) continue;
        ++hosts;
        const auto cause = g.truth.sequences[i].tuples[k].cause;
        EXPECT_TRUE(cause == Cause::Source || cause == Cause::Misc);
      }
    EXPECT_EQ(hosts, 1u) << rep.error_id;
  }
}

TEST(Generate, CsvRoundTripsThroughIngestWithoutDiagnostics) {
  auto g = generate(default_line_spec(), 300);
  std::istringstream in(cycle_csv(g));
  auto events = ingest::parse_cycle_times(in);
  EXPECT_TRUE(events.diagnostics.empty());
  auto paired = ingest::pair_events(std::move(events.items));
  EXPECT_TRUE(paired.diagnostics.empty());
  auto seqs = ingest::assemble_sequences(paired.items, "AC000");
  EXPECT_EQ(seqs, g.sequences);

  std::ostringstream es;
  ingest::write_error_reports(es, g.reports);
  std::istringstream ein(es.str());
  auto reports = ingest::parse_error_reports(ein);
  EXPECT_TRUE(reports.diagnostics.empty());
  EXPECT_EQ(reports.items, g.reports);
}

TEST(Generate, UnperturbedMarginalMatchesNominal) {
  auto spec = quiet_spec();
  const std::size_t n = 4000;
  auto g = generate(spec, n);
  for (std::size_t j = 0; j < spec.actions.size(); ++j) {
    double sum = 0;
    for (const auto& s : g.sequences) sum += s.tuples[j + 1].duration;
    const double mean = sum / double(n);
    EXPECT_NEAR(mean, spec.actions[j].nominal, 5 * spec.actions[j].jitter_sd / std::sqrt(double(n)));
  }
}

TEST(ScoreClassifier, PerfectAndAllNormal) {
  auto spec = default_line_spec();
  spec.source_rate = 0.3;
  spec.misc_rate = 0.05;
  auto g = generate(spec, 500);
  std::vector<SequenceLabel> perfect, normal;
  std::size_t truth_normal = 0;
  for (const auto& t : g.truth.sequences) {
    perfect.push_back({t.sequence_id, t.cls, {}, {}});
    normal.push_back({t.sequence_id, SequenceClass::Normal, {}, {}});
    truth_normal += t.cls == SequenceClass::Normal;
  }
  auto p = score_classifier(g.truth, perfect);
  EXPECT_DOUBLE_EQ(p.accuracy, 1.0);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b)
      if (a != b) {
        EXPECT_EQ(p.confusion[a][b], 0u);
      }
  EXPECT_DOUBLE_EQ(score_classifier(g.truth, normal).accuracy, double(truth_normal) / 500.0);

  normal.pop_back();
  EXPECT_THROW(score_classifier(g.truth, normal), DataError);
}

TEST(ScoreClassifier, DefaultSpecClassifierIsAccurate) {
  auto g = generate(default_line_spec(), 5000);
  auto rep = classify::classify_dataset(g.sequences, g.reports, g.specs);
  auto sc = score_classifier(g.truth, rep);
  EXPECT_GE(sc.accuracy, 0.95);
  auto m = score_source_matching(g.truth, rep.labels);
  EXPECT_GE(m.precision(), 0.95);
  EXPECT_GE(m.recall(), 0.95);

  // Class fractions track the injection fractions within binomial noise.
  std::map<ScoreClass, double> truth_frac, pred_frac;
  for (const auto& t : g.truth.sequences) truth_frac[score_class(t.cls)] += 1.0 / 5000;
  for (const auto& l : rep.labels) pred_frac[score_class(l.cls)] += 1.0 / 5000;
  for (auto c : {ScoreClass::Normal, ScoreClass::Source, ScoreClass::Misc}) {
    const double p = truth_frac[c];
    EXPECT_NEAR(pred_frac[c], p, 4 * std::sqrt(p * (1 - p) / 5000) + 0.01);
  }
}

TEST(LineSpecJson, RoundTripAndDefaults) {
  auto s = default_line_spec();
  s.source_rate = 0.2;
  s.propagation.horizon = 3;
  auto back = nlohmann::json(s).get<LineSpec>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(s));
  auto partial = nlohmann::json{{"misc_rate", 0.5}}.get<LineSpec>();
  EXPECT_EQ(partial.actions.size(), 12u);
  EXPECT_EQ(partial.misc_rate, 0.5);
}
