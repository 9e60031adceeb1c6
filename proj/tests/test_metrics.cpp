#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "vmas/metrics.hpp"
#include "vmas/reference_table.hpp"
#include "vmas/simgen.hpp"

using namespace vmas;
using namespace vmas::metrics;

namespace {

// Closed form of the weight normaliser: sum_{i=1..n} e^-i = (e^-n - 1) / (1 - e).
double oracle_s(std::size_t n) { return (std::exp(-double(n)) - 1.0) / (1.0 - std::exp(1.0)); }

double oracle_tarmse(const std::vector<double>& r, double k) {
  double acc = 0;
  for (std::size_t i = 0; i < r.size(); ++i) acc += std::exp(-double(i + 1)) * (k - r[i]) / k;
  return acc / oracle_s(r.size());
}

Matrix col(std::initializer_list<double> v) {
  Matrix m(v.size(), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

}  // namespace

TEST(RmsePerStep, PerfectAndConstantError) {
  Matrix t = Matrix::Random(10, 3);
  for (auto r : rmse_per_step(t, t)) EXPECT_EQ(*r, 0.0);
  Matrix p = t.array() + 2.0;
  for (auto r : rmse_per_step(p, t)) EXPECT_NEAR(*r, 2.0, 1e-12);
}

TEST(RmsePerStep, HandFixtureAndMask) {
  Matrix p(3, 2), t(3, 2);
  p << 1, 2, 3, 4, 5, 6;
  t << 2, 2, 1, 4, 5, 9;
  auto r = rmse_per_step(p, t);
  EXPECT_NEAR(*r[0], std::sqrt((1.0 + 4.0 + 0.0) / 3.0), 1e-12);
  EXPECT_NEAR(*r[1], std::sqrt((0.0 + 0.0 + 9.0) / 3.0), 1e-12);

  Mask keep(3, 2);
  keep << true, false, false, false, true, false;
  auto m = rmse_per_step(p, t, keep);
  EXPECT_NEAR(*m[0], std::sqrt(1.0 / 2.0), 1e-12);
  EXPECT_FALSE(m[1].has_value());
}

TEST(EstimateK, Examples) {
  std::map<ActionKey, std::vector<double>> d{{{"ST1", "v", "a"}, {3, 5}}};
  EXPECT_DOUBLE_EQ(estimate_k(d).k, 1.0);
  d = {{{"ST1", "v", "a"}, {4, 4, 4}}, {{"ST1", "v", "b"}, {7}}};
  auto z = estimate_k(d);
  EXPECT_EQ(z.k, 0.0);
  EXPECT_TRUE(z.degenerate);
  EXPECT_THROW(estimate_k(std::map<ActionKey, std::vector<double>>{}), MetricError);
}

TEST(EstimateK, SimgenStationMatchesJitter) {
  auto spec = simgen::default_line_spec();
  spec.source_rate = 0;
  spec.misc_rate = 0;
  auto g = simgen::generate(spec, 2000);
  std::map<ActionKey, double> dmax;
  for (const auto& [key, s] : g.specs) dmax[key] = s.d_max;
  auto k = estimate_k(g.sequences, dmax, spec.boundary_action);
  EXPECT_NEAR(k.k, spec.actions[0].jitter_sd, 0.1 * spec.actions[0].jitter_sd);
}

TEST(Tarmse, Examples) {
  EXPECT_NEAR(tarmse(std::vector<double>{2.95, 3.29}, 5.14), 0.41, 0.005);
  EXPECT_NEAR(tarmse(std::vector<double>{4.14, 4.12}, 5.14), 0.20, 0.005);
  EXPECT_EQ(tarmse(std::vector<double>{0, 0, 0, 0}, 3.0), 1.0);
  EXPECT_THROW(tarmse(std::vector<double>{1.0}, 0.0), MetricError);
  EXPECT_LT(tarmse(std::vector<double>{10.0}, 5.0), 0.0);
}

TEST(Tarmse, WeightSumMatchesClosedForm) {
  for (std::size_t n = 1; n <= 10; ++n) EXPECT_NEAR(weight_sum(n), oracle_s(n), 1e-14);
}

TEST(Tarmse, PublishedRowsReproduce) {
  for (const auto& row : reference::published_rows()) {
    const double t = tarmse(row.rmse, reference::kPublishedK);
    EXPECT_NEAR(t, oracle_tarmse(row.rmse, reference::kPublishedK), 1e-12) << row.model;
    EXPECT_NEAR(t, row.tarmse, 0.01) << row.model;
  }
}

TEST(Tarmse, MonotoneAndBounded) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 8.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> r(1 + trial % 7);
    for (auto& x : r) x = u(rng);
    const double base = tarmse(r, 5.14);
    EXPECT_LT(base, 1.0);
    const std::size_t i = trial % r.size();
    auto lower = r;
    lower[i] *= 0.5;
    EXPECT_GT(tarmse(lower, 5.14), base);
  }
}

TEST(F1PerStep, IdentityAndAllNominal) {
  Matrix nominal = Matrix::Constant(6, 2, 10.0);
  Matrix t(6, 2);
  t << 10, 12, 15, 10, 10, 10, 11.5, 10, 10, 13, 9, 10;
  auto same = f1_per_step(t, t, nominal, 0.1);
  EXPECT_EQ(same.f1[0], 1.0);
  EXPECT_EQ(same.f1[1], 1.0);
  auto flat = f1_per_step(nominal, t, nominal, 0.1);
  EXPECT_EQ(flat.f1[0], 0.0);
  EXPECT_EQ(flat.f1[1], 0.0);
}

TEST(F1PerStep, EightSampleFixture) {
  // nominal 10, b = 0.1, threshold 11: TP at 0,1; FP at 2; FN at 3; TN otherwise.
  Matrix p = col({12, 13, 12, 10, 10, 10, 9, 10});
  Matrix t = col({12, 14, 10, 12, 10, 10, 10, 9});
  auto r = f1_per_step(p, t, Matrix::Constant(8, 1, 10.0), 0.1);
  EXPECT_NEAR(r.f1[0], 2.0 * 2 / (2.0 * 2 + 1 + 1), 1e-12);
  EXPECT_TRUE(r.diagnostics.empty());
}

TEST(F1PerStep, NoPositivesDiagnosticAndBadB) {
  Matrix t = Matrix::Constant(4, 1, 10.0);
  auto r = f1_per_step(t, t, t, 0.1);
  EXPECT_EQ(r.f1[0], 0.0);
  ASSERT_EQ(r.diagnostics.size(), 1u);
  EXPECT_EQ(r.diagnostics[0].kind, "NoPositives");
  EXPECT_THROW(f1_per_step(t, t, t, 0.0), MetricError);
}

TEST(F1PerStep, InvariantUnderUniformRescaling) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(5.0, 20.0);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix p(30, 3), t(30, 3), n(30, 3);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      p(i) = u(rng);
      t(i) = u(rng);
      n(i) = 12.0;
    }
    const double s = 1.0 + trial;
    auto a = f1_per_step(p, t, n, 0.1);
    auto b = f1_per_step(p * s, t * s, n * s, 0.1);
    for (std::size_t j = 0; j < a.f1.size(); ++j) EXPECT_DOUBLE_EQ(a.f1[j], b.f1[j]);
  }
}

TEST(Cta, ExamplesAndFormat) {
  EXPECT_NEAR(cta(0.41, 0.80, 0.5), 0.605, 1e-12);
  EXPECT_EQ(format_percent(cta(0.41, 0.80, 0.5)), "60.50%");
  EXPECT_EQ(cta(0.3, 0.9, 0.0), 0.9);
  EXPECT_EQ(cta(0.3, 0.9, 1.0), 0.3);
  EXPECT_THROW(cta(0.3, 0.9, 1.5), MetricError);
}

TEST(TauSweep, PublishedCrossovers) {
  ModelScore tf{"TF", 0.48, 0.80}, gru{"GRU", 0.21, 0.88}, lstm{"LSTM", 0.21, 0.92};
  EXPECT_NEAR(*crossover(tf, gru), 0.2286, 1e-4);
  EXPECT_NEAR(*crossover(tf, gru), reference::kPublishedCrossoverTfGru, 0.01);
  EXPECT_NEAR(*crossover(tf, lstm), reference::kPublishedCrossoverTfLstm, 0.01);
  auto all = tau_sweep({tf, gru, lstm});
  ASSERT_EQ(all.size(), 3u);
  // GRU and LSTM share a TARMSE, so their curves only meet at tau = 1.
  EXPECT_NEAR(*all[2].tau, 1.0, 1e-12);
}

TEST(TauSweep, IdenticalAndDominated) {
  ModelScore a{"A", 0.4, 0.8};
  EXPECT_FALSE(crossover(a, a).has_value());
  EXPECT_FALSE(crossover(a, {"B", 0.3, 0.7}).has_value());
  EXPECT_THROW(tau_sweep({a}), MetricError);
}

TEST(TauSweep, ClosedFormMatchesGridSweep) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    ModelScore a{"A", u(rng), u(rng)}, b{"B", u(rng), u(rng)};
    // Grid oracle: first grid point where the sign of the CTA difference changes.
    std::optional<double> grid;
    double prev = cta(a.tarmse, a.f1, 0.0) - cta(b.tarmse, b.f1, 0.0);
    for (int i = 1; i <= 1000; ++i) {
      const double tau = i / 1000.0;
      const double diff = cta(a.tarmse, a.f1, tau) - cta(b.tarmse, b.f1, tau);
      if ((prev < 0) != (diff < 0)) {
        grid = tau;
        break;
      }
      prev = diff;
    }
    auto closed = crossover(a, b);
    if (!grid) continue;
    ASSERT_TRUE(closed.has_value());
    EXPECT_NEAR(*closed, *grid, 1e-3);
    ++checked;
  }
  EXPECT_GT(checked, 50);
}

TEST(Evaluate, MasksTargetsAboveGlobalMax) {
  Matrix p(3, 1), t(3, 1);
  p << 10, 10, 10;
  t << 11, 12, 500;
  Matrix nominal = Matrix::Constant(3, 1, 10.0), gmax = Matrix::Constant(3, 1, 100.0);
  auto r = evaluate(p, t, nominal, gmax, {0.5, 0.1, 5.0, false});
  EXPECT_NEAR(*r.rmse[0], std::sqrt((1.0 + 4.0) / 2.0), 1e-12);
  EXPECT_NEAR(r.cta, 0.5 * r.tarmse + 0.5 * r.f1_mean, 1e-12);

  auto zero_tau = evaluate(p, t, nominal, gmax, {0.0, 0.1, 5.0, false});
  EXPECT_EQ(zero_tau.cta, zero_tau.f1_mean);

  Matrix all_big = Matrix::Constant(3, 1, 1000.0);
  EXPECT_THROW(evaluate(p, all_big, nominal, gmax, {}), DataError);
}

TEST(Evaluate, JsonRoundTrip) {
  Matrix p = Matrix::Constant(4, 2, 10.0), t(4, 2);
  t << 10, 12, 13, 10, 9, 10, 12, 12;
  auto r = evaluate(p, t, Matrix::Constant(4, 2, 10.0), Matrix::Constant(4, 2, 100.0), {});
  auto back = metric_report_from_json(to_json(r));
  EXPECT_EQ(to_json(back), to_json(r));
}
