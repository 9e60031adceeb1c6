// Acceptance suite: one PASS/FAIL line per criterion. Run with no arguments for all
// criteria, or with criterion numbers to run a subset. Exit status is non-zero when
// any selected criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "vmas/classify.hpp"
#include "vmas/cli.hpp"
#include "vmas/metrics.hpp"
#include "vmas/nn/train.hpp"
#include "vmas/pipeline.hpp"
#include "vmas/reference_table.hpp"
#include "vmas/simgen.hpp"

#ifndef VMAS_CLI_PATH
#error "VMAS_CLI_PATH must point at the vmas executable"
#endif

using namespace vmas;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kTarmseTol = 0.01;
constexpr double kCtaTolPp = 0.5;
constexpr double kCrossoverTol = 0.01;
constexpr double kClassifierMin = 0.95;
constexpr double kSigmaRelTol = 1e-6;
constexpr double kGradRelTol = 1e-4;
constexpr double kBaselineGain = 0.20;
constexpr double kBudget3 = 30, kBudget4 = 10, kBudget5 = 60, kBudget6 = 600, kBudget7 = 1800;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Metric replication from published per-step values.

Outcome metric_replication() {
  std::size_t t_ok = 0, c_ok = 0;
  std::string misses;
  for (const auto& row : reference::published_rows()) {
    const double t = metrics::tarmse(row.rmse, reference::kPublishedK);
    const double c = 100 * metrics::cta(t, row.f1_summary, reference::kPublishedTau);
    if (std::abs(t - row.tarmse) <= kTarmseTol)
      ++t_ok;
    else
      misses += " " + row.model + " TARMSE " + fmt("%.3f", t) + " vs " + fmt("%.2f", row.tarmse) + ";";
    if (std::abs(c - row.cta_percent) <= kCtaTolPp)
      ++c_ok;
    else
      misses += " " + row.model + " CTA " + fmt("%.2f", c) + "% vs " + fmt("%.2f", row.cta_percent) + "%;";
  }
  const std::size_t n = reference::published_rows().size();
  return {t_ok == n && c_ok == n, "TARMSE " + std::to_string(t_ok) + "/" + std::to_string(n) + " within " +
                                      fmt("%.2f", kTarmseTol) + ", CTA " + std::to_string(c_ok) + "/" +
                                      std::to_string(n) + " within " + fmt("%.1f", kCtaTolPp) + " pp" +
                                      (misses.empty() ? "" : " (off:" + misses + ")")};
}

// ---------------------------------------------------------------------------
// 2. Crossover replication on the 7-7 setup.

Outcome crossover_replication() {
  std::vector<metrics::ModelScore> scores;
  for (const auto& row : reference::published_rows())
    if (row.model.ends_with("7-7")) scores.push_back({row.model, row.tarmse, row.f1_summary});
  std::optional<double> tau;
  for (const auto& x : metrics::tau_sweep(scores))
    if ((x.a == "TF 7-7" && x.b == "GRU 7-7") || (x.a == "GRU 7-7" && x.b == "TF 7-7")) tau = x.tau;
  if (!tau) return {false, "no TF/GRU crossover found"};
  const bool ok = std::abs(*tau - reference::kPublishedCrossoverTfGru) <= kCrossoverTol;
  return {ok, "TF vs GRU tau* = " + fmt("%.4f", *tau) + " (published " +
                  fmt("%.3f", reference::kPublishedCrossoverTfGru) + ", tol " + fmt("%.2f", kCrossoverTol) + ")"};
}

// ---------------------------------------------------------------------------
// 3. Classifier round trip on simulated data.

Outcome classifier_round_trip() {
  const auto t0 = Clock::now();
  const auto g = simgen::generate(simgen::default_line_spec(), 5000);
  const auto rep = classify::classify_dataset(g.sequences, g.reports, g.specs);
  const auto sc = simgen::score_classifier(g.truth, rep);
  const auto m = simgen::score_source_matching(g.truth, rep.labels);
  const double secs = seconds_since(t0);
  const bool ok = sc.accuracy >= kClassifierMin && m.precision() >= kClassifierMin && m.recall() >= kClassifierMin &&
                  secs < kBudget3;
  return {ok, "accuracy " + fmt("%.4f", sc.accuracy) + ", source precision " + fmt("%.4f", m.precision()) +
                  ", recall " + fmt("%.4f", m.recall()) + " (min " + fmt("%.2f", kClassifierMin) + "), " +
                  fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 4. MLE fit against numeric maximization; significance on two-peak fixtures.

Outcome mle_correctness() {
  const auto t0 = Clock::now();
  using classify::Bin;
  auto hist = [](const std::map<Bin, std::size_t>& bins) {
    classify::DurationHistogram h{{"ST1", "0021", "A"}, bins, 0};
    for (auto& [_, c] : h.bins) h.total += c;
    return h;
  };
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> nbins(2, 8), dur(1, 80), cnt(1, 200);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::map<Bin, std::size_t> bins;
    const int k = nbins(rng);
    while (static_cast<int>(bins.size()) < k) bins[dur(rng)] = static_cast<std::size_t>(cnt(rng));
    const auto g = classify::fit_mle(hist(bins));
    const double s = oracle::sigma_by_search(bins, g.mu);
    worst = std::max(worst, std::abs(g.sigma - s) / s);
  }

  std::mt19937_64 frng(5);
  std::uniform_int_distribution<int> main_count(200, 2000), side_count(1, 150), offset(2, 40), width(0, 3);
  int fixtures_ok = 0;
  for (int fixture = 0; fixture < 20; ++fixture) {
    std::map<Bin, std::size_t> bins;
    const Bin mode = 30;
    bins[mode] = static_cast<std::size_t>(main_count(frng));
    for (int w = 1; w <= width(frng); ++w) bins[mode - w] = bins[mode + w] = bins[mode] / (4 * static_cast<std::size_t>(w));
    const Bin second = mode + offset(frng);
    bins[second] += static_cast<std::size_t>(side_count(frng));
    bins[second + 1] += static_cast<std::size_t>(side_count(frng) / 2 + 1);
    const auto h = hist(bins);
    const auto g = classify::fit_mle(h);
    std::set<Bin> expected;
    for (auto [d, c] : bins) {
      const double x = static_cast<double>(d);
      const double pdf = std::exp(-(x - g.mu) * (x - g.mu) / (2 * g.sigma * g.sigma)) / (g.sigma * std::sqrt(2 * M_PI));
      if (x != g.mu && static_cast<double>(c) / static_cast<double>(h.total) > pdf) expected.insert(d);
    }
    fixtures_ok += classify::detect_significant(h, g).significant_durations == expected;
  }
  const double secs = seconds_since(t0);
  const bool ok = worst <= kSigmaRelTol && fixtures_ok == 20 && secs < kBudget4;
  return {ok, "sigma worst relative error " + fmt("%.2e", worst) + " over 100 histograms (tol " +
                  fmt("%.0e", kSigmaRelTol) + "), " + std::to_string(fixtures_ok) + "/20 two-peak fixtures exact, " +
                  fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 5. Gradient fidelity at toy width.

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  std::string parts;
  bool ok = true;
  for (auto a : {nn::Arch::GRU, nn::Arch::LSTM, nn::Arch::Transformer}) {
    const double err = oracle::max_relative_gradient_error(nn::Model(oracle::toy(a)), oracle::random_input(4, 15, 3));
    ok &= err < kGradRelTol;
    parts += std::string(parts.empty() ? "" : ", ") + nn::to_string(a) + " " + fmt("%.2e", err);
  }
  const double secs = seconds_since(t0);
  ok &= secs < kBudget5;
  return {ok, "max relative error " + parts + " (tol " + fmt("%.0e", kGradRelTol) + "), " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// Shared in-process run: simulate, label, prepare, train, score on the test split.

struct Trained {
  std::vector<double> rmse;    // per step, seconds
  double baseline_rmse1 = 0;   // per-action nominal predictor, step 1
  nn::Matrix predictions;
  std::size_t train_pairs = 0, test_pairs = 0;
};

Trained train_and_score(const simgen::LineSpec& line, std::size_t n_sequences, const pipeline::PipelineConfig& pc,
                        const nn::ModelConfig& mc, const nn::TrainConfig& tc) {
  const auto g = simgen::generate(line, n_sequences);
  const auto rep = classify::classify_dataset(g.sequences, g.reports, g.specs);
  std::map<ActionKey, double> gmax, dmax;
  for (const auto& [key, a] : rep.actions) {
    gmax[key] = pc.global_mult * a.spec.d_max;
    dmax[key] = a.spec.d_max;
  }
  std::map<std::string, double> template_nominal{{line.boundary_action, line.boundary_duration}};
  for (const auto& a : line.actions) template_nominal[a.action_id] = a.nominal;

  const auto prep = pipeline::prepare(g.sequences, rep.labels, gmax, pc);
  const auto k = metrics::estimate_k(g.sequences, dmax, line.boundary_action);
  nn::Model model(mc);
  auto res = nn::train(model, nn::to_dataset(prep.train, mc.n_back, mc.m_fwd), tc);
  res.checkpoint.normalization = prep.norm;
  const auto pred = nn::predict_dataset(res.checkpoint, prep.test);

  const auto N = static_cast<Eigen::Index>(prep.test.size());
  const auto M = static_cast<Eigen::Index>(mc.m_fwd);
  nn::Matrix targets(N, M), nominal(N, M), gm(N, M), baseline(N, M);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index s = 0; s < M; ++s) {
      const auto& p = prep.test[static_cast<std::size_t>(i)];
      const auto& key = prep.vocab.keys[static_cast<std::size_t>(p.y_actions[static_cast<std::size_t>(s)] - 1)];
      targets(i, s) = p.y_seconds[static_cast<std::size_t>(s)];
      nominal(i, s) = rep.actions.at(key).d_nominal;
      gm(i, s) = gmax.at(key);
      baseline(i, s) = template_nominal.at(key.action_id);
    }
  const auto scored = metrics::evaluate(pred.seconds, targets, nominal, gm, {0.5, 0.10, k.k, false});
  const auto base = metrics::evaluate(baseline, targets, nominal, gm, {0.5, 0.10, k.k, false});
  Trained t;
  for (const auto& r : scored.rmse) t.rmse.push_back(*r);
  t.baseline_rmse1 = *base.rmse[0];
  t.predictions = pred.seconds;
  t.train_pairs = prep.train.size();
  t.test_pairs = prep.test.size();
  return t;
}

nn::ModelConfig reduced(nn::Arch a, std::uint64_t seed) {
  nn::ModelConfig c;
  c.arch = a;
  c.n_back = 5;
  c.m_fwd = 2;
  c.rnn = {32, 2, 0.2};
  c.transformer = {2, 16, 64, 2, 32, 0.1, true};
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------
// 6. Training sanity against the per-action nominal predictor.

simgen::LineSpec patterned_line() {
  auto line = simgen::default_line_spec();
  line.source_rate = 0.2;
  line.source_delay.sd = 0.0;  // fixed delays
  line.propagation.horizon = 4;
  line.propagation.decay = 0.9;
  return line;
}

Outcome training_sanity() {
  const auto t0 = Clock::now();
  const auto line = patterned_line();
  nn::TrainConfig tc;  // 50 epochs, batch 128, Adam 1e-3
  bool ok = true;
  std::string parts;
  nn::Matrix first_gru;
  for (auto a : {nn::Arch::GRU, nn::Arch::LSTM, nn::Arch::Transformer}) {
    const auto t = train_and_score(line, 1000, {}, reduced(a, 42), tc);
    const double gain = 1.0 - t.rmse[0] / t.baseline_rmse1;
    ok &= gain >= kBaselineGain;
    parts += std::string(parts.empty() ? "" : "; ") + nn::to_string(a) + " RMSE_1 " + fmt("%.3f", t.rmse[0]) +
             " vs baseline " + fmt("%.3f", t.baseline_rmse1) + " (" + fmt("%.1f", 100 * gain) + "%)";
    if (a == nn::Arch::GRU) first_gru = t.predictions;
  }
  // Same seed, same run: predictions must repeat bit for bit.
  const auto again = train_and_score(line, 1000, {}, reduced(nn::Arch::GRU, 42), tc);
  const bool repeat = again.predictions.rows() == first_gru.rows() && again.predictions == first_gru;
  ok &= repeat;
  const double secs = seconds_since(t0);
  ok &= secs < kBudget6;
  return {ok, parts + "; need >= " + fmt("%.0f", 100 * kBaselineGain) + "%; GRU rerun " +
                  (repeat ? "bit-identical" : "DIFFERS") + ", " + fmt("%.0f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 7. Misc ablation: training without misc sequences gives lower test RMSE.

Outcome misc_ablation() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string parts;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto line = simgen::default_line_spec();
    line.misc_rate = 0.02;
    line.seed = seed;
    double mean_rmse[2] = {0, 0};
    for (int removed = 0; removed < 2; ++removed) {
      pipeline::PipelineConfig pc;
      pc.outlier_mode = pipeline::OutlierMode::None;  // misc handling is the only difference
      pc.drop_misc = removed == 1;
      const auto t = train_and_score(line, 1000, pc, reduced(nn::Arch::GRU, seed), {});
      mean_rmse[removed] = metrics::mean(t.rmse);
    }
    ok &= mean_rmse[1] < mean_rmse[0];
    parts += std::string(parts.empty() ? "" : "; ") + "seed " + std::to_string(seed) + " removed " +
             fmt("%.3f", mean_rmse[1]) + " vs included " + fmt("%.3f", mean_rmse[0]);
  }
  const double secs = seconds_since(t0);
  ok &= secs < kBudget7;
  return {ok, "mean test RMSE (GRU): " + parts + ", " + fmt("%.0f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 8. End-to-end determinism of the command-line flow.

int run(const std::string& cmd) { return std::system((cmd + " >/dev/null 2>&1").c_str()); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome pipeline_determinism() {
  const fs::path root = fs::temp_directory_path() / ("vmas_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  cli::RunConfig cfg;
  cfg.n_sequences = 300;
  cfg.model = reduced(nn::Arch::GRU, 42);
  cfg.model.rnn = {16, 2, 0.2};
  cfg.train.epochs = 2;
  { std::ofstream(root / "config.json") << nlohmann::json(cfg).dump(2); }

  const std::string exe = VMAS_CLI_PATH;
  const std::string conf = " --config " + (root / "config.json").string();
  const std::vector<std::string> stages{"generate", "ingest", "label", "prep", "train", "eval"};
  for (const char* name : {"a", "b"}) {
    const std::string dir = (root / name).string();
    for (const auto& s : stages) {
      const std::string io = s == "generate" ? " --out-dir " + dir : " --in-dir " + dir + " --out-dir " + dir;
      if (run("env -u VMAS_SEED " + exe + " " + s + conf + io) != 0) {
        fs::remove_all(root);
        return {false, "stage " + s + " failed in run " + name};
      }
    }
    if (run(exe + " report " + dir + "/" + cli::kMetrics + " --out-dir " + dir) != 0) {
      fs::remove_all(root);
      return {false, std::string("report failed in run ") + name};
    }
  }
  std::size_t files = 0, same = 0;
  std::string differing;
  for (const auto& e : fs::directory_iterator(root / "a")) {
    ++files;
    const auto other = root / "b" / e.path().filename();
    if (fs::exists(other) && slurp(e.path()) == slurp(other))
      ++same;
    else
      differing += " " + e.path().filename().string();
  }
  const std::size_t files_b = static_cast<std::size_t>(std::distance(fs::directory_iterator(root / "b"), {}));
  fs::remove_all(root);
  const bool ok = files > 0 && same == files && files_b == files;
  return {ok, std::to_string(same) + "/" + std::to_string(files) + " artifacts byte-identical across two runs" +
                  (differing.empty() ? "" : " (differ:" + differing + ")")};
}

// ---------------------------------------------------------------------------
// 9. Window counts against the closed form and exhaustive enumeration.

Outcome window_arithmetic() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> len(0, 60), nb(1, 10), mf(1, 10);
  std::size_t checked = 0, agree = 0;
  for (int group = 0; group < 100; ++group) {
    std::vector<std::size_t> lens(10);
    for (auto& l : lens) l = len(rng);
    const auto n = nb(rng), m = mf(rng);
    const auto w = pipeline::make_windows(lens, n, m, true, [](std::size_t, std::size_t) { return false; });
    std::vector<std::size_t> produced(lens.size(), 0);
    for (const auto& [stream, start] : w.windows) {
      (void)start;
      // With separation every stream is one sequence; recover it from its first row.
      ++produced[w.streams[stream].front().first];
    }
    for (std::size_t i = 0; i < lens.size(); ++i) {
      const std::size_t closed = lens[i] + 1 > n + m ? lens[i] + 1 - n - m : 0;
      ++checked;
      agree += produced[i] == closed && closed == oracle::enumerate_windows(lens[i], n, m);
    }
  }
  return {agree == checked && checked == 1000,
          std::to_string(agree) + "/" + std::to_string(checked) + " sequence lengths match closed form and enumeration"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> check;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "metric replication", metric_replication},
      {2, "crossover replication", crossover_replication},
      {3, "classifier round trip", classifier_round_trip},
      {4, "MLE correctness", mle_correctness},
      {5, "gradient fidelity", gradient_fidelity},
      {6, "training sanity", training_sanity},
      {7, "misc ablation direction", misc_ablation},
      {8, "pipeline determinism", pipeline_determinism},
      {9, "window-count arithmetic", window_arithmetic},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.contains(c.id)) continue;
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
