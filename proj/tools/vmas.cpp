// vmas: command-line driver for the generate -> ingest -> label -> prep -> train ->
// eval -> report flow. Exit codes: 0 success, 1 usage error, 2 data error.
// Diagnostics go to stderr as JSON lines.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vmas/cli.hpp"

namespace {

using namespace vmas;
namespace fs = std::filesystem;

constexpr int kUsage = 1;
constexpr int kData = 2;

void emit(const Diagnostics& d) { write_jsonl(std::cerr, d); }

void fail(const std::string& kind, const std::string& detail) { emit({{0, kind, detail}}); }

// Flag values that override the config file only when given.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;

  std::string spec;
  std::optional<std::size_t> n;

  std::vector<std::string> superordinate;
  std::optional<std::string> boundary;

  std::string specs;

  std::optional<std::string> preset;
  std::optional<std::size_t> n_back, m_fwd;
  std::optional<std::string> outlier_mode;
  bool keep_misc = false, no_separate = false, legacy_norm = false;
  std::optional<double> split;

  std::optional<std::string> arch;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr;

  std::optional<double> tau, b;
  std::optional<std::string> k;
  bool pooled_f1 = false;
};

cli::RunConfig build_config(const Overrides& o, const CLI::App& sub) {
  cli::RunConfig c = o.config.empty() ? cli::RunConfig{} : cli::load_config(o.config);
  c.seed = cli::resolve_seed(c.seed, std::getenv("VMAS_SEED"), o.seed);
  if (!o.spec.empty()) {
    std::ifstream in(o.spec);
    if (!in) throw std::invalid_argument("cannot open spec " + o.spec);
    c.line = nlohmann::json::parse(in).get<simgen::LineSpec>();
  }
  if (o.n) c.n_sequences = *o.n;
  if (o.boundary) c.boundary_action = c.pipeline.boundary_action = *o.boundary;
  if (!o.superordinate.empty()) c.superordinate_ids = o.superordinate;

  if (o.preset) {
    std::tie(c.pipeline.n_back, c.pipeline.m_fwd) = pipeline::preset(*o.preset);
    c.model.n_back = c.pipeline.n_back;
    c.model.m_fwd = c.pipeline.m_fwd;
    c.model_shape_pinned = sub.get_name() == "train";
  }
  if (o.n_back) c.pipeline.n_back = c.model.n_back = *o.n_back, c.model_shape_pinned = true;
  if (o.m_fwd) c.pipeline.m_fwd = c.model.m_fwd = *o.m_fwd, c.model_shape_pinned = true;
  if (o.outlier_mode) c.pipeline.outlier_mode = pipeline::outlier_mode_from_string(*o.outlier_mode);
  if (o.keep_misc) c.pipeline.drop_misc = false;
  if (o.no_separate) c.pipeline.separate = false;
  if (o.legacy_norm) c.pipeline.legacy_norm = true;
  if (o.split) c.pipeline.split_fraction = *o.split;

  if (o.arch) c.model.arch = nn::arch_from_string(*o.arch);
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.lr) c.train.learning_rate = *o.lr;

  if (o.tau) c.metrics.tau = *o.tau;
  if (o.b) c.metrics.b = *o.b;
  if (o.k) {
    if (*o.k == "estimate") {
      c.metrics.k.reset();
    } else {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(*o.k, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != o.k->size()) throw std::invalid_argument("--k must be a number or 'estimate'");
      c.metrics.k = v;
    }
  }
  if (o.pooled_f1) c.metrics.pooled_f1 = true;

  pipeline::validate(c.pipeline);
  nn::validate(c.model);
  nn::validate(c.train);
  if (!(c.metrics.tau >= 0.0 && c.metrics.tau <= 1.0)) throw std::invalid_argument("tau must be in [0,1]");
  if (!(c.metrics.b > 0.0)) throw std::invalid_argument("b must be positive");
  if (c.metrics.k && !(*c.metrics.k > 0.0)) throw std::invalid_argument("k must be positive");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vehicle manufacturing analysis: labelling, forecasting and evaluation of action durations"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  app.add_option("--config", o.config, "RunConfig JSON file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Seed for generation and training (overrides VMAS_SEED and the config)");

  std::string in_dir = ".", out_dir = ".", checkpoint;
  auto dirs = [&](CLI::App* s, bool with_in) {
    if (with_in) s->add_option("--in-dir", in_dir, "Directory holding the previous stage's files");
    s->add_option("--out-dir", out_dir, "Directory to write this stage's files");
  };

  auto* gen = app.add_subcommand("generate", "Simulate a production line: cycle times, error reports, ground truth");
  gen->add_option("--spec", o.spec, "LineSpec JSON (defaults to the built-in line)")->check(CLI::ExistingFile);
  gen->add_option("--n", o.n, "Number of sequences");
  dirs(gen, false);

  auto* ing = app.add_subcommand("ingest", "Pair start/end events into action sequences");
  ing->add_option("--boundary", o.boundary, "Action id that opens a sequence");
  ing->add_option("--superordinate", o.superordinate, "Action ids of summary actions to drop");
  dirs(ing, true);

  auto* lab = app.add_subcommand("label", "Classify sequences into normal, source, knock-on and misc");
  lab->add_option("--specs", o.specs, "Action specs JSON with d_max per action")->check(CLI::ExistingFile);
  dirs(lab, true);

  auto* prep = app.add_subcommand("prep", "Filter, window, split and normalize into training pairs");
  prep->add_option("--preset", o.preset, "Window setup: 5-2, 5-5, 5-7, 7-5 or 7-7");
  prep->add_option("--n-back", o.n_back, "Look-back rows");
  prep->add_option("--m-fwd", o.m_fwd, "Predicted steps");
  prep->add_option("--outlier-mode", o.outlier_mode, "AA, APS or none");
  prep->add_flag("--keep-misc", o.keep_misc, "Keep misc sequences");
  prep->add_flag("--no-separate", o.no_separate, "Let windows cross sequence boundaries");
  prep->add_flag("--legacy-norm", o.legacy_norm, "Fit normalization on the whole corpus");
  prep->add_option("--split", o.split, "Training fraction");
  dirs(prep, true);

  auto* tr = app.add_subcommand("train", "Train a GRU, LSTM or Transformer on the prepared pairs");
  tr->add_option("--arch", o.arch, "GRU, LSTM or Transformer");
  tr->add_option("--preset", o.preset, "Window setup; must match the prepared data");
  tr->add_option("--n-back", o.n_back, "Look-back rows; must match the prepared data");
  tr->add_option("--m-fwd", o.m_fwd, "Predicted steps; must match the prepared data");
  tr->add_option("--epochs", o.epochs, "Training epochs");
  tr->add_option("--batch-size", o.batch_size, "Mini-batch size");
  tr->add_option("--lr", o.lr, "Adam learning rate");
  dirs(tr, true);

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on the test pairs");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file (default <in-dir>/model.ckpt)");
  ev->add_option("--tau", o.tau, "CTA weight of TARMSE");
  ev->add_option("--b", o.b, "Relative anomaly threshold for F1");
  ev->add_option("--k", o.k, "Noise floor in seconds, or 'estimate'");
  ev->add_flag("--pooled-f1", o.pooled_f1, "Pool all steps into one F1 instead of averaging per step");
  dirs(ev, true);

  std::vector<std::string> metric_files;
  std::optional<std::string> replicate;
  auto* rep = app.add_subcommand("report", "Summarize metrics files as a table with tau crossovers");
  rep->add_option("metrics", metric_files, "metrics.json files from eval");
  rep->add_option("--replicate-table2", replicate,
                  "Recompute TARMSE/CTA from per-step RMSE/F1 rows (JSON file, or the built-in reference values)")
      ->expected(0, 1);
  dirs(rep, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  auto* sub = app.get_subcommands().front();
  try {
    const auto cfg = build_config(o, *sub);
    const std::string name = sub->get_name();
    cli::StageResult r;
    if (name == "generate") {
      r = cli::run_generate(cfg, out_dir);
    } else if (name == "ingest") {
      r = cli::run_ingest(cfg, in_dir, out_dir);
    } else if (name == "label") {
      r = cli::run_label(cfg, in_dir, out_dir, o.specs);
    } else if (name == "prep") {
      r = cli::run_prep(cfg, in_dir, out_dir);
    } else if (name == "train") {
      r = cli::run_train(cfg, in_dir, out_dir);
    } else if (name == "eval") {
      r = cli::run_eval(cfg, in_dir, checkpoint.empty() ? fs::path(in_dir) / cli::kCheckpoint : fs::path(checkpoint),
                        out_dir);
    } else if (rep->count("--replicate-table2")) {
      const auto rows = replicate && !replicate->empty() ? cli::read_replication_inputs(*replicate)
                                                         : cli::published_inputs();
      r = cli::run_replicate(rows, out_dir);
    } else {
      std::vector<fs::path> files(metric_files.begin(), metric_files.end());
      r = cli::run_report(files, out_dir);
    }
    emit(r.diagnostics);
    if (r.summary.contains("table")) {
      std::cout << r.summary["table"].get<std::string>();
      r.summary.erase("table");
    }
    std::cout << r.summary.dump(2) << '\n';
    return 0;
  } catch (const DataError& e) {
    fail("DataError", e.what());
    return kData;
  } catch (const metrics::MetricError& e) {
    fail("MetricError", e.what());
    return kData;
  } catch (const nn::ShapeMismatch& e) {
    fail("ShapeMismatch", e.what());
    return kData;
  } catch (const nlohmann::json::exception& e) {
    fail("DataError", e.what());
    return kData;
  } catch (const std::invalid_argument& e) {
    fail("UsageError", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    fail("DataError", e.what());
    return kData;
  }
}
