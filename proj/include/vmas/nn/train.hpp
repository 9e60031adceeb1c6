#pragma once

// Mini-batch training with Adam on MAE, checkpoints, and dataset prediction.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vmas/diagnostics.hpp"
#include "vmas/nn/models.hpp"
#include "vmas/nn/tape.hpp"
#include "vmas/pipeline.hpp"

namespace vmas::nn {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double validation_fraction = 0.1;  // tail of the training pairs, history only
};

inline void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (!(c.learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be non-negative");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0))
    throw std::invalid_argument("validation_fraction must be in [0,1)");
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"optimizer", "Adam"},
       {"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"loss", "MAE"},
       {"validation_fraction", c.validation_fraction}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("learning_rate", c.learning_rate);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("epsilon", c.epsilon);
  get("validation_fraction", c.validation_fraction);
}

/// Bias-corrected Adam.
class Adam {
 public:
  Adam(const std::vector<Param>& params, const TrainConfig& c) : c_(c) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void step(std::vector<Param>& params, const std::vector<Matrix>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (grads[i].size() == 0) continue;
      m_[i] = c_.beta1 * m_[i] + (1.0 - c_.beta1) * grads[i];
      v_[i] = c_.beta2 * v_[i] + (1.0 - c_.beta2) * grads[i].cwiseAbs2();
      params[i].value.array() -=
          c_.learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + c_.epsilon);
    }
  }

 private:
  TrainConfig c_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

/// Windowed pairs as dense matrices: X is N x (n_back*5), Y is N x m_fwd (normalized).
struct Dataset {
  Matrix X;
  Matrix Y;
};

inline Dataset to_dataset(const std::vector<pipeline::WindowedPair>& pairs, std::size_t n_back, std::size_t m_fwd) {
  const auto F = static_cast<Eigen::Index>(pipeline::kFeatures);
  Dataset d{Matrix(static_cast<Eigen::Index>(pairs.size()), static_cast<Eigen::Index>(n_back) * F),
            Matrix(static_cast<Eigen::Index>(pairs.size()), static_cast<Eigen::Index>(m_fwd))};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (p.x.size() != n_back || p.y.size() != m_fwd) throw ShapeMismatch("ShapeMismatch: pair " + std::to_string(i));
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t s = 0; s < n_back; ++s)
      for (Eigen::Index f = 0; f < F; ++f) d.X(r, static_cast<Eigen::Index>(s) * F + f) = p.x[s][static_cast<std::size_t>(f)];
    for (std::size_t k = 0; k < m_fwd; ++k) d.Y(r, static_cast<Eigen::Index>(k)) = p.y[k];
  }
  return d;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::vector<Param> params;
  std::optional<pipeline::NormalizationParams> normalization;
  std::vector<EpochRecord> history;
  nlohmann::json meta = nlohmann::json::object();
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, Checkpoint cp) : std::runtime_error(what), checkpoint(std::move(cp)) {}
  Checkpoint checkpoint;
};

struct TrainResult {
  Checkpoint checkpoint;
  Diagnostics diagnostics;
};

/// Gradients of a scalar loss w.r.t. every parameter, from one tape.
inline std::vector<Matrix> parameter_grads(const Tape& t, const Model::Forward& f, const Model& m) {
  std::vector<Matrix> g;
  for (std::size_t i = 0; i < f.params.size(); ++i) {
    const auto& gi = t.grad(f.params[i]);
    g.push_back(gi.size() ? gi : Matrix::Zero(m.params()[i].value.rows(), m.params()[i].value.cols()));
  }
  return g;
}

inline double batch_mae(const Model& m, const Matrix& X, const Matrix& Y, std::size_t chunk = 512) {
  double sum = 0.0;
  for (Eigen::Index s = 0; s < X.rows(); s += static_cast<Eigen::Index>(chunk)) {
    const auto n = std::min<Eigen::Index>(static_cast<Eigen::Index>(chunk), X.rows() - s);
    sum += (m.predict(X.middleRows(s, n)) - Y.middleRows(s, n)).cwiseAbs().sum();
  }
  return X.size() ? sum / static_cast<double>(Y.size()) : 0.0;
}

/// Trains in place. The last `validation_fraction` of the pairs is held out for the
/// validation curve; the rest is shuffled each epoch with an rng derived from the
/// model seed. Throws NonFiniteLoss with the last finite state when a loss diverges.
inline TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg) {
  validate(cfg);
  if (data.X.rows() == 0) throw DataError("train: empty training set");
  const auto N = data.X.rows();
  const auto n_val = static_cast<Eigen::Index>(std::floor(cfg.validation_fraction * static_cast<double>(N)));
  const auto n_train = N - n_val;
  if (n_train == 0) throw DataError("train: validation split leaves no training pairs");

  Rng rng(model.config().seed ^ 0x9E3779B97F4A7C15ULL);
  Adam opt(model.params(), cfg);
  TrainResult res;
  res.checkpoint.model = model.config();
  res.checkpoint.train = cfg;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_train));
  for (Eigen::Index i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;

  const auto B = static_cast<Eigen::Index>(cfg.batch_size);
  const auto cols = data.X.cols();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double loss_sum = 0.0;
    for (Eigen::Index s = 0; s < n_train; s += B) {
      const auto nb = std::min(B, n_train - s);
      Matrix xb(nb, cols), yb(nb, data.Y.cols());
      for (Eigen::Index r = 0; r < nb; ++r) {
        xb.row(r) = data.X.row(order[static_cast<std::size_t>(s + r)]);
        yb.row(r) = data.Y.row(order[static_cast<std::size_t>(s + r)]);
      }
      Tape t;
      auto f = model.forward(t, xb, Mode::Train, &rng);
      Var loss = mae(t, f.output, yb);
      const double lv = t.value(loss)(0, 0);
      if (!std::isfinite(lv)) {
        res.checkpoint.params = model.params();
        throw NonFiniteLoss("NonFiniteLoss at epoch " + std::to_string(epoch), res.checkpoint);
      }
      t.backward(loss);
      auto grads = parameter_grads(t, f, model);
      for (const auto& g : grads)
        if (!g.allFinite()) {
          res.checkpoint.params = model.params();
          throw NonFiniteLoss("NonFiniteGradient at epoch " + std::to_string(epoch), res.checkpoint);
        }
      opt.step(model.params(), grads);
      loss_sum += lv * static_cast<double>(nb);
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(n_train), std::nullopt};
    if (n_val > 0) rec.val_loss = batch_mae(model, data.X.bottomRows(n_val), data.Y.bottomRows(n_val));
    res.checkpoint.history.push_back(rec);
  }
  res.checkpoint.params = model.params();
  const auto& h = res.checkpoint.history;
  if (h.back().train_loss > h.front().train_loss)
    res.diagnostics.push_back({0, "Warning", "final training loss exceeds first-epoch loss"});
  return res;
}

inline void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch}, {"train_loss", r.train_loss},
       {"val_loss", r.val_loss ? nlohmann::json(*r.val_loss) : nlohmann::json()}};
}

inline void from_json(const nlohmann::json& j, EpochRecord& r) {
  j.at("epoch").get_to(r.epoch);
  j.at("train_loss").get_to(r.train_loss);
  r.val_loss = j.at("val_loss").is_null() ? std::nullopt : std::optional<double>(j.at("val_loss").get<double>());
}

inline constexpr char kCheckpointMagic[8] = {'V', 'M', 'A', 'S', 'C', 'K', 'P', 'T'};

/// Binary checkpoint: 8-byte magic, u64 header length, JSON header (configs,
/// normalization, history, tensor index), then every tensor as column-major doubles.
inline void save_checkpoint(std::ostream& os, const Checkpoint& cp) {
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : cp.params) {
    if (!p.value.allFinite()) throw DataError("checkpoint tensor " + p.name + " is not finite");
    tensors.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(p.value.size());
  }
  nlohmann::json header = {{"format", 1},
                           {"model", cp.model},
                           {"train", cp.train},
                           {"normalization", cp.normalization ? nlohmann::json(*cp.normalization) : nlohmann::json()},
                           {"history", cp.history},
                           {"meta", cp.meta},
                           {"tensors", tensors}};
  const std::string h = header.dump();
  const std::uint64_t len = h.size();
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& p : cp.params)
    os.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(double)));
}

inline Checkpoint load_checkpoint(std::istream& is) {
  char magic[8];
  std::uint64_t len = 0;
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw DataError("not a checkpoint file");
  if (!is.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1ULL << 32)) throw DataError("corrupt checkpoint header");
  std::string h(len, '\0');
  if (!is.read(h.data(), static_cast<std::streamsize>(len))) throw DataError("truncated checkpoint header");
  const auto header = nlohmann::json::parse(h);
  Checkpoint cp;
  cp.model = header.at("model").get<ModelConfig>();
  cp.train = header.at("train").get<TrainConfig>();
  if (!header.at("normalization").is_null()) cp.normalization = header.at("normalization").get<pipeline::NormalizationParams>();
  cp.history = header.at("history").get<std::vector<EpochRecord>>();
  cp.meta = header.at("meta");
  for (const auto& t : header.at("tensors")) {
    Param p{t.at("name").get<std::string>(), Matrix(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>())};
    if (!is.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(double))))
      throw DataError("truncated checkpoint tensor " + p.name);
    cp.params.push_back(std::move(p));
  }
  return cp;
}

struct Predictions {
  Matrix normalized;  // N x m_fwd
  Matrix seconds;     // denormalized durations
};

/// Runs the checkpointed model over pairs and maps outputs back to seconds.
inline Predictions predict_dataset(const Checkpoint& cp, const std::vector<pipeline::WindowedPair>& pairs) {
  if (!cp.normalization) throw DataError("MissingNormalization: checkpoint has no normalization params");
  const auto m = static_cast<Eigen::Index>(cp.model.m_fwd);
  Predictions out{Matrix(static_cast<Eigen::Index>(pairs.size()), m), Matrix(static_cast<Eigen::Index>(pairs.size()), m)};
  if (pairs.empty()) return out;
  Model model(cp.model, cp.params);
  const auto d = to_dataset(pairs, cp.model.n_back, cp.model.m_fwd);
  constexpr Eigen::Index chunk = 512;
  for (Eigen::Index s = 0; s < d.X.rows(); s += chunk) {
    const auto n = std::min(chunk, d.X.rows() - s);
    out.normalized.middleRows(s, n) = model.predict(d.X.middleRows(s, n));
  }
  for (Eigen::Index i = 0; i < out.seconds.size(); ++i)
    out.seconds(i) = cp.normalization->denormalize(pipeline::kDuration, out.normalized(i));
  return out;
}

}  // namespace vmas::nn
