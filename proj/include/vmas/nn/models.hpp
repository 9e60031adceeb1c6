#pragma once

// GRU, LSTM and Transformer-encoder regressors mapping n_back feature rows to
// m_fwd outputs in (-1, 1).

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vmas/nn/tape.hpp"
#include "json.hpp"

namespace vmas::nn {

enum class Arch { GRU, LSTM, Transformer };

inline const char* to_string(Arch a) {
  switch (a) {
    case Arch::GRU: return "GRU";
    case Arch::LSTM: return "LSTM";
    case Arch::Transformer: return "Transformer";
  }
  return "GRU";
}

inline Arch arch_from_string(const std::string& s) {
  if (s == "GRU" || s == "gru") return Arch::GRU;
  if (s == "LSTM" || s == "lstm") return Arch::LSTM;
  if (s == "Transformer" || s == "transformer" || s == "TF" || s == "tf") return Arch::Transformer;
  throw std::invalid_argument("unknown arch '" + s + "' (expected GRU, LSTM or Transformer)");
}

struct RnnConfig {
  std::size_t nodes = 100;
  std::size_t layers = 4;
  double dropout = 0.2;
};

struct TransformerConfig {
  std::size_t heads = 2;
  std::size_t head_size = 256;
  std::size_t ff_dim = 1024;
  std::size_t blocks = 4;
  std::size_t mlp_units = 1024;
  double dropout = 0.1;
  bool positional_encoding = true;
};

struct ModelConfig {
  Arch arch = Arch::GRU;
  std::size_t n_back = 5;
  std::size_t m_fwd = 2;
  std::size_t n_features = 5;
  RnnConfig rnn;
  TransformerConfig transformer;
  std::uint64_t seed = 42;
};

inline void validate(const ModelConfig& c) {
  auto pos = [](std::size_t v, const char* what) {
    if (v == 0) throw std::invalid_argument(std::string(what) + " must be positive");
  };
  pos(c.n_back, "n_back");
  pos(c.m_fwd, "m_fwd");
  pos(c.n_features, "n_features");
  pos(c.rnn.nodes, "rnn.nodes");
  pos(c.rnn.layers, "rnn.layers");
  pos(c.transformer.heads, "transformer.heads");
  pos(c.transformer.head_size, "transformer.head_size");
  pos(c.transformer.ff_dim, "transformer.ff_dim");
  pos(c.transformer.blocks, "transformer.blocks");
  pos(c.transformer.mlp_units, "transformer.mlp_units");
  for (double p : {c.rnn.dropout, c.transformer.dropout})
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout must be in [0,1)");
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"arch", to_string(c.arch)},
       {"n_back", c.n_back},
       {"m_fwd", c.m_fwd},
       {"n_features", c.n_features},
       {"rnn", {{"nodes", c.rnn.nodes}, {"layers", c.rnn.layers}, {"dropout", c.rnn.dropout}}},
       {"transformer",
        {{"heads", c.transformer.heads},
         {"head_size", c.transformer.head_size},
         {"ff_dim", c.transformer.ff_dim},
         {"blocks", c.transformer.blocks},
         {"mlp_units", c.transformer.mlp_units},
         {"dropout", c.transformer.dropout},
         {"positional_encoding", c.transformer.positional_encoding}}},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  auto get = [](const nlohmann::json& o, const char* key, auto& dst) {
    if (o.contains(key)) o.at(key).get_to(dst);
  };
  if (j.contains("arch")) c.arch = arch_from_string(j.at("arch").get<std::string>());
  get(j, "n_back", c.n_back);
  get(j, "m_fwd", c.m_fwd);
  get(j, "n_features", c.n_features);
  get(j, "seed", c.seed);
  if (j.contains("rnn")) {
    const auto& r = j.at("rnn");
    get(r, "nodes", c.rnn.nodes);
    get(r, "layers", c.rnn.layers);
    get(r, "dropout", c.rnn.dropout);
  }
  if (j.contains("transformer")) {
    const auto& t = j.at("transformer");
    get(t, "heads", c.transformer.heads);
    get(t, "head_size", c.transformer.head_size);
    get(t, "ff_dim", c.transformer.ff_dim);
    get(t, "blocks", c.transformer.blocks);
    get(t, "mlp_units", c.transformer.mlp_units);
    get(t, "dropout", c.transformer.dropout);
    get(t, "positional_encoding", c.transformer.positional_encoding);
  }
}

struct Param {
  std::string name;
  Matrix value;
};

/// Glorot-uniform matrix: U(-l, l) with l = sqrt(6 / (fan_in + fan_out)).
inline Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = (2.0 * uniform01(rng) - 1.0) * limit;
  return m;
}

/// Sinusoidal position encoding, seq x d.
inline Matrix positional_encoding(Eigen::Index seq, Eigen::Index d) {
  Matrix pe(seq, d);
  for (Eigen::Index p = 0; p < seq; ++p)
    for (Eigen::Index i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      pe(p, i) = i % 2 == 0 ? std::sin(static_cast<double>(p) * rate) : std::cos(static_cast<double>(p) * rate);
    }
  return pe;
}

enum class Mode { Train, Infer };

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    validate(cfg_);
    Rng rng(cfg_.seed);
    if (cfg_.arch == Arch::Transformer)
      init_transformer(rng);
    else
      init_rnn(rng);
  }

  /// Rebuilds a model from stored parameters (names and shapes must match).
  Model(ModelConfig cfg, const std::vector<Param>& params) : Model(std::move(cfg)) {
    if (params.size() != params_.size()) throw std::invalid_argument("parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].name != params_[i].name || params[i].value.rows() != params_[i].value.rows() ||
          params[i].value.cols() != params_[i].value.cols())
        throw std::invalid_argument("parameter mismatch at " + params[i].name);
      params_[i].value = params[i].value;
    }
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  struct Forward {
    Var output;                  // batch x m_fwd
    std::vector<Var> params;     // tape handles, parallel to params()
  };

  /// Forward pass on a batch; x is batch x (n_back * n_features), time step t in
  /// columns [t*F, (t+1)*F).
  Forward forward(Tape& t, const Matrix& x, Mode mode, Rng* rng = nullptr) const {
    require(x.cols() == static_cast<Eigen::Index>(cfg_.n_back * cfg_.n_features), "input columns");
    require(mode == Mode::Infer || rng != nullptr, "training forward needs an rng");
    Forward f;
    for (const auto& p : params_) f.params.push_back(t.variable(p.value));
    f.output = cfg_.arch == Arch::Transformer ? forward_transformer(t, f.params, x, mode, rng)
                                              : forward_rnn(t, f.params, x, mode, rng);
    return f;
  }

  /// Inference output as a plain matrix.
  Matrix predict(const Matrix& x) const {
    Tape t;
    auto f = forward(t, x, Mode::Infer);
    return t.value(f.output);
  }

  /// Transformer encoder output ((batch*n_back) x d) before pooling.
  Var encode(Tape& t, const std::vector<Var>& p, const Matrix& x, Mode mode, Rng* rng,
             std::vector<Matrix>* attention_weights = nullptr) const {
    require(cfg_.arch == Arch::Transformer, "encode needs a Transformer");
    const auto& c = cfg_.transformer;
    const Eigen::Index B = x.rows(), n = static_cast<Eigen::Index>(cfg_.n_back),
                       F = static_cast<Eigen::Index>(cfg_.n_features);
    const Eigen::Index d = static_cast<Eigen::Index>(c.heads * c.head_size);
    Matrix rows(B * n, F);
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index s = 0; s < n; ++s) rows.row(b * n + s) = x.block(b, s * F, 1, F);
    Var h = affine(t, t.constant(std::move(rows)), p[idx("in.W")], p[idx("in.b")]);
    if (c.positional_encoding) {
      const Matrix pe = positional_encoding(n, d);
      Matrix tiled(B * n, d);
      for (Eigen::Index b = 0; b < B; ++b) tiled.middleRows(b * n, n) = pe;
      h = add(t, h, t.constant(std::move(tiled)));
    }
    const double drop = mode == Mode::Train ? c.dropout : 0.0;
    for (std::size_t k = 0; k < c.blocks; ++k) {
      const std::string pre = "block" + std::to_string(k) + ".";
      Var a = layer_norm(t, h, p[idx(pre + "ln1.g")], p[idx(pre + "ln1.b")]);
      Var q = affine(t, a, p[idx(pre + "Wq")], p[idx(pre + "bq")]);
      Var kk = affine(t, a, p[idx(pre + "Wk")], p[idx(pre + "bk")]);
      Var v = affine(t, a, p[idx(pre + "Wv")], p[idx(pre + "bv")]);
      std::vector<Matrix> w;
      Var att = attention(t, q, kk, v, B, n, static_cast<Eigen::Index>(c.heads), attention_weights ? &w : nullptr);
      if (attention_weights) attention_weights->insert(attention_weights->end(), w.begin(), w.end());
      Var o = affine(t, att, p[idx(pre + "Wo")], p[idx(pre + "bo")]);
      if (drop > 0) o = dropout(t, o, drop, *rng);
      h = add(t, h, o);
      Var b2 = layer_norm(t, h, p[idx(pre + "ln2.g")], p[idx(pre + "ln2.b")]);
      Var ff = affine(t, relu(t, affine(t, b2, p[idx(pre + "W1")], p[idx(pre + "b1")])), p[idx(pre + "W2")],
                      p[idx(pre + "b2")]);
      if (drop > 0) ff = dropout(t, ff, drop, *rng);
      h = add(t, h, ff);
    }
    return layer_norm(t, h, p[idx("final_ln.g")], p[idx("final_ln.b")]);
  }

 private:
  std::size_t idx(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("no parameter " + name);
    return it->second;
  }

  void add_param(std::string name, Matrix v) {
    index_[name] = params_.size();
    params_.push_back({std::move(name), std::move(v)});
  }

  void init_rnn(Rng& rng) {
    const auto H = static_cast<Eigen::Index>(cfg_.rnn.nodes);
    const Eigen::Index gates = cfg_.arch == Arch::GRU ? 3 : 4;
    for (std::size_t l = 0; l < cfg_.rnn.layers; ++l) {
      const auto in = l == 0 ? static_cast<Eigen::Index>(cfg_.n_features) : H;
      const std::string pre = "rnn" + std::to_string(l) + ".";
      add_param(pre + "Wx", glorot(in, gates * H, rng));
      add_param(pre + "Wh", glorot(H, gates * H, rng));
      Matrix bx = Matrix::Zero(1, gates * H);
      if (cfg_.arch == Arch::LSTM) bx.middleCols(H, H).setOnes();  // forget gate
      add_param(pre + "bx", std::move(bx));
      if (cfg_.arch == Arch::GRU) add_param(pre + "bh", Matrix::Zero(1, gates * H));
    }
    add_param("out.W", glorot(H, static_cast<Eigen::Index>(cfg_.m_fwd), rng));
    add_param("out.b", Matrix::Zero(1, static_cast<Eigen::Index>(cfg_.m_fwd)));
  }

  void init_transformer(Rng& rng) {
    const auto& c = cfg_.transformer;
    const auto d = static_cast<Eigen::Index>(c.heads * c.head_size);
    const auto F = static_cast<Eigen::Index>(cfg_.n_features);
    const auto ff = static_cast<Eigen::Index>(c.ff_dim);
    add_param("in.W", glorot(F, d, rng));
    add_param("in.b", Matrix::Zero(1, d));
    for (std::size_t k = 0; k < c.blocks; ++k) {
      const std::string pre = "block" + std::to_string(k) + ".";
      add_param(pre + "ln1.g", Matrix::Ones(1, d));
      add_param(pre + "ln1.b", Matrix::Zero(1, d));
      for (const char* w : {"q", "k", "v", "o"}) {
        add_param(pre + "W" + w, glorot(d, d, rng));
        add_param(pre + "b" + w, Matrix::Zero(1, d));
      }
      add_param(pre + "ln2.g", Matrix::Ones(1, d));
      add_param(pre + "ln2.b", Matrix::Zero(1, d));
      add_param(pre + "W1", glorot(d, ff, rng));
      add_param(pre + "b1", Matrix::Zero(1, ff));
      add_param(pre + "W2", glorot(ff, d, rng));
      add_param(pre + "b2", Matrix::Zero(1, d));
    }
    add_param("final_ln.g", Matrix::Ones(1, d));
    add_param("final_ln.b", Matrix::Zero(1, d));
    const auto mlp = static_cast<Eigen::Index>(c.mlp_units);
    add_param("mlp.W", glorot(d, mlp, rng));
    add_param("mlp.b", Matrix::Zero(1, mlp));
    add_param("out.W", glorot(mlp, static_cast<Eigen::Index>(cfg_.m_fwd), rng));
    add_param("out.b", Matrix::Zero(1, static_cast<Eigen::Index>(cfg_.m_fwd)));
  }

  Var forward_rnn(Tape& t, const std::vector<Var>& p, const Matrix& x, Mode mode, Rng* rng) const {
    const Eigen::Index B = x.rows(), F = static_cast<Eigen::Index>(cfg_.n_features);
    const auto H = static_cast<Eigen::Index>(cfg_.rnn.nodes);
    const bool gru = cfg_.arch == Arch::GRU;
    std::vector<Var> seq;
    for (std::size_t s = 0; s < cfg_.n_back; ++s)
      seq.push_back(t.constant(x.middleCols(static_cast<Eigen::Index>(s) * F, F)));
    for (std::size_t l = 0; l < cfg_.rnn.layers; ++l) {
      const std::string pre = "rnn" + std::to_string(l) + ".";
      if (l > 0 && mode == Mode::Train && cfg_.rnn.dropout > 0)
        for (auto& v : seq) v = dropout(t, v, cfg_.rnn.dropout, *rng);
      const Var Wx = p[idx(pre + "Wx")], Wh = p[idx(pre + "Wh")], bx = p[idx(pre + "bx")];
      Var h = t.constant(Matrix::Zero(B, H));
      Var c = t.constant(Matrix::Zero(B, H));
      std::vector<Var> out;
      for (Var xt : seq) {
        Var gx = affine(t, xt, Wx, bx);
        if (gru) {
          Var gh = affine(t, h, Wh, p[idx(pre + "bh")]);
          Var r = sigmoid(t, add(t, slice_cols(t, gx, 0, H), slice_cols(t, gh, 0, H)));
          Var z = sigmoid(t, add(t, slice_cols(t, gx, H, H), slice_cols(t, gh, H, H)));
          Var n = tanh(t, add(t, slice_cols(t, gx, 2 * H, H), mul(t, r, slice_cols(t, gh, 2 * H, H))));
          h = add(t, mul(t, one_minus(t, z), n), mul(t, z, h));
        } else {
          Var g = add(t, gx, matmul(t, h, Wh));
          Var i = sigmoid(t, slice_cols(t, g, 0, H));
          Var f = sigmoid(t, slice_cols(t, g, H, H));
          Var u = tanh(t, slice_cols(t, g, 2 * H, H));
          Var o = sigmoid(t, slice_cols(t, g, 3 * H, H));
          c = add(t, mul(t, f, c), mul(t, i, u));
          h = mul(t, o, tanh(t, c));
        }
        out.push_back(h);
      }
      seq = std::move(out);
    }
    Var last = seq.back();
    if (mode == Mode::Train && cfg_.rnn.dropout > 0) last = dropout(t, last, cfg_.rnn.dropout, *rng);
    return tanh(t, affine(t, last, p[idx("out.W")], p[idx("out.b")]));
  }

  Var forward_transformer(Tape& t, const std::vector<Var>& p, const Matrix& x, Mode mode, Rng* rng) const {
    const Eigen::Index B = x.rows(), n = static_cast<Eigen::Index>(cfg_.n_back);
    Var enc = encode(t, p, x, mode, rng);
    Var pooled = mean_pool(t, enc, B, n);
    Var hidden = relu(t, affine(t, pooled, p[idx("mlp.W")], p[idx("mlp.b")]));
    if (mode == Mode::Train && cfg_.transformer.dropout > 0)
      hidden = dropout(t, hidden, cfg_.transformer.dropout, *rng);
    return tanh(t, affine(t, hidden, p[idx("out.W")], p[idx("out.b")]));
  }

  ModelConfig cfg_;
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace vmas::nn
