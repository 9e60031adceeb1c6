#pragma once

// Reverse-mode automatic differentiation over dense double matrices. Every op
// appends a node holding its value and a closure that pushes the node's gradient
// to its inputs; `backward` replays the closures in reverse order.

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace vmas::nn {

using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Uniform double in [0,1) with a fixed bit recipe, so results do not depend on the
/// standard library's distribution implementation.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad)>;

  Var constant(Matrix v) { return push(std::move(v), false, {}); }
  Var variable(Matrix v) { return push(std::move(v), true, {}); }

  /// Appends an op node; it needs a gradient when any input does.
  Var op(Matrix value, std::initializer_list<Var> inputs, Backward back) {
    bool needs = false;
    for (Var v : inputs) needs |= nodes_[v.id].needs_grad;
    return push(std::move(value), needs, needs ? std::move(back) : Backward{});
  }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last `backward` root; empty when none reached this node.
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <class Expr>
  void accumulate(Var v, const Expr& g) {
    auto& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Adds `g` into columns [start, start + g.cols()) of v's gradient.
  void accumulate_cols(Var v, Eigen::Index start, const Matrix& g) {
    auto& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.grad.middleCols(start, g.cols()) += g;
  }

  /// Seeds the root with ones and propagates gradients to every reachable node.
  void backward(Var root) {
    for (auto& n : nodes_) n.grad.resize(0, 0);
    auto& r = nodes_[root.id];
    r.grad = Matrix::Ones(r.value.rows(), r.value.cols());
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.back && n.grad.size() != 0) n.back(*this, n.grad);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward back;
  };

  Var push(Matrix v, bool needs, Backward back) {
    nodes_.push_back({std::move(v), Matrix(), needs, std::move(back)});
    return {nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

class ShapeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require(bool ok, const char* what) {
  if (!ok) throw ShapeMismatch(std::string("ShapeMismatch: ") + what);
}

inline Var matmul(Tape& t, Var a, Var b) {
  require(t.value(a).cols() == t.value(b).rows(), "matmul");
  return t.op(t.value(a) * t.value(b), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g * t.value(b).transpose());
    t.accumulate(b, t.value(a).transpose() * g);
  });
}

inline Var add(Tape& t, Var a, Var b) {
  require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(), "add");
  return t.op(t.value(a) + t.value(b), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(), "sub");
  return t.op(t.value(a) - t.value(b), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

/// Elementwise product.
inline Var mul(Tape& t, Var a, Var b) {
  require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(), "mul");
  return t.op(t.value(a).cwiseProduct(t.value(b)), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(t.value(b)));
    t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

/// Adds a 1 x c bias row to every row of a.
inline Var add_row(Tape& t, Var a, Var bias) {
  require(t.value(bias).rows() == 1 && t.value(bias).cols() == t.value(a).cols(), "add_row");
  Matrix v = t.value(a).rowwise() + t.value(bias).row(0);
  return t.op(std::move(v), {a, bias}, [a, bias](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(bias, g.colwise().sum());
  });
}

/// x W + b.
inline Var affine(Tape& t, Var x, Var w, Var b) { return add_row(t, matmul(t, x, w), b); }

inline Var one_minus(Tape& t, Var a) {
  return t.op((1.0 - t.value(a).array()).matrix(), {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, -g); });
}

inline Var sigmoid(Tape& t, Var a) {
  Matrix y = (1.0 / (1.0 + (-t.value(a).array()).exp())).matrix();
  const std::size_t out = t.size();
  return t.op(std::move(y), {a}, [a, out](Tape& t, const Matrix& g) {
    const auto& y = t.value({out});
    t.accumulate(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

inline Var tanh(Tape& t, Var a) {
  Matrix y = t.value(a).array().tanh().matrix();
  const std::size_t out = t.size();
  return t.op(std::move(y), {a}, [a, out](Tape& t, const Matrix& g) {
    const auto& y = t.value({out});
    t.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

inline Var relu(Tape& t, Var a) {
  return t.op(t.value(a).cwiseMax(0.0), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (t.value(a).array() > 0.0).select(g.array(), 0.0).matrix());
  });
}

inline Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && start + count <= t.value(a).cols(), "slice_cols");
  return t.op(t.value(a).middleCols(start, count), {a},
              [a, start](Tape& t, const Matrix& g) { t.accumulate_cols(a, start, g); });
}

/// Inverted dropout: keeps each entry with probability 1-p and rescales by 1/(1-p).
inline Var dropout(Tape& t, Var a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  const auto& x = t.value(a);
  Matrix mask(x.rows(), x.cols());
  const double keep = 1.0 - p;
  for (Eigen::Index j = 0; j < mask.cols(); ++j)
    for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = uniform01(rng) < keep ? 1.0 / keep : 0.0;
  Matrix y = x.cwiseProduct(mask);
  return t.op(std::move(y), {a}, [a, mask = std::move(mask)](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(mask));
  });
}

/// Row-wise layer normalisation with learned gain and bias (1 x d each).
inline Var layer_norm(Tape& t, Var a, Var gain, Var bias, double eps = 1e-5) {
  const auto& x = t.value(a);
  const Eigen::Index d = x.cols();
  require(t.value(gain).cols() == d && t.value(bias).cols() == d, "layer_norm");
  Matrix xhat(x.rows(), d);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  Matrix y = (xhat.array().rowwise() * t.value(gain).row(0).array()).matrix();
  y.rowwise() += t.value(bias).row(0);
  return t.op(std::move(y), {a, gain, bias},
              [a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Matrix& g) {
                t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
                t.accumulate(bias, g.colwise().sum());
                if (!t.needs_grad(a)) return;
                Matrix dxhat = (g.array().rowwise() * t.value(gain).row(0).array()).matrix();
                Matrix dx(g.rows(), g.cols());
                const double d = static_cast<double>(g.cols());
                for (Eigen::Index i = 0; i < g.rows(); ++i) {
                  const double m1 = dxhat.row(i).sum() / d;
                  const double m2 = dxhat.row(i).dot(xhat.row(i)) / d;
                  dx.row(i) = inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
                }
                t.accumulate(a, dx);
              });
}

/// Scaled dot-product attention over `batch` stacked sequences of length `seq`.
/// q, k, v are (batch*seq) x (heads*head_size); rows of one sequence are contiguous.
/// When `weights` is given it receives the batch*heads attention matrices (seq x seq).
inline Var attention(Tape& t, Var q, Var k, Var v, Eigen::Index batch, Eigen::Index seq, Eigen::Index heads,
                     std::vector<Matrix>* weights = nullptr) {
  const auto& Q = t.value(q);
  const auto& K = t.value(k);
  const auto& V = t.value(v);
  require(Q.rows() == batch * seq && K.rows() == Q.rows() && V.rows() == Q.rows(), "attention rows");
  require(Q.cols() == K.cols() && V.cols() == Q.cols() && Q.cols() % heads == 0, "attention width");
  const Eigen::Index hs = Q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
  std::vector<Matrix> A;
  A.reserve(static_cast<std::size_t>(batch * heads));
  Matrix out(Q.rows(), Q.cols());
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto Qb = Q.block(b * seq, h * hs, seq, hs);
      const auto Kb = K.block(b * seq, h * hs, seq, hs);
      Matrix s = (Qb * Kb.transpose()) * scale;
      for (Eigen::Index i = 0; i < seq; ++i) {
        const double mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
      }
      out.block(b * seq, h * hs, seq, hs) = s * V.block(b * seq, h * hs, seq, hs);
      A.push_back(std::move(s));
    }
  if (weights) *weights = A;
  return t.op(std::move(out), {q, k, v},
              [q, k, v, batch, seq, heads, hs, scale, A = std::move(A)](Tape& t, const Matrix& g) {
                const auto& Q = t.value(q);
                const auto& K = t.value(k);
                const auto& V = t.value(v);
                Matrix dQ = Matrix::Zero(Q.rows(), Q.cols()), dK = dQ, dV = dQ;
                for (Eigen::Index b = 0; b < batch; ++b)
                  for (Eigen::Index h = 0; h < heads; ++h) {
                    const auto& a = A[static_cast<std::size_t>(b * heads + h)];
                    const auto gO = g.block(b * seq, h * hs, seq, hs);
                    dV.block(b * seq, h * hs, seq, hs) = a.transpose() * gO;
                    Matrix dA = gO * V.block(b * seq, h * hs, seq, hs).transpose();
                    Matrix dS = a.cwiseProduct(dA);
                    const Eigen::VectorXd rs = dS.rowwise().sum();
                    dS -= (a.array().colwise() * rs.array()).matrix();
                    dQ.block(b * seq, h * hs, seq, hs) = dS * K.block(b * seq, h * hs, seq, hs) * scale;
                    dK.block(b * seq, h * hs, seq, hs) = dS.transpose() * Q.block(b * seq, h * hs, seq, hs) * scale;
                  }
                t.accumulate(q, dQ);
                t.accumulate(k, dK);
                t.accumulate(v, dV);
              });
}

/// Mean over the `seq` consecutive rows of each of `batch` groups.
inline Var mean_pool(Tape& t, Var a, Eigen::Index batch, Eigen::Index seq) {
  const auto& x = t.value(a);
  require(x.rows() == batch * seq, "mean_pool");
  Matrix y(batch, x.cols());
  for (Eigen::Index b = 0; b < batch; ++b) y.row(b) = x.middleRows(b * seq, seq).colwise().mean();
  return t.op(std::move(y), {a}, [a, batch, seq](Tape& t, const Matrix& g) {
    Matrix dx(batch * seq, g.cols());
    for (Eigen::Index b = 0; b < batch; ++b) dx.middleRows(b * seq, seq).rowwise() = g.row(b) / double(seq);
    t.accumulate(a, dx);
  });
}

/// Mean absolute error against a constant target; the subgradient at a zero residual is 0.
inline Var mae(Tape& t, Var pred, const Matrix& target) {
  const auto& p = t.value(pred);
  require(p.rows() == target.rows() && p.cols() == target.cols(), "mae");
  Matrix r = p - target;
  Matrix v(1, 1);
  v(0, 0) = r.cwiseAbs().mean();
  const double n = static_cast<double>(r.size());
  Matrix sign = r.unaryExpr([](double x) { return static_cast<double>((x > 0) - (x < 0)); });
  return t.op(std::move(v), {pred}, [pred, n, sign = std::move(sign)](Tape& t, const Matrix& g) {
    t.accumulate(pred, sign * (g(0, 0) / n));
  });
}

/// sum(W .* a), a smooth scalar used for gradient checks.
inline Var weighted_sum(Tape& t, Var a, const Matrix& w) {
  require(t.value(a).rows() == w.rows() && t.value(a).cols() == w.cols(), "weighted_sum");
  Matrix v(1, 1);
  v(0, 0) = t.value(a).cwiseProduct(w).sum();
  return t.op(std::move(v), {a}, [a, w](Tape& t, const Matrix& g) { t.accumulate(a, w * g(0, 0)); });
}

}  // namespace vmas::nn
