#pragma once

// Independent reference computations shared by the unit tests and the acceptance
// suite. None of these call the routine they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>

#include "vmas/classify.hpp"
#include "vmas/nn/train.hpp"

namespace oracle {

/// Gaussian log-likelihood of binned data written out term by term.
inline double loglik(const std::map<vmas::classify::Bin, std::size_t>& bins, double mu, double sigma) {
  double ll = 0;
  for (auto [d, c] : bins) {
    const double pdf =
        std::exp(-(static_cast<double>(d) - mu) * (static_cast<double>(d) - mu) / (2 * sigma * sigma)) /
        (sigma * std::sqrt(2 * M_PI));
    ll += static_cast<double>(c) * std::log(pdf);
  }
  return ll;
}

/// Sigma maximizing the log-likelihood for fixed mu: coarse log-grid, then golden section.
inline double sigma_by_search(const std::map<vmas::classify::Bin, std::size_t>& bins, double mu) {
  double best = 1e-3, best_ll = -INFINITY;
  for (double s = 1e-3; s < 1e4; s *= 1.01) {
    const double ll = loglik(bins, mu, s);
    if (ll > best_ll) best_ll = ll, best = s;
  }
  double lo = best / 1.02, hi = best * 1.02;
  const double phi = (std::sqrt(5.0) - 1) / 2;
  for (int it = 0; it < 200; ++it) {
    const double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
    if (loglik(bins, mu, a) > loglik(bins, mu, b))
      hi = b;
    else
      lo = a;
  }
  return 0.5 * (lo + hi);
}

/// Counts every start whose n inputs and m targets fit in len rows.
inline std::size_t enumerate_windows(std::size_t len, std::size_t n, std::size_t m) {
  std::size_t count = 0;
  for (std::size_t start = 0; start < len; ++start) {
    bool fits = true;
    for (std::size_t o = 0; o < n + m; ++o) fits &= start + o < len;
    count += fits;
  }
  return count;
}

inline vmas::nn::Matrix random_input(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  vmas::nn::Rng rng(seed);
  vmas::nn::Matrix x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = 2.0 * vmas::nn::uniform01(rng) - 1.0;
  return x;
}

/// Smooth scalar of the model output; central differences on it are the reference.
inline double weighted_output(const vmas::nn::Model& m, const vmas::nn::Matrix& x, const vmas::nn::Matrix& w) {
  return m.predict(x).cwiseProduct(w).sum();
}

/// Worst relative disagreement between tape gradients and central differences
/// (h = 1e-5) over every parameter entry.
inline double max_relative_gradient_error(vmas::nn::Model m, const vmas::nn::Matrix& x) {
  using namespace vmas::nn;
  const Matrix w = random_input(x.rows(), static_cast<Eigen::Index>(m.config().m_fwd), 99);
  Tape t;
  auto f = m.forward(t, x, Mode::Infer);
  t.backward(weighted_sum(t, f.output, w));
  const auto analytic = parameter_grads(t, f, m);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t p = 0; p < m.params().size(); ++p)
    for (Eigen::Index i = 0; i < m.params()[p].value.size(); ++i) {
      double& v = m.params()[p].value(i);
      const double orig = v;
      v = orig + h;
      const double up = weighted_output(m, x, w);
      v = orig - h;
      const double down = weighted_output(m, x, w);
      v = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[p](i);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  return worst;
}

/// Toy-width configurations used for gradient checks.
inline vmas::nn::ModelConfig toy(vmas::nn::Arch arch) {
  vmas::nn::ModelConfig c;
  c.arch = arch;
  c.n_back = 3;
  c.m_fwd = 2;
  c.rnn = {4, 2, 0.0};
  c.transformer = {2, 2, 8, 1, 6, 0.0, true};
  c.seed = 7;
  return c;
}

}  // namespace oracle
