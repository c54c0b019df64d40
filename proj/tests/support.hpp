#pragma once

// Seeded generators and small oracles shared by the test suites.

#include "her/core_model.hpp"
#include "her/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace her::test {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  Index integer(Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng_); }
  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[static_cast<std::size_t>(integer(0, static_cast<Index>(v.size()) - 1))];
  }

  Eigen::MatrixXd matrix(Index rows, Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = normal();
    return m;
  }

  // n labels drawn from c arbitrary ids, every id used at least once.
  std::vector<IdentityId> labels(Index n, Index c) {
    std::vector<IdentityId> ids;
    for (Index k = 0; k < c; ++k) ids.push_back(static_cast<IdentityId>(1000 + 7 * k + integer(0, 6)));
    std::vector<IdentityId> out;
    for (Index i = 0; i < n; ++i)
      out.push_back(i < c ? ids[static_cast<std::size_t>(i)] : pick(ids));
    std::shuffle(out.begin(), out.end(), rng_);
    return out;
  }

  FeatureMatrix features(Index d, Index n, Index c) {
    FeatureMatrix f;
    f.values = matrix(d, n);
    f.labels = labels(n, c);
    for (Index i = 0; i < n; ++i) f.views.push_back(integer(0, 1) ? View::gallery : View::probe);
    return f;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(b.norm(), 1e-300);
  return (a - b).norm() / scale;
}

// (X X^T + lambda I)^-1 X Y through the thin SVD of X, an independent route
// to the closed form.
inline Eigen::MatrixXd svd_projection(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                      double lambda) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  const Eigen::VectorXd gain = (s.array() / (s.array().square() + lambda)).matrix();
  return svd.matrixU() * gain.asDiagonal() * svd.matrixV().transpose() * y;
}

// Indicator built entry by entry from the definition.
inline Eigen::MatrixXd indicator_oracle(const std::vector<IdentityId>& labels) {
  std::vector<IdentityId> order;
  for (IdentityId l : labels)
    if (std::find(order.begin(), order.end(), l) == order.end()) order.push_back(l);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Index>(labels.size()),
                                            static_cast<Index>(order.size()));
  for (std::size_t j = 0; j < order.size(); ++j) {
    const auto nj = std::count(labels.begin(), labels.end(), order[j]);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == order[j])
        y(static_cast<Index>(i), static_cast<Index>(j)) = 1.0 / std::sqrt(static_cast<double>(nj));
  }
  return y;
}

// Sort every row, then look up where the first true match lands.
inline std::vector<double> brute_force_cmc(const Eigen::MatrixXd& d, const std::vector<IdentityId>& pl,
                                    const std::vector<IdentityId>& gl) {
  const auto g = static_cast<std::size_t>(d.cols());
  std::vector<double> hits(g, 0.0);
  for (Index i = 0; i < d.rows(); ++i) {
    std::vector<Index> order(g);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Index a, Index b) {
      return d(i, a) < d(i, b) || (d(i, a) == d(i, b) && a < b);
    });
    for (std::size_t pos = 0; pos < g; ++pos)
      if (gl[static_cast<std::size_t>(order[pos])] == pl[static_cast<std::size_t>(i)]) {
        for (std::size_t k = pos; k < g; ++k) hits[k] += 1.0;
        break;
      }
  }
  for (double& h : hits) h /= static_cast<double>(d.rows());
  return hits;
}

template <class F>
ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return static_cast<ErrorCode>(0);
}

}  // namespace her::test
