#pragma once

// Attack evaluation metrics over classifier features:
// top-k accuracy, nearest same-class feature distance, Frechet distance
// between Gaussian fits, and k-NN manifold precision/recall/density/coverage.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ifgmi/core/tensor.hpp"

namespace ifgmi::metrics {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct MetricsReport {
  double acc1 = 0, acc5 = 0;
  double delta_eval = 0, delta_indep = 0;
  double fid = 0;
  double precision = 0, recall = 0, density = 0, coverage = 0;
};

/// Rows of a [N, D] tensor as an N x D double matrix.
template <class T>
Matrix to_matrix(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("to_matrix: expected [N, D], got " + shape_str(x.shape()));
  Matrix m(x.dim(0), x.dim(1));
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t j = 0; j < x.dim(1); ++j) m(i, j) = static_cast<double>(x[i * x.dim(1) + j]);
  return m;
}

// ---------------------------------------------------------------------------
// Top-k accuracy

/// Fraction of rows whose target is among the k largest logits. Ties are
/// resolved in favour of lower class indices.
inline double acc_at_k(const Matrix& logits, const std::vector<int>& targets, std::size_t k) {
  const auto classes = static_cast<std::size_t>(logits.cols());
  if (k == 0 || k > classes)
    throw std::invalid_argument("acc_at_k: k=" + std::to_string(k) + " invalid for " + std::to_string(classes) + " classes");
  if (static_cast<std::size_t>(logits.rows()) != targets.size())
    throw std::invalid_argument("acc_at_k: logits/targets length mismatch");
  if (targets.empty()) return 0;
  std::size_t hit = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    std::size_t rank = 0;  // classes strictly ahead of the target
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
      if (j != t && (logits(i, j) > logits(i, t) || (logits(i, j) == logits(i, t) && j < t))) ++rank;
    hit += rank < k;
  }
  return static_cast<double>(hit) / static_cast<double>(targets.size());
}

// ---------------------------------------------------------------------------
// Nearest same-class feature distance

enum class DeltaMode {
  per_sample,  // mean over reconstructions of the nearest same-class distance
  per_class,   // mean over classes of the per-class mean of those distances
};

inline double feature_distance(const Matrix& recon, const std::vector<int>& recon_classes, const Matrix& priv,
                               const std::vector<int>& priv_labels, DeltaMode mode = DeltaMode::per_sample) {
  if (static_cast<std::size_t>(recon.rows()) != recon_classes.size() ||
      static_cast<std::size_t>(priv.rows()) != priv_labels.size())
    throw std::invalid_argument("feature_distance: features/labels length mismatch");
  if (recon.cols() != priv.cols()) throw std::invalid_argument("feature_distance: feature dimensions differ");
  std::map<int, std::vector<Eigen::Index>> by_class;
  for (Eigen::Index i = 0; i < priv.rows(); ++i) by_class[priv_labels[static_cast<std::size_t>(i)]].push_back(i);

  std::map<int, std::pair<double, std::size_t>> per_class;
  double total = 0;
  for (Eigen::Index r = 0; r < recon.rows(); ++r) {
    const int c = recon_classes[static_cast<std::size_t>(r)];
    auto it = by_class.find(c);
    if (it == by_class.end())
      throw std::invalid_argument("feature_distance: target class " + std::to_string(c) + " absent from private set");
    double best = std::numeric_limits<double>::infinity();
    for (auto p : it->second) best = std::min(best, (recon.row(r) - priv.row(p)).norm());
    total += best;
    per_class[c].first += best;
    per_class[c].second += 1;
  }
  if (recon.rows() == 0) return 0;
  if (mode == DeltaMode::per_sample) return total / static_cast<double>(recon.rows());
  double acc = 0;
  for (const auto& [c, v] : per_class) acc += v.first / static_cast<double>(v.second);
  return acc / static_cast<double>(per_class.size());
}

// ---------------------------------------------------------------------------
// Frechet distance

struct Gaussian {
  Vector mean;
  Matrix cov;
};

/// Sample mean and unbiased covariance.
inline Gaussian fit_gaussian(const Matrix& x) {
  if (x.rows() < 2) throw std::invalid_argument("fid: need at least 2 samples, got " + std::to_string(x.rows()));
  Gaussian g;
  g.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - g.mean.transpose();
  g.cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
  return g;
}

/// Symmetric PSD square root with negative eigenvalues clamped to zero.
inline Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  const Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// ||mu_a - mu_b||^2 + Tr(Ca + Cb - 2 (Ca Cb)^{1/2}); the trace of the
/// product root is taken through the symmetric form Ca^{1/2} Cb Ca^{1/2}.
inline double fid_from_moments(const Gaussian& a, const Gaussian& b, double reg = 1e-6) {
  if (a.mean.size() != b.mean.size()) throw std::invalid_argument("fid: feature dimensions differ");
  const auto d = a.mean.size();
  const Matrix ca = a.cov + reg * Matrix::Identity(d, d);
  const Matrix cb = b.cov + reg * Matrix::Identity(d, d);
  const Matrix sa = psd_sqrt(ca);
  const Matrix inner = sa * cb * sa;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (a.mean - b.mean).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

inline double fid(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("fid: feature dimensions differ");
  return fid_from_moments(fit_gaussian(a), fit_gaussian(b));
}

// ---------------------------------------------------------------------------
// Precision / recall / density / coverage

struct Prdc {
  double precision = 0, recall = 0, density = 0, coverage = 0;
};

inline Matrix pairwise_distances(const Matrix& a, const Matrix& b) {
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).norm();
  return d;
}

/// Distance from each row to its k-th nearest other row of the same set.
inline Vector knn_radii(const Matrix& x, std::size_t k) {
  const Matrix d = pairwise_distances(x, x);
  Vector r(x.rows());
  std::vector<double> row;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    row.clear();
    for (Eigen::Index j = 0; j < x.rows(); ++j)
      if (j != i) row.push_back(d(i, j));
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k - 1), row.end());
    r(i) = row[k - 1];
  }
  return r;
}

/// Balls are closed: a point lies in a ball when its distance is <= the
/// ball's k-NN radius.
inline Prdc prdc(const Matrix& real, const Matrix& fake, std::size_t k = 3) {
  if (real.cols() != fake.cols()) throw std::invalid_argument("prdc: feature dimensions differ");
  if (k == 0 || k >= static_cast<std::size_t>(real.rows()) || k >= static_cast<std::size_t>(fake.rows()))
    throw std::invalid_argument("prdc: k=" + std::to_string(k) + " must be below both set sizes (" +
                                std::to_string(real.rows()) + ", " + std::to_string(fake.rows()) + ")");
  const Vector real_r = knn_radii(real, k), fake_r = knn_radii(fake, k);
  const Matrix d = pairwise_distances(real, fake);  // real x fake
  Prdc out;
  std::size_t prec = 0, rec = 0, cov = 0;
  double dens = 0;
  for (Eigen::Index j = 0; j < fake.rows(); ++j) {
    bool inside = false;
    for (Eigen::Index i = 0; i < real.rows(); ++i)
      if (d(i, j) <= real_r(i)) {
        inside = true;
        dens += 1;
      }
    prec += inside;
  }
  for (Eigen::Index i = 0; i < real.rows(); ++i) {
    bool covered = false, recalled = false;
    for (Eigen::Index j = 0; j < fake.rows(); ++j) {
      covered = covered || d(i, j) <= real_r(i);
      recalled = recalled || d(i, j) <= fake_r(j);
    }
    cov += covered;
    rec += recalled;
  }
  out.precision = static_cast<double>(prec) / static_cast<double>(fake.rows());
  out.recall = static_cast<double>(rec) / static_cast<double>(real.rows());
  out.density = dens / (static_cast<double>(k) * static_cast<double>(fake.rows()));
  out.coverage = static_cast<double>(cov) / static_cast<double>(real.rows());
  return out;
}

}  // namespace ifgmi::metrics
