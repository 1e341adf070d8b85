#pragma once

#include "phmb/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace phmb {

/// Default relative singular-value threshold for rank decisions.
inline constexpr double kRankTol = 1e-10;

struct RankInfo {
  int rank = 0;
  double sigma_max = 0.0;
  /// Smallest retained singular value over the largest discarded one
  /// (infinity when nothing is discarded, zero when nothing is retained).
  double gap = std::numeric_limits<double>::infinity();
};

inline RankInfo rank_info(const Mat& m, double rel_tol = kRankTol) {
  RankInfo info;
  if (m.size() == 0) return info;
  Eigen::JacobiSVD<Mat> svd(m);
  const Vec& s = svd.singularValues();
  info.sigma_max = s.size() ? s(0) : 0.0;
  if (info.sigma_max == 0.0) {
    info.gap = 0.0;
    return info;
  }
  const double thresh = rel_tol * info.sigma_max;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > thresh) ++info.rank;
  }
  if (info.rank < s.size()) {
    const double dropped = s(info.rank);
    info.gap = dropped > 0.0 ? s(info.rank - 1) / dropped : std::numeric_limits<double>::infinity();
  }
  return info;
}

inline int numerical_rank(const Mat& m, double rel_tol = kRankTol) { return rank_info(m, rel_tol).rank; }

inline double smallest_singular_value(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

/// Row and column permutations selecting an invertible leading block.
struct Pivots {
  Eigen::VectorXi rows;
  Eigen::VectorXi cols;
  int rank = 0;
};

/// Kernel basis J = Q [-E11^{-1} E12; I] built from a pivoted partition of E.
/// Reusing the same Pivots for nearby inputs gives a continuously varying basis.
struct KernelBasis {
  Mat basis;
  Pivots pivots;
};

inline Mat kernel_from_pivots(const Mat& e, const Pivots& piv) {
  const Eigen::Index n = e.cols();
  const int r = piv.rank;
  Mat permuted(r, n);
  for (int i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) permuted(i, j) = e(piv.rows(i), piv.cols(j));
  }
  Mat jp = Mat::Zero(n, n - r);
  if (r > 0) {
    const Mat e11 = permuted.leftCols(r);
    const Mat e12 = permuted.rightCols(n - r);
    jp.topRows(r) = -e11.fullPivLu().solve(e12);
  }
  jp.bottomRows(n - r).setIdentity();
  Mat j(n, n - r);
  for (Eigen::Index k = 0; k < n; ++k) j.row(piv.cols(k)) = jp.row(k);
  return j;
}

/// Continuous kernel basis of E with expected numerical rank r.
inline KernelBasis continuous_kernel_basis(const Mat& e, int r, double tol = kRankTol) {
  const int actual = numerical_rank(e, tol);
  if (actual != r) {
    throw RankError("kernel basis: expected rank " + std::to_string(r) + ", numerical rank is " +
                    std::to_string(actual));
  }
  KernelBasis out;
  out.pivots.rank = r;
  if (e.rows() == 0 || r == 0) {
    out.pivots.rows = Eigen::VectorXi::LinSpaced(e.rows(), 0, static_cast<int>(e.rows()) - 1);
    out.pivots.cols = Eigen::VectorXi::LinSpaced(e.cols(), 0, static_cast<int>(e.cols()) - 1);
  } else {
    Eigen::FullPivLU<Mat> lu(e);
    const Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> p_inv = lu.permutationP().inverse();
    out.pivots.rows = p_inv.indices();
    out.pivots.cols = lu.permutationQ().indices();
  }
  out.basis = kernel_from_pivots(e, out.pivots);
  return out;
}

/// Moore-Penrose pseudo-inverse with a relative singular-value cutoff.
inline Mat pseudo_inverse(const Mat& m, double rel_tol = kRankTol) {
  if (m.size() == 0) return Mat::Zero(m.cols(), m.rows());
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& s = svd.singularValues();
  const double thresh = rel_tol * (s.size() ? s(0) : 0.0);
  Vec inv = Vec::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > thresh && s(i) > 0.0) inv(i) = 1.0 / s(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

/// Orthonormal basis of the kernel of m (columns), via SVD.
inline Mat orthonormal_kernel(const Mat& m, double rel_tol = kRankTol) {
  const Eigen::Index n = m.cols();
  if (m.rows() == 0) return Mat::Identity(n, n);
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeFullV);
  const int r = numerical_rank(m, rel_tol);
  return svd.matrixV().rightCols(n - r);
}

inline double fd_step(double x, double rel = 1e-6) { return rel * (1.0 + std::abs(x)); }

/// Central-difference gradient of a scalar function.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double rel = 1e-6) {
  Vec g(x.size());
  Vec xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = fd_step(x(i), rel);
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Central-difference Jacobian of a vector function.
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double rel = 1e-6) {
  const Vec f0 = f(x);
  Mat jac(f0.size(), x.size());
  Vec xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = fd_step(x(i), rel);
    xp(i) = x(i) + h;
    const Vec fp = f(xp);
    xp(i) = x(i) - h;
    const Vec fm = f(xp);
    xp(i) = x(i);
    jac.col(i) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

/// Cross-product matrix: skew(a) * b == a x b.
inline Mat skew3(const Vec& a) {
  Mat s(3, 3);
  s << 0.0, -a(2), a(1), a(2), 0.0, -a(0), -a(1), a(0), 0.0;
  return s;
}

inline Mat block_diag(const Mat& a, const Mat& b) {
  Mat out = Mat::Zero(a.rows() + b.rows(), a.cols() + b.cols());
  out.topLeftCorner(a.rows(), a.cols()) = a;
  out.bottomRightCorner(b.rows(), b.cols()) = b;
  return out;
}

inline Vec concat(const Vec& a, const Vec& b) {
  Vec out(a.size() + b.size());
  out << a, b;
  return out;
}

inline Mat vstack(const Mat& a, const Mat& b) {
  if (a.rows() == 0) return b;
  if (b.rows() == 0) return a;
  Mat out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

}  // namespace phmb
