#pragma once

#include "phmb/core.hpp"
#include "phmb/linalg.hpp"
#include "phmb/sampling.hpp"
#include "phmb/system.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace phmb {

/// Subspace im [K; L] of R^n x R^n (flows over efforts).
struct ImageRep {
  Mat K;
  Mat L;
};

enum class CheckStatus { Pass, Fail, Error };

inline const char* to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::Pass:
      return "pass";
    case CheckStatus::Fail:
      return "fail";
    default:
      return "error";
  }
}

struct CheckResult {
  std::string name;
  CheckStatus status = CheckStatus::Pass;
  /// Largest violation seen (nonnegative); for resistive checks the most negative power, negated.
  double worst = 0.0;
  double tol = 0.0;
  std::optional<Vec> witness;
  std::string detail;
  int samples = 0;

  bool passed() const { return status == CheckStatus::Pass; }
};

struct VerificationReport {
  std::string subject;
  int count = 0;
  std::uint64_t seed = 0;
  std::vector<CheckResult> checks;

  bool overall() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed(); });
  }

  const CheckResult* find(const std::string& name) const {
    for (const auto& c : checks) {
      if (c.name == name) return &c;
    }
    return nullptr;
  }
};

inline std::string format_vector(const Vec& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += format_double(v(i));
  }
  return s;
}

/// key = value lines, one block per check, closing with the overall verdict.
inline std::string format_report(const VerificationReport& r) {
  std::ostringstream os;
  os << "subject = " << r.subject << "\n";
  os << "samples = " << r.count << "\n";
  os << "seed = " << r.seed << "\n";
  for (const auto& c : r.checks) {
    const std::string k = "check." + c.name + ".";
    os << k << "status = " << to_string(c.status) << "\n";
    os << k << "worst = " << format_double(c.worst) << "\n";
    os << k << "tol = " << format_double(c.tol) << "\n";
    os << k << "samples = " << c.samples << "\n";
    if (c.witness) os << k << "witness = " << format_vector(*c.witness) << "\n";
    if (!c.detail.empty()) os << k << "detail = " << c.detail << "\n";
  }
  os << "overall = " << (r.overall() ? "pass" : "fail") << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Dirac structures

/**
 * im [K; L] is Dirac iff it is isotropic (K^T L + L^T K = 0) and has dimension n
 * (rank [K; L] = n).  The isotropy residual is compared against tol * (1 + |K| |L|).
 */
inline CheckResult check_dirac_pointwise(const ImageRep& rep, double tol = 1e-9, double rank_tol = kRankTol) {
  if (rep.K.rows() != rep.L.rows() || rep.K.cols() != rep.L.cols()) {
    throw ShapeError("image representation: K and L must have equal shapes");
  }
  CheckResult res;
  res.name = "dirac";
  res.samples = 1;
  const Eigen::Index n = rep.K.rows();
  const Mat iso = rep.K.transpose() * rep.L + rep.L.transpose() * rep.K;
  const double scale = 1.0 + max_abs(rep.K) * max_abs(rep.L);
  res.tol = tol * scale;
  res.worst = max_abs(iso);
  const Mat stacked = vstack(rep.K, rep.L);
  const RankInfo ri = rank_info(stacked, rank_tol);
  const bool iso_ok = res.worst <= res.tol;
  const bool rank_ok = ri.rank == n;
  res.status = (iso_ok && rank_ok) ? CheckStatus::Pass : CheckStatus::Fail;
  res.detail = "rank=" + std::to_string(ri.rank) + " n=" + std::to_string(n) +
               " isotropy=" + format_double(res.worst);
  return res;
}

/// Block layout sizes of the unconstrained structure: (n_pot, n_kin, n_kin, m).
inline int dirac_dimension(const PhSystem& sys) { return sys.n_pos + 2 * sys.n_vel + sys.n_ports; }

/**
 * [J(zeta, Gamma); I] with flows (zeta', tau_L, omega_R, omega_ext) over efforts
 * (tau_L, omega_L, tau_R, tau_ext):
 *
 *   J = [  0    Z   0   0 ]
 *       [ -Z^T -G  -I  -B ]
 *       [  0    I   0   0 ]
 *       [  0   B^T  0   0 ]
 */
inline ImageRep assemble_unconstrained_dirac(const PhSystem& sys, const Vec& zeta, const Vec& gamma) {
  require_size(zeta, sys.n_pos, "zeta");
  require_size(gamma, sys.n_vel, "gamma");
  check_domain(sys, zeta);
  const int np = sys.n_pos, nv = sys.n_vel, m = sys.n_ports;
  const int nh = np + 2 * nv + m;
  const Mat Z = eval_kinematics(sys, zeta);
  const Mat G = eval_gyroscopic(sys, gamma);
  const Mat B = eval_port_directions(sys, zeta);
  Mat J = Mat::Zero(nh, nh);
  J.block(0, np, np, nv) = Z;
  J.block(np, 0, nv, np) = -Z.transpose();
  J.block(np, np, nv, nv) = -G;
  J.block(np, np + nv, nv, nv) = -Mat::Identity(nv, nv);
  J.block(np, np + 2 * nv, nv, m) = -B;
  J.block(np + nv, np, nv, nv) = Mat::Identity(nv, nv);
  J.block(np + 2 * nv, np, m, nv) = B.transpose();
  return ImageRep{J, Mat::Identity(nh, nh)};
}

/// Constraint rows [0, A(zeta), 0, 0] acting on the effort vector.
inline Mat dirac_constraint_rows(const PhSystem& sys, const Vec& zeta) {
  const Mat A = eval_velocity_constraints(sys, zeta);
  Mat E = Mat::Zero(A.rows(), dirac_dimension(sys));
  E.block(0, sys.n_pos, A.rows(), sys.n_vel) = A;
  return E;
}

/// Pivot choices of the three kernel bases used by the constrained assembly.
struct ConstrainedPivots {
  Pivots p1;
  Pivots p2;
  Pivots p3;
};

namespace detail {

inline Mat kernel_with(const Mat& e, int r, Pivots& piv, bool frozen, double tol) {
  if (frozen) {
    const int actual = numerical_rank(e, tol);
    if (actual != piv.rank) {
      throw RankError("rank changed from " + std::to_string(piv.rank) + " to " + std::to_string(actual) +
                      " under frozen pivots");
    }
    return kernel_from_pivots(e, piv);
  }
  KernelBasis kb = continuous_kernel_basis(e, r, tol);
  piv = kb.pivots;
  return kb.basis;
}

}  // namespace detail

/**
 * Image representation of {(f, e) : E e = 0, exists mu: (f + E^T mu, e) in D}.
 *
 * D(y) = [K J1, E^T; L J1, 0] with im J1 = ker(E L); then im D = im D J3 where
 * im J2 = ker D and im J3 = ker J2^T, which leaves exactly n columns.
 * With frozen = true the pivots in *pivots are reused instead of recomputed.
 */
inline ImageRep assemble_constrained_dirac(const ImageRep& rep, const Mat& E, double tol = kRankTol,
                                           ConstrainedPivots* pivots = nullptr, bool frozen = false) {
  const Eigen::Index n = rep.K.rows();
  if (rep.L.rows() != n || rep.K.cols() != rep.L.cols()) throw ShapeError("image representation shapes differ");
  if (E.cols() != n) throw ShapeError("constraint matrix must have " + std::to_string(n) + " columns");
  ConstrainedPivots local;
  ConstrainedPivots& pv = pivots ? *pivots : local;
  if (frozen && !pivots) throw ShapeError("frozen assembly needs pivots");

  const Mat EL = E * rep.L;
  const int r1 = frozen ? pv.p1.rank : numerical_rank(EL, tol);
  const Mat J1 = detail::kernel_with(EL, r1, pv.p1, frozen, tol);

  const Eigen::Index q = J1.cols() + E.rows();
  Mat D = Mat::Zero(2 * n, q);
  D.topLeftCorner(n, J1.cols()) = rep.K * J1;
  D.bottomLeftCorner(n, J1.cols()) = rep.L * J1;
  D.topRightCorner(n, E.rows()) = E.transpose();

  const int rd = numerical_rank(D, tol);
  if (rd != n) {
    throw RankError("constrained assembly: rank of [K J1, E^T; L J1, 0] is " + std::to_string(rd) +
                    ", expected " + std::to_string(n));
  }
  const Mat J2 = detail::kernel_with(D, static_cast<int>(n), pv.p2, frozen, tol);
  const Mat J2t = J2.transpose();
  const Mat J3 = detail::kernel_with(J2t, static_cast<int>(J2.cols()), pv.p3, frozen, tol);
  const Mat out = D * J3;
  return ImageRep{out.topRows(n), out.bottomRows(n)};
}

/// dim(D cap (R^n x ker E)) = dim [K; L] ker(E L).
inline int constrained_intersection_dim(const ImageRep& rep, const Mat& E, double tol = kRankTol) {
  const Mat N = orthonormal_kernel(E * rep.L, tol);
  if (N.cols() == 0) return 0;
  return numerical_rank(vstack(rep.K, rep.L) * N, tol);
}

namespace detail {

/// Index of the first sample whose value differs from the most frequent one, or -1.
inline int first_outlier(const std::vector<int>& values) {
  std::map<int, int> freq;
  for (int v : values) ++freq[v];
  int mode = values.front();
  int best = 0;
  for (const auto& [v, f] : freq) {
    if (f > best) {
      best = f;
      mode = v;
    }
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] != mode) return static_cast<int>(i);
  }
  return -1;
}

inline std::string int_range(const std::vector<int>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return std::to_string(*lo) + ".." + std::to_string(*hi);
}

}  // namespace detail

/// The intersection dimension must be the same integer at every sample.
inline CheckResult check_dim_constancy(const std::function<ImageRep(const Vec&)>& rep_fn,
                                       const std::function<Mat(const Vec&)>& E_fn, const SampleSet& samples,
                                       double tol = kRankTol) {
  if (samples.points.empty()) throw ShapeError("dimension check needs at least one sample");
  CheckResult res;
  res.name = "dirac_dim_constancy";
  res.samples = static_cast<int>(samples.points.size());
  res.tol = tol;
  std::vector<int> dims;
  dims.reserve(samples.points.size());
  for (const Vec& x : samples.points) dims.push_back(constrained_intersection_dim(rep_fn(x), E_fn(x), tol));
  const int bad = detail::first_outlier(dims);
  if (bad >= 0) {
    res.status = CheckStatus::Fail;
    res.witness = samples.points[bad];
    res.worst = std::abs(dims[bad] - dims[bad == 0 ? 1 : 0]);
    res.detail = "dimension " + std::to_string(dims[bad]) + " at witness, range " + detail::int_range(dims);
  } else {
    res.detail = "dimension " + std::to_string(dims.front());
  }
  return res;
}

// ---------------------------------------------------------------------------
// Lagrangian submanifolds

/**
 * Local test that {(x, grad H(x) + d'(x)^T lambda) : d(x) = 0} is Lagrangian at (z1, z2),
 * z2 = grad H(z1) + d'(z1)^T lambda.
 *
 * Tangent vectors: (v1, M v1) with v1 in ker d'(z1) and M = Hess H - D(z1) zhat, zhat = -lambda,
 * plus (0, d'(z1)^T e_l).  The Hessian is the finite-difference Jacobian of grad_H, so a
 * non-gradient field passed as grad_H fails both the symmetry and the pairing test.
 * H may be empty; when present grad_H is also compared with its finite-difference gradient.
 */
inline CheckResult check_lagrangian_local(const std::function<double(const Vec&)>& H,
                                          const std::function<Vec(const Vec&)>& grad_H,
                                          const std::function<Vec(const Vec&)>& d,
                                          const std::function<Mat(const Vec&)>& d_jac, const Vec& z1,
                                          double tol = 1e-6, const std::optional<Vec>& lambda = std::nullopt,
                                          double rank_tol = kRankTol) {
  const Eigen::Index n = z1.size();
  CheckResult res;
  res.name = "lagrangian_submanifold";
  res.samples = 1;
  const Vec dz = d(z1);
  const Eigen::Index k = dz.size();
  if (max_abs(dz) > tol) {
    throw ConstraintError("d(z1) = 0 violated by " + format_double(max_abs(dz)));
  }
  const Mat dj = d_jac(z1);
  require_shape(dj, k, n, "d'(z1)");
  const RankInfo ri = rank_info(dj, rank_tol);
  if (ri.rank < k) {
    throw RankError("d'(x) does not have full row rank: rank " + std::to_string(ri.rank) + " < " +
                    std::to_string(k));
  }
  Vec zhat = Vec::Zero(k);
  if (lambda) {
    require_size(*lambda, k, "lambda");
    zhat = -*lambda;
  }
  const double fd_rel = 1e-5;
  const Vec g = grad_H(z1);
  require_size(g, n, "grad H");
  const Mat hess = fd_jacobian(grad_H, z1, fd_rel);
  Mat curv = Mat::Zero(n, n);
  if (k > 0) {
    curv = fd_jacobian([&](const Vec& x) -> Vec { return d_jac(x).transpose() * zhat; }, z1, fd_rel);
  }
  const Mat Mzz = hess - curv;
  const double scale = 1.0 + max_abs(Mzz);
  res.tol = tol * scale;

  double grad_err = 0.0;
  if (H) grad_err = max_abs(Vec(g - fd_gradient(H, z1))) / (1.0 + max_abs(g));
  const double asym = max_abs(Mat(hess - hess.transpose()));

  const Mat V1 = continuous_kernel_basis(dj, static_cast<int>(k), rank_tol).basis;
  Mat T = Mat::Zero(2 * n, n);
  T.topLeftCorner(n, V1.cols()) = V1;
  T.bottomLeftCorner(n, V1.cols()) = Mzz * V1;
  T.bottomRightCorner(n, k) = dj.transpose();
  const int tdim = numerical_rank(T, rank_tol);
  const Mat T1 = T.topRows(n);
  const Mat T2 = T.bottomRows(n);
  const double pairing = max_abs(Mat(T1.transpose() * T2 - T2.transpose() * T1));

  res.worst = std::max(pairing, asym);
  const bool ok = pairing <= res.tol && asym <= res.tol && tdim == n && grad_err <= 1e-4;
  res.status = ok ? CheckStatus::Pass : CheckStatus::Fail;
  if (!ok) res.witness = z1;
  res.detail = "pairing=" + format_double(pairing) + " hessian_asymmetry=" + format_double(asym) +
               " tangent_dim=" + std::to_string(tdim) + " gradient_fd_error=" + format_double(grad_err);
  return res;
}

// ---------------------------------------------------------------------------
// Resistive relations

/// omega^T tau_d(zeta, omega) >= -tol at every (zeta, omega) sample.
inline CheckResult check_resistive(const std::function<Vec(const Vec&, const Vec&)>& tau_d,
                                   const std::vector<std::pair<Vec, Vec>>& samples, double tol = 1e-12) {
  CheckResult res;
  res.name = "resistive_relation";
  res.samples = static_cast<int>(samples.size());
  res.tol = tol;
  double min_power = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& [z, w] = samples[i];
    const double p = w.dot(tau_d(z, w));
    if (p < min_power) {
      min_power = p;
      arg = i;
    }
  }
  if (samples.empty()) min_power = 0.0;
  res.worst = std::max(0.0, -min_power);
  res.detail = "min_power=" + format_double(min_power);
  if (min_power < -tol) {
    res.status = CheckStatus::Fail;
    res.witness = concat(samples[arg].first, samples[arg].second);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Whole-system verification

struct VerifyOptions {
  SampleBox pos_box;
  SampleBox vel_box;
  int count = 200;
  std::uint64_t seed = 42;
  double tol = 1e-9;             ///< structural identities (skew, symmetry, isotropy)
  double rank_tol = kRankTol;    ///< relative singular-value threshold
  double fd_tol = 1e-4;          ///< analytic vs finite-difference derivatives (relative)
  double lagrangian_tol = 1e-6;  ///< pairing test, relative to the curvature scale
  double continuity_ratio = 0.5; ///< shrink factor demanded when the perturbation shrinks tenfold
};

/// Samples (zeta, omega) stacked into one vector, zeta inside the domain guard.
/// Empty boxes in the options fall back to the system's documented boxes.
inline SampleSet make_state_samples(const PhSystem& sys, const VerifyOptions& opt) {
  const SampleBox& pb = opt.pos_box.lo.size() ? opt.pos_box : sys.pos_box;
  const SampleBox& vb = opt.vel_box.lo.size() ? opt.vel_box : sys.vel_box;
  require_size(pb.lo, sys.n_pos, "position box");
  require_size(vb.lo, sys.n_vel, "velocity box");
  SampleBox box{concat(pb.lo, vb.lo), concat(pb.hi, vb.hi)};
  const int np = sys.n_pos;
  return make_samples(box, opt.count, opt.seed,
                      [&sys, np](const Vec& x) { return sys.domain_guard(Vec(x.head(np))); });
}

namespace detail {

template <class F>
CheckResult guarded(const std::string& name, F&& f) {
  try {
    CheckResult r = f();
    r.name = name;
    return r;
  } catch (const std::exception& e) {
    CheckResult r;
    r.name = name;
    r.status = CheckStatus::Error;
    r.detail = e.what();
    return r;
  }
}

inline void note_worst(CheckResult& r, double value, const Vec& at) {
  if (value > r.worst || !r.witness) {
    r.worst = std::max(r.worst, value);
    r.witness = at;
  }
}

inline void finish(CheckResult& r, bool ok) {
  r.status = ok ? CheckStatus::Pass : CheckStatus::Fail;
  // witnesses are kept for failures only
  if (ok) r.witness.reset();
}

/// Continuity of the pivot-frozen constrained image representation around x = (zeta, Gamma).
inline double continuity_violation(const PhSystem& sys, const Vec& x, double rank_tol,
                                   std::string& why) {
  const int np = sys.n_pos;
  const int nv = sys.n_vel;
  auto build = [&](const Vec& y, ConstrainedPivots& pv, bool frozen) {
    const Vec zeta = y.head(np);
    const ImageRep rep = assemble_unconstrained_dirac(sys, zeta, y.tail(nv));
    const ImageRep out = assemble_constrained_dirac(rep, dirac_constraint_rows(sys, zeta), rank_tol, &pv, frozen);
    return Mat(vstack(out.K, out.L));
  };
  ConstrainedPivots pv;
  const Mat T0 = build(x, pv, false);
  const double floor = 1e-9 * (1.0 + max_abs(T0));
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h1 = 1e-4 * (1.0 + std::abs(x(i)));
    Vec y = x;
    y(i) += h1;
    if (!sys.domain_guard(Vec(y.head(np)))) continue;
    Mat T1, T2;
    try {
      T1 = build(y, pv, true);
      y(i) = x(i) + h1 / 10.0;
      T2 = build(y, pv, true);
    } catch (const RankError& e) {
      why = std::string("coordinate ") + std::to_string(i) + ": " + e.what();
      return std::numeric_limits<double>::infinity();
    }
    const double d1 = max_abs(Mat(T1 - T0));
    const double d2 = max_abs(Mat(T2 - T0));
    if (d1 <= floor && d2 <= floor) continue;
    // Continuous maps shrink roughly tenfold; a jump does not shrink at all.
    const double q = d2 / std::max(d1, floor);
    if (q > worst) {
      worst = q;
      why = "coordinate " + std::to_string(i) + " change ratio " + format_double(q);
    }
  }
  return worst;
}

}  // namespace detail

/**
 * Runs every structural check on the supplied (zeta, omega) samples.  Checks that need
 * c(zeta) = 0 use the Gauss-Newton projection of each sample.
 */
inline VerificationReport verify_system(const PhSystem& sys, const SampleSet& samples, const VerifyOptions& opt) {
  if (samples.points.empty()) throw ShapeError("verification needs at least one sample");
  const int np = sys.n_pos, nv = sys.n_vel;
  VerificationReport rep;
  rep.subject = sys.name;
  rep.count = static_cast<int>(samples.points.size());
  rep.seed = samples.seed;
  const int ns = rep.count;
  auto zeta_of = [np](const Vec& x) { return Vec(x.head(np)); };
  auto omega_of = [np, nv](const Vec& x) { return Vec(x.segment(np, nv)); };

  rep.checks.push_back(detail::guarded("mass_symmetric", [&] {
    CheckResult r;
    r.samples = 1;
    r.tol = opt.tol * (1.0 + max_abs(sys.mass));
    r.worst = max_abs(Mat(sys.mass - sys.mass.transpose()));
    r.status = r.worst <= r.tol ? CheckStatus::Pass : CheckStatus::Fail;
    return r;
  }));

  rep.checks.push_back(detail::guarded("mass_semidefinite", [&] {
    CheckResult r;
    r.samples = 1;
    r.tol = opt.tol * (1.0 + max_abs(sys.mass));
    const Mat sym = 0.5 * (sys.mass + sys.mass.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(sym);
    const double lmin = nv ? es.eigenvalues()(0) : 0.0;
    r.worst = std::max(0.0, -lmin);
    r.detail = "min_eigenvalue=" + format_double(lmin) + (lmin > r.tol ? " definite" : " semidefinite");
    r.status = lmin >= -r.tol ? CheckStatus::Pass : CheckStatus::Fail;
    return r;
  }));

  rep.checks.push_back(detail::guarded("gyroscopic_skew", [&] {
    CheckResult r;
    r.samples = ns;
    r.tol = opt.tol;
    double worst_rel = 0.0;
    for (const Vec& x : samples.points) {
      const Vec w = omega_of(x);
      const Mat G = eval_gyroscopic(sys, sys.mass * w);
      const double v = max_abs(Mat(G + G.transpose())) / (1.0 + max_abs(G));
      if (v > worst_rel || !r.witness) {
        worst_rel = std::max(worst_rel, v);
        r.witness = x;
      }
    }
    r.worst = worst_rel;
    detail::finish(r, worst_rel <= r.tol);
    return r;
  }));

  rep.checks.push_back(detail::guarded("velocity_constraint_rank_constant", [&] {
    CheckResult r;
    r.samples = ns;
    r.tol = opt.rank_tol;
    std::vector<int> ranks;
    double min_gap = std::numeric_limits<double>::infinity();
    for (const Vec& x : samples.points) {
      const RankInfo ri = rank_info(eval_velocity_constraints(sys, zeta_of(x)), opt.rank_tol);
      ranks.push_back(ri.rank);
      min_gap = std::min(min_gap, ri.gap);
    }
    const int bad = detail::first_outlier(ranks);
    r.detail = "rank " + detail::int_range(ranks) + " min_gap=" + format_double(min_gap);
    if (bad >= 0) {
      r.status = CheckStatus::Fail;
      r.worst = 1.0;
      r.witness = samples.points[bad];
    }
    return r;
  }));

  // Projected positions for the checks that live on c(zeta) = 0.
  std::vector<Vec> feasible;
  std::string projection_error;
  try {
    for (const Vec& x : samples.points) {
      Vec y = x;
      y.head(np) = project_positions(sys, zeta_of(x), 1e-13, 50);
      feasible.push_back(y);
    }
  } catch (const std::exception& e) {
    projection_error = e.what();
  }

  rep.checks.push_back(detail::guarded("position_constraint_full_rank", [&] {
    if (!projection_error.empty()) throw Error("projection onto c = 0 failed: " + projection_error);
    CheckResult r;
    r.samples = ns;
    r.tol = opt.rank_tol;
    int min_rank = sys.n_pos_constraints;
    double min_gap = std::numeric_limits<double>::infinity();
    for (const Vec& x : feasible) {
      const RankInfo ri = rank_info(eval_position_constraint_jacobian(sys, zeta_of(x)), opt.rank_tol);
      if (ri.rank < min_rank || (ri.rank < sys.n_pos_constraints && !r.witness)) {
        min_rank = ri.rank;
        r.witness = x;
      }
      min_gap = std::min(min_gap, ri.gap);
    }
    r.worst = sys.n_pos_constraints - min_rank;
    r.detail = "k=" + std::to_string(sys.n_pos_constraints) + " min_rank=" + std::to_string(min_rank) +
               " min_gap=" + format_double(min_gap);
    detail::finish(r, min_rank == sys.n_pos_constraints);
    return r;
  }));

  rep.checks.push_back(detail::guarded("potential_gradient_fd", [&] {
    CheckResult r;
    r.samples = ns;
    r.tol = opt.fd_tol;
    for (const Vec& x : samples.points) {
      const Vec z = zeta_of(x);
      const Vec g = eval_potential_gradient(sys, z);
      const Vec fd = fd_gradient(sys.potential, z);
      detail::note_worst(r, max_abs(Vec(g - fd)) / (1.0 + max_abs(g)), x);
    }
    detail::finish(r, r.worst <= r.tol);
    return r;
  }));

  rep.checks.push_back(detail::guarded("position_constraint_jacobian_fd", [&] {
    CheckResult r;
    r.samples = ns;
    r.tol = opt.fd_tol;
    if (sys.n_pos_constraints == 0) return r;
    for (const Vec& x : samples.points) {
      const Vec z = zeta_of(x);
      const Mat j = eval_position_constraint_jacobian(sys, z);
      const Mat fd = fd_jacobian(sys.position_constraints, z);
      detail::note_worst(r, max_abs(Mat(j - fd)) / (1.0 + max_abs(j)), x);
    }
    detail::finish(r, r.worst <= r.tol);
    return r;
  }));

  rep.checks.push_back(detail::guarded("dirac_unconstrained", [&] {
    CheckResult r;
    r.samples = ns;
    r.tol = opt.tol;
    bool ok = true;
    for (const Vec& x : samples.points) {
      const CheckResult c = check_dirac_pointwise(
          assemble_unconstrained_dirac(sys, zeta_of(x), sys.mass * omega_of(x)), opt.tol, opt.rank_tol);
      const double rel = c.worst / (c.tol / opt.tol);
      if (!c.passed() && ok) {
        ok = false;
        r.witness = x;
        r.detail = c.detail;
      }
      r.worst = std::max(r.worst, rel);
    }
    r.status = ok ? CheckStatus::Pass : CheckStatus::Fail;
    return r;
  }));

  rep.checks.push_back(detail::guarded("dirac_dim_constancy", [&] {
    return check_dim_constancy(
        [&](const Vec& x) { return assemble_unconstrained_dirac(sys, zeta_of(x), sys.mass * omega_of(x)); },
        [&](const Vec& x) { return dirac_constraint_rows(sys, zeta_of(x)); }, samples, opt.rank_tol);
  }));

  rep.checks.push_back(detail::guarded("dirac_constrained", [&] {
    CheckResult r;
    r.samples = ns;
    r.tol = opt.tol;
    bool ok = true;
    for (const Vec& x : samples.points) {
      const Vec z = zeta_of(x);
      const ImageRep un = assemble_unconstrained_dirac(sys, z, sys.mass * omega_of(x));
      const ImageRep con = assemble_constrained_dirac(un, dirac_constraint_rows(sys, z), opt.rank_tol);
      const CheckResult c = check_dirac_pointwise(con, opt.tol, opt.rank_tol);
      r.worst = std::max(r.worst, c.worst);
      if (!c.passed() && ok) {
        ok = false;
        r.witness = x;
        r.detail = c.detail;
      }
    }
    r.status = ok ? CheckStatus::Pass : CheckStatus::Fail;
    return r;
  }));

  rep.checks.push_back(detail::guarded("local_trivialization", [&] {
    CheckResult r;
    r.samples = ns;
    r.tol = opt.continuity_ratio;
    std::string why;
    for (const Vec& x : samples.points) {
      Vec y(np + nv);
      y << zeta_of(x), sys.mass * omega_of(x);
      std::string local;
      const double v = detail::continuity_violation(sys, y, opt.rank_tol, local);
      if (v > r.worst) {
        r.worst = v;
        r.witness = x;
        why = local;
      }
    }
    r.detail = why;
    detail::finish(r, r.worst <= r.tol);
    if (r.passed()) r.detail = "max change ratio " + format_double(r.worst);
    return r;
  }));

  rep.checks.push_back(detail::guarded("lagrangian_submanifold", [&] {
    if (!projection_error.empty()) throw Error("projection onto c = 0 failed: " + projection_error);
    CheckResult r;
    r.samples = ns;
    r.tol = opt.lagrangian_tol;
    const Mat Minv = pseudo_inverse(sys.mass, opt.rank_tol);
    auto H = [&](const Vec& x) {
      const Vec p = x.tail(nv);
      return 0.5 * p.dot(Minv * p) + sys.potential(Vec(x.head(np)));
    };
    auto gH = [&](const Vec& x) {
      Vec g(np + nv);
      g << eval_potential_gradient(sys, Vec(x.head(np))), Minv * Vec(x.tail(nv));
      return g;
    };
    auto d = [&](const Vec& x) { return eval_position_constraints(sys, Vec(x.head(np))); };
    auto dj = [&](const Vec& x) {
      Mat j = Mat::Zero(sys.n_pos_constraints, np + nv);
      j.leftCols(np) = eval_position_constraint_jacobian(sys, Vec(x.head(np)));
      return j;
    };
    bool ok = true;
    for (const Vec& x : feasible) {
      Vec y(np + nv);
      y << zeta_of(x), sys.mass * omega_of(x);
      // Nonzero multipliers exercise the constraint-curvature term.
      const Vec lam = Vec::Constant(sys.n_pos_constraints, 0.7);
      const CheckResult c = check_lagrangian_local(H, gH, d, dj, y, opt.lagrangian_tol, lam, opt.rank_tol);
      const double rel = c.worst / (c.tol / opt.lagrangian_tol);
      r.worst = std::max(r.worst, rel);
      if (!c.passed() && ok) {
        ok = false;
        r.witness = x;
        r.detail = c.detail;
      }
    }
    r.status = ok ? CheckStatus::Pass : CheckStatus::Fail;
    return r;
  }));

  rep.checks.push_back(detail::guarded("resistive_relation", [&] {
    std::vector<std::pair<Vec, Vec>> pts;
    for (const Vec& x : samples.points) pts.emplace_back(zeta_of(x), omega_of(x));
    return check_resistive([&](const Vec& z, const Vec& w) { return eval_dissipation(sys, z, w); }, pts);
  }));

  return rep;
}

inline VerificationReport verify_system(const PhSystem& sys, const VerifyOptions& opt) {
  return verify_system(sys, make_state_samples(sys, opt), opt);
}

}  // namespace phmb
