#pragma once

#include "phmb/core.hpp"
#include "phmb/linalg.hpp"
#include "phmb/system.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace phmb {

enum class Scheme { ImplicitMidpoint, Rk4Projection };

/// Where the implicit midpoint step imposes A omega = 0 and c' Z omega = 0.
enum class ConstraintPoint { Endpoint, Midpoint };

struct SimConfig {
  double dt = 1e-3;
  double t_end = 1.0;
  double newton_tol = 1e-12;
  int newton_max_iter = 50;
  double projection_tol = 1e-12;
  Scheme scheme = Scheme::ImplicitMidpoint;
  ConstraintPoint constraint_point = ConstraintPoint::Midpoint;
  /// Step rejection halves dt at most this many times.
  int max_halvings = 6;
  /// Opt-in Baumgarte terms for the explicit scheme (0 disables).
  double baumgarte_alpha = 0.0;
  double baumgarte_beta = 0.0;
  /// Tolerance on the constraint residual of the initial state.
  double consistency_tol = 1e-8;

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ParamError("dt must be positive");
    if (!(t_end >= 0.0) || !std::isfinite(t_end)) throw ParamError("t_end must be nonnegative");
    if (!(newton_tol > 0.0) || !(projection_tol > 0.0) || !(consistency_tol > 0.0)) {
      throw ParamError("tolerances must be positive");
    }
    if (newton_max_iter < 1) throw ParamError("newton_max_iter must be at least 1");
    if (max_halvings < 0) throw ParamError("max_halvings must be nonnegative");
  }
};

using EffortFn = std::function<Vec(double t)>;

inline EffortFn zero_effort(int m) {
  return [m](double) { return Vec::Zero(m); };
}

struct Trajectory {
  std::vector<double> times;
  std::vector<State> states;
  std::vector<Multipliers> multipliers;
  std::vector<PortValues> ports;
  std::vector<double> energy;
  /// H(t_k) - H(t_0) + integral of dissipated and extracted power (trapezoidal per step).
  std::vector<double> balance;
  std::vector<ConstraintResiduals> constraints;
  /// Numerical rank of A(zeta_k); empty rows give rank 0.
  std::vector<int> constraint_rank;

  std::size_t size() const { return times.size(); }
  double max_abs_balance() const {
    double m = 0.0;
    for (double b : balance) m = std::max(m, std::abs(b));
    return m;
  }
  double max_constraint_residual() const {
    double m = 0.0;
    for (const auto& c : constraints) m = std::max(m, c.max());
    return m;
  }
};

/// Power dissipated plus power leaving through the ports.
inline double outgoing_power(const PhSystem& sys, const Vec& zeta, const Vec& omega, const Vec& tau_ext) {
  const Vec w_ext = eval_port_directions(sys, zeta).transpose() * omega;
  return omega.dot(eval_dissipation(sys, zeta, omega)) + w_ext.dot(tau_ext);
}

/**
 * Projects zeta onto c = 0 (Gauss-Newton, minimal-norm updates) and omega orthogonally onto
 * ker [A(zeta); c'(zeta) Z(zeta)].
 */
inline State consistent_init(const PhSystem& sys, const Vec& zeta_guess, const Vec& omega_guess, double tol = 1e-12,
                             int max_iter = 50) {
  require_size(zeta_guess, sys.n_pos, "zeta guess");
  require_size(omega_guess, sys.n_vel, "omega guess");
  check_domain(sys, zeta_guess);
  const Vec zeta = project_positions(sys, zeta_guess, tol, max_iter);
  const Mat C = velocity_level_constraints(sys, zeta);
  Vec omega = omega_guess;
  if (C.rows() > 0) omega -= pseudo_inverse(C) * (C * omega_guess);
  return make_state(sys, 0.0, zeta, omega);
}

namespace detail {

/// Directional central difference of zeta -> F(zeta) omega along zeta' = Z omega.
inline Vec constraint_drift(const std::function<Mat(const Vec&)>& F, const Vec& zeta, const Vec& zdot,
                            const Vec& omega) {
  const double eps = 1e-7;
  const Vec plus = F(zeta + eps * zdot) * omega;
  const Vec minus = F(zeta - eps * zdot) * omega;
  return (plus - minus) / (2.0 * eps);
}

}  // namespace detail

/**
 * Saddle-point solve for accelerations and multipliers:
 *
 *   [ M        Z^T c'^T  A^T ] [omega']   [rhs              ]
 *   [ c' Z     0         0   ] [lambda] = [-(c' Z)' omega   ]
 *   [ A        0         0   ] [mu    ]   [-A' omega        ]
 *
 * with rhs = -Z^T grad V - tau_d - G(M omega) omega - B tau_ext.  alpha, beta add optional
 * Baumgarte feedback on the velocity and position residuals.
 */
inline std::pair<Vec, Multipliers> multiplier_solve(const PhSystem& sys, const State& state, const Vec& tau_ext,
                                                    double alpha = 0.0, double beta = 0.0) {
  require_size(tau_ext, sys.n_ports, "tau_ext");
  const EvaluatedPoint p = eval_point(sys, state.zeta, state.omega);
  const int nv = sys.n_vel, k = sys.n_pos_constraints, l = sys.n_vel_constraints;
  const Mat Ch = p.c_jac * p.Z;
  const Vec zdot = p.Z * p.omega;
  const int N = nv + k + l;
  Mat S = Mat::Zero(N, N);
  S.topLeftCorner(nv, nv) = p.M;
  S.block(0, nv, nv, k) = Ch.transpose();
  S.block(0, nv + k, nv, l) = p.A.transpose();
  S.block(nv, 0, k, nv) = Ch;
  S.block(nv + k, 0, l, nv) = p.A;
  Vec rhs(N);
  rhs.head(nv) = -p.Z.transpose() * p.grad_V - p.tau_d - p.G * p.omega - p.B * tau_ext;
  if (k > 0) {
    rhs.segment(nv, k) = -detail::constraint_drift([&](const Vec& z) { return hidden_constraint_matrix(sys, z); },
                                                   state.zeta, zdot, p.omega);
    if (alpha != 0.0 || beta != 0.0) rhs.segment(nv, k) -= 2.0 * alpha * (Ch * p.omega) + beta * beta * p.c;
  }
  if (l > 0) {
    rhs.segment(nv + k, l) = -detail::constraint_drift([&](const Vec& z) { return eval_velocity_constraints(sys, z); },
                                                       state.zeta, zdot, p.omega);
    if (alpha != 0.0) rhs.segment(nv + k, l) -= 2.0 * alpha * (p.A * p.omega);
  }
  Eigen::FullPivLU<Mat> lu(S);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) {
    throw SingularSystem("saddle-point matrix is singular: rank " + std::to_string(lu.rank()) + " of " +
                         std::to_string(N) + " (rank [c'Z; A] = " +
                         std::to_string(numerical_rank(vstack(Ch, p.A))) + ", constraint rows " +
                         std::to_string(k + l) + ")");
  }
  const Vec x = lu.solve(rhs);
  Multipliers mult{x.segment(nv, k), x.segment(nv + k, l)};
  return {x.head(nv), mult};
}

/// One accepted step of size h (possibly made of several halved sub-steps).
struct StepResult {
  State state;
  Multipliers mult;
  /// Trapezoidal integral of the outgoing power over the step.
  double outgoing_energy = 0.0;
  int substeps = 1;
};

/**
 * Stateful integrator.  Keeps the factorized Newton matrix between steps and refreshes it
 * when the iteration slows down; the previous multipliers seed the next Newton solve.
 */
class Stepper {
 public:
  Stepper(const PhSystem& sys, SimConfig cfg) : sys_(sys), cfg_(std::move(cfg)) { cfg_.validate(); }

  const SimConfig& config() const { return cfg_; }

  /// Advances from state (consistent) by cfg.dt with halving on solver failure.
  StepResult step(const State& state, const EffortFn& tau_ext, const Multipliers* guess = nullptr) {
    return advance(state, tau_ext, cfg_.dt, guess, 0);
  }

  StepResult advance(const State& state, const EffortFn& tau_ext, double h, const Multipliers* guess, int depth) {
    try {
      return single(state, tau_ext, h, guess);
    } catch (const NoConvergence&) {
      if (depth >= cfg_.max_halvings) throw;
    } catch (const SingularSystem&) {
      if (depth >= cfg_.max_halvings) throw;
    }
    lu_.reset();
    StepResult a = advance(state, tau_ext, 0.5 * h, guess, depth + 1);
    StepResult b = advance(a.state, tau_ext, 0.5 * h, &a.mult, depth + 1);
    b.outgoing_energy += a.outgoing_energy;
    b.substeps += a.substeps;
    b.state.t = state.t + h;
    return b;
  }

 private:
  StepResult single(const State& s0, const EffortFn& tau_ext, double h, const Multipliers* guess) {
    if (cfg_.scheme == Scheme::Rk4Projection) return rk4(s0, tau_ext, h);
    return midpoint(s0, tau_ext, h, guess);
  }

  Vec effort(const EffortFn& f, double t) const {
    Vec v = f ? f(t) : Vec::Zero(sys_.n_ports);
    require_size(v, sys_.n_ports, "tau_ext(t)");
    return v;
  }

  /// Newton residual of the implicit midpoint equations in y = (zeta1, omega1, lambda, mu).
  Vec residual(const State& s0, const Vec& y, double h, const Vec& tau_m) const {
    const int np = sys_.n_pos, nv = sys_.n_vel, k = sys_.n_pos_constraints, l = sys_.n_vel_constraints;
    const Vec z1 = y.segment(0, np);
    const Vec w1 = y.segment(np, nv);
    const Vec lam = y.segment(np + nv, k);
    const Vec mu = y.segment(np + nv + k, l);
    const Vec zm = 0.5 * (s0.zeta + z1);
    const Vec wm = 0.5 * (s0.omega + w1);
    const EvaluatedPoint p = eval_point(sys_, zm, wm);
    Vec F(np + nv + k + l);
    F.segment(0, np) = z1 - s0.zeta - h * (p.Z * wm);
    F.segment(np, nv) = p.M * (w1 - s0.omega) +
                        h * (p.Z.transpose() * (p.grad_V + p.c_jac.transpose() * lam) + p.tau_d + p.G * wm +
                             p.A.transpose() * mu + p.B * tau_m);
    if (cfg_.constraint_point == ConstraintPoint::Midpoint) {
      F.segment(np + nv, k) = p.c_jac * (p.Z * wm);
      F.segment(np + nv + k, l) = p.A * wm;
    } else {
      check_domain(sys_, z1);
      if (k > 0) F.segment(np + nv, k) = hidden_constraint_matrix(sys_, z1) * w1;
      if (l > 0) F.segment(np + nv + k, l) = eval_velocity_constraints(sys_, z1) * w1;
    }
    return F;
  }

  void refresh_jacobian(const State& s0, const Vec& y, const Vec& F0, double h, const Vec& tau_m) {
    const Eigen::Index N = y.size();
    Mat J(N, N);
    Vec yp = y;
    for (Eigen::Index i = 0; i < N; ++i) {
      const double d = 1e-7 * (1.0 + std::abs(y(i)));
      yp(i) = y(i) + d;
      J.col(i) = (residual(s0, yp, h, tau_m) - F0) / d;
      yp(i) = y(i);
    }
    lu_.emplace(J);
    if (!lu_->isInvertible()) {
      const int r = static_cast<int>(lu_->rank());
      lu_.reset();
      throw SingularSystem("Newton matrix of the midpoint step is singular (rank " + std::to_string(r) + " of " +
                           std::to_string(N) + ")");
    }
    lu_h_ = h;
  }

  StepResult midpoint(const State& s0, const EffortFn& tau_ext, double h, const Multipliers* guess) {
    const int np = sys_.n_pos, nv = sys_.n_vel, k = sys_.n_pos_constraints, l = sys_.n_vel_constraints;
    const Vec tau_m = effort(tau_ext, s0.t + 0.5 * h);
    Vec y(np + nv + k + l);
    y.segment(0, np) = s0.zeta + h * (eval_kinematics(sys_, s0.zeta) * s0.omega);
    y.segment(np, nv) = s0.omega;
    if (guess && guess->lambda.size() == k && guess->mu.size() == l) {
      y.segment(np + nv, k) = guess->lambda;
      y.segment(np + nv + k, l) = guess->mu;
    } else {
      y.tail(k + l).setZero();
    }
    const double fscale = 1.0 + max_abs(s0.zeta) + max_abs(Vec(sys_.mass * s0.omega));
    const double target = cfg_.newton_tol * fscale;

    if (lu_ && (lu_h_ != h || lu_->rows() != y.size())) lu_.reset();
    Vec F = residual(s0, y, h, tau_m);
    bool fresh = false;
    if (!lu_) {
      refresh_jacobian(s0, y, F, h, tau_m);
      fresh = true;
    }
    double fnorm = max_abs(F);
    bool converged = false;
    for (int it = 0; it < cfg_.newton_max_iter; ++it) {
      const Vec dy = lu_->solve(F);
      y -= dy;
      const Vec Fn = residual(s0, y, h, tau_m);
      const double nn = max_abs(Fn);
      if (!std::isfinite(nn)) break;
      if (converged) {
        // one polishing iteration after the tolerance is met
        F = Fn;
        fnorm = nn;
        break;
      }
      if (nn <= target) converged = true;
      if (!converged && nn > 0.25 * fnorm && !fresh) {
        refresh_jacobian(s0, y, Fn, h, tau_m);
        fresh = true;
      } else {
        fresh = false;
      }
      F = Fn;
      fnorm = nn;
    }
    if (!converged) {
      lu_.reset();
      throw NoConvergence("implicit midpoint Newton iteration did not reach " + format_double(target) +
                          " in " + std::to_string(cfg_.newton_max_iter) + " iterations (residual " +
                          format_double(fnorm) + ", h = " + format_double(h) + ")");
    }

    State s1 = project(y.segment(0, np), y.segment(np, nv), s0.t + h);
    StepResult out;
    out.mult = Multipliers{y.segment(np + nv, k), y.segment(np + nv + k, l)};
    const Vec tau0 = effort(tau_ext, s0.t);
    const Vec tau1 = effort(tau_ext, s1.t);
    out.outgoing_energy = 0.5 * h *
                          (outgoing_power(sys_, s0.zeta, s0.omega, tau0) + outgoing_power(sys_, s1.zeta, s1.omega, tau1));
    out.state = std::move(s1);
    return out;
  }

  StepResult rk4(const State& s0, const EffortFn& tau_ext, double h) {
    const double a = cfg_.baumgarte_alpha, b = cfg_.baumgarte_beta;
    auto f = [&](const Vec& z, const Vec& w, double t) {
      const State s = make_state(sys_, t, z, w);
      const auto [wdot, m] = multiplier_solve(sys_, s, effort(tau_ext, t), a, b);
      (void)m;
      return std::make_pair(Vec(eval_kinematics(sys_, z) * w), wdot);
    };
    const double t = s0.t;
    const auto k1 = f(s0.zeta, s0.omega, t);
    const auto k2 = f(s0.zeta + 0.5 * h * k1.first, s0.omega + 0.5 * h * k1.second, t + 0.5 * h);
    const auto k3 = f(s0.zeta + 0.5 * h * k2.first, s0.omega + 0.5 * h * k2.second, t + 0.5 * h);
    const auto k4 = f(s0.zeta + h * k3.first, s0.omega + h * k3.second, t + h);
    const Vec z1 = s0.zeta + h / 6.0 * (k1.first + 2.0 * k2.first + 2.0 * k3.first + k4.first);
    const Vec w1 = s0.omega + h / 6.0 * (k1.second + 2.0 * k2.second + 2.0 * k3.second + k4.second);
    State s1 = project(z1, w1, t + h);
    StepResult out;
    out.mult = multiplier_solve(sys_, s1, effort(tau_ext, s1.t)).second;
    out.outgoing_energy = 0.5 * h *
                          (outgoing_power(sys_, s0.zeta, s0.omega, effort(tau_ext, t)) +
                           outgoing_power(sys_, s1.zeta, s1.omega, effort(tau_ext, s1.t)));
    out.state = std::move(s1);
    return out;
  }

  /// zeta onto c = 0, then omega M-orthogonally onto ker [A; c'Z].
  State project(const Vec& zeta, const Vec& omega, double t) const {
    const Vec z = project_positions(sys_, zeta, cfg_.projection_tol, cfg_.newton_max_iter);
    check_domain(sys_, z);
    const Mat C = velocity_level_constraints(sys_, z);
    Vec w = omega;
    if (C.rows() > 0) {
      const Eigen::LDLT<Mat> mldlt(sys_.mass);
      const Mat MinvCt = mldlt.solve(C.transpose());
      const Mat S = C * MinvCt;
      w -= MinvCt * (pseudo_inverse(S) * (C * omega));
      // a second pass removes what roundoff left behind
      w -= MinvCt * (pseudo_inverse(S) * (C * w));
    }
    return make_state(sys_, t, z, w);
  }

  const PhSystem& sys_;
  SimConfig cfg_;
  std::optional<Eigen::FullPivLU<Mat>> lu_;
  double lu_h_ = 0.0;
};

/// One step from a consistent state; see Stepper for the scheme.
inline std::pair<State, Multipliers> step(const PhSystem& sys, const State& state, const EffortFn& tau_ext,
                                          const SimConfig& cfg) {
  if (!is_consistent(sys, state, cfg.consistency_tol)) {
    throw ConstraintError("step: initial state violates the constraints by " +
                          format_double(constraint_residuals(sys, state.zeta, state.omega).max()));
  }
  Stepper st(sys, cfg);
  StepResult r = st.step(state, tau_ext);
  return {std::move(r.state), std::move(r.mult)};
}

namespace detail {

template <class E>
[[noreturn]] void rethrow_with(const E&, const std::string& msg) {
  throw E(msg);
}

inline void record(const PhSystem& sys, Trajectory& traj, const State& s, const Multipliers& m, const Vec& tau,
                   double balance) {
  traj.times.push_back(s.t);
  traj.states.push_back(s);
  traj.multipliers.push_back(m);
  traj.ports.push_back(port_values(sys, s.zeta, s.omega, tau));
  traj.energy.push_back(hamiltonian(sys, s));
  traj.balance.push_back(balance);
  traj.constraints.push_back(constraint_residuals(sys, s.zeta, s.omega));
  traj.constraint_rank.push_back(numerical_rank(eval_velocity_constraints(sys, s.zeta)));
}

}  // namespace detail

/**
 * Integrates to t_end, filling traj as it goes so a failure leaves the accepted prefix.
 * Step k is recorded at t = k dt.  Errors are rethrown with the step index.
 */
inline void simulate_into(const PhSystem& sys, const State& init, const EffortFn& tau_ext, const SimConfig& cfg,
                          Trajectory& traj) {
  cfg.validate();
  traj = Trajectory{};
  if (!is_consistent(sys, init, cfg.consistency_tol)) {
    throw ConstraintError("initial state violates the constraints by " +
                          format_double(constraint_residuals(sys, init.zeta, init.omega).max()));
  }
  const long steps = std::lround(std::floor(cfg.t_end / cfg.dt + 1e-9));
  State s = make_state(sys, init.t, init.zeta, init.omega);
  const double t0 = init.t;
  auto tau_at = [&](double t) {
    Vec v = tau_ext ? tau_ext(t) : Vec::Zero(sys.n_ports);
    require_size(v, sys.n_ports, "tau_ext(t)");
    return v;
  };
  Multipliers m0 = multiplier_solve(sys, s, tau_at(s.t)).second;
  const double h0 = hamiltonian(sys, s);
  double outgoing = 0.0;
  detail::record(sys, traj, s, m0, tau_at(s.t), 0.0);
  Stepper st(sys, cfg);
  Multipliers last = m0;
  for (long k = 1; k <= steps; ++k) {
    const std::string where = "step " + std::to_string(k) + " (t = " + format_double(s.t) + "): ";
    StepResult r;
    try {
      r = st.step(s, tau_ext, &last);
    } catch (const DomainError& e) {
      detail::rethrow_with(e, where + e.what());
    } catch (const NoConvergence& e) {
      detail::rethrow_with(e, where + e.what());
    } catch (const SingularSystem& e) {
      detail::rethrow_with(e, where + e.what());
    } catch (const RankError& e) {
      detail::rethrow_with(e, where + e.what());
    }
    r.state.t = t0 + static_cast<double>(k) * cfg.dt;
    outgoing += r.outgoing_energy;
    s = r.state;
    last = r.mult;
    detail::record(sys, traj, s, r.mult, tau_at(s.t), hamiltonian(sys, s) - h0 + outgoing);
  }
}

inline Trajectory simulate(const PhSystem& sys, const State& init, const EffortFn& tau_ext, const SimConfig& cfg) {
  Trajectory traj;
  simulate_into(sys, init, tau_ext, cfg, traj);
  return traj;
}

/// CSV with 17 significant digits; one row per recorded step.
inline void write_csv(std::ostream& os, const PhSystem& sys, const Trajectory& traj) {
  os << "t";
  for (int i = 0; i < sys.n_pos; ++i) os << ",zeta_" << i;
  for (int i = 0; i < sys.n_vel; ++i) os << ",omega_" << i;
  for (int i = 0; i < sys.n_pos_constraints; ++i) os << ",lambda_" << i;
  for (int i = 0; i < sys.n_vel_constraints; ++i) os << ",mu_" << i;
  os << ",H,balance_residual,constraint_residual\n";
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const State& s = traj.states[k];
    os << format_double(traj.times[k]);
    for (Eigen::Index i = 0; i < s.zeta.size(); ++i) os << ',' << format_double(s.zeta(i));
    for (Eigen::Index i = 0; i < s.omega.size(); ++i) os << ',' << format_double(s.omega(i));
    const Multipliers& m = traj.multipliers[k];
    for (Eigen::Index i = 0; i < m.lambda.size(); ++i) os << ',' << format_double(m.lambda(i));
    for (Eigen::Index i = 0; i < m.mu.size(); ++i) os << ',' << format_double(m.mu(i));
    os << ',' << format_double(traj.energy[k]) << ',' << format_double(traj.balance[k]) << ','
       << format_double(traj.constraints[k].max()) << '\n';
  }
}

}  // namespace phmb
