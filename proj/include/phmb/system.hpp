#pragma once

#include "phmb/core.hpp"
#include "phmb/linalg.hpp"
#include "phmb/sampling.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace phmb {

struct CouplingInfo;

/**
 * Rigid multibody system in redundant coordinates with port-Hamiltonian structure.
 *
 * Positions zeta live in R^n_pos, velocities omega and momenta Gamma = M omega in R^n_vel.
 * The dynamics are
 *
 *   zeta'     = Z(zeta) omega
 *   M omega'  = -Z^T grad V - Z^T c'^T lambda - tau_d(zeta, omega) - G(M omega) omega
 *               - A^T mu - B tau_ext
 *   0         = c(zeta)
 *   0         = A(zeta) omega
 *   omega_ext = B(zeta)^T omega
 *
 * tau_ext is the effort the system exerts on its environment, so omega_ext^T tau_ext is the
 * power leaving through the ports.  Immutable once built; every member is a pure function.
 */
struct PhSystem {
  std::string name;

  int n_pos = 0;
  int n_vel = 0;
  int n_ports = 0;
  int n_pos_constraints = 0;
  int n_vel_constraints = 0;

  /// Z: n_pos x n_vel.
  std::function<Mat(const Vec& zeta)> kinematics;
  /// Constant symmetric mass matrix, n_vel x n_vel.
  Mat mass;
  /// G(Gamma), skew-symmetric n_vel x n_vel; the argument is the momentum.
  std::function<Mat(const Vec& gamma)> gyroscopic;
  /// A: n_vel_constraints x n_vel.
  std::function<Mat(const Vec& zeta)> velocity_constraints;
  /// B: n_vel x n_ports.
  std::function<Mat(const Vec& zeta)> port_directions;
  /// c: R^n_pos -> R^n_pos_constraints.
  std::function<Vec(const Vec& zeta)> position_constraints;
  /// c': n_pos_constraints x n_pos.
  std::function<Mat(const Vec& zeta)> position_constraint_jacobian;
  std::function<double(const Vec& zeta)> potential;
  std::function<Vec(const Vec& zeta)> potential_gradient;
  /// tau_d(zeta, omega), passive: omega^T tau_d >= 0.
  std::function<Vec(const Vec& zeta, const Vec& omega)> dissipation;
  /// Membership test for the open set of admissible positions.
  std::function<bool(const Vec& zeta)> domain_guard;
  /// Human-readable description of the admissible set, used in diagnostics.
  std::string domain_description;

  std::vector<std::string> port_labels;

  /// Documented sampling regions for positions and velocities (verification, rank checks).
  SampleBox pos_box;
  SampleBox vel_box;

  /// Present on systems built by couple(); records the two parts and the pairing.
  std::shared_ptr<const CouplingInfo> coupling;
};

/// Fills unset members with the trivial choice (zero constraints, zero potential, no damping,
/// unrestricted domain) and checks the declared dimensions against the mass matrix.
inline void fill_defaults(PhSystem& sys) {
  const int np = sys.n_pos;
  const int nv = sys.n_vel;
  if (sys.mass.rows() != nv || sys.mass.cols() != nv) {
    throw ShapeError("mass matrix must be " + std::to_string(nv) + "x" + std::to_string(nv));
  }
  if (!sys.kinematics) {
    if (np != nv) throw ShapeError("default kinematics requires n_pos == n_vel");
    sys.kinematics = [nv](const Vec&) -> Mat { return Mat::Identity(nv, nv); };
  }
  if (!sys.gyroscopic) sys.gyroscopic = [nv](const Vec&) -> Mat { return Mat::Zero(nv, nv); };
  if (!sys.velocity_constraints) {
    sys.n_vel_constraints = 0;
    sys.velocity_constraints = [nv](const Vec&) -> Mat { return Mat::Zero(0, nv); };
  }
  if (!sys.port_directions) {
    const int m = sys.n_ports;
    sys.port_directions = [nv, m](const Vec&) -> Mat { return Mat::Zero(nv, m); };
  }
  if (!sys.position_constraints) {
    sys.n_pos_constraints = 0;
    sys.position_constraints = [](const Vec&) -> Vec { return Vec::Zero(0); };
    sys.position_constraint_jacobian = [np](const Vec&) -> Mat { return Mat::Zero(0, np); };
  } else if (!sys.position_constraint_jacobian) {
    throw ShapeError("position constraints need an explicit Jacobian");
  }
  if (!sys.potential) {
    sys.potential = [](const Vec&) { return 0.0; };
    sys.potential_gradient = [np](const Vec&) -> Vec { return Vec::Zero(np); };
  } else if (!sys.potential_gradient) {
    throw ShapeError("a potential needs an explicit gradient");
  }
  if (!sys.dissipation) sys.dissipation = [nv](const Vec&, const Vec&) -> Vec { return Vec::Zero(nv); };
  if (!sys.domain_guard) sys.domain_guard = [](const Vec&) { return true; };
  if (sys.port_labels.empty()) {
    for (int i = 0; i < sys.n_ports; ++i) sys.port_labels.push_back("port_" + std::to_string(i));
  }
  if (static_cast<int>(sys.port_labels.size()) != sys.n_ports) {
    throw ShapeError("port label count differs from n_ports");
  }
  if (sys.pos_box.lo.size() == 0) sys.pos_box = SampleBox{Vec::Constant(np, -1.0), Vec::Constant(np, 1.0)};
  if (sys.vel_box.lo.size() == 0) sys.vel_box = SampleBox{Vec::Constant(nv, -1.0), Vec::Constant(nv, 1.0)};
  require_size(sys.pos_box.lo, np, "position sample box");
  require_size(sys.pos_box.hi, np, "position sample box");
  require_size(sys.vel_box.lo, nv, "velocity sample box");
  require_size(sys.vel_box.hi, nv, "velocity sample box");
}

struct State {
  double t = 0.0;
  Vec zeta;
  Vec omega;
  /// Derived momentum M omega.
  Vec gamma;
};

inline State make_state(const PhSystem& sys, double t, const Vec& zeta, const Vec& omega) {
  require_size(zeta, sys.n_pos, "zeta");
  require_size(omega, sys.n_vel, "omega");
  return State{t, zeta, omega, sys.mass * omega};
}

struct PortValues {
  Vec tau_ext;
  Vec omega_ext;
};

struct Multipliers {
  Vec lambda;
  Vec mu;
};

/// One evaluation of every model function at (zeta, omega).
struct EvaluatedPoint {
  Vec zeta;
  Vec omega;
  Vec gamma;
  Mat Z;
  Mat M;
  Mat G;
  Mat A;
  Mat B;
  Vec c;
  Mat c_jac;
  Vec grad_V;
  Vec tau_d;
};

inline void check_domain(const PhSystem& sys, const Vec& zeta) {
  if (!sys.domain_guard(zeta)) {
    std::string msg = "position outside the admissible set of '" + sys.name + "'";
    if (!sys.domain_description.empty()) msg += " (" + sys.domain_description + ")";
    msg += " at zeta = [";
    for (Eigen::Index i = 0; i < zeta.size(); ++i) {
      msg += (i ? ", " : "") + format_double(zeta(i));
    }
    throw DomainError(msg + "]");
  }
}

inline Mat eval_kinematics(const PhSystem& sys, const Vec& zeta) {
  Mat z = sys.kinematics(zeta);
  require_shape(z, sys.n_pos, sys.n_vel, "Z(zeta)");
  return z;
}

inline Mat eval_velocity_constraints(const PhSystem& sys, const Vec& zeta) {
  Mat a = sys.velocity_constraints(zeta);
  require_shape(a, sys.n_vel_constraints, sys.n_vel, "A(zeta)");
  return a;
}

inline Mat eval_port_directions(const PhSystem& sys, const Vec& zeta) {
  Mat b = sys.port_directions(zeta);
  require_shape(b, sys.n_vel, sys.n_ports, "B(zeta)");
  return b;
}

inline Vec eval_position_constraints(const PhSystem& sys, const Vec& zeta) {
  Vec c = sys.position_constraints(zeta);
  require_size(c, sys.n_pos_constraints, "c(zeta)");
  return c;
}

inline Mat eval_position_constraint_jacobian(const PhSystem& sys, const Vec& zeta) {
  Mat j = sys.position_constraint_jacobian(zeta);
  require_shape(j, sys.n_pos_constraints, sys.n_pos, "c'(zeta)");
  return j;
}

inline Mat eval_gyroscopic(const PhSystem& sys, const Vec& gamma) {
  Mat g = sys.gyroscopic(gamma);
  require_shape(g, sys.n_vel, sys.n_vel, "G(Gamma)");
  return g;
}

inline Vec eval_dissipation(const PhSystem& sys, const Vec& zeta, const Vec& omega) {
  Vec d = sys.dissipation(zeta, omega);
  require_size(d, sys.n_vel, "tau_d(zeta, omega)");
  return d;
}

inline Vec eval_potential_gradient(const PhSystem& sys, const Vec& zeta) {
  Vec g = sys.potential_gradient(zeta);
  require_size(g, sys.n_pos, "grad V(zeta)");
  return g;
}

/// Hidden constraint matrix c'(zeta) Z(zeta), the velocity form of c(zeta) = 0.
inline Mat hidden_constraint_matrix(const PhSystem& sys, const Vec& zeta) {
  return eval_position_constraint_jacobian(sys, zeta) * eval_kinematics(sys, zeta);
}

/// All velocity-level constraints stacked: [A(zeta); c'(zeta) Z(zeta)].
inline Mat velocity_level_constraints(const PhSystem& sys, const Vec& zeta) {
  return vstack(eval_velocity_constraints(sys, zeta), hidden_constraint_matrix(sys, zeta));
}

inline EvaluatedPoint eval_point(const PhSystem& sys, const Vec& zeta, const Vec& omega) {
  require_size(zeta, sys.n_pos, "zeta");
  require_size(omega, sys.n_vel, "omega");
  check_domain(sys, zeta);
  EvaluatedPoint p;
  p.zeta = zeta;
  p.omega = omega;
  p.M = sys.mass;
  p.gamma = sys.mass * omega;
  p.Z = eval_kinematics(sys, zeta);
  p.G = eval_gyroscopic(sys, p.gamma);
  p.A = eval_velocity_constraints(sys, zeta);
  p.B = eval_port_directions(sys, zeta);
  p.c = eval_position_constraints(sys, zeta);
  p.c_jac = eval_position_constraint_jacobian(sys, zeta);
  p.grad_V = eval_potential_gradient(sys, zeta);
  p.tau_d = eval_dissipation(sys, zeta, omega);
  return p;
}

/// Stacked residual [kinematic; kinetic; position constraint; velocity constraint].
inline Vec residual_mks2(const PhSystem& sys, const State& state, const Multipliers& mult,
                         const Vec& omega_dot, const Vec& zeta_dot, const Vec& tau_ext) {
  require_size(omega_dot, sys.n_vel, "omega_dot");
  require_size(zeta_dot, sys.n_pos, "zeta_dot");
  require_size(tau_ext, sys.n_ports, "tau_ext");
  require_size(mult.lambda, sys.n_pos_constraints, "lambda");
  require_size(mult.mu, sys.n_vel_constraints, "mu");
  const EvaluatedPoint p = eval_point(sys, state.zeta, state.omega);
  Vec r(sys.n_pos + sys.n_vel + sys.n_pos_constraints + sys.n_vel_constraints);
  r.segment(0, sys.n_pos) = zeta_dot - p.Z * p.omega;
  r.segment(sys.n_pos, sys.n_vel) = p.M * omega_dot + p.Z.transpose() * p.grad_V +
                                    p.Z.transpose() * (p.c_jac.transpose() * mult.lambda) + p.tau_d +
                                    p.G * p.omega + p.A.transpose() * mult.mu + p.B * tau_ext;
  r.segment(sys.n_pos + sys.n_vel, sys.n_pos_constraints) = p.c;
  r.segment(sys.n_pos + sys.n_vel + sys.n_pos_constraints, sys.n_vel_constraints) = p.A * p.omega;
  return r;
}

/// Total energy 1/2 omega^T M omega + V(zeta).
inline double hamiltonian(const PhSystem& sys, const State& state) {
  check_domain(sys, state.zeta);
  return 0.5 * state.omega.dot(sys.mass * state.omega) + sys.potential(state.zeta);
}

inline double hamiltonian(const PhSystem& sys, const Vec& zeta, const Vec& omega) {
  check_domain(sys, zeta);
  return 0.5 * omega.dot(sys.mass * omega) + sys.potential(zeta);
}

/// Port flows B(zeta)^T omega.
inline PortValues port_values(const PhSystem& sys, const Vec& zeta, const Vec& omega, const Vec& tau_ext) {
  return PortValues{tau_ext, eval_port_directions(sys, zeta).transpose() * omega};
}

/// dH/dt + dissipated power + power leaving through the ports.
inline double power_balance_residual(const PhSystem& sys, const State& state, const Vec& omega_dot,
                                     const Vec& zeta_dot, const Vec& tau_ext) {
  require_size(omega_dot, sys.n_vel, "omega_dot");
  require_size(zeta_dot, sys.n_pos, "zeta_dot");
  require_size(tau_ext, sys.n_ports, "tau_ext");
  check_domain(sys, state.zeta);
  const Vec& w = state.omega;
  const double dh = w.dot(sys.mass * omega_dot) + zeta_dot.dot(eval_potential_gradient(sys, state.zeta));
  const Vec w_ext = eval_port_directions(sys, state.zeta).transpose() * w;
  return dh + w.dot(eval_dissipation(sys, state.zeta, w)) + w_ext.dot(tau_ext);
}

/// Norms of the three constraint families at a state.
struct ConstraintResiduals {
  double position = 0.0;  ///< |c(zeta)|_inf
  double velocity = 0.0;  ///< |A(zeta) omega|_inf
  double hidden = 0.0;    ///< |c'(zeta) Z(zeta) omega|_inf

  double max() const { return std::max(position, std::max(velocity, hidden)); }
};

inline ConstraintResiduals constraint_residuals(const PhSystem& sys, const Vec& zeta, const Vec& omega) {
  ConstraintResiduals r;
  r.position = max_abs(eval_position_constraints(sys, zeta));
  r.velocity = max_abs(Vec(eval_velocity_constraints(sys, zeta) * omega));
  r.hidden = max_abs(Vec(hidden_constraint_matrix(sys, zeta) * omega));
  return r;
}

inline bool is_consistent(const PhSystem& sys, const State& s, double tol) {
  return constraint_residuals(sys, s.zeta, s.omega).max() <= tol;
}

/**
 * Point-mass system in Cartesian coordinates: n_pos = n_vel = n, Z = I, G = 0.
 * Empty functions mean "absent" (no potential, no constraints, no damping, no ports).
 */
struct CartesianModel {
  int n = 0;
  Mat mass;
  std::function<double(const Vec&)> potential;
  std::function<Vec(const Vec&)> potential_gradient;
  int n_pos_constraints = 0;
  std::function<Vec(const Vec&)> position_constraints;
  std::function<Mat(const Vec&)> position_constraint_jacobian;
  int n_vel_constraints = 0;
  std::function<Mat(const Vec&)> velocity_constraints;
  int n_ports = 0;
  std::function<Mat(const Vec&)> port_directions;
  std::function<Vec(const Vec&, const Vec&)> dissipation;
  std::string name = "cartesian";
};

inline PhSystem from_cartesian(const CartesianModel& model) {
  if (model.n <= 0) throw ShapeError("cartesian model needs n > 0");
  require_shape(model.mass, model.n, model.n, "M");
  PhSystem sys;
  sys.name = model.name;
  sys.n_pos = model.n;
  sys.n_vel = model.n;
  sys.mass = model.mass;
  sys.potential = model.potential;
  sys.potential_gradient = model.potential_gradient;
  if (model.position_constraints) {
    sys.n_pos_constraints = model.n_pos_constraints;
    sys.position_constraints = model.position_constraints;
    sys.position_constraint_jacobian = model.position_constraint_jacobian;
  }
  if (model.velocity_constraints) {
    sys.n_vel_constraints = model.n_vel_constraints;
    sys.velocity_constraints = model.velocity_constraints;
  }
  sys.n_ports = model.n_ports;
  sys.port_directions = model.port_directions;
  sys.dissipation = model.dissipation;
  const int n = model.n;
  sys.kinematics = [n](const Vec&) -> Mat { return Mat::Identity(n, n); };
  sys.gyroscopic = [n](const Vec&) -> Mat { return Mat::Zero(n, n); };
  fill_defaults(sys);
  // Surface shape mistakes at construction rather than mid-simulation.
  const Vec probe = Vec::Zero(n);
  if (sys.domain_guard(probe)) {
    eval_point(sys, probe, probe);
  }
  return sys;
}

/// Gauss-Newton projection of zeta onto c(zeta) = 0 with minimal-norm updates.
inline Vec project_positions(const PhSystem& sys, const Vec& zeta_guess, double tol, int max_iter) {
  Vec zeta = zeta_guess;
  if (sys.n_pos_constraints == 0) return zeta;
  for (int it = 0; it <= max_iter; ++it) {
    check_domain(sys, zeta);
    const Vec c = eval_position_constraints(sys, zeta);
    if (max_abs(c) <= tol) return zeta;
    if (it == max_iter) break;
    const Mat cj = eval_position_constraint_jacobian(sys, zeta);
    const RankInfo ri = rank_info(cj);
    if (ri.rank < sys.n_pos_constraints) {
      throw RankError("position constraint Jacobian has rank " + std::to_string(ri.rank) + " < " +
                      std::to_string(sys.n_pos_constraints));
    }
    zeta -= cj.transpose() * (cj * cj.transpose()).ldlt().solve(c);
  }
  throw NoConvergence("projection onto c(zeta) = 0 did not converge in " + std::to_string(max_iter) +
                      " iterations");
}

}  // namespace phmb
