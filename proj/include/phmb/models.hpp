#pragma once

#include "phmb/core.hpp"
#include "phmb/interconnect.hpp"
#include "phmb/linalg.hpp"
#include "phmb/sim.hpp"
#include "phmb/system.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <string>

namespace phmb {

/// Named numeric parameters; each constructor documents its keys and defaults.
using ModelParams = std::map<std::string, double>;

namespace detail {

inline double param(const ModelParams& p, const std::string& key, double fallback) {
  const auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

inline double positive(const ModelParams& p, const std::string& key, double fallback) {
  const double v = param(p, key, fallback);
  if (!(v > 0.0) || !std::isfinite(v)) throw ParamError("parameter '" + key + "' must be positive, got " + format_double(v));
  return v;
}

inline Mat planar_kinematics(double phi) {
  const double c = std::cos(phi), s = std::sin(phi);
  Mat Z(3, 3);
  Z << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  return Z;
}

/// Planar body with body-fixed velocities (v_x', v_y', omega) about a point offset by `arm`
/// from the center of mass along y'.  Returns G(Gamma) for Gamma = M omega.
inline Mat planar_gyroscopic(const Vec& gamma, double m, double arm, double i_center) {
  const double omega = (gamma(2) - arm * gamma(1)) / i_center;
  Mat S(3, 3);
  S << 0.0, 1.0, arm, -1.0, 0.0, 0.0, -arm, 0.0, 0.0;
  return -m * omega * S;
}

inline Mat planar_mass(double m, double arm, double i_point) {
  Mat M(3, 3);
  M << m, 0.0, 0.0, 0.0, m, m * arm, 0.0, m * arm, i_point;
  return M;
}

}  // namespace detail

/**
 * Differential-drive robot.  zeta = (x, y, phi), omega = (v_x', v_y', omega), ports = wheel
 * forces (F_l, F_r) with flows (v_l, v_r).  Keys: m = 1 kg, ell = 0.1 m (center of mass offset),
 * I_S = 0.05 kg m^2 (about the center of mass), b = 0.5 m (wheel spacing).
 */
inline PhSystem diff_drive(const ModelParams& p = {}) {
  const double m = detail::positive(p, "m", 1.0);
  const double ell = detail::param(p, "ell", 0.1);
  const double is = detail::positive(p, "I_S", 0.05);
  const double b = detail::positive(p, "b", 0.5);
  if (!std::isfinite(ell)) throw ParamError("parameter 'ell' must be finite");
  PhSystem s;
  s.name = "diff-drive";
  s.n_pos = 3;
  s.n_vel = 3;
  s.n_ports = 2;
  s.n_vel_constraints = 1;
  s.mass = detail::planar_mass(m, ell, is + m * ell * ell);
  s.kinematics = [](const Vec& z) { return detail::planar_kinematics(z(2)); };
  s.gyroscopic = [m, ell, is](const Vec& g) { return detail::planar_gyroscopic(g, m, ell, is); };
  s.velocity_constraints = [](const Vec&) {
    Mat A(1, 3);
    A << 0.0, 1.0, 0.0;
    return A;
  };
  s.port_directions = [b](const Vec&) {
    Mat B(3, 2);
    B << 1.0, 1.0, 0.0, 0.0, -b / 2.0, b / 2.0;
    return B;
  };
  s.port_labels = {"F_l", "F_r"};
  s.pos_box = SampleBox{Vec::Constant(3, -5.0), Vec::Constant(3, 5.0)};
  s.pos_box.lo(2) = -std::numbers::pi;
  s.pos_box.hi(2) = std::numbers::pi;
  s.vel_box = SampleBox{Vec::Constant(3, -2.0), Vec::Constant(3, 2.0)};
  fill_defaults(s);
  return s;
}

/// The robot with v_y' = 0 eliminated: omega = (v_x', omega).  Same keys as diff_drive.
inline PhSystem diff_drive_reduced(const ModelParams& p = {}) {
  const double m = detail::positive(p, "m", 1.0);
  const double ell = detail::param(p, "ell", 0.1);
  const double is = detail::positive(p, "I_S", 0.05);
  const double b = detail::positive(p, "b", 0.5);
  const double io = is + m * ell * ell;
  PhSystem s;
  s.name = "diff-drive-reduced";
  s.n_pos = 3;
  s.n_vel = 2;
  s.n_ports = 2;
  s.mass = Mat::Zero(2, 2);
  s.mass(0, 0) = m;
  s.mass(1, 1) = io;
  s.kinematics = [](const Vec& z) {
    Mat Z(3, 2);
    Z << std::cos(z(2)), 0.0, std::sin(z(2)), 0.0, 0.0, 1.0;
    return Z;
  };
  s.gyroscopic = [m, ell, io](const Vec& g) {
    const double w = g(1) / io;
    Mat G(2, 2);
    G << 0.0, -m * ell * w, m * ell * w, 0.0;
    return G;
  };
  s.port_directions = [b](const Vec&) {
    Mat B(2, 2);
    B << 1.0, 1.0, -b / 2.0, b / 2.0;
    return B;
  };
  s.port_labels = {"F_l", "F_r"};
  s.pos_box = SampleBox{Vec::Constant(3, -5.0), Vec::Constant(3, 5.0)};
  s.pos_box.lo(2) = -std::numbers::pi;
  s.pos_box.hi(2) = std::numbers::pi;
  s.vel_box = SampleBox{Vec::Constant(2, -2.0), Vec::Constant(2, 2.0)};
  fill_defaults(s);
  return s;
}

/// Gimbal lock margin on |beta|.
inline constexpr double kGimbalMargin = 1e-6;

/**
 * Gimbal-mounted symmetric disk.  zeta = Euler angles (alpha, beta, gamma), omega = body rates
 * (omega_x', omega_y', omega_z'); one port: torque on the second gimbal axis.
 * Keys: m = 1 kg, r = 0.1 m, w = 0.02 m.
 */
inline PhSystem gyroscope(const ModelParams& p = {}) {
  const double m = detail::positive(p, "m", 1.0);
  const double r = detail::positive(p, "r", 0.1);
  const double w = detail::positive(p, "w", 0.02);
  PhSystem s;
  s.name = "gyroscope";
  s.n_pos = 3;
  s.n_vel = 3;
  s.n_ports = 1;
  s.mass = Mat::Zero(3, 3);
  s.mass(0, 0) = m / 12.0 * 6.0 * r * r;
  s.mass(1, 1) = m / 12.0 * (3.0 * r * r + w * w);
  s.mass(2, 2) = s.mass(1, 1);
  s.kinematics = [](const Vec& z) {
    const double sa = std::sin(z(0)), ca = std::cos(z(0));
    const double sb = std::sin(z(1)), cb = std::cos(z(1));
    Mat Z(3, 3);
    Z << cb, sa * sb, ca * sb, 0.0, ca * cb, -sa * cb, 0.0, sa, ca;
    return Mat(Z / cb);
  };
  s.gyroscopic = [](const Vec& g) { return Mat(-skew3(g)); };
  s.port_directions = [](const Vec& z) {
    Mat B(3, 1);
    B << 0.0, std::cos(z(0)), -std::sin(z(0));
    return B;
  };
  s.domain_guard = [](const Vec& z) { return std::abs(z(1)) < std::numbers::pi / 2.0 - kGimbalMargin; };
  s.domain_description = "|beta| < pi/2 - 1e-6 (gimbal lock)";
  s.port_labels = {"M_ext"};
  s.pos_box = SampleBox{Vec::Constant(3, -std::numbers::pi), Vec::Constant(3, std::numbers::pi)};
  s.pos_box.lo(1) = -1.2;
  s.pos_box.hi(1) = 1.2;
  s.vel_box = SampleBox{Vec::Constant(3, -10.0), Vec::Constant(3, 10.0)};
  fill_defaults(s);
  return s;
}

/**
 * Crank pivoting about A.  zeta = phi1, omega = omega1.  Ports: force at C (two channels,
 * flows = velocity of C) followed by the torque at A.  Keys: l1 = 0.2 m, I1A = 0.01 kg m^2.
 */
inline PhSystem crank(const ModelParams& p = {}) {
  const double l1 = detail::positive(p, "l1", 0.2);
  const double ia = detail::positive(p, "I1A", 0.01);
  PhSystem s;
  s.name = "crank";
  s.n_pos = 1;
  s.n_vel = 1;
  s.n_ports = 3;
  s.mass = Mat::Constant(1, 1, ia);
  s.port_directions = [l1](const Vec& z) {
    Mat B(1, 3);
    B << -l1 * std::sin(z(0)), l1 * std::cos(z(0)), 1.0;
    return B;
  };
  s.port_labels = {"F_Cx", "F_Cy", "M_A"};
  s.pos_box = SampleBox{Vec::Constant(1, -std::numbers::pi), Vec::Constant(1, std::numbers::pi)};
  s.vel_box = SampleBox{Vec::Constant(1, -10.0), Vec::Constant(1, 10.0)};
  fill_defaults(s);
  return s;
}

/**
 * Connecting rod with slider at B.  zeta = (x_B, y_B, phi2), omega = (v_x', v_y', omega2),
 * position constraint y_B = 0.  Ports: force at C (two channels) followed by the horizontal
 * slider force.  Keys: l2 = 0.5 m, m2 = 1 kg, r2 = 0.25 m (center of mass offset from B),
 * I2B = 0.1 kg m^2 (about B); I2B > m2 r2^2 is required.
 */
inline PhSystem rod_slider(const ModelParams& p = {}) {
  const double l2 = detail::positive(p, "l2", 0.5);
  const double m2 = detail::positive(p, "m2", 1.0);
  const double r2 = detail::positive(p, "r2", 0.25);
  const double ib = detail::positive(p, "I2B", 0.1);
  const double is = ib - m2 * r2 * r2;
  if (!(is > 0.0)) {
    throw ParamError("rod inertia about B must exceed m2 r2^2 (I2B - m2 r2^2 = " + format_double(is) + ")");
  }
  PhSystem s;
  s.name = "rod-slider";
  s.n_pos = 3;
  s.n_vel = 3;
  s.n_ports = 3;
  s.n_pos_constraints = 1;
  s.mass = detail::planar_mass(m2, r2, ib);
  s.kinematics = [](const Vec& z) { return detail::planar_kinematics(z(2)); };
  s.gyroscopic = [m2, r2, is](const Vec& g) { return detail::planar_gyroscopic(g, m2, r2, is); };
  s.position_constraints = [](const Vec& z) { return Vec::Constant(1, z(1)); };
  s.position_constraint_jacobian = [](const Vec&) {
    Mat j(1, 3);
    j << 0.0, 1.0, 0.0;
    return j;
  };
  s.port_directions = [l2](const Vec& z) {
    const double c = std::cos(z(2)), sn = std::sin(z(2));
    Mat B(3, 3);
    B << c, sn, c, -sn, c, -sn, -l2 * sn, l2 * c, 0.0;
    return B;
  };
  s.port_labels = {"F_Cx", "F_Cy", "F_ext"};
  s.pos_box = SampleBox{Vec(3), Vec(3)};
  s.pos_box.lo << 0.2, -0.1, -std::numbers::pi;
  s.pos_box.hi << 1.0, 0.1, std::numbers::pi;
  s.vel_box = SampleBox{Vec::Constant(3, -3.0), Vec::Constant(3, 3.0)};
  fill_defaults(s);
  return s;
}

inline ModelParams crank_params(const ModelParams& p) {
  ModelParams out;
  for (const char* k : {"l1", "I1A"}) {
    if (p.count(k)) out[k] = p.at(k);
  }
  return out;
}

inline ModelParams rod_params(const ModelParams& p) {
  ModelParams out;
  for (const char* k : {"l2", "m2", "r2", "I2B"}) {
    if (p.count(k)) out[k] = p.at(k);
  }
  return out;
}

inline CouplingSpec slider_crank_pairing() { return CouplingSpec{{0, 1}, {0, 1}}; }

/// Crank and rod coupled at C.  External ports: torque at A, slider force.
inline PhSystem slider_crank(const ModelParams& p = {}) {
  const double l1 = detail::positive(p, "l1", 0.2);
  const double l2 = detail::positive(p, "l2", 0.5);
  if (!(l2 > l1)) throw ParamError("the rod must be longer than the crank (l2 > l1)");
  return couple(crank(crank_params(p)), rod_slider(rod_params(p)), slider_crank_pairing(), "slider-crank");
}

/**
 * Closure-consistent slider-crank state for crank angle phi1 and rate omega1: B sits on the
 * slide to the right of C, and the rod velocities follow from the coupling rows and the
 * hidden constraint.
 */
inline State slider_crank_state(const PhSystem& sys, const ModelParams& p, double phi1, double omega1) {
  const double l1 = detail::param(p, "l1", 0.2);
  const double l2 = detail::param(p, "l2", 0.5);
  const double cx = l1 * std::cos(phi1), cy = l1 * std::sin(phi1);
  const double xb = cx + std::sqrt(l2 * l2 - cy * cy);
  const double phi2 = std::atan2(cy, cx - xb);
  Vec zeta(4);
  zeta << phi1, xb, 0.0, phi2;
  const Mat A = eval_velocity_constraints(sys, zeta);
  const Mat H = hidden_constraint_matrix(sys, zeta);
  // Unknown rod velocities: A[:,1:] w2 = -A[:,0] omega1 and H[:,1:] w2 = 0.
  Mat S(3, 3);
  S << A.rightCols(3), H.rightCols(3);
  Vec rhs(3);
  rhs << -A.col(0) * omega1, 0.0;
  const Vec w2 = S.fullPivLu().solve(rhs);
  Vec omega(4);
  omega << omega1, w2;
  return make_state(sys, 0.0, zeta, omega);
}

/// Loop-closure gap |C_crank - C_rod| at a slider-crank configuration.
inline double slider_crank_closure(const ModelParams& p, const Vec& zeta) {
  const double l1 = detail::param(p, "l1", 0.2);
  const double l2 = detail::param(p, "l2", 0.5);
  const double gx = l1 * std::cos(zeta(0)) - (zeta(1) + l2 * std::cos(zeta(3)));
  const double gy = l1 * std::sin(zeta(0)) - (zeta(2) + l2 * std::sin(zeta(3)));
  return std::hypot(gx, gy);
}

// ---------------------------------------------------------------------------
// Small fixtures

/// Free 1-D cart, one force port.  Key: m = 1 kg.
inline PhSystem cart(const ModelParams& p = {}) {
  CartesianModel c;
  c.n = 1;
  c.mass = Mat::Constant(1, 1, detail::positive(p, "m", 1.0));
  c.n_ports = 1;
  c.port_directions = [](const Vec&) { return Mat::Ones(1, 1); };
  c.name = "cart";
  PhSystem s = from_cartesian(c);
  s.port_labels = {"F"};
  return s;
}

/// 1-D body whose only port direction is zeta_1 (vanishes at the origin).
inline PhSystem rank_drop_a(const ModelParams& = {}) {
  CartesianModel c;
  c.n = 1;
  c.mass = Mat::Ones(1, 1);
  c.n_ports = 1;
  c.port_directions = [](const Vec& z) { return Mat::Constant(1, 1, z(0)); };
  c.name = "rank-drop-a";
  return from_cartesian(c);
}

/// 1-D body with a dead port (direction identically zero).
inline PhSystem rank_drop_b(const ModelParams& = {}) {
  CartesianModel c;
  c.n = 1;
  c.mass = Mat::Ones(1, 1);
  c.n_ports = 1;
  c.port_directions = [](const Vec&) { return Mat::Zero(1, 1); };
  c.name = "rank-drop-b";
  return from_cartesian(c);
}

/// The constant structure D = im [[1,0],[0,0],[0,0],[0,1]] constrained by E(x) = [1, x].
inline ImageRep remark_a1_structure() {
  Mat K = Mat::Zero(2, 2), L = Mat::Zero(2, 2);
  K(0, 0) = 1.0;
  L(1, 1) = 1.0;
  return ImageRep{K, L};
}

inline Mat remark_a1_constraint(double x) {
  Mat E(1, 2);
  E << 1.0, x;
  return E;
}

}  // namespace phmb
