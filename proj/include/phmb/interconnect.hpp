#pragma once

#include "phmb/core.hpp"
#include "phmb/linalg.hpp"
#include "phmb/sampling.hpp"
#include "phmb/system.hpp"
#include "phmb/verify.hpp"

#include <memory>
#include <set>
#include <string>
#include <vector>

namespace phmb {

/// Port columns of two systems identified by f_c1 = f_c2, e_c1 = -e_c2.
struct CouplingSpec {
  std::vector<int> ports_1;
  std::vector<int> ports_2;
};

struct CouplingInfo {
  std::shared_ptr<const PhSystem> part1;
  std::shared_ptr<const PhSystem> part2;
  CouplingSpec spec;
  std::vector<int> external_1;
  std::vector<int> external_2;
  /// Index of the first coupling row within mu (after the parts' own velocity constraints).
  int coupling_row_offset = 0;
  int m_c = 0;
};

namespace detail {

inline void validate_ports(const std::vector<int>& idx, int m, const char* which) {
  std::set<int> seen;
  for (int i : idx) {
    if (i < 0 || i >= m) {
      throw PortError(std::string(which) + ": port index " + std::to_string(i) + " out of range [0, " +
                      std::to_string(m) + ")");
    }
    if (!seen.insert(i).second) throw PortError(std::string(which) + ": port index " + std::to_string(i) + " repeated");
  }
}

inline std::vector<int> complement(const std::vector<int>& idx, int m) {
  std::set<int> used(idx.begin(), idx.end());
  std::vector<int> out;
  for (int i = 0; i < m; ++i) {
    if (!used.count(i)) out.push_back(i);
  }
  return out;
}

inline Mat select_cols(const Mat& B, const std::vector<int>& idx) {
  Mat out(B.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = B.col(idx[j]);
  return out;
}

}  // namespace detail

inline void validate_coupling(const PhSystem& sys1, const PhSystem& sys2, const CouplingSpec& spec) {
  if (spec.ports_1.size() != spec.ports_2.size()) {
    throw PortError("coupled port lists differ in length (" + std::to_string(spec.ports_1.size()) + " vs " +
                    std::to_string(spec.ports_2.size()) + ")");
  }
  detail::validate_ports(spec.ports_1, sys1.n_ports, "first system");
  detail::validate_ports(spec.ports_2, sys2.n_ports, "second system");
}

/// [A1 0; 0 A2; B_c1^T -B_c2^T] at (zeta1, zeta2).
inline Mat interconnection_matrix(const PhSystem& sys1, const PhSystem& sys2, const CouplingSpec& spec,
                                  const Vec& zeta1, const Vec& zeta2) {
  const Mat A1 = eval_velocity_constraints(sys1, zeta1);
  const Mat A2 = eval_velocity_constraints(sys2, zeta2);
  const Mat Bc1 = detail::select_cols(eval_port_directions(sys1, zeta1), spec.ports_1);
  const Mat Bc2 = detail::select_cols(eval_port_directions(sys2, zeta2), spec.ports_2);
  const int mc = static_cast<int>(spec.ports_1.size());
  const int n1 = sys1.n_vel;
  Mat A = Mat::Zero(A1.rows() + A2.rows() + mc, n1 + sys2.n_vel);
  A.topLeftCorner(A1.rows(), n1) = A1;
  A.block(A1.rows(), n1, A2.rows(), sys2.n_vel) = A2;
  A.bottomLeftCorner(mc, n1) = Bc1.transpose();
  A.bottomRightCorner(mc, sys2.n_vel) = -Bc2.transpose();
  return A;
}

/**
 * Power-preserving coupling: stacked states, block-diagonal energy, kinematics, mass and
 * gyroscopic data, coupling rows appended to A, remaining ports kept as external ports.
 */
inline PhSystem couple(const PhSystem& sys1, const PhSystem& sys2, const CouplingSpec& spec,
                       const std::string& name = "") {
  validate_coupling(sys1, sys2, spec);
  auto p1 = std::make_shared<const PhSystem>(sys1);
  auto p2 = std::make_shared<const PhSystem>(sys2);
  auto info = std::make_shared<CouplingInfo>();
  info->part1 = p1;
  info->part2 = p2;
  info->spec = spec;
  info->external_1 = detail::complement(spec.ports_1, sys1.n_ports);
  info->external_2 = detail::complement(spec.ports_2, sys2.n_ports);
  info->coupling_row_offset = sys1.n_vel_constraints + sys2.n_vel_constraints;
  info->m_c = static_cast<int>(spec.ports_1.size());

  const int np1 = sys1.n_pos, np2 = sys2.n_pos, nv1 = sys1.n_vel, nv2 = sys2.n_vel;
  const int k1 = sys1.n_pos_constraints, k2 = sys2.n_pos_constraints;
  PhSystem s;
  s.name = name.empty() ? sys1.name + "+" + sys2.name : name;
  s.n_pos = np1 + np2;
  s.n_vel = nv1 + nv2;
  s.n_ports = static_cast<int>(info->external_1.size() + info->external_2.size());
  s.n_pos_constraints = k1 + k2;
  s.n_vel_constraints = info->coupling_row_offset + info->m_c;
  s.mass = block_diag(sys1.mass, sys2.mass);

  auto z1 = [np1](const Vec& z) { return Vec(z.head(np1)); };
  auto z2 = [np1, np2](const Vec& z) { return Vec(z.segment(np1, np2)); };
  s.kinematics = [p1, p2, z1, z2](const Vec& z) {
    return block_diag(eval_kinematics(*p1, z1(z)), eval_kinematics(*p2, z2(z)));
  };
  s.gyroscopic = [p1, p2, nv1, nv2](const Vec& g) {
    return block_diag(eval_gyroscopic(*p1, Vec(g.head(nv1))), eval_gyroscopic(*p2, Vec(g.segment(nv1, nv2))));
  };
  s.velocity_constraints = [p1, p2, spec, z1, z2](const Vec& z) {
    return interconnection_matrix(*p1, *p2, spec, z1(z), z2(z));
  };
  const auto ext1 = info->external_1;
  const auto ext2 = info->external_2;
  s.port_directions = [p1, p2, ext1, ext2, z1, z2](const Vec& z) {
    return block_diag(detail::select_cols(eval_port_directions(*p1, z1(z)), ext1),
                      detail::select_cols(eval_port_directions(*p2, z2(z)), ext2));
  };
  s.position_constraints = [p1, p2, z1, z2](const Vec& z) {
    return concat(eval_position_constraints(*p1, z1(z)), eval_position_constraints(*p2, z2(z)));
  };
  s.position_constraint_jacobian = [p1, p2, z1, z2](const Vec& z) {
    return block_diag(eval_position_constraint_jacobian(*p1, z1(z)), eval_position_constraint_jacobian(*p2, z2(z)));
  };
  s.potential = [p1, p2, z1, z2](const Vec& z) { return p1->potential(z1(z)) + p2->potential(z2(z)); };
  s.potential_gradient = [p1, p2, z1, z2](const Vec& z) {
    return concat(eval_potential_gradient(*p1, z1(z)), eval_potential_gradient(*p2, z2(z)));
  };
  s.dissipation = [p1, p2, z1, z2, nv1, nv2](const Vec& z, const Vec& w) {
    return concat(eval_dissipation(*p1, z1(z), Vec(w.head(nv1))), eval_dissipation(*p2, z2(z), Vec(w.segment(nv1, nv2))));
  };
  s.domain_guard = [p1, p2, z1, z2](const Vec& z) { return p1->domain_guard(z1(z)) && p2->domain_guard(z2(z)); };
  if (!sys1.domain_description.empty() || !sys2.domain_description.empty()) {
    s.domain_description = sys1.name + ": " + (sys1.domain_description.empty() ? "unrestricted" : sys1.domain_description) +
                           "; " + sys2.name + ": " +
                           (sys2.domain_description.empty() ? "unrestricted" : sys2.domain_description);
  }
  for (int i : ext1) s.port_labels.push_back(sys1.port_labels[i]);
  for (int i : ext2) s.port_labels.push_back(sys2.port_labels[i]);
  s.pos_box = SampleBox{concat(sys1.pos_box.lo, sys2.pos_box.lo), concat(sys1.pos_box.hi, sys2.pos_box.hi)};
  s.vel_box = SampleBox{concat(sys1.vel_box.lo, sys2.vel_box.lo), concat(sys1.vel_box.hi, sys2.vel_box.hi)};
  s.coupling = info;
  fill_defaults(s);
  return s;
}

/// Rank of [A1 0; 0 A2; B_c1^T -B_c2^T] must be one integer over all (zeta1, zeta2) samples.
inline CheckResult check_interconnection_rank(const PhSystem& sys1, const PhSystem& sys2, const CouplingSpec& spec,
                                              const SampleSet& samples, double rank_tol = kRankTol) {
  validate_coupling(sys1, sys2, spec);
  if (samples.points.empty()) throw ShapeError("rank check needs at least one sample");
  CheckResult res;
  res.name = "interconnection_rank";
  res.samples = static_cast<int>(samples.points.size());
  res.tol = rank_tol;
  std::vector<int> ranks;
  double min_gap = std::numeric_limits<double>::infinity();
  for (const Vec& x : samples.points) {
    require_size(x, sys1.n_pos + sys2.n_pos, "coupled position sample");
    const RankInfo ri = rank_info(
        interconnection_matrix(sys1, sys2, spec, Vec(x.head(sys1.n_pos)), Vec(x.tail(sys2.n_pos))), rank_tol);
    ranks.push_back(ri.rank);
    min_gap = std::min(min_gap, ri.gap);
  }
  const int bad = detail::first_outlier(ranks);
  if (bad >= 0) {
    res.status = CheckStatus::Fail;
    res.worst = 1.0;
    res.witness = samples.points[bad];
    res.detail = "rank " + std::to_string(ranks[bad]) + " at witness, range " + detail::int_range(ranks);
  } else {
    res.detail = "rank " + std::to_string(ranks.front()) + " min_gap=" + format_double(min_gap);
  }
  return res;
}

/// Samples of the stacked position box of both parts, each inside its domain guard.
inline SampleSet coupled_position_samples(const PhSystem& sys1, const PhSystem& sys2, int count, std::uint64_t seed) {
  SampleBox box{concat(sys1.pos_box.lo, sys2.pos_box.lo), concat(sys1.pos_box.hi, sys2.pos_box.hi)};
  const int n1 = sys1.n_pos;
  return make_samples(box, count, seed, [&](const Vec& x) {
    return sys1.domain_guard(Vec(x.head(n1))) && sys2.domain_guard(Vec(x.tail(x.size() - n1)));
  });
}

/// Coupling-port efforts tau_c (the multiplier block of the coupling rows).
inline Vec coupling_efforts(const PhSystem& combined, const Multipliers& mult) {
  if (!combined.coupling) throw ShapeError("system was not built by couple()");
  const CouplingInfo& ci = *combined.coupling;
  require_size(mult.mu, combined.n_vel_constraints, "mu");
  return mult.mu.segment(ci.coupling_row_offset, ci.m_c);
}

/// omega_c1^T tau_c - omega_c2^T tau_c with omega_ci = B_ci^T omega_i; zero when the flows agree.
inline double coupling_power_residual(const PhSystem& combined, const State& state, const Multipliers& mult) {
  if (!combined.coupling) throw ShapeError("system was not built by couple()");
  const CouplingInfo& ci = *combined.coupling;
  require_size(state.zeta, combined.n_pos, "zeta");
  require_size(state.omega, combined.n_vel, "omega");
  if (ci.m_c == 0) return 0.0;
  const PhSystem& s1 = *ci.part1;
  const PhSystem& s2 = *ci.part2;
  const Vec tau_c = coupling_efforts(combined, mult);
  const Vec w1 = detail::select_cols(eval_port_directions(s1, Vec(state.zeta.head(s1.n_pos))), ci.spec.ports_1)
                     .transpose() *
                 Vec(state.omega.head(s1.n_vel));
  const Vec w2 = detail::select_cols(eval_port_directions(s2, Vec(state.zeta.tail(s2.n_pos))), ci.spec.ports_2)
                     .transpose() *
                 Vec(state.omega.tail(s2.n_vel));
  return w1.dot(tau_c) - w2.dot(tau_c);
}

}  // namespace phmb
