#pragma once

#include "phmb/core.hpp"
#include "phmb/interconnect.hpp"
#include "phmb/models.hpp"
#include "phmb/sim.hpp"
#include "phmb/system.hpp"
#include "phmb/verify.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace phmb {

namespace text {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Splits on any of `seps`; empty fields are dropped.
inline std::vector<std::string> split(const std::string& s, const std::string& seps) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (seps.find(ch) != std::string::npos) {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  const std::string t = trim(s);
  if (t.empty()) throw ParamError(what + ": empty number");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size() || errno == ERANGE || !std::isfinite(v)) {
    throw ParamError(what + ": cannot parse '" + t + "' as a finite number");
  }
  return v;
}

inline Vec parse_vector(const std::string& s, const std::string& what) {
  const auto parts = split(s, ",");
  if (parts.empty()) throw ParamError(what + ": empty list");
  Vec v(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) v(static_cast<Eigen::Index>(i)) = parse_double(parts[i], what);
  return v;
}

/// "k1=v;k2=v1,v2" into a map; duplicate keys are an error.
inline std::map<std::string, std::string> parse_assignments(const std::string& s, const std::string& seps,
                                                            const std::string& what) {
  std::map<std::string, std::string> out;
  for (const auto& item : split(s, seps)) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ParamError(what + ": expected key=value, got '" + item + "'");
    const std::string key = trim(item.substr(0, eq));
    if (key.empty()) throw ParamError(what + ": missing key in '" + item + "'");
    if (!out.emplace(key, item.substr(eq + 1)).second) throw ParamError(what + ": duplicate key '" + key + "'");
  }
  return out;
}

}  // namespace text

/// "m=2,ell=0.1" (also ';'-separated) into numeric parameters.
inline ModelParams parse_params(const std::string& s) {
  ModelParams p;
  for (const auto& [k, v] : text::parse_assignments(s, ",;", "parameters")) p[k] = text::parse_double(v, k);
  return p;
}

/// "zeta=...;omega=...;key=..." into named vectors.
using InitSpec = std::map<std::string, Vec>;

inline InitSpec parse_init(const std::string& s) {
  InitSpec out;
  for (const auto& [k, v] : text::parse_assignments(s, ";", "init")) out[k] = text::parse_vector(v, "init " + k);
  return out;
}

namespace detail {

inline Vec broadcast(const Vec& v, int m, const std::string& what) {
  if (v.size() == m) return v;
  if (v.size() == 1) return Vec::Constant(m, v(0));
  throw ParamError(what + ": expected 1 or " + std::to_string(m) + " values, got " + std::to_string(v.size()));
}

}  // namespace detail

/**
 * External-effort schedules for m ports.
 *   ""  or "zero"                          tau = 0
 *   "const:v1,...,vm"                      tau = v
 *   "table:t0=v..;t1=v..;..."              piecewise constant, value of the last t_i <= t
 *   "sin:amp=a..;freq=f;phase=p;offset=o.." tau = o + a sin(2 pi f t + p)
 * A single value broadcasts to all m channels.
 */
inline EffortFn parse_effort(const std::string& spec, int m) {
  const std::string s = text::trim(spec);
  if (s.empty() || s == "zero") return zero_effort(m);
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ParamError("effort schedule '" + s + "' lacks a kind prefix");
  const std::string kind = text::trim(s.substr(0, colon));
  const std::string body = s.substr(colon + 1);
  if (m == 0) throw ParamError("effort schedule given but the model has no ports");
  if (kind == "const") {
    const Vec v = detail::broadcast(text::parse_vector(body, "const effort"), m, "const effort");
    return [v](double) { return v; };
  }
  if (kind == "table") {
    std::vector<std::pair<double, Vec>> rows;
    for (const auto& item : text::split(body, ";")) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ParamError("effort table: expected t=values, got '" + item + "'");
      rows.emplace_back(text::parse_double(item.substr(0, eq), "effort table time"),
                        detail::broadcast(text::parse_vector(item.substr(eq + 1), "effort table"), m, "effort table"));
    }
    if (rows.empty()) throw ParamError("effort table is empty");
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (!(rows[i].first > rows[i - 1].first)) throw ParamError("effort table times must increase");
    }
    return [rows](double t) {
      std::size_t k = 0;
      while (k + 1 < rows.size() && rows[k + 1].first <= t) ++k;
      return rows[k].second;
    };
  }
  if (kind == "sin") {
    auto kv = text::parse_assignments(body, ";", "sin effort");
    for (const auto& [k, _] : kv) {
      if (k != "amp" && k != "freq" && k != "phase" && k != "offset") {
        throw ParamError("sin effort: unknown key '" + k + "'");
      }
    }
    if (!kv.count("amp") || !kv.count("freq")) throw ParamError("sin effort needs amp and freq");
    const Vec amp = detail::broadcast(text::parse_vector(kv["amp"], "amp"), m, "amp");
    const double freq = text::parse_double(kv["freq"], "freq");
    const double phase = kv.count("phase") ? text::parse_double(kv["phase"], "phase") : 0.0;
    const Vec offset =
        kv.count("offset") ? detail::broadcast(text::parse_vector(kv["offset"], "offset"), m, "offset") : Vec::Zero(m);
    return [amp, freq, phase, offset](double t) {
      return Vec(offset + amp * std::sin(2.0 * std::numbers::pi * freq * t + phase));
    };
  }
  throw ParamError("unknown effort schedule kind '" + kind + "'");
}

/// Consistent initial state plus the distance from the user's guess.
struct InitResult {
  State state;
  double distance = 0.0;
};

/// zeta/omega guesses (zeros when absent) passed through consistent_init.
inline InitResult generic_init(const PhSystem& sys, const InitSpec& init) {
  for (const auto& [k, _] : init) {
    if (k != "zeta" && k != "omega") throw ParamError("init: unknown key '" + k + "' for model " + sys.name);
  }
  const Vec zg = init.count("zeta") ? init.at("zeta") : Vec::Zero(sys.n_pos);
  const Vec wg = init.count("omega") ? init.at("omega") : Vec::Zero(sys.n_vel);
  if (zg.size() != sys.n_pos) {
    throw ParamError("init zeta needs " + std::to_string(sys.n_pos) + " values, got " + std::to_string(zg.size()));
  }
  if (wg.size() != sys.n_vel) {
    throw ParamError("init omega needs " + std::to_string(sys.n_vel) + " values, got " + std::to_string(wg.size()));
  }
  InitResult r;
  r.state = consistent_init(sys, zg, wg);
  r.distance = std::sqrt((r.state.zeta - zg).squaredNorm() + (r.state.omega - wg).squaredNorm());
  return r;
}

inline InitResult slider_crank_init(const PhSystem& sys, const ModelParams& p, const InitSpec& init) {
  if (init.count("zeta") || init.count("omega")) {
    if (init.count("phi1") || init.count("omega1")) throw ParamError("init: mix of zeta/omega and phi1/omega1");
    return generic_init(sys, init);
  }
  for (const auto& [k, v] : init) {
    if (k != "phi1" && k != "omega1") throw ParamError("init: unknown key '" + k + "' for the slider-crank");
    if (v.size() != 1) throw ParamError("init " + k + " takes one value");
  }
  const double phi1 = init.count("phi1") ? init.at("phi1")(0) : 0.0;
  const double omega1 = init.count("omega1") ? init.at("omega1")(0) : 0.0;
  const State guess = slider_crank_state(sys, p, phi1, omega1);
  return generic_init(sys, InitSpec{{"zeta", guess.zeta}, {"omega", guess.omega}});
}

/// Two-part recipe for models built by couple().
struct CompositeRecipe {
  std::string part1;
  std::string part2;
  CouplingSpec spec;
};

struct ModelEntry {
  std::string name;
  std::string description;
  std::vector<std::string> param_keys;
  bool fixture = false;
  /// Empty for structure-only fixtures without dynamics.
  std::function<PhSystem(const ModelParams&)> build;
  std::function<InitResult(const PhSystem&, const ModelParams&, const InitSpec&)> init;
  /// Replaces verify_system when set.
  std::function<VerificationReport(const ModelParams&, const VerifyOptions&)> verify;
  std::optional<CompositeRecipe> recipe;
};

/// Dimension-constancy verification of the constant structure under E(x) = [1, x].
inline VerificationReport verify_remark_a1(const ModelParams&, const VerifyOptions& opt) {
  SampleBox box = opt.pos_box;
  if (box.lo.size() == 0) box = SampleBox{Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)};
  if (box.dim() != 1) throw ShapeError("remark-a1-counterexample samples a scalar x");
  const SampleSet samples = make_samples(box, opt.count, opt.seed);
  VerificationReport rep;
  rep.subject = "remark-a1-counterexample";
  rep.count = opt.count;
  rep.seed = opt.seed;
  rep.checks.push_back(check_dirac_pointwise(remark_a1_structure(), opt.tol, opt.rank_tol));
  rep.checks.back().name = "dirac_unconstrained";
  rep.checks.push_back(check_dim_constancy([](const Vec&) { return remark_a1_structure(); },
                                           [](const Vec& x) { return remark_a1_constraint(x(0)); }, samples,
                                           opt.rank_tol));
  return rep;
}

/// Built-in verification plus the coupling rank condition.
inline VerificationReport verify_composite(const PhSystem& sys, const VerifyOptions& opt) {
  VerificationReport rep = verify_system(sys, opt);
  const CouplingInfo& ci = *sys.coupling;
  const SampleSet s = coupled_position_samples(*ci.part1, *ci.part2, opt.count, opt.seed);
  rep.checks.push_back(check_interconnection_rank(*ci.part1, *ci.part2, ci.spec, s, opt.rank_tol));
  return rep;
}

namespace detail {

inline ModelEntry entry(std::string name, std::string description, std::vector<std::string> keys,
                        std::function<PhSystem(const ModelParams&)> build, bool fixture = false) {
  ModelEntry e;
  e.name = std::move(name);
  e.description = std::move(description);
  e.param_keys = std::move(keys);
  e.build = std::move(build);
  e.fixture = fixture;
  e.init = [](const PhSystem& s, const ModelParams&, const InitSpec& i) { return generic_init(s, i); };
  return e;
}

}  // namespace detail

/// The immutable model table.
inline const std::vector<ModelEntry>& registry() {
  static const std::vector<ModelEntry> table = [] {
    std::vector<ModelEntry> t;
    t.push_back(detail::entry("diff-drive", "differential-drive robot, v_y' = 0 as a velocity constraint",
                              {"m", "ell", "I_S", "b"}, [](const ModelParams& p) { return diff_drive(p); }));
    t.push_back(detail::entry("diff-drive-reduced", "differential-drive robot with v_y' eliminated",
                              {"m", "ell", "I_S", "b"}, [](const ModelParams& p) { return diff_drive_reduced(p); }));
    t.push_back(detail::entry("gyroscope", "gimbal-mounted disk in Euler angles", {"m", "r", "w"},
                              [](const ModelParams& p) { return gyroscope(p); }));
    t.push_back(detail::entry("crank", "crank pivoting about A; ports F_Cx, F_Cy, M_A", {"l1", "I1A"},
                              [](const ModelParams& p) { return crank(p); }));
    t.push_back(detail::entry("rod-slider", "connecting rod with slider, y_B = 0; ports F_Cx, F_Cy, F_ext",
                              {"l2", "m2", "r2", "I2B"}, [](const ModelParams& p) { return rod_slider(p); }));
    {
      ModelEntry e = detail::entry("slider-crank", "crank and rod-slider coupled at C",
                                   {"l1", "I1A", "l2", "m2", "r2", "I2B"},
                                   [](const ModelParams& p) { return slider_crank(p); });
      e.init = slider_crank_init;
      e.recipe = CompositeRecipe{"crank", "rod-slider", slider_crank_pairing()};
      e.verify = [](const ModelParams& p, const VerifyOptions& o) { return verify_composite(slider_crank(p), o); };
      t.push_back(std::move(e));
    }
    {
      ModelEntry e;
      e.name = "remark-a1-counterexample";
      e.description = "constant Dirac structure with a constraint whose rank drops at x = 0 (no dynamics)";
      e.fixture = true;
      e.verify = verify_remark_a1;
      t.push_back(std::move(e));
    }
    t.push_back(detail::entry("cart", "free 1-D cart with one force port", {"m"},
                              [](const ModelParams& p) { return cart(p); }, true));
    t.push_back(detail::entry("rank-drop-a", "1-D body, port direction zeta (zero at the origin)", {},
                              [](const ModelParams& p) { return rank_drop_a(p); }, true));
    t.push_back(detail::entry("rank-drop-b", "1-D body with a dead port", {},
                              [](const ModelParams& p) { return rank_drop_b(p); }, true));
    return t;
  }();
  return table;
}

inline const ModelEntry& find_model(const std::string& name) {
  for (const auto& e : registry()) {
    if (e.name == name) return e;
  }
  std::string known;
  for (const auto& e : registry()) known += (known.empty() ? "" : ", ") + e.name;
  throw ParamError("unknown model '" + name + "' (known: " + known + ")");
}

/// Rejects keys the model does not define.
inline void check_param_keys(const ModelEntry& e, const ModelParams& p) {
  for (const auto& [k, _] : p) {
    if (std::find(e.param_keys.begin(), e.param_keys.end(), k) == e.param_keys.end()) {
      std::string known;
      for (const auto& key : e.param_keys) known += (known.empty() ? "" : ", ") + key;
      throw ParamError("model " + e.name + " has no parameter '" + k + "' (known: " + (known.empty() ? "none" : known) +
                       ")");
    }
  }
}

inline PhSystem build_model(const ModelEntry& e, const ModelParams& p) {
  check_param_keys(e, p);
  if (!e.build) throw ParamError("model " + e.name + " has no dynamics");
  return e.build(p);
}

inline VerificationReport verify_model(const ModelEntry& e, const ModelParams& p, const VerifyOptions& opt) {
  check_param_keys(e, p);
  if (e.verify) return e.verify(p, opt);
  return verify_system(build_model(e, p), opt);
}

/// The registered composite built from (part1, part2, spec), if any.
inline const ModelEntry* find_composite(const std::string& part1, const std::string& part2, const CouplingSpec& spec) {
  for (const auto& e : registry()) {
    if (e.recipe && e.recipe->part1 == part1 && e.recipe->part2 == part2 && e.recipe->spec.ports_1 == spec.ports_1 &&
        e.recipe->spec.ports_2 == spec.ports_2) {
      return &e;
    }
  }
  return nullptr;
}

/// "0,1:0,1" into a coupling spec.
inline CouplingSpec parse_pairing(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos || s.find(':', colon + 1) != std::string::npos) {
    throw PortError("pairing must look like 'i,j:k,l', got '" + s + "'");
  }
  auto indices = [](const std::string& part) {
    std::vector<int> out;
    for (const auto& f : text::split(part, ",")) {
      const double v = text::parse_double(f, "port index");
      if (v != std::floor(v) || v < 0 || v > 1e6) throw PortError("port index '" + f + "' is not a valid index");
      out.push_back(static_cast<int>(v));
    }
    return out;
  };
  return CouplingSpec{indices(s.substr(0, colon)), indices(s.substr(colon + 1))};
}

}  // namespace phmb
