#include <catch_amalgamated.hpp>

#include "phmb/models.hpp"
#include "phmb/registry.hpp"
#include "phmb/sim.hpp"

#include <cmath>
#include <limits>
#include <numbers>

using namespace phmb;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(diff_drive({{"m", -1.0}}), ParamError);
  CHECK_THROWS_AS(diff_drive({{"b", 0.0}}), ParamError);
  CHECK_THROWS_AS(diff_drive({{"ell", std::numeric_limits<double>::quiet_NaN()}}), ParamError);
  CHECK_THROWS_AS(gyroscope({{"r", 0.0}}), ParamError);
  CHECK_THROWS_AS(crank({{"I1A", -0.1}}), ParamError);
  CHECK_THROWS_AS(rod_slider({{"I2B", 0.05}}), ParamError);  // below m2 r2^2 = 0.0625
  CHECK_THROWS_AS(slider_crank({{"l1", 0.6}}), ParamError);
  CHECK_NOTHROW(diff_drive({{"ell", 0.0}}));
  CHECK_NOTHROW(diff_drive({{"ell", -0.2}}));
}

TEST_CASE("port flows of the built-in models") {
  SECTION("wheel speeds") {
    const PhSystem dd = diff_drive({{"b", 0.6}});
    const double v = 1.3, w = 0.7;
    const Vec f = port_values(dd, vec({0.0, 0.0, 0.5}), vec({v, 0.0, w}), Vec::Zero(2)).omega_ext;
    CHECK_THAT(f(0), WithinAbs(v - 0.6 * w / 2.0, 1e-15));
    CHECK_THAT(f(1), WithinAbs(v + 0.6 * w / 2.0, 1e-15));
  }
  SECTION("crank pin velocity") {
    const PhSystem c = crank({{"l1", 0.3}});
    const Vec f = port_values(c, Vec::Zero(1), Vec::Constant(1, 2.0), Vec::Zero(3)).omega_ext;
    CHECK_THAT(f(0), WithinAbs(0.0, 1e-15));
    CHECK_THAT(f(1), WithinAbs(0.6, 1e-15));
    CHECK_THAT(f(2), WithinAbs(2.0, 1e-15));
  }
  SECTION("rod end velocity in the world frame") {
    const PhSystem r = rod_slider();
    const double phi = 0.8, l2 = 0.5;
    const Vec w = vec({0.3, -0.1, 1.7});
    const Vec f = port_values(r, vec({0.5, 0.0, phi}), w, Vec::Zero(3)).omega_ext;
    // v_C = R(phi) v' + w2 l2 (-sin, cos); slider flow = world x velocity of B
    const double vbx = std::cos(phi) * w(0) - std::sin(phi) * w(1);
    const double vby = std::sin(phi) * w(0) + std::cos(phi) * w(1);
    CHECK_THAT(f(0), WithinAbs(vbx - w(2) * l2 * std::sin(phi), 1e-15));
    CHECK_THAT(f(1), WithinAbs(vby + w(2) * l2 * std::cos(phi), 1e-15));
    CHECK_THAT(f(2), WithinAbs(vbx, 1e-15));
  }
}

TEST_CASE("mass data") {
  CHECK_THAT(gyroscope({{"m", 3.0}, {"r", 2.0}}).mass(0, 0), WithinRel(6.0, 1e-15));
  const PhSystem dd = diff_drive({{"m", 2.0}, {"ell", 0.1}, {"I_S", 0.05}});
  // kinetic energy of a planar body about a point offset ell from the center of mass
  const Vec w = vec({0.4, 0.0, 1.5});
  const double vsx = 0.4, vsy = 0.1 * 1.5;
  const double ke = 0.5 * 2.0 * (vsx * vsx + vsy * vsy) + 0.5 * 0.05 * 1.5 * 1.5;
  CHECK_THAT(0.5 * w.dot(dd.mass * w), WithinRel(ke, 1e-14));
  const PhSystem rs = rod_slider();
  CHECK(max_abs(Mat(rs.mass - rs.mass.transpose())) == 0.0);
  CHECK(Eigen::SelfAdjointEigenSolver<Mat>(rs.mass).eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("rod gyroscopic matrix") {
  const PhSystem rs = rod_slider();
  for (double g : {-2.0, 0.3, 5.0}) {
    const Mat G = eval_gyroscopic(rs, vec({0.1, g, -g}));
    CHECK(max_abs(Mat(G + G.transpose())) <= 1e-15);
    CHECK(G.diagonal().isZero());
  }
  // a free rod on the slide keeps its energy
  SimConfig c;
  c.t_end = 3.0;
  const Trajectory t = simulate(rs, consistent_init(rs, vec({0.5, 0.0, 0.3}), vec({0.2, 0.5, 2.0})), {}, c);
  for (double e : t.energy) CHECK_THAT(e, WithinRel(t.energy.front(), 1e-7));
  CHECK(t.max_constraint_residual() <= 1e-11);
}

TEST_CASE("every built-in model passes verification") {
  for (const ModelEntry& e : registry()) {
    if (e.name == "remark-a1-counterexample") continue;
    const VerificationReport r = verify_model(e, {}, VerifyOptions{});
    INFO(e.name << "\n" << format_report(r));
    CHECK(r.overall());
  }
  const VerificationReport bad = verify_model(find_model("remark-a1-counterexample"), {}, VerifyOptions{});
  CHECK_FALSE(bad.overall());
  const CheckResult* dim = bad.find("dirac_dim_constancy");
  REQUIRE(dim != nullptr);
  REQUIRE(dim->witness.has_value());
  CHECK(std::abs((*dim->witness)(0)) <= 1e-12);
}

TEST_CASE("full and reduced robot agree") {
  const PhSystem full = diff_drive(), red = diff_drive_reduced();
  auto f = [](double t) { return vec({0.4 * std::sin(t), -0.3 + 0.1 * t}); };
  SimConfig c;
  c.t_end = 5.0;
  const Trajectory tf = simulate(full, consistent_init(full, vec({0.1, 0.2, 0.3}), vec({0.5, 0.0, -1.0})), f, c);
  const Trajectory tr = simulate(red, make_state(red, 0.0, vec({0.1, 0.2, 0.3}), vec({0.5, -1.0})), f, c);
  REQUIRE(tf.size() == tr.size());
  double worst = 0.0;
  for (std::size_t k = 0; k < tf.size(); ++k) {
    worst = std::max(worst, max_abs(Vec(tf.states[k].zeta - tr.states[k].zeta)));
    worst = std::max(worst, std::abs(tf.states[k].omega(0) - tr.states[k].omega(0)));
    worst = std::max(worst, std::abs(tf.states[k].omega(2) - tr.states[k].omega(1)));
    CHECK_THAT(tf.energy[k], WithinAbs(tr.energy[k], 1e-9));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("fast gyroscope precesses at torque over spin momentum") {
  const PhSystem gy = gyroscope();
  const double spin = 200.0, torque = 1.0;
  const double rate = torque / (gy.mass(0, 0) * spin);
  SimConfig c;
  c.dt = 1e-4;
  c.t_end = 2.0;
  const Trajectory t = simulate(gy, make_state(gy, 0.0, Vec::Zero(3), vec({spin, 0.0, 0.0})),
                                [torque](double) { return Vec::Constant(1, -torque); }, c);
  const double measured = t.states.back().zeta(2) / t.times.back();
  CHECK_THAT(measured, WithinRel(rate, 0.01));
  for (const State& s : t.states) CHECK(std::abs(s.zeta(1)) < 0.01);
}

TEST_CASE("text parsers") {
  const ModelParams p = parse_params(" m = 2, ell=0.1 ");
  CHECK(p.at("m") == 2.0);
  CHECK(p.at("ell") == 0.1);
  CHECK(parse_params("").empty());
  CHECK_THROWS_AS(parse_params("m=2,m=3"), ParamError);
  CHECK_THROWS_AS(parse_params("m=abc"), ParamError);
  CHECK_THROWS_AS(parse_params("m=inf"), ParamError);
  CHECK_THROWS_AS(parse_params("m"), ParamError);

  const InitSpec i = parse_init("zeta=0,0,0.3;omega=1,0,2");
  CHECK(i.at("zeta") == vec({0.0, 0.0, 0.3}));
  CHECK(i.at("omega") == vec({1.0, 0.0, 2.0}));

  CHECK(parse_effort("", 2)(1.0) == Vec::Zero(2));
  CHECK(parse_effort("const:0.5", 2)(3.0) == vec({0.5, 0.5}));
  CHECK(parse_effort("const:1,2", 2)(0.0) == vec({1.0, 2.0}));
  const EffortFn tab = parse_effort("table:0=1;0.5=2,3", 2);
  CHECK(tab(0.2) == vec({1.0, 1.0}));
  CHECK(tab(0.5) == vec({2.0, 3.0}));
  const EffortFn s = parse_effort("sin:amp=2;freq=0.25;offset=1", 1);
  CHECK_THAT(s(1.0)(0), WithinAbs(3.0, 1e-15));
  CHECK_THROWS_AS(parse_effort("const:1,2,3", 2), ParamError);
  CHECK_THROWS_AS(parse_effort("table:1=0;0.5=1", 1), ParamError);
  CHECK_THROWS_AS(parse_effort("sin:amp=1", 1), ParamError);
  CHECK_THROWS_AS(parse_effort("ramp:1", 1), ParamError);
  CHECK_THROWS_AS(parse_effort("const:1", 0), ParamError);

  const CouplingSpec c = parse_pairing("0,1:0,1");
  CHECK(c.ports_1 == std::vector<int>{0, 1});
  CHECK(c.ports_2 == std::vector<int>{0, 1});
  CHECK_THROWS_AS(parse_pairing("0,1"), PortError);
  CHECK_THROWS_AS(parse_pairing("0.5:1"), PortError);
  CHECK_THROWS_AS(parse_pairing("0:1:2"), PortError);
}

TEST_CASE("registry lookups") {
  CHECK_THROWS_AS(find_model("unicycle"), ParamError);
  CHECK_THROWS_AS(build_model(find_model("diff-drive"), {{"mass", 1.0}}), ParamError);
  CHECK_THROWS_AS(build_model(find_model("remark-a1-counterexample"), {}), ParamError);
  const ModelEntry* comp = find_composite("crank", "rod-slider", slider_crank_pairing());
  REQUIRE(comp != nullptr);
  CHECK(comp->name == "slider-crank");
  CHECK(find_composite("rod-slider", "crank", slider_crank_pairing()) == nullptr);

  const ModelEntry& sc = find_model("slider-crank");
  const PhSystem sys = build_model(sc, {});
  const InitResult r = sc.init(sys, {}, parse_init("phi1=0.5;omega1=2"));
  CHECK(r.distance <= 1e-12);
  CHECK(slider_crank_closure({}, r.state.zeta) <= 1e-14);
  CHECK_THROWS_AS(sc.init(sys, {}, parse_init("phi1=0.5;zeta=0,0,0,0")), ParamError);

  const ModelEntry& dd = find_model("diff-drive");
  const InitResult g = dd.init(build_model(dd, {}), {}, parse_init("omega=1,0.1,0.2"));
  CHECK_THAT(g.distance, WithinAbs(0.1, 1e-14));
  CHECK_THROWS_AS(dd.init(build_model(dd, {}), {}, parse_init("omega=1,0")), ParamError);
}
