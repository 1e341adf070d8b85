// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "phmb/interconnect.hpp"
#include "phmb/models.hpp"
#include "phmb/registry.hpp"
#include "phmb/sim.hpp"
#include "phmb/verify.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace phmb;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

std::string num(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

void require(Outcome& o, bool ok, const std::string& what) {
  if (!ok) {
    o.pass = false;
    o.detail += (o.detail.empty() ? "" : "; ") + std::string("failed: ") + what;
  }
}

void note(Outcome& o, const std::string& s) { o.detail += (o.detail.empty() ? "" : "; ") + s; }

bool same_span(const Mat& a, const Mat& b) {
  Mat ab(a.rows(), a.cols() + b.cols());
  ab << a, b;
  const int r = numerical_rank(a);
  return r == numerical_rank(b) && r == numerical_rank(ab);
}

double rel_drift(const Trajectory& t) {
  double d = 0.0;
  for (double e : t.energy) d = std::max(d, std::abs(e - t.energy[0]) / std::abs(t.energy[0]));
  return d;
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("phmb_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int cli(const std::string& args, const std::string& stdout_file = "/dev/null") {
  const std::string cmd = "cd '" + workdir().string() + "' && '" + PHMB_CLI_PATH + "' " + args + " >'" + stdout_file +
                          "' 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

Outcome dirac_axioms() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int passed = 0, rejected = 0;
  for (int t = 0; t < 100; ++t) {
    const int n = 1 + t % 12;
    Mat a(n, n);
    for (auto& x : a.reshaped()) x = u(rng);
    const Mat J = a - a.transpose();
    const Mat I = Mat::Identity(n, n);
    if (check_dirac_pointwise(ImageRep{J, I}).passed()) ++passed;
    Mat s(n, n);
    for (auto& x : s.reshaped()) x = u(rng);
    const Mat sym = 1e-3 * (s + s.transpose()) / std::max(1e-12, max_abs(Mat(s + s.transpose())));
    if (!check_dirac_pointwise(ImageRep{Mat(J + sym), I}).passed()) ++rejected;
  }
  require(o, passed == 100, "skew accepted " + std::to_string(passed) + "/100");
  require(o, rejected == 100, "perturbed rejected " + std::to_string(rejected) + "/100");
  note(o, "skew accepted " + std::to_string(passed) + "/100, perturbed rejected " + std::to_string(rejected) + "/100");
  return o;
}

Outcome remark_regression() {
  Outcome o;
  const ImageRep D = remark_a1_structure();
  auto rep = [&](const Vec&) { return D; };
  auto E = [](const Vec& x) { return remark_a1_constraint(x(0)); };
  const CheckResult full =
      check_dim_constancy(rep, E, make_samples(SampleBox{Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)}, 200, 42));
  require(o, !full.passed(), "dimension check passed on a box containing 0");
  require(o, full.witness && std::abs((*full.witness)(0)) <= 1e-12, "witness is not x = 0");
  for (const auto& [lo, hi] : std::vector<std::pair<double, double>>{{0.01, 1.0}, {-1.0, -0.01}, {1e-3, 5.0}, {-5.0, -2.0}}) {
    const CheckResult r =
        check_dim_constancy(rep, E, make_samples(SampleBox{Vec::Constant(1, lo), Vec::Constant(1, hi)}, 200, 42));
    require(o, r.passed(), "box [" + num(lo) + ", " + num(hi) + "] fails");
  }
  // expected spans: R^2 x {0} away from 0, D itself at 0
  Mat flows_only = Mat::Zero(4, 2);
  flows_only(0, 0) = flows_only(1, 1) = 1.0;
  Mat d_span = Mat::Zero(4, 2);
  d_span(0, 0) = 1.0;
  d_span(3, 1) = 1.0;
  for (double x : {-2.0, -0.3, 1e-3, 0.7, 4.0}) {
    const ImageRep c = assemble_constrained_dirac(D, remark_a1_constraint(x));
    require(o, same_span(vstack(c.K, c.L), flows_only), "constrained structure at x = " + num(x));
  }
  const ImageRep c0 = assemble_constrained_dirac(D, remark_a1_constraint(0.0));
  require(o, same_span(vstack(c0.K, c0.L), d_span), "constrained structure at x = 0");
  note(o, "witness x = " + (full.witness ? num((*full.witness)(0)) : std::string("none")));
  return o;
}

Outcome structure_verification() {
  Outcome o;
  for (const char* m : {"diff-drive", "diff-drive-reduced", "gyroscope", "crank", "rod-slider", "slider-crank"}) {
    const int code = cli(std::string("verify --model ") + m + " --samples 200 --seed 42");
    require(o, code == 0, std::string(m) + " exit " + std::to_string(code));
  }
  note(o, "6 models");
  return o;
}

Outcome energy_conservation() {
  Outcome o;
  SimConfig c;
  c.dt = 1e-3;
  c.t_end = 10.0;
  const PhSystem dd = diff_drive();
  const PhSystem gy = gyroscope();
  const double e_dd = rel_drift(simulate(dd, consistent_init(dd, vec({0.0, 0.0, 0.3}), vec({1.0, 0.0, 2.0})), {}, c));
  const double e_gy = rel_drift(simulate(gy, make_state(gy, 0.0, vec({0.1, 0.2, 0.3}), vec({10.0, 3.0, -2.0})), {}, c));
  require(o, e_dd <= 1e-8, "diff-drive drift " + num(e_dd));
  require(o, e_gy <= 1e-8, "gyroscope drift " + num(e_gy));
  // halving dt on forced runs
  auto balance = [](const PhSystem& s, const State& s0, const EffortFn& f, double dt) {
    SimConfig cc;
    cc.dt = dt;
    cc.t_end = 10.0;
    return simulate(s, s0, f, cc).max_abs_balance();
  };
  const State d0 = consistent_init(dd, Vec::Zero(3), vec({0.5, 0.0, 1.0}));
  auto fd = [](double t) { return vec({0.3 * std::sin(2.0 * t), -0.2 * std::cos(3.0 * t)}); };
  const double rd = balance(dd, d0, fd, 1e-3) / balance(dd, d0, fd, 5e-4);
  const State g0 = make_state(gy, 0.0, vec({0.1, 0.2, 0.3}), vec({10.0, 1.0, -2.0}));
  auto fg = [](double t) { return Vec::Constant(1, 0.05 * std::sin(5.0 * t)); };
  const double rg = balance(gy, g0, fg, 1e-3) / balance(gy, g0, fg, 5e-4);
  require(o, rd >= 3.5, "diff-drive halving ratio " + num(rd));
  require(o, rg >= 3.5, "gyroscope halving ratio " + num(rg));
  note(o, "drift " + num(e_dd) + " / " + num(e_gy) + ", halving ratios " + num(rd) + " / " + num(rg));
  return o;
}

Outcome constraint_exactness() {
  Outcome o;
  struct Scenario {
    std::string name;
    PhSystem sys;
    State s0;
    EffortFn f;
    double t_end;
  };
  const PhSystem dd = diff_drive(), dr = diff_drive_reduced(), gy = gyroscope(), cr = crank(), rs = rod_slider(),
                 sc = slider_crank();
  std::vector<Scenario> sc_list{
      {"diff-drive free", dd, consistent_init(dd, vec({0.0, 0.0, 0.3}), vec({1.0, 0.0, 2.0})), {}, 10.0},
      {"diff-drive forced", dd, consistent_init(dd, Vec::Zero(3), vec({0.5, 0.0, 1.0})),
       [](double t) { return vec({0.3 * std::sin(2.0 * t), -0.2}); }, 10.0},
      {"diff-drive-reduced", dr, make_state(dr, 0.0, Vec::Zero(3), vec({0.5, 1.0})),
       [](double t) { return vec({0.1, 0.2 * std::cos(t)}); }, 5.0},
      {"gyroscope", gy, make_state(gy, 0.0, vec({0.1, 0.2, 0.3}), vec({10.0, 3.0, -2.0})),
       [](double t) { return Vec::Constant(1, 0.05 * std::sin(5.0 * t)); }, 5.0},
      {"crank", cr, make_state(cr, 0.0, Vec::Zero(1), Vec::Constant(1, 2.0)),
       [](double) { return vec({0.0, 0.0, -0.01}); }, 5.0},
      {"rod-slider", rs, consistent_init(rs, vec({0.5, 0.0, 0.3}), vec({0.2, 0.5, 2.0})),
       [](double t) { return vec({0.0, 0.0, 0.1 * std::sin(t)}); }, 5.0},
      {"slider-crank free", sc, slider_crank_state(sc, {}, 0.0, 5.0), {}, 10.0},
      {"slider-crank forced", sc, slider_crank_state(sc, {}, 1.0, 2.0),
       [](double t) { return vec({-0.02 * std::sin(3.0 * t), 0.1}); }, 10.0},
  };
  double worst_c = 0.0, worst_a = 0.0;
  for (const Scenario& s : sc_list) {
    SimConfig c;
    c.t_end = s.t_end;
    const Trajectory t = simulate(s.sys, s.s0, s.f, c);
    double wc = 0.0, wa = 0.0;
    for (const auto& r : t.constraints) {
      wc = std::max(wc, r.position);
      wa = std::max(wa, r.velocity);
    }
    require(o, wc <= 1e-11 && wa <= 1e-11, s.name + " |c| " + num(wc) + " |A w| " + num(wa));
    worst_c = std::max(worst_c, wc);
    worst_a = std::max(worst_a, wa);
  }
  note(o, std::to_string(sc_list.size()) + " scenarios, max |c| " + num(worst_c) + ", max |A w| " + num(worst_a));
  return o;
}

Outcome reduced_equivalence() {
  Outcome o;
  const PhSystem full = diff_drive(), red = diff_drive_reduced();
  auto f = [](double t) { return vec({0.4 * std::sin(t), -0.3 + 0.1 * t}); };
  SimConfig c;
  c.t_end = 5.0;
  const Trajectory tf = simulate(full, consistent_init(full, vec({0.1, 0.2, 0.3}), vec({0.5, 0.0, -1.0})), f, c);
  const Trajectory tr = simulate(red, make_state(red, 0.0, vec({0.1, 0.2, 0.3}), vec({0.5, -1.0})), f, c);
  double worst = 0.0;
  for (std::size_t k = 0; k < tf.size(); ++k) {
    worst = std::max(worst, max_abs(Vec(tf.states[k].zeta - tr.states[k].zeta)));
    worst = std::max(worst, std::abs(tf.states[k].omega(0) - tr.states[k].omega(0)));
    worst = std::max(worst, std::abs(tf.states[k].omega(1)));
    worst = std::max(worst, std::abs(tf.states[k].omega(2) - tr.states[k].omega(1)));
  }
  require(o, tf.size() == tr.size(), "trajectory lengths differ");
  require(o, worst <= 1e-9, "max difference " + num(worst));
  note(o, "max difference " + num(worst));
  return o;
}

Outcome gyroscope_physics() {
  Outcome o;
  const PhSystem gy = gyroscope();
  SimConfig c;
  c.t_end = 10.0;
  const Trajectory spin = simulate(gy, make_state(gy, 0.0, Vec::Zero(3), vec({10.0, 0.0, 0.0})), {}, c);
  double dev = 0.0;
  for (const State& s : spin.states) {
    dev = std::max(dev, max_abs(Vec(s.omega - vec({10.0, 0.0, 0.0}))));
    dev = std::max(dev, std::max(std::abs(s.zeta(1)), std::abs(s.zeta(2))));
  }
  require(o, dev <= 1e-9, "spin deviation " + num(dev));

  // precession rate gamma(T)/T for spin 200 rad/s under a unit torque on the second gimbal axis
  const double ws = 200.0, torque = 1.0, T = 2.0;
  const double predicted = torque / (gy.mass(0, 0) * ws);
  const State s0 = make_state(gy, 0.0, Vec::Zero(3), vec({ws, 0.0, 0.0}));
  auto rate = [&](double dt) {
    SimConfig cc;
    cc.dt = dt;
    Stepper st(gy, cc);
    const EffortFn f = [torque](double) { return Vec::Constant(1, -torque); };
    State s = s0;
    const long n = std::lround(T / dt);
    for (long k = 0; k < n; ++k) s = st.step(s, f).state;
    return s.zeta(2) / T;
  };
  const double ref = rate(1e-6);
  const double prod = rate(1e-3);
  require(o, std::abs(ref - predicted) <= 0.02 * predicted, "reference rate " + num(ref));
  require(o, std::abs(prod - predicted) <= 0.02 * predicted, "dt = 1e-3 rate " + num(prod));
  require(o, std::abs(prod - ref) <= 0.02 * std::abs(ref), "dt = 1e-3 vs reference");
  note(o, "spin deviation " + num(dev) + ", precession predicted " + num(predicted, 6) + ", reference " +
              num(ref, 6) + ", dt=1e-3 " + num(prod, 6));
  return o;
}

Outcome interconnection_closure() {
  Outcome o;
  const PhSystem sc = slider_crank();
  const VerificationReport rep = verify_composite(sc, VerifyOptions{});
  require(o, rep.overall(), "verify_system on the coupled system");

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-3.2, 3.2);
  const double l1 = 0.2, l2 = 0.5;
  double worst_a = 0.0;
  for (int k = 0; k < 50; ++k) {
    const Vec z = vec({u(rng), 0.3 * u(rng), 0.01 * u(rng), u(rng)});
    const double s1 = std::sin(z(0)), c1 = std::cos(z(0)), s2 = std::sin(z(3)), c2 = std::cos(z(3));
    Mat expect(2, 4);
    expect << -l1 * s1, -c2, s2, l2 * s2, l1 * c1, -s2, -c2, -l2 * c2;
    worst_a = std::max(worst_a, max_abs(Mat(eval_velocity_constraints(sc, z) - expect)));
  }
  require(o, worst_a <= 1e-12, "A mismatch " + num(worst_a));

  SimConfig c;
  c.t_end = 10.0;
  const Trajectory t = simulate(sc, slider_crank_state(sc, {}, 0.0, 5.0), {}, c);
  double power = 0.0, closure = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    power = std::max(power, std::abs(coupling_power_residual(sc, t.states[k], t.multipliers[k])));
    closure = std::max(closure, slider_crank_closure({}, t.states[k].zeta));
  }
  const double drift = rel_drift(t);
  require(o, power <= 1e-10, "coupling power " + num(power));
  require(o, drift <= 1e-6, "energy drift " + num(drift));
  require(o, closure <= 1e-6, "loop closure " + num(closure));
  note(o, "A mismatch " + num(worst_a) + ", coupling power " + num(power) + ", energy drift " + num(drift) +
              ", closure " + num(closure));
  return o;
}

Outcome lagrangian_checks() {
  Outcome o;
  const double m = 0.8, L = 1.5, g = 9.81;
  auto H = [=](const Vec& z) { return 0.5 * z.tail(2).squaredNorm() / m + m * g * z(1); };
  auto gH = [=](const Vec& z) {
    Vec out(4);
    out << 0.0, m * g, z.tail(2) / m;
    return out;
  };
  auto d = [=](const Vec& z) { return Vec::Constant(1, 0.5 * (z.head(2).squaredNorm() - L * L)); };
  auto dj = [](const Vec& z) {
    Mat j = Mat::Zero(1, 4);
    j.leftCols(2) = z.head(2).transpose();
    return j;
  };
  for (double th : {0.0, 0.7, 2.0, -1.3}) {
    const Vec z = vec({L * std::sin(th), -L * std::cos(th), 0.3, -0.2});
    require(o, check_lagrangian_local(H, gH, d, dj, z).passed(), "pendulum at theta = " + num(th));
  }
  auto no_d = [](const Vec&) { return Vec(0); };
  auto no_dj = [](const Vec& x) { return Mat(0, x.size()); };
  auto rot = [](const Vec& x) { return vec({x(1), -x(0)}); };
  require(o, !check_lagrangian_local({}, rot, no_d, no_dj, vec({0.3, -0.8})).passed(), "non-gradient field passed");
  bool rank_error = false;
  try {
    check_lagrangian_local({}, [](const Vec& x) { return x; }, [](const Vec& x) { return Vec::Constant(2, x(0)); },
                           [](const Vec&) {
                             Mat j = Mat::Zero(2, 2);
                             j(0, 0) = j(1, 0) = 1.0;
                             return j;
                           },
                           Vec::Zero(2));
  } catch (const RankError&) {
    rank_error = true;
  }
  require(o, rank_error, "rank-deficient constraint did not raise RankError");
  note(o, "pendulum passes at 4 angles, rotation field fails, duplicated row raises RankError");
  return o;
}

Outcome determinism() {
  Outcome o;
  const fs::path dir = workdir();
  const std::string sim = "simulate --model slider-crank --init \"omega1=5\" --effort \"sin:amp=0.1,0.05;freq=1\" --t-end 2 --out ";
  require(o, cli(sim + "a.csv") == 0 && cli(sim + "b.csv") == 0, "simulate exit code");
  require(o, slurp(dir / "a.csv") == slurp(dir / "b.csv"), "simulate CSV differs");
  const std::string gyro = "simulate --model gyroscope --init \"zeta=0.1,0.2,0.3;omega=10,3,-2\" --t-end 1 --out ";
  require(o, cli(gyro + "g1.csv") == 0 && cli(gyro + "g2.csv") == 0, "gyroscope exit code");
  require(o, slurp(dir / "g1.csv") == slurp(dir / "g2.csv"), "gyroscope CSV differs");
  require(o, cli("verify --model slider-crank --seed 42", (dir / "v1.txt").string()) == 0, "verify exit code");
  require(o, cli("verify --model slider-crank --seed 42", (dir / "v2.txt").string()) == 0, "verify exit code");
  require(o, slurp(dir / "v1.txt") == slurp(dir / "v2.txt"), "verify report differs");
  const std::string cpl = "couple --a crank --b rod-slider --pair \"0,1:0,1\" --simulate --init \"omega1=2\" --t-end 0.5 --out ";
  require(o, cli(cpl + "c1.csv", (dir / "c1.txt").string()) == 0 && cli(cpl + "c2.csv", (dir / "c2.txt").string()) == 0,
          "couple exit code");
  require(o, slurp(dir / "c1.csv") == slurp(dir / "c2.csv") && slurp(dir / "c1.txt") == slurp(dir / "c2.txt"),
          "couple output differs");
  note(o, "simulate, verify and couple repeated byte-identical");
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* title;
    std::function<Outcome()> run;
    double budget_s;  // 0 = no runtime limit
  };
  const std::vector<Criterion> criteria{
      {1, "Dirac axioms", dirac_axioms, 1.0},
      {2, "rank-drop counterexample", remark_regression, 1.0},
      {3, "structure verification", structure_verification, 10.0},
      {4, "energy conservation", energy_conservation, 30.0},
      {5, "constraint exactness", constraint_exactness, 0.0},
      {6, "reduced-model equivalence", reduced_equivalence, 0.0},
      {7, "gyroscope physics", gyroscope_physics, 60.0},
      {8, "interconnection closure", interconnection_closure, 0.0},
      {9, "Lagrangian checks", lagrangian_checks, 0.0},
      {10, "determinism", determinism, 0.0},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0.0 && secs > c.budget_s) {
      o.pass = false;
      note(o, "runtime " + num(secs) + " s over the " + num(c.budget_s) + " s budget");
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.title << "): " << o.detail << " ["
              << num(secs) << " s]" << std::endl;
  }
  std::error_code ec;
  fs::remove_all(workdir(), ec);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
