// phmb: simulate, verify and couple registered port-Hamiltonian multibody models.
//
// Exit codes: 0 success, 1 verification or rank failure, 2 solver failure, 3 invalid input.

#include "phmb/registry.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

namespace {

using namespace phmb;

constexpr int kOk = 0;
constexpr int kFail = 1;
constexpr int kSolver = 2;
constexpr int kInvalid = 3;

struct SimOptions {
  std::string init;
  std::string effort;
  double dt = 1e-3;
  double t_end = 1.0;
  std::string scheme = "midpoint";
  std::string constraint_point = "midpoint";
  double newton_tol = SimConfig{}.newton_tol;
  int newton_max_iter = SimConfig{}.newton_max_iter;
  double projection_tol = SimConfig{}.projection_tol;
  int max_halvings = SimConfig{}.max_halvings;
  double baumgarte_alpha = 0.0;
  double baumgarte_beta = 0.0;
  std::string out = "-";
};

struct SampleOptions {
  int samples = 200;
  std::uint64_t seed = 42;
};

void add_sim_options(CLI::App* cmd, SimOptions& o) {
  cmd->add_option("--init", o.init, "initial condition, e.g. \"zeta=0,0,0;omega=1,0,0\" or \"omega1=5\"");
  cmd->add_option("--effort", o.effort,
                  "effort schedule: const:v.. | table:t0=v..;t1=v.. | sin:amp=..;freq=..;phase=..;offset=..");
  cmd->add_option("--dt", o.dt, "step size")->capture_default_str();
  cmd->add_option("--t-end", o.t_end, "final time")->capture_default_str();
  cmd->add_option("--scheme", o.scheme, "midpoint | rk4")
      ->check(CLI::IsMember({"midpoint", "rk4"}))
      ->capture_default_str();
  cmd->add_option("--constraint-point", o.constraint_point, "where the midpoint step imposes constraints")
      ->check(CLI::IsMember({"midpoint", "endpoint"}))
      ->capture_default_str();
  cmd->add_option("--newton-tol", o.newton_tol)->capture_default_str();
  cmd->add_option("--newton-max-iter", o.newton_max_iter)->capture_default_str();
  cmd->add_option("--projection-tol", o.projection_tol)->capture_default_str();
  cmd->add_option("--max-halvings", o.max_halvings)->capture_default_str();
  cmd->add_option("--baumgarte-alpha", o.baumgarte_alpha, "rk4 only")->capture_default_str();
  cmd->add_option("--baumgarte-beta", o.baumgarte_beta, "rk4 only")->capture_default_str();
  cmd->add_option("--out", o.out, "trajectory CSV path ('-' = standard output)")->capture_default_str();
}

void add_sample_options(CLI::App* cmd, SampleOptions& o) {
  cmd->add_option("--samples", o.samples, "number of sample points")->capture_default_str();
  cmd->add_option("--seed", o.seed, "sampling seed")->capture_default_str();
}

SimConfig to_config(const SimOptions& o) {
  SimConfig c;
  c.dt = o.dt;
  c.t_end = o.t_end;
  c.scheme = o.scheme == "rk4" ? Scheme::Rk4Projection : Scheme::ImplicitMidpoint;
  c.constraint_point = o.constraint_point == "endpoint" ? ConstraintPoint::Endpoint : ConstraintPoint::Midpoint;
  c.newton_tol = o.newton_tol;
  c.newton_max_iter = o.newton_max_iter;
  c.projection_tol = o.projection_tol;
  c.max_halvings = o.max_halvings;
  c.baumgarte_alpha = o.baumgarte_alpha;
  c.baumgarte_beta = o.baumgarte_beta;
  c.validate();
  return c;
}

/// "lo1,lo2:hi1,hi2"
SampleBox parse_box(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ParamError("box must look like 'lo1,..:hi1,..', got '" + s + "'");
  SampleBox b{text::parse_vector(s.substr(0, colon), "box lower bounds"),
              text::parse_vector(s.substr(colon + 1), "box upper bounds")};
  if (b.lo.size() != b.hi.size()) throw ParamError("box bounds differ in length");
  if ((b.hi.array() < b.lo.array()).any()) throw ParamError("box upper bound below lower bound");
  return b;
}

/// Output sink: a file, or standard output for "-" / empty.
class Sink {
 public:
  explicit Sink(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) throw ParamError("cannot open '" + path + "' for writing");
    }
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }
  bool is_stdout() const { return !file_; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

/// Simulates, writes the CSV and prints the summary.
void run_and_report(const PhSystem& sys, const InitResult& init, const std::string& effort, const SimOptions& so) {
  const SimConfig cfg = to_config(so);
  const EffortFn tau = parse_effort(effort, sys.n_ports);
  Sink csv(so.out);
  std::ostream& summary = csv.is_stdout() ? std::cerr : std::cout;
  summary << "model=" << sys.name << "\n";
  summary << "projection_distance=" << format_double(init.distance) << "\n";
  Trajectory traj;
  try {
    simulate_into(sys, init.state, tau, cfg, traj);
  } catch (...) {
    if (traj.size() > 0) write_csv(csv.stream(), sys, traj);
    summary << "accepted_steps=" << (traj.size() > 0 ? traj.size() - 1 : 0) << "\n";
    throw;
  }
  write_csv(csv.stream(), sys, traj);
  csv.stream().flush();
  summary << "steps=" << traj.size() - 1 << "\n";
  summary << "final_H=" << format_double(traj.energy.back()) << "\n";
  summary << "max_balance_residual=" << format_double(traj.max_abs_balance()) << "\n";
  summary << "max_constraint_residual=" << format_double(traj.max_constraint_residual()) << "\n";
}

InitResult make_init(const ModelEntry& e, const PhSystem& sys, const ModelParams& p, const std::string& init) {
  return e.init(sys, p, parse_init(init));
}

int cmd_simulate(const std::string& model, const std::string& params, const SimOptions& so) {
  const ModelEntry& e = find_model(model);
  const ModelParams p = parse_params(params);
  const PhSystem sys = build_model(e, p);
  run_and_report(sys, make_init(e, sys, p, so.init), so.effort, so);
  return kOk;
}

struct VerifyCli {
  std::string model;
  std::string params;
  SampleOptions samples;
  std::string pos_box;
  std::string vel_box;
  double tol = VerifyOptions{}.tol;
  double rank_tol = VerifyOptions{}.rank_tol;
  double fd_tol = VerifyOptions{}.fd_tol;
  double lagrangian_tol = VerifyOptions{}.lagrangian_tol;
  std::string report = "-";
};

int cmd_verify(const VerifyCli& v) {
  if (v.samples.samples <= 0) throw ParamError("--samples must be positive");
  const ModelEntry& e = find_model(v.model);
  const ModelParams p = parse_params(v.params);
  VerifyOptions opt;
  opt.count = v.samples.samples;
  opt.seed = v.samples.seed;
  opt.tol = v.tol;
  opt.rank_tol = v.rank_tol;
  opt.fd_tol = v.fd_tol;
  opt.lagrangian_tol = v.lagrangian_tol;
  if (!v.pos_box.empty()) opt.pos_box = parse_box(v.pos_box);
  if (!v.vel_box.empty()) opt.vel_box = parse_box(v.vel_box);
  const VerificationReport rep = verify_model(e, p, opt);
  Sink out(v.report);
  out.stream() << format_report(rep);
  return rep.overall() ? kOk : kFail;
}

struct CoupleCli {
  std::string a;
  std::string b;
  std::string params_a;
  std::string params_b;
  std::string pair;
  std::string name;
  SampleOptions samples;
  bool force = false;
  bool simulate = false;
  std::string report = "-";
  SimOptions sim;
};

int cmd_couple(const CoupleCli& c) {
  if (c.samples.samples <= 0) throw ParamError("--samples must be positive");
  const ModelEntry& ea = find_model(c.a);
  const ModelEntry& eb = find_model(c.b);
  const ModelParams pa = parse_params(c.params_a);
  const ModelParams pb = parse_params(c.params_b);
  const PhSystem s1 = build_model(ea, pa);
  const PhSystem s2 = build_model(eb, pb);
  const CouplingSpec spec = parse_pairing(c.pair);
  validate_coupling(s1, s2, spec);
  const CheckResult rank =
      check_interconnection_rank(s1, s2, spec, coupled_position_samples(s1, s2, c.samples.samples, c.samples.seed));
  const PhSystem sys = couple(s1, s2, spec, c.name.empty() ? c.a + "+" + c.b : c.name);
  VerificationReport rep;
  rep.subject = sys.name;
  rep.count = c.samples.samples;
  rep.seed = c.samples.seed;
  rep.checks.push_back(rank);
  {
    Sink out(c.report);
    out.stream() << format_report(rep);
    if (!rank.passed()) {
      std::cerr << "interconnection rank condition fails";
      if (rank.witness) std::cerr << " at witness " << format_vector(*rank.witness);
      std::cerr << " (" << rank.detail << ")\n";
    }
  }
  if (!rank.passed() && !c.force) return kFail;
  if (c.simulate) {
    // A registered composite with the same recipe supplies its own initialization keys.
    const ModelEntry* comp = find_composite(c.a, c.b, spec);
    InitResult init;
    if (comp) {
      ModelParams merged = pa;
      merged.insert(pb.begin(), pb.end());
      init = comp->init(sys, merged, parse_init(c.sim.init));
    } else {
      init = generic_init(sys, parse_init(c.sim.init));
    }
    run_and_report(sys, init, c.sim.effort, c.sim);
  }
  return kOk;
}

int list_models() {
  for (const auto& e : registry()) {
    std::cout << e.name << (e.fixture ? " [fixture]" : "") << ": " << e.description;
    if (!e.param_keys.empty()) {
      std::cout << " (params:";
      for (const auto& k : e.param_keys) std::cout << ' ' << k;
      std::cout << ')';
    }
    std::cout << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Port-Hamiltonian multibody simulator and structure checker"};
  app.set_config("--config", "", "TOML config file; command-line flags take precedence");
  app.require_subcommand(1);
  app.allow_config_extras(CLI::config_extras_mode::error);

  std::string model, params;
  SimOptions sim;
  auto* simulate = app.add_subcommand("simulate", "integrate a registered model and write a trajectory CSV");
  simulate->add_option("--model", model, "registered model name")->required();
  simulate->add_option("--params", params, "parameter overrides, e.g. \"m=2,ell=0.1\"");
  add_sim_options(simulate, sim);

  VerifyCli vc;
  auto* verify = app.add_subcommand("verify", "check the port-Hamiltonian structure on sampled states");
  verify->add_option("--model", vc.model, "registered model name")->required();
  verify->add_option("--params", vc.params, "parameter overrides");
  add_sample_options(verify, vc.samples);
  verify->add_option("--pos-box", vc.pos_box, "position sample box \"lo1,..:hi1,..\"");
  verify->add_option("--vel-box", vc.vel_box, "velocity sample box \"lo1,..:hi1,..\"");
  verify->add_option("--tol", vc.tol, "structural identity tolerance")->capture_default_str();
  verify->add_option("--rank-tol", vc.rank_tol, "relative rank threshold")->capture_default_str();
  verify->add_option("--fd-tol", vc.fd_tol, "finite-difference tolerance")->capture_default_str();
  verify->add_option("--lagrangian-tol", vc.lagrangian_tol)->capture_default_str();
  verify->add_option("--report", vc.report, "report path ('-' = standard output)")->capture_default_str();

  CoupleCli cc;
  auto* couple_cmd = app.add_subcommand("couple", "couple two registered models and check the rank condition");
  couple_cmd->add_option("--a", cc.a, "first model")->required();
  couple_cmd->add_option("--b", cc.b, "second model")->required();
  couple_cmd->add_option("--params-a", cc.params_a, "parameter overrides of the first model");
  couple_cmd->add_option("--params-b", cc.params_b, "parameter overrides of the second model");
  couple_cmd->add_option("--pair", cc.pair, "paired port indices \"i,j:k,l\"")->required();
  couple_cmd->add_option("--name", cc.name, "name of the coupled system");
  add_sample_options(couple_cmd, cc.samples);
  couple_cmd->add_flag("--force", cc.force, "continue after a rank-condition failure");
  couple_cmd->add_flag("--simulate", cc.simulate, "simulate the coupled system");
  couple_cmd->add_option("--report", cc.report, "report path ('-' = standard output)")->capture_default_str();
  add_sim_options(couple_cmd, cc.sim);

  app.add_subcommand("models", "list registered models");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  try {
    if (*simulate) return cmd_simulate(model, params, sim);
    if (*verify) return cmd_verify(vc);
    if (*couple_cmd) return cmd_couple(cc);
    return list_models();
  } catch (const NoConvergence& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kSolver;
  } catch (const SingularSystem& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kSolver;
  } catch (const RankError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kSolver;
  } catch (const Error& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }
}
