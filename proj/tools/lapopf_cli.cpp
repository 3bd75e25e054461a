// Command-line front end: parse a case, optionally preprocess it, solve the
// relaxation (plain or with the iterative weight loop), and emit reports.
//
// Exit codes: 0 converged/solved, 2 iteration limit, 3 infeasible, 4 solver
// failure, 1 I/O or parse errors.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "lapopf/algorithm.hpp"
#include "lapopf/case_io.hpp"
#include "lapopf/report.hpp"

namespace fs = std::filesystem;
using namespace lapopf;

namespace {

struct Options {
  std::vector<std::string> cases;
  double delta = 0.005;
  double eps_flow = 1.0;
  double eps_inj = 1.0;
  double eps_v = 5e-4;
  int max_iter = 100;
  double thrshz = 0.0;
  double min_r = 0.0;
  std::string objective = "cost";
  double qpen_eps_b = 1.0;
  double outer_delta_step = 0.0;
  bool no_eliminate_ref = false;
  std::string report_path;
  std::string trace_path;
  int jobs = 1;
};

void add_common_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("case", o.cases, "case file(s): MATPOWER .m or canonical JSON")->required();
  cmd->add_option("--delta", o.delta, "allowed relative cost increase over the relaxation bound");
  cmd->add_option("--eps-flow", o.eps_flow, "flow mismatch tolerance, MVA");
  cmd->add_option("--eps-inj", o.eps_inj, "injection mismatch tolerance, MVA");
  cmd->add_option("--eps-v", o.eps_v, "voltage violation tolerance, pu");
  cmd->add_option("--max-iter", o.max_iter, "weighted iteration budget");
  cmd->add_option("--thrshz", o.thrshz, "merge branches with impedance magnitude below this (pu)");
  cmd->add_option("--min-r", o.min_r, "raise branch resistances to at least this (pu)");
  cmd->add_option("--objective", o.objective, "base relaxation objective")
      ->check(CLI::IsMember({"cost", "laplacian", "qpen"}));
  cmd->add_option("--qpen-eps-b", o.qpen_eps_b, "weight of the reactive-power penalty objective");
  cmd->add_option("--outer-delta-step", o.outer_delta_step, "enable the outer loop: delta increment per round");
  cmd->add_flag("--no-eliminate-ref", o.no_eliminate_ref, "keep the reference-angle row instead of eliminating it");
  cmd->add_option("--report", o.report_path, "write the run report JSON here (directory when several cases)");
  cmd->add_option("--trace", o.trace_path, "write the per-iteration trace CSV here (directory when several cases)");
  cmd->add_option("--jobs", o.jobs, "run this many cases concurrently")->check(CLI::PositiveNumber);
}

CaseData load_and_prepare(const std::string& path, const Options& o, report::PreprocessSummary& prep) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  CaseFormat fmt = path.size() > 2 && path.substr(path.size() - 2) == ".m" ? CaseFormat::matpower_m : CaseFormat::json;
  CaseData cs = parse_case(ss.str(), fmt, fs::path(path).filename().string());
  prep.buses_before = cs.n();
  prep.branches_before = cs.n_branches();
  if (o.thrshz > 0.0) {
    auto [merged, log] = merge_low_impedance(cs, o.thrshz);
    cs = std::move(merged);
    prep.merged = true;
    prep.thrshz = o.thrshz;
  }
  if (o.min_r > 0.0) {
    cs = enforce_min_resistance(cs, o.min_r);
    prep.min_r_applied = true;
    prep.min_r = o.min_r;
  }
  prep.buses_after = cs.n();
  prep.branches_after = cs.n_branches();
  return cs;
}

report::SettingsEcho echo_settings(const Options& o) {
  report::SettingsEcho s;
  s.delta = o.delta;
  s.eps_flow = o.eps_flow;
  s.eps_inj = o.eps_inj;
  s.eps_v = o.eps_v;
  s.max_iter = o.max_iter;
  s.outer_delta_step = o.outer_delta_step;
  s.eliminate_ref = !o.no_eliminate_ref;
  s.objective = o.objective;
  s.qpen_eps_b = o.qpen_eps_b;
  return s;
}

// Output file for one case: the flag value itself, or a file inside it when
// several cases share one destination.
std::string out_path(const std::string& flag, const std::string& case_path, size_t n_cases, const char* suffix) {
  if (flag.empty()) return {};
  if (n_cases == 1 && !fs::is_directory(flag)) return flag;
  fs::create_directories(flag);
  return (fs::path(flag) / (fs::path(case_path).stem().string() + suffix)).string();
}

int outcome_code(alg::Outcome o) {
  switch (o) {
    case alg::Outcome::converged: return 0;
    case alg::Outcome::iteration_limit: return 2;
    case alg::Outcome::relaxation_infeasible: return 3;
    case alg::Outcome::solver_failure: return 4;
  }
  return 4;
}

std::mutex print_mutex;

int run_solve(const std::string& path, const Options& o, bool want_trace) {
  report::PreprocessSummary prep;
  CaseData cs = load_and_prepare(path, o, prep);
  NetworkMatrices net = build_admittance(cs);

  alg::AlgorithmSettings st;
  st.delta = o.delta;
  st.eps_flow = o.eps_flow;
  st.eps_inj = o.eps_inj;
  st.eps_v = o.eps_v;
  st.max_iter = o.max_iter;
  st.outer_delta_step = o.outer_delta_step;
  st.eliminate_ref = !o.no_eliminate_ref;

  auto sink = [&](const alg::IterationRecord& r) {
    std::lock_guard<std::mutex> lk(print_mutex);
    std::printf("[%s] iter %d  status %s  flow_mis %.6g MVA  inj_mis %.6g MVA  obj %.8g\n",
                fs::path(path).filename().c_str(), r.iter, conic::to_string(r.status), r.max_flow_mis, r.max_inj_mis,
                r.objective);
  };
  alg::AlgorithmResult res = alg::run_algorithm(cs, net, st, sink);

  {
    std::lock_guard<std::mutex> lk(print_mutex);
    std::printf("[%s] outcome %s  c* %.8g  achieved %.8g  gap %.4g%%  iterations %d  time %.2fs\n",
                fs::path(path).filename().c_str(), alg::to_string(res.outcome), res.c_star, res.achieved_cost,
                res.gap_bound * 100.0, res.iterations, res.total_time_s);
  }

  std::string rp = out_path(o.report_path, path, o.cases.size(), ".report.json");
  if (!rp.empty()) {
    nlohmann::json j =
        report::run_report(fs::path(path).filename().string(), prep, echo_settings(o), res, cs.base_mva);
    report::write_file(rp, j.dump(2) + "\n");
  }
  std::string tp = out_path(o.trace_path, path, o.cases.size(), ".trace.csv");
  if (want_trace && tp.empty()) {
    std::cerr << "trace output requires --trace <path>\n";
    return 1;
  }
  if (!tp.empty()) {
    std::ostringstream csv;
    report::write_trace_csv(csv, res.trace);
    report::write_file(tp, csv.str());
  }
  return outcome_code(res.outcome);
}

int run_relax(const std::string& path, const Options& o) {
  report::PreprocessSummary prep;
  CaseData cs = load_and_prepare(path, o, prep);
  NetworkMatrices net = build_admittance(cs);

  sdp::RelaxationBuilder b(cs, net, !o.no_eliminate_ref);
  if (o.objective == "cost") b.set_cost_objective();
  else if (o.objective == "laplacian")
    b.set_laplacian_objective(Eigen::VectorXd::Ones(static_cast<long>(net.branches.size())));
  else b.set_reactive_penalty_objective(o.qpen_eps_b);

  sdp::LiftedSolution s = sdp::solve_relaxation(b);
  if (s.conic.status == conic::SolveStatus::infeasible) {
    std::printf("[%s] status infeasible\n", fs::path(path).filename().c_str());
    return 3;
  }
  if (s.conic.status != conic::SolveStatus::optimal) {
    std::printf("[%s] status %s\n", fs::path(path).filename().c_str(), conic::to_string(s.conic.status));
    return 4;
  }

  bool rank_one = s.rank_ratio <= sdp::kRankOneRatio;
  nlohmann::json j;
  j["case"] = fs::path(path).filename().string();
  j["preprocessing"] = report::to_json(prep);
  j["objective_kind"] = o.objective;
  j["status"] = conic::to_string(s.conic.status);
  j["objective"] = s.conic.objective;
  j["c_star"] = o.objective == "cost"
                    ? nlohmann::json(std::min(s.epigraph_cost, s.conic.dual_objective))
                    : nlohmann::json();
  j["lambda1"] = s.lambda1;
  j["lambda2"] = s.lambda2;
  j["rank_ratio"] = s.rank_ratio;
  j["numerically_rank_one"] = rank_one;
  j["iterations"] = s.conic.iterations;

  VoltageVector v = sdp::recover_voltages(b.matrices(), s);
  FeasibilityReport rep = check_feasibility(cs, net, v, {o.eps_v, o.eps_flow, o.eps_inj});
  j["feasibility"] = {{"pass", rep.pass},
                     {"max_voltage_violation_pu", rep.max_voltage_violation},
                     {"max_gen_box_violation_pu", rep.max_gen_box_violation},
                     {"max_flow_violation_mva", rep.max_flow_violation_mva}};

  {
    std::lock_guard<std::mutex> lk(print_mutex);
    std::printf("[%s] status optimal  objective %.8g  rank ratio %.3g  numerically rank-one: %s  feasible: %s\n",
                fs::path(path).filename().c_str(), s.conic.objective, s.rank_ratio, rank_one ? "true" : "false",
                rep.pass ? "true" : "false");
  }
  std::string rp = out_path(o.report_path, path, o.cases.size(), ".relax.json");
  if (!rp.empty()) report::write_file(rp, j.dump(2) + "\n");
  return 0;
}

int run_batch(const Options& o, const std::function<int(const std::string&)>& one) {
  std::atomic<int> worst{0};
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= o.cases.size()) return;
      int code;
      try {
        code = one(o.cases[i]);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lk(print_mutex);
        std::cerr << o.cases[i] << ": " << e.what() << "\n";
        code = 1;
      }
      int cur = worst.load();
      while (code > cur && !worst.compare_exchange_weak(cur, code)) {
      }
    }
  };
  int nthreads = std::min<int>(o.jobs, static_cast<int>(o.cases.size()));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return worst.load();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conic relaxation solver for optimal power flow"};
  app.require_subcommand(1);
  Options solve_o, relax_o, trace_o;
  CLI::App* solve = app.add_subcommand("solve", "run the full iterative pipeline");
  CLI::App* relax = app.add_subcommand("relax", "solve the base relaxation only");
  CLI::App* trace = app.add_subcommand("trace", "run the pipeline and export the per-iteration CSV");
  add_common_flags(solve, solve_o);
  add_common_flags(relax, relax_o);
  add_common_flags(trace, trace_o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve->parsed()) return run_batch(solve_o, [&](const std::string& c) { return run_solve(c, solve_o, false); });
    if (relax->parsed()) return run_batch(relax_o, [&](const std::string& c) { return run_relax(c, relax_o); });
    if (trace->parsed()) {
      if (trace_o.trace_path.empty()) {
        std::cerr << "trace: missing --trace <path>\n";
        return 1;
      }
      return run_batch(trace_o, [&](const std::string& c) { return run_solve(c, trace_o, true); });
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
