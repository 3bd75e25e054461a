#pragma once

// Machine-readable run artifacts: the JSON run report and the per-iteration
// trace CSV. This layer only serializes what the algorithm produced; it never
// recomputes results.

#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lapopf/algorithm.hpp"
#include "lapopf/case_io.hpp"

namespace lapopf::report {

struct PreprocessSummary {
  int buses_before = 0, branches_before = 0;
  int buses_after = 0, branches_after = 0;
  bool merged = false;
  double thrshz = 0.0;
  bool min_r_applied = false;
  double min_r = 0.0;
};

struct SettingsEcho {
  double delta = 0.005;
  double eps_flow = 1.0;
  double eps_inj = 1.0;
  double eps_v = 5e-4;
  int max_iter = 100;
  double outer_delta_step = 0.0;
  bool eliminate_ref = true;
  std::string objective = "cost";
  double qpen_eps_b = 0.0;
};

inline nlohmann::json to_json(const PreprocessSummary& p) {
  return {{"buses_before", p.buses_before},       {"branches_before", p.branches_before},
          {"buses_after", p.buses_after},         {"branches_after", p.branches_after},
          {"merged_low_impedance", p.merged},     {"thrshz", p.thrshz},
          {"min_r_applied", p.min_r_applied},     {"min_r", p.min_r}};
}

inline nlohmann::json to_json(const SettingsEcho& s) {
  return {{"delta", s.delta},
          {"eps_flow_mva", s.eps_flow},
          {"eps_inj_mva", s.eps_inj},
          {"eps_v_pu", s.eps_v},
          {"max_iter", s.max_iter},
          {"outer_delta_step", s.outer_delta_step},
          {"eliminate_ref", s.eliminate_ref},
          {"objective", s.objective},
          {"qpen_eps_b", s.qpen_eps_b}};
}

// Full run report mirroring AlgorithmResult, plus provenance of the input.
inline nlohmann::json run_report(const std::string& case_name, const PreprocessSummary& prep,
                                 const SettingsEcho& settings, const alg::AlgorithmResult& res, double base_mva,
                                 bool include_voltages = true) {
  nlohmann::json j;
  j["case"] = case_name;
  j["preprocessing"] = to_json(prep);
  j["settings"] = to_json(settings);
  j["outcome"] = alg::to_string(res.outcome);
  j["iterations"] = res.iterations;
  j["delta"] = res.delta_used;
  j["c_star"] = res.c_star;
  j["achieved_cost"] = res.achieved_cost;
  j["certified_gap_bound_pct"] =
      std::isfinite(res.gap_bound) ? nlohmann::json(res.gap_bound * 100.0) : nlohmann::json();
  if (!res.trace.empty()) {
    const auto& last = res.trace.back();
    j["max_flow_mis_mva"] = last.max_flow_mis;
    j["max_inj_mis_mva"] = last.max_inj_mis;
    j["max_flow_mis_pu"] = last.max_flow_mis / base_mva;
    j["max_inj_mis_pu"] = last.max_inj_mis / base_mva;
    j["rank_ratio"] = last.rank_ratio;
    j["numerically_rank_one"] = last.rank_ratio <= sdp::kRankOneRatio;
  }
  std::vector<double> solve_times;
  for (const auto& r : res.trace) solve_times.push_back(r.wall_time_s);
  j["solve_times_s"] = solve_times;
  j["total_time_s"] = res.total_time_s;
  j["feasibility"] = {{"pass", res.feasibility.pass},
                      {"max_voltage_violation_pu", res.feasibility.max_voltage_violation},
                      {"max_gen_box_violation_pu", res.feasibility.max_gen_box_violation},
                      {"max_flow_violation_mva", res.feasibility.max_flow_violation_mva}};
  if (include_voltages && res.outcome == alg::Outcome::converged) {
    std::vector<double> vd(res.voltages.vd.begin(), res.voltages.vd.end());
    std::vector<double> vq(res.voltages.vq.begin(), res.voltages.vq.end());
    j["voltages"] = {{"vd", vd}, {"vq", vq}};
  }
  return j;
}

inline constexpr const char* kTraceHeader =
    "iter,max_flow_mis_MVA,max_inj_mis_MVA,max_P_flow_mis,max_Q_flow_mis,max_P_inj_mis,max_Q_inj_mis,objective";

inline void write_trace_csv(std::ostream& os, const alg::IterationTrace& trace) {
  os << kTraceHeader << "\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n", r.iter, r.max_flow_mis,
                  r.max_inj_mis, r.max_p_flow_mis, r.max_q_flow_mis, r.max_p_inj_mis, r.max_q_inj_mis, r.objective);
    os << buf;
  }
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

}  // namespace lapopf::report
