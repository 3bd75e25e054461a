#pragma once

// Nonconvex OPF physics evaluated at a candidate voltage: bus admittance
// matrix, power injections, directed line flows, generation cost, and
// constraint residuals. This module is the ground-truth oracle against which
// the lifted (SDP) formulation is checked.

#include <complex>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "lapopf/case.hpp"

namespace lapopf {

struct VoltageVector {
  Eigen::VectorXd vd;  // real parts V_d, pu
  Eigen::VectorXd vq;  // imaginary parts V_q, pu

  int n() const { return static_cast<int>(vd.size()); }
  std::complex<double> at(int k) const { return {vd[k], vq[k]}; }
  Eigen::VectorXd stacked() const {
    Eigen::VectorXd x(2 * n());
    x << vd, vq;
    return x;
  }
};

struct NetworkMatrices {
  // Per-branch parameters after tap/shift normalization. l, m are bus indices.
  struct BranchParams {
    int l, m;
    double g, b;      // series admittance
    double b_sh;      // total shunt susceptance
    double tau;       // turns ratio (tap at l side)
    double theta;     // phase shift, radians
    double s_max;     // pu apparent-power limit; 0 = unlimited
  };

  Eigen::SparseMatrix<std::complex<double>> Y;  // n x n bus admittance
  std::vector<BranchParams> branches;

  int n() const { return static_cast<int>(Y.rows()); }
};

inline NetworkMatrices build_admittance(const CaseData& cs) {
  const int n = cs.n();
  NetworkMatrices net;
  std::vector<Eigen::Triplet<std::complex<double>>> trip;
  trip.reserve(4 * cs.branches.size() + cs.buses.size());
  const std::complex<double> jimag(0.0, 1.0);

  for (const auto& br : cs.branches) {
    int l = cs.bus_index(br.from);
    int m = cs.bus_index(br.to);
    std::complex<double> y = br.y();
    std::complex<double> ysh = jimag * (br.b_sh / 2.0);
    std::complex<double> tap = std::polar(br.tau, br.theta_shift);
    trip.emplace_back(l, l, (y + ysh) / (br.tau * br.tau));
    trip.emplace_back(m, m, y + ysh);
    trip.emplace_back(l, m, -y / std::conj(tap));
    trip.emplace_back(m, l, -y / tap);
    net.branches.push_back({l, m, br.g(), br.b(), br.b_sh, br.tau, br.theta_shift, br.s_max});
  }
  for (int k = 0; k < n; ++k) {
    const Bus& b = cs.buses[static_cast<size_t>(k)];
    if (b.g_shunt != 0.0 || b.b_shunt != 0.0)
      trip.emplace_back(k, k, std::complex<double>(b.g_shunt, b.b_shunt));
  }
  net.Y.resize(n, n);
  net.Y.setFromTriplets(trip.begin(), trip.end());
  return net;
}

// Active/reactive generation implied by the power flow equations at v:
// P_Gk = Re{ V_k conj((Y V)_k) } + P_Dk, and likewise for Q_Gk.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> eval_injections(const NetworkMatrices& net, const VoltageVector& v,
                                                                   const CaseData& cs) {
  const int n = net.n();
  Eigen::VectorXcd vc(n);
  for (int k = 0; k < n; ++k) vc[k] = v.at(k);
  Eigen::VectorXcd s = vc.array() * (net.Y * vc).conjugate().array();
  Eigen::VectorXd p(n), q(n);
  for (int k = 0; k < n; ++k) {
    p[k] = s[k].real() + cs.buses[static_cast<size_t>(k)].p_load;
    q[k] = s[k].imag() + cs.buses[static_cast<size_t>(k)].q_load;
  }
  return {p, q};
}

struct LineFlows {
  // One entry per branch, both directions, pu.
  Eigen::VectorXd p_lm, q_lm, p_ml, q_ml;
};

inline LineFlows eval_line_flows(const NetworkMatrices& net, const VoltageVector& v) {
  const int nl = static_cast<int>(net.branches.size());
  LineFlows f{Eigen::VectorXd(nl), Eigen::VectorXd(nl), Eigen::VectorXd(nl), Eigen::VectorXd(nl)};
  for (int i = 0; i < nl; ++i) {
    const auto& br = net.branches[static_cast<size_t>(i)];
    const double vdl = v.vd[br.l], vql = v.vq[br.l], vdm = v.vd[br.m], vqm = v.vq[br.m];
    const double g = br.g, b = br.b, tau = br.tau;
    const double ct = std::cos(br.theta), st = std::sin(br.theta);
    const double vl2 = vdl * vdl + vql * vql;
    const double vm2 = vdm * vdm + vqm * vqm;
    const double dot = vdl * vdm + vql * vqm;     // Re{V_l conj(V_m)}
    const double cross = vdl * vqm - vql * vdm;   // -Im{V_l conj(V_m)}
    const double bsh2 = br.b_sh / 2.0;

    f.p_lm[i] = vl2 * g / (tau * tau) + dot * (b * st - g * ct) / tau + cross * (g * st + b * ct) / tau;
    f.p_ml[i] = vm2 * g - dot * (g * ct + b * st) / tau + cross * (g * st - b * ct) / tau;
    f.q_lm[i] = -vl2 * (b + bsh2) / (tau * tau) + dot * (b * ct + g * st) / tau + cross * (g * ct - b * st) / tau;
    f.q_ml[i] = -vm2 * (b + bsh2) + dot * (b * ct - g * st) / tau - cross * (g * ct + b * st) / tau;
  }
  return f;
}

// Total generation cost at per-bus active generation p_gen (pu). Buses with
// several generators are not given a cost split here; the solver layer
// rejects those instances.
inline double eval_cost(const CaseData& cs, const Eigen::VectorXd& p_gen) {
  double cost = 0.0;
  std::vector<int> count(cs.buses.size(), 0);
  for (const auto& g : cs.gens) count[static_cast<size_t>(cs.bus_index(g.bus))]++;
  for (const auto& g : cs.gens) {
    int k = cs.bus_index(g.bus);
    if (count[static_cast<size_t>(k)] > 1)
      throw SemanticError("cost evaluation requires at most one generator per bus");
    double p = p_gen[k];
    cost += g.c2 * p * p + g.c1 * p + g.c0;
  }
  return cost;
}

struct OperatingPoint {
  VoltageVector voltages;
  Eigen::VectorXd p_gen, q_gen;  // per bus, pu
  LineFlows flows;
  double cost = 0.0;  // $/hr
};

inline OperatingPoint make_operating_point(const CaseData& cs, const NetworkMatrices& net, const VoltageVector& v) {
  OperatingPoint op;
  op.voltages = v;
  std::tie(op.p_gen, op.q_gen) = eval_injections(net, v, cs);
  op.flows = eval_line_flows(net, v);
  op.cost = eval_cost(cs, op.p_gen);
  return op;
}

struct Tolerances {
  double eps_v = 5e-4;    // pu
  double eps_flow = 1.0;  // MVA
  double eps_inj = 1.0;   // MVA
};

struct FeasibilityReport {
  double max_voltage_violation = 0.0;  // pu
  double max_gen_box_violation = 0.0;  // pu
  double max_flow_violation_mva = 0.0; // MVA
  std::vector<double> voltage_residuals;  // per bus, pu
  std::vector<double> gen_p_residuals;    // per bus, pu
  std::vector<double> gen_q_residuals;    // per bus, pu
  std::vector<double> flow_residuals_mva; // per branch (worse direction), MVA
  bool pass = false;
};

// Residuals of all OPF constraints at v. Generation residuals are measured
// against the per-bus aggregate box; tiny numerical injections at
// non-generator buses therefore land in the generation box residual.
inline FeasibilityReport check_feasibility(const CaseData& cs, const NetworkMatrices& net, const VoltageVector& v,
                                           const Tolerances& tol = {}) {
  FeasibilityReport rep;
  const int n = cs.n();
  auto [p_gen, q_gen] = eval_injections(net, v, cs);
  auto boxes = cs.gen_boxes();

  rep.voltage_residuals.resize(static_cast<size_t>(n));
  rep.gen_p_residuals.resize(static_cast<size_t>(n));
  rep.gen_q_residuals.resize(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    const Bus& b = cs.buses[static_cast<size_t>(k)];
    double vm = std::abs(v.at(k));
    double vv = std::max({b.vmin - vm, vm - b.vmax, 0.0});
    double pv = std::max({boxes[static_cast<size_t>(k)].pmin - p_gen[k], p_gen[k] - boxes[static_cast<size_t>(k)].pmax, 0.0});
    double qv = std::max({boxes[static_cast<size_t>(k)].qmin - q_gen[k], q_gen[k] - boxes[static_cast<size_t>(k)].qmax, 0.0});
    rep.voltage_residuals[static_cast<size_t>(k)] = vv;
    rep.gen_p_residuals[static_cast<size_t>(k)] = pv;
    rep.gen_q_residuals[static_cast<size_t>(k)] = qv;
    rep.max_voltage_violation = std::max(rep.max_voltage_violation, vv);
    rep.max_gen_box_violation = std::max({rep.max_gen_box_violation, pv, qv});
  }

  LineFlows f = eval_line_flows(net, v);
  rep.flow_residuals_mva.resize(net.branches.size());
  for (size_t i = 0; i < net.branches.size(); ++i) {
    double smax = net.branches[i].s_max;
    double viol = 0.0;
    if (smax > 0.0) {
      double s_from = std::hypot(f.p_lm[static_cast<long>(i)], f.q_lm[static_cast<long>(i)]);
      double s_to = std::hypot(f.p_ml[static_cast<long>(i)], f.q_ml[static_cast<long>(i)]);
      viol = std::max({s_from - smax, s_to - smax, 0.0}) * cs.base_mva;
    }
    rep.flow_residuals_mva[i] = viol;
    rep.max_flow_violation_mva = std::max(rep.max_flow_violation_mva, viol);
  }

  rep.pass = rep.max_voltage_violation <= tol.eps_v && rep.max_flow_violation_mva <= tol.eps_flow &&
             rep.max_gen_box_violation * cs.base_mva <= tol.eps_inj;
  return rep;
}

}  // namespace lapopf
