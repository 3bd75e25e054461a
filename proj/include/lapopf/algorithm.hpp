#pragma once

// Iterative weight-update loop on top of the lifted relaxation. When the base
// relaxation is not rank-one, the loop re-solves with a branch-weighted
// Laplacian objective under a generation-cost cap, feeding apparent-power
// flow mismatches back into the weights until the solution is numerically
// rank-one (mismatches below tolerance) or the iteration budget runs out.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lapopf/case.hpp"
#include "lapopf/conic.hpp"
#include "lapopf/network.hpp"
#include "lapopf/sdp.hpp"

namespace lapopf::alg {

// --- closest rank-one matrix ------------------------------------------------

// Eckart-Young: the nearest rank-one matrix in Frobenius norm to a symmetric
// matrix with a nonnegative dominant eigenvalue is lambda1 * eta1 eta1'.
inline Eigen::MatrixXd closest_rank_one(const Eigen::MatrixXd& W) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (W + W.transpose()));
  const long d = es.eigenvalues().size();
  const double lambda1 = es.eigenvalues()[d - 1];
  if (lambda1 < 0.0) throw std::runtime_error("closest_rank_one: dominant eigenvalue is negative");
  Eigen::VectorXd eta = es.eigenvectors().col(d - 1);
  return lambda1 * eta * eta.transpose();
}

// --- mismatch vectors -------------------------------------------------------

// Apparent-power distances between a relaxation solution W* and its closest
// rank-one matrix W1, measured through the injection and line-flow trace
// operators and reported in MVA.
struct MismatchVectors {
  Eigen::VectorXd flow_mis;  // per branch: both directed magnitudes summed
  Eigen::VectorXd inj_mis;   // per bus
  // Largest single active/reactive component over all buses / branch ends.
  double max_p_flow = 0.0, max_q_flow = 0.0;
  double max_p_inj = 0.0, max_q_inj = 0.0;

  double max_flow() const { return flow_mis.size() ? flow_mis.maxCoeff() : 0.0; }
  double max_inj() const { return inj_mis.size() ? inj_mis.maxCoeff() : 0.0; }
  int argmax_flow() const {
    long i = 0;
    if (flow_mis.size()) flow_mis.maxCoeff(&i);
    return static_cast<int>(i);
  }
  int argmax_inj() const {
    long i = 0;
    if (inj_mis.size()) inj_mis.maxCoeff(&i);
    return static_cast<int>(i);
  }
};

// |tr{Yk dW} + j tr{Ybark dW}| * base_mva per bus.
inline Eigen::VectorXd injection_mismatch(const sdp::SdpMatrices& M, const Eigen::MatrixXd& W_star,
                                          const Eigen::MatrixXd& W1, double base_mva) {
  Eigen::MatrixXd dW = W_star - W1;
  Eigen::VectorXd out(M.n);
  for (int k = 0; k < M.n; ++k) {
    double dp = sdp::trace_against(M.Yk[static_cast<size_t>(k)], dW);
    double dq = sdp::trace_against(M.Ybark[static_cast<size_t>(k)], dW);
    out[k] = std::hypot(dp, dq) * base_mva;
  }
  return out;
}

// Per branch, the sum over both ends of |tr{Z dW} + j tr{Zbar dW}| * base_mva.
inline Eigen::VectorXd flow_mismatch(const sdp::SdpMatrices& M, const Eigen::MatrixXd& W_star,
                                     const Eigen::MatrixXd& W1, double base_mva) {
  Eigen::MatrixXd dW = W_star - W1;
  const int nl = static_cast<int>(M.Zlm.size());
  Eigen::VectorXd out(nl);
  for (int br = 0; br < nl; ++br) {
    double plm = sdp::trace_against(M.Zlm[static_cast<size_t>(br)], dW);
    double qlm = sdp::trace_against(M.Zbarlm[static_cast<size_t>(br)], dW);
    double pml = sdp::trace_against(M.Zml[static_cast<size_t>(br)], dW);
    double qml = sdp::trace_against(M.Zbarml[static_cast<size_t>(br)], dW);
    out[br] = (std::hypot(plm, qlm) + std::hypot(pml, qml)) * base_mva;
  }
  return out;
}

// Both vectors plus the per-component maxima used in the trace output.
inline MismatchVectors compute_mismatches(const sdp::SdpMatrices& M, const Eigen::MatrixXd& W_star,
                                          const Eigen::MatrixXd& W1, double base_mva) {
  MismatchVectors mv;
  Eigen::MatrixXd dW = W_star - W1;
  mv.inj_mis.resize(M.n);
  for (int k = 0; k < M.n; ++k) {
    double dp = sdp::trace_against(M.Yk[static_cast<size_t>(k)], dW) * base_mva;
    double dq = sdp::trace_against(M.Ybark[static_cast<size_t>(k)], dW) * base_mva;
    mv.inj_mis[k] = std::hypot(dp, dq);
    mv.max_p_inj = std::max(mv.max_p_inj, std::abs(dp));
    mv.max_q_inj = std::max(mv.max_q_inj, std::abs(dq));
  }
  const int nl = static_cast<int>(M.Zlm.size());
  mv.flow_mis.resize(nl);
  for (int br = 0; br < nl; ++br) {
    double plm = sdp::trace_against(M.Zlm[static_cast<size_t>(br)], dW) * base_mva;
    double qlm = sdp::trace_against(M.Zbarlm[static_cast<size_t>(br)], dW) * base_mva;
    double pml = sdp::trace_against(M.Zml[static_cast<size_t>(br)], dW) * base_mva;
    double qml = sdp::trace_against(M.Zbarml[static_cast<size_t>(br)], dW) * base_mva;
    mv.flow_mis[br] = std::hypot(plm, qlm) + std::hypot(pml, qml);
    mv.max_p_flow = std::max({mv.max_p_flow, std::abs(plm), std::abs(pml)});
    mv.max_q_flow = std::max({mv.max_q_flow, std::abs(qlm), std::abs(qml)});
  }
  return mv;
}

// --- algorithm driver -------------------------------------------------------

struct AlgorithmSettings {
  double delta = 0.005;           // allowed cost increase over the bound c*
  double eps_flow = 1.0;          // MVA
  double eps_inj = 1.0;           // MVA
  double eps_v = 5e-4;            // pu
  int max_iter = 100;             // weighted iterations per delta level
  double outer_delta_step = 0.0;  // > 0 enables the outer delta loop
  int outer_max = 20;             // additional delta levels to try
  bool eliminate_ref = true;
  conic::SolverSettings solver;
};

struct IterationRecord {
  int iter = 0;  // 0 = base relaxation, >= 1 = weighted iterations
  double delta = 0.0;
  Eigen::VectorXd weights;  // diag(D) used in this solve (zeros at iter 0)
  conic::SolveStatus status = conic::SolveStatus::numerical_trouble;
  double objective = 0.0;  // conic objective of this solve
  double rank_ratio = 1.0;
  double max_flow_mis = 0.0, max_inj_mis = 0.0;  // MVA
  int argmax_flow = -1, argmax_inj = -1;
  double max_p_flow_mis = 0.0, max_q_flow_mis = 0.0;  // MVA
  double max_p_inj_mis = 0.0, max_q_inj_mis = 0.0;    // MVA
  double max_voltage_violation = 0.0;  // pu, at the recovered point
  double wall_time_s = 0.0;
};

using IterationTrace = std::vector<IterationRecord>;
using EventSink = std::function<void(const IterationRecord&)>;

enum class Outcome { converged, iteration_limit, relaxation_infeasible, solver_failure };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::converged: return "converged";
    case Outcome::iteration_limit: return "iteration_limit";
    case Outcome::relaxation_infeasible: return "relaxation_infeasible";
    case Outcome::solver_failure: return "solver_failure";
  }
  return "?";
}

inline double relaxation_gap(double c_star, double cost) { return (cost - c_star) / c_star; }

struct AlgorithmResult {
  Outcome outcome = Outcome::solver_failure;
  double c_star = std::numeric_limits<double>::quiet_NaN();         // relaxation lower bound
  double achieved_cost = std::numeric_limits<double>::quiet_NaN();  // epigraph cost of final solve
  double gap_bound = std::numeric_limits<double>::quiet_NaN();      // (achieved - c*) / c*
  double delta_used = 0.0;
  int iterations = 0;  // weighted solves performed
  OperatingPoint point;          // valid when converged
  VoltageVector voltages;        // recovered from the final solve (when available)
  FeasibilityReport feasibility;  // at the recovered point
  IterationTrace trace;
  double total_time_s = 0.0;
};

namespace detail {

// One retry at 10x relaxed tolerances keeps runs deterministic when the
// backend reports numerical trouble.
inline sdp::LiftedSolution solve_with_retry(const sdp::RelaxationBuilder& b, const conic::SolverSettings& st) {
  sdp::LiftedSolution s = sdp::solve_relaxation(b, st);
  if (s.conic.status == conic::SolveStatus::numerical_trouble ||
      s.conic.status == conic::SolveStatus::iteration_limit) {
    conic::SolverSettings relaxed = st;
    relaxed.feas_tol *= 10.0;
    relaxed.gap_tol *= 10.0;
    s = sdp::solve_relaxation(b, relaxed);
  }
  return s;
}

}  // namespace detail

inline AlgorithmResult run_algorithm(const CaseData& cs, const NetworkMatrices& net, const AlgorithmSettings& st = {},
                                     const EventSink& sink = {}) {
  if (st.delta < 0.0) throw std::invalid_argument("delta must be nonnegative");
  if (st.eps_flow <= 0.0 || st.eps_inj <= 0.0 || st.eps_v <= 0.0)
    throw std::invalid_argument("tolerances must be positive");

  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  auto seconds_since = [](Clock::time_point a) {
    return std::chrono::duration<double>(Clock::now() - a).count();
  };

  AlgorithmResult res;
  const Tolerances feas_tol{st.eps_v, st.eps_flow, st.eps_inj};
  // Flow mismatches of the most recent solve; seeds the next weight update.
  Eigen::VectorXd last_flow_mis = Eigen::VectorXd::Zero(static_cast<long>(net.branches.size()));

  // Evaluate one solve: rank metrics, mismatches against the closest rank-one
  // matrix, recovered point. Appends the trace entry and reports termination.
  auto assess = [&](const sdp::RelaxationBuilder& b, const sdp::LiftedSolution& s, int iter, double delta,
                    const Eigen::VectorXd& weights, double wall) -> bool {
    IterationRecord rec;
    rec.iter = iter;
    rec.delta = delta;
    rec.weights = weights;
    rec.status = s.conic.status;
    rec.objective = s.conic.objective;
    rec.rank_ratio = s.rank_ratio;
    rec.wall_time_s = wall;

    bool done = false;
    if (s.conic.status == conic::SolveStatus::optimal && s.lambda1 > 0.0) {
      Eigen::MatrixXd W1 = closest_rank_one(s.conic.W);
      MismatchVectors mv = compute_mismatches(b.matrices(), s.conic.W, W1, cs.base_mva);
      rec.max_flow_mis = mv.max_flow();
      rec.max_inj_mis = mv.max_inj();
      rec.argmax_flow = mv.argmax_flow();
      rec.argmax_inj = mv.argmax_inj();
      rec.max_p_flow_mis = mv.max_p_flow;
      rec.max_q_flow_mis = mv.max_q_flow;
      rec.max_p_inj_mis = mv.max_p_inj;
      rec.max_q_inj_mis = mv.max_q_inj;

      res.voltages = sdp::recover_voltages(b.matrices(), s);
      res.feasibility = check_feasibility(cs, net, res.voltages, feas_tol);
      rec.max_voltage_violation = res.feasibility.max_voltage_violation;
      last_flow_mis = mv.flow_mis;

      done = rec.max_flow_mis < st.eps_flow && rec.max_inj_mis < st.eps_inj && res.feasibility.pass;
      if (done) {
        res.achieved_cost = s.epigraph_cost;
        res.point = make_operating_point(cs, net, res.voltages);
      }
    }
    res.trace.push_back(rec);
    if (sink) sink(rec);
    return done;
  };

  // Base relaxation: true cost objective, no weights, no cap.
  sdp::RelaxationBuilder base(cs, net, st.eliminate_ref);
  base.set_cost_objective();
  auto tb = Clock::now();
  sdp::LiftedSolution bs = detail::solve_with_retry(base, st.solver);
  double base_wall = seconds_since(tb);
  if (bs.conic.status == conic::SolveStatus::infeasible) {
    res.outcome = Outcome::relaxation_infeasible;
    res.total_time_s = seconds_since(t0);
    return res;
  }
  if (bs.conic.status != conic::SolveStatus::optimal) {
    res.outcome = Outcome::solver_failure;
    res.total_time_s = seconds_since(t0);
    return res;
  }
  // Lower bound on the OPF optimum. The dual objective is the reliable side:
  // the primal epigraph value inherits a bias of y'Rp from residual primal
  // infeasibility, which can exceed the duality gap on ill-scaled rows.
  res.c_star = std::min(bs.epigraph_cost, bs.conic.dual_objective);
  const Eigen::VectorXd no_weights = Eigen::VectorXd::Zero(static_cast<long>(net.branches.size()));
  if (assess(base, bs, 0, st.delta, no_weights, base_wall)) {
    res.outcome = Outcome::converged;
    res.delta_used = st.delta;
    res.gap_bound = relaxation_gap(res.c_star, res.achieved_cost);
    res.total_time_s = seconds_since(t0);
    return res;
  }

  // Weighted iterations under the cost cap. The outer loop (if enabled)
  // raises delta and restarts with fresh weights.
  double delta = st.delta;
  int iter = 0;
  for (int outer = 0; outer <= (st.outer_delta_step > 0.0 ? st.outer_max : 0); ++outer) {
    sdp::RelaxationBuilder wb(cs, net, st.eliminate_ref);
    wb.add_cost_cap(res.c_star, delta);
    Eigen::VectorXd D = Eigen::VectorXd::Zero(static_cast<long>(net.branches.size()));
    for (int inner = 0; inner < st.max_iter; ++inner) {
      D += last_flow_mis;
      wb.set_laplacian_objective(D);
      auto tw = Clock::now();
      sdp::LiftedSolution ws = detail::solve_with_retry(wb, st.solver);
      double wall = seconds_since(tw);
      ++iter;
      res.iterations = iter;
      if (ws.conic.status != conic::SolveStatus::optimal) {
        // The cap admits the base solution, so infeasibility here is a
        // numerical failure, not a certificate.
        IterationRecord rec;
        rec.iter = iter;
        rec.delta = delta;
        rec.weights = D;
        rec.status = ws.conic.status;
        rec.wall_time_s = wall;
        res.trace.push_back(rec);
        if (sink) sink(rec);
        res.outcome = Outcome::solver_failure;
        res.delta_used = delta;
        res.total_time_s = seconds_since(t0);
        return res;
      }
      if (assess(wb, ws, iter, delta, D, wall)) {
        res.outcome = Outcome::converged;
        res.delta_used = delta;
        res.gap_bound = relaxation_gap(res.c_star, res.achieved_cost);
        res.total_time_s = seconds_since(t0);
        return res;
      }
    }
    delta += st.outer_delta_step;
  }
  res.outcome = Outcome::iteration_limit;
  res.delta_used = delta;
  res.total_time_s = seconds_since(t0);
  return res;
}

}  // namespace lapopf::alg
