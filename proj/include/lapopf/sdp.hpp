#pragma once

// Lifted (rank-relaxed) formulation of the OPF problem. Voltages are stacked
// as x = [Vd; Vq] and the matrix variable W stands in for x x'. This module
// builds the constant matrices whose traces against W give power injections,
// voltage magnitudes, and line flows; assembles the relaxation as a conic
// program; and recovers voltages from (near) rank-one solutions.

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "lapopf/case.hpp"
#include "lapopf/conic.hpp"
#include "lapopf/ipm.hpp"
#include "lapopf/network.hpp"

namespace lapopf::sdp {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

// Constraint matrices in the lifted space. When `reduced` is set, the row and
// column of the reference bus's imaginary voltage component are deleted
// (fixing the reference angle), which shrinks the dimension from 2n to 2n-1
// and drops the explicit angle constraint.
struct SdpMatrices {
  int n = 0;
  int ref = 0;            // reference bus index
  bool reduced = false;
  int dim = 0;            // 2n, or 2n-1 when reduced
  std::vector<int> map;   // full index (2n) -> lifted index, -1 if removed

  std::vector<SpMat> Yk, Ybark, Mk;          // per bus
  std::vector<SpMat> Zlm, Zbarlm, Zml, Zbarml;  // per branch
  SpMat Nref;                                // angle-reference selector (full space only)

  // Project a full 2n-vector onto the lifted coordinates.
  Eigen::VectorXd project(const Eigen::VectorXd& x_full) const {
    Eigen::VectorXd out(dim);
    for (int i = 0; i < 2 * n; ++i)
      if (map[static_cast<size_t>(i)] >= 0) out[map[static_cast<size_t>(i)]] = x_full[i];
    return out;
  }
  // Lift a reduced vector back, inserting 0 for the removed component.
  Eigen::VectorXd lift(const Eigen::VectorXd& x_red) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(2 * n);
    for (int i = 0; i < 2 * n; ++i)
      if (map[static_cast<size_t>(i)] >= 0) out[i] = x_red[map[static_cast<size_t>(i)]];
    return out;
  }
};

// x' A x = tr(A x x')
inline double quad_form(const SpMat& A, const Eigen::VectorXd& x) { return x.dot(A * x); }

inline double trace_against(const SpMat& A, const Eigen::MatrixXd& W) {
  double s = 0.0;
  for (int c = 0; c < A.outerSize(); ++c)
    for (SpMat::InnerIterator it(A, c); it; ++it) s += it.value() * W(it.col(), it.row());
  return s;
}

namespace detail {

inline SpMat assemble(std::vector<Triplet>& trip, const std::vector<int>& map, int dim) {
  std::vector<Triplet> kept;
  kept.reserve(trip.size());
  for (const auto& t : trip) {
    int r = map[static_cast<size_t>(t.row())];
    int c = map[static_cast<size_t>(t.col())];
    if (r >= 0 && c >= 0) kept.emplace_back(r, c, t.value());
  }
  SpMat A(dim, dim);
  A.setFromTriplets(kept.begin(), kept.end());
  trip.clear();
  return A;
}

}  // namespace detail

inline SdpMatrices build_matrices(const CaseData& cs, const NetworkMatrices& net, bool eliminate_ref = true) {
  const int n = cs.n();
  SdpMatrices M;
  M.n = n;
  M.ref = cs.reference_index();
  M.reduced = eliminate_ref;
  M.dim = eliminate_ref ? 2 * n - 1 : 2 * n;
  M.map.resize(static_cast<size_t>(2 * n));
  const int cut = n + M.ref;
  for (int i = 0; i < 2 * n; ++i)
    M.map[static_cast<size_t>(i)] = (eliminate_ref && i == cut) ? -1 : i - (eliminate_ref && i > cut ? 1 : 0);

  std::vector<Triplet> t;

  // Per-bus injection and magnitude matrices from row k of the admittance
  // matrix: with A = e_k e_k' Y,
  //   Yk    = [Re(A+A'), Im(A'-A); Im(A-A'), Re(A+A')] / 2
  //   Ybark = -[Im(A+A'), Re(A-A'); Re(A'-A), Im(A+A')] / 2.
  Eigen::SparseMatrix<std::complex<double>, Eigen::RowMajor> Yrow(net.Y);
  M.Yk.resize(static_cast<size_t>(n));
  M.Ybark.resize(static_cast<size_t>(n));
  M.Mk.resize(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    std::vector<Triplet> tb;
    for (Eigen::SparseMatrix<std::complex<double>, Eigen::RowMajor>::InnerIterator it(Yrow, k); it; ++it) {
      const int j = static_cast<int>(it.col());
      const double g = it.value().real();
      const double b = it.value().imag();
      // Yk
      t.emplace_back(k, j, g / 2);
      t.emplace_back(j, k, g / 2);
      t.emplace_back(k + n, j + n, g / 2);
      t.emplace_back(j + n, k + n, g / 2);
      t.emplace_back(j, k + n, b / 2);
      t.emplace_back(k + n, j, b / 2);
      t.emplace_back(k, j + n, -b / 2);
      t.emplace_back(j + n, k, -b / 2);
      // Ybark
      tb.emplace_back(k, j, -b / 2);
      tb.emplace_back(j, k, -b / 2);
      tb.emplace_back(k + n, j + n, -b / 2);
      tb.emplace_back(j + n, k + n, -b / 2);
      tb.emplace_back(k, j + n, -g / 2);
      tb.emplace_back(j + n, k, -g / 2);
      tb.emplace_back(j, k + n, g / 2);
      tb.emplace_back(k + n, j, g / 2);
    }
    M.Yk[static_cast<size_t>(k)] = detail::assemble(t, M.map, M.dim);
    M.Ybark[static_cast<size_t>(k)] = detail::assemble(tb, M.map, M.dim);
    t.emplace_back(k, k, 1.0);
    t.emplace_back(k + n, k + n, 1.0);
    M.Mk[static_cast<size_t>(k)] = detail::assemble(t, M.map, M.dim);
  }
  if (!eliminate_ref) {
    t.emplace_back(n + M.ref, n + M.ref, 1.0);
    std::vector<int> id(static_cast<size_t>(2 * n));
    for (int i = 0; i < 2 * n; ++i) id[static_cast<size_t>(i)] = i;
    M.Nref = detail::assemble(t, id, 2 * n);
  }

  // Per-branch flow matrices.
  const int nl = static_cast<int>(net.branches.size());
  M.Zlm.resize(static_cast<size_t>(nl));
  M.Zbarlm.resize(static_cast<size_t>(nl));
  M.Zml.resize(static_cast<size_t>(nl));
  M.Zbarml.resize(static_cast<size_t>(nl));
  for (int br = 0; br < nl; ++br) {
    const auto& bp = net.branches[static_cast<size_t>(br)];
    const int l = bp.l, m = bp.m;
    const double g = bp.g, b = bp.b, tau = bp.tau;
    const double ct = std::cos(bp.theta), st = std::sin(bp.theta);
    const double clm = (g * ct - b * st) / (2 * tau);
    const double cml = (g * ct + b * st) / (2 * tau);
    const double slm = (g * st + b * ct) / (2 * tau);
    const double sml = (g * st - b * ct) / (2 * tau);

    auto dot_terms = [&](std::vector<Triplet>& out, double w) {
      out.emplace_back(l, m, w);
      out.emplace_back(m, l, w);
      out.emplace_back(l + n, m + n, w);
      out.emplace_back(m + n, l + n, w);
    };
    auto cross_terms = [&](std::vector<Triplet>& out, double w) {
      out.emplace_back(l, m + n, w);
      out.emplace_back(m + n, l, w);
      out.emplace_back(l + n, m, -w);
      out.emplace_back(m, l + n, -w);
    };

    t.emplace_back(l, l, g / (tau * tau));
    t.emplace_back(l + n, l + n, g / (tau * tau));
    dot_terms(t, -clm);
    cross_terms(t, slm);
    M.Zlm[static_cast<size_t>(br)] = detail::assemble(t, M.map, M.dim);

    t.emplace_back(l, l, -(2 * b + bp.b_sh) / (2 * tau * tau));
    t.emplace_back(l + n, l + n, -(2 * b + bp.b_sh) / (2 * tau * tau));
    cross_terms(t, clm);
    dot_terms(t, slm);
    M.Zbarlm[static_cast<size_t>(br)] = detail::assemble(t, M.map, M.dim);

    t.emplace_back(m, m, g);
    t.emplace_back(m + n, m + n, g);
    dot_terms(t, -cml);
    cross_terms(t, sml);
    M.Zml[static_cast<size_t>(br)] = detail::assemble(t, M.map, M.dim);

    t.emplace_back(m, m, -(b + bp.b_sh / 2));
    t.emplace_back(m + n, m + n, -(b + bp.b_sh / 2));
    cross_terms(t, -cml);
    dot_terms(t, -sml);
    M.Zbarml[static_cast<size_t>(br)] = detail::assemble(t, M.map, M.dim);
  }
  return M;
}

// Reactive-penalty objective matrix: the lifted form of (Y^H - Y) / 2j, a
// weighted Laplacian of the branch susceptances when no phase shifters are
// present.
inline SpMat reactive_penalty_matrix(const NetworkMatrices& net, const SdpMatrices& M) {
  const int n = M.n;
  Eigen::SparseMatrix<std::complex<double>> Yh = net.Y.adjoint();
  Eigen::SparseMatrix<std::complex<double>> B2c =
      ((Yh - net.Y) / std::complex<double>(0.0, 2.0)).pruned();
  std::vector<Triplet> t;
  for (int c = 0; c < B2c.outerSize(); ++c)
    for (Eigen::SparseMatrix<std::complex<double>>::InnerIterator it(B2c, c); it; ++it) {
      const int i = static_cast<int>(it.row());
      const int j = static_cast<int>(it.col());
      const double re = it.value().real();
      const double im = it.value().imag();
      t.emplace_back(i, j, re);
      t.emplace_back(i + n, j + n, re);
      t.emplace_back(i, j + n, im);
      t.emplace_back(i + n, j, -im);
    }
  return detail::assemble(t, M.map, M.dim);
}

// The relaxation as a conic program over (W, P_G, alpha). Holds the variable
// bookkeeping needed to swap objectives, add the generation-cost cap, and
// read generation levels back out of a solution.
class RelaxationBuilder {
 public:
  RelaxationBuilder(const CaseData& cs, const NetworkMatrices& net, bool eliminate_ref = true)
      : cs_(cs), net_(net), mats_(build_matrices(cs, net, eliminate_ref)) {
    build();
  }

  const SdpMatrices& matrices() const { return mats_; }
  const conic::ConicProblem& problem() const { return prob_; }
  const CaseData& case_data() const { return cs_; }
  const NetworkMatrices& network() const { return net_; }

  // Objective of the plain relaxation: total generation cost sum_k alpha_k.
  void set_cost_objective() {
    conic::LinExpr obj;
    for (int a : alpha_vars_) obj.add_scalar(a, 1.0);
    prob_.set_objective(obj);
  }

  // tr(blkdiag(L, L) W) with L the weighted graph Laplacian; one nonnegative
  // weight per branch.
  void set_laplacian_objective(const Eigen::VectorXd& weights) {
    if (weights.size() != static_cast<long>(net_.branches.size()))
      throw std::invalid_argument("laplacian objective needs one weight per branch");
    if (weights.size() && weights.minCoeff() < 0.0)
      throw std::invalid_argument("laplacian weights must be nonnegative");
    const int n = mats_.n;
    conic::LinExpr obj;
    for (size_t br = 0; br < net_.branches.size(); ++br) {
      const double w = weights[static_cast<long>(br)];
      if (w == 0.0) continue;
      const int l = net_.branches[br].l, m = net_.branches[br].m;
      for (int off : {0, n}) {
        add_sym(obj, mats_.map[static_cast<size_t>(l + off)], mats_.map[static_cast<size_t>(l + off)], w);
        add_sym(obj, mats_.map[static_cast<size_t>(m + off)], mats_.map[static_cast<size_t>(m + off)], w);
        add_sym(obj, mats_.map[static_cast<size_t>(l + off)], mats_.map[static_cast<size_t>(m + off)], -w);
      }
    }
    prob_.set_objective(obj);
  }

  void set_reactive_penalty_objective(double eps_b) {
    SpMat Q = reactive_penalty_matrix(net_, mats_);
    conic::LinExpr obj;
    for (int c = 0; c < Q.outerSize(); ++c)
      for (SpMat::InnerIterator it(Q, c); it; ++it)
        if (it.row() >= it.col())
          obj.add_mat(static_cast<int>(it.row()), static_cast<int>(it.col()), eps_b * it.value());
    prob_.set_objective(obj);
  }

  // sum_k alpha_k <= c_star * (1 + delta)
  void add_cost_cap(double c_star, double delta) {
    if (!std::isfinite(c_star)) throw std::invalid_argument("cost cap requires a finite bound");
    if (delta < 0.0) throw std::invalid_argument("delta must be nonnegative");
    conic::LinExpr e;
    for (int a : alpha_vars_) e.add_scalar(a, 1.0);
    prob_.add_le(e, c_star * (1.0 + delta), "cost_cap");
  }

  // Per-bus active generation (pu) from a solution's scalar variables.
  Eigen::VectorXd bus_generation(const conic::ConicSolution& s) const {
    Eigen::VectorXd pg = Eigen::VectorXd::Zero(mats_.n);
    for (size_t g = 0; g < cs_.gens.size(); ++g) pg[gen_bus_[g]] += s.scalars[pg_vars_[g]];
    return pg;
  }

  // Generation cost implied by the epigraph variables; by construction this
  // is what the cap constrains.
  double epigraph_cost(const conic::ConicSolution& s) const {
    double c = 0.0;
    for (int a : alpha_vars_) c += s.scalars[a];
    return c;
  }

 private:
  static void add_sym(conic::LinExpr& e, int i, int j, double w) {
    // Entry of a symmetric objective matrix in trace semantics; indices are
    // already mapped to the lifted space, -1 marks the removed component.
    if (i < 0 || j < 0) return;
    if (i < j) std::swap(i, j);
    e.add_mat(i, j, w);
  }

  void build() {
    const int n = mats_.n;
    prob_.set_matrix_dim(mats_.dim);
    auto boxes = cs_.gen_boxes();

    // One generator per bus: the epigraph formulation ties each alpha to the
    // generation at its bus.
    std::vector<int> count(static_cast<size_t>(n), 0);
    for (const auto& g : cs_.gens) count[static_cast<size_t>(cs_.bus_index(g.bus))]++;
    for (int c : count)
      if (c > 1) throw SemanticError("relaxation requires at most one generator per bus");

    pg_vars_.resize(cs_.gens.size());
    alpha_vars_.resize(cs_.gens.size());
    gen_bus_.resize(cs_.gens.size());
    std::vector<int> pg_at(static_cast<size_t>(n), -1);
    for (size_t g = 0; g < cs_.gens.size(); ++g) {
      const int k = cs_.bus_index(cs_.gens[g].bus);
      gen_bus_[g] = k;
      pg_vars_[g] = prob_.add_scalar("Pg" + std::to_string(cs_.gens[g].bus));
      alpha_vars_[g] = prob_.add_scalar("alpha" + std::to_string(cs_.gens[g].bus));
      pg_at[static_cast<size_t>(k)] = pg_vars_[g];
    }

    for (int k = 0; k < n; ++k) {
      const Bus& bus = cs_.buses[static_cast<size_t>(k)];
      const auto& box = boxes[static_cast<size_t>(k)];
      // Active power: P_Gk = tr(Yk W) + P_Dk.
      conic::LinExpr p;
      p.add_trace(mats_.Yk[static_cast<size_t>(k)]);
      if (pg_at[static_cast<size_t>(k)] >= 0) {
        prob_.add_eq(conic::LinExpr(p).add_scalar(pg_at[static_cast<size_t>(k)], -1.0), -bus.p_load,
                     "P" + std::to_string(bus.id));
        conic::LinExpr pv = conic::LinExpr{}.add_scalar(pg_at[static_cast<size_t>(k)], 1.0);
        prob_.add_le(pv, box.pmax);
        prob_.add_le(conic::LinExpr{}.add_scalar(pg_at[static_cast<size_t>(k)], -1.0), -box.pmin);
      } else {
        prob_.add_eq(p, -bus.p_load, "P" + std::to_string(bus.id));
      }
      // Reactive power box on tr(Ybark W) + Q_Dk.
      conic::LinExpr q;
      q.add_trace(mats_.Ybark[static_cast<size_t>(k)]);
      if (box.qmin == box.qmax) {
        prob_.add_eq(q, box.qmin - bus.q_load, "Q" + std::to_string(bus.id));
      } else {
        prob_.add_le(q, box.qmax - bus.q_load);
        conic::LinExpr qn;
        for (auto& [i, j, f] : q.mat) qn.add_mat(i, j, -f);
        prob_.add_le(qn, bus.q_load - box.qmin);
      }
      // Voltage magnitude bounds on tr(Mk W).
      conic::LinExpr v;
      v.add_trace(mats_.Mk[static_cast<size_t>(k)]);
      prob_.add_le(v, bus.vmax * bus.vmax);
      conic::LinExpr vn;
      for (auto& [i, j, f] : v.mat) vn.add_mat(i, j, -f);
      prob_.add_le(vn, -bus.vmin * bus.vmin);
    }

    if (!mats_.reduced) {
      conic::LinExpr r;
      r.add_trace(mats_.Nref);
      prob_.add_eq(r, 0.0, "ref_angle");
    }

    // Generation cost epigraph: a second-order cone for quadratic costs, the
    // plain epigraph inequality for linear costs.
    for (size_t g = 0; g < cs_.gens.size(); ++g) {
      const Gen& gen = cs_.gens[g];
      const int P = pg_vars_[g], a = alpha_vars_[g];
      if (gen.c2 > 0.0) {
        conic::LinExpr e0 = conic::LinExpr{}.add_scalar(P, -gen.c1).add_scalar(a, 1.0);
        e0.constant = 1.0 - gen.c0;
        conic::LinExpr e1 = conic::LinExpr{}.add_scalar(P, gen.c1).add_scalar(a, -1.0);
        e1.constant = 1.0 + gen.c0;
        conic::LinExpr e2 = conic::LinExpr{}.add_scalar(P, 2.0 * std::sqrt(gen.c2));
        prob_.add_soc({e0, e1, e2}, "cost" + std::to_string(gen.bus));
      } else {
        prob_.add_le(conic::LinExpr{}.add_scalar(P, gen.c1).add_scalar(a, -1.0), -gen.c0);
      }
    }

    // Apparent-power line limits: two cones per constrained branch.
    for (size_t br = 0; br < net_.branches.size(); ++br) {
      const double smax = net_.branches[br].s_max;
      if (smax <= 0.0) continue;
      conic::LinExpr cap;
      cap.constant = smax;
      conic::LinExpr pf, qf, pt, qt;
      pf.add_trace(mats_.Zlm[br]);
      qf.add_trace(mats_.Zbarlm[br]);
      pt.add_trace(mats_.Zml[br]);
      qt.add_trace(mats_.Zbarml[br]);
      prob_.add_soc({cap, pf, qf}, "Sfrom" + std::to_string(br));
      prob_.add_soc({cap, pt, qt}, "Sto" + std::to_string(br));
    }
  }

  const CaseData& cs_;
  const NetworkMatrices& net_;
  SdpMatrices mats_;
  conic::ConicProblem prob_;
  std::vector<int> pg_vars_, alpha_vars_, gen_bus_;
};

struct LiftedSolution {
  conic::ConicSolution conic;
  Eigen::VectorXd eigvals;  // descending
  Eigen::MatrixXd eigvecs;  // columns match eigvals
  double lambda1 = 0.0, lambda2 = 0.0;
  double rank_ratio = 1.0;  // lambda2 / lambda1
  Eigen::VectorXd pg;       // per-bus active generation, pu
  double epigraph_cost = 0.0;
};

// Largest-eigenvalue ratio below this is treated as numerically rank one.
inline constexpr double kRankOneRatio = 1e-5;

inline LiftedSolution analyze(const RelaxationBuilder& b, conic::ConicSolution s) {
  LiftedSolution out;
  out.conic = std::move(s);
  if (out.conic.W.size() > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.conic.W);
    const long d = es.eigenvalues().size();
    out.eigvals = es.eigenvalues().reverse();
    out.eigvecs = es.eigenvectors().rowwise().reverse();
    out.lambda1 = out.eigvals[0];
    out.lambda2 = d > 1 ? out.eigvals[1] : 0.0;
    out.rank_ratio = out.lambda1 > 0.0 ? std::max(out.lambda2, 0.0) / out.lambda1 : 1.0;
  }
  if (out.conic.status == conic::SolveStatus::optimal) {
    out.pg = b.bus_generation(out.conic);
    out.epigraph_cost = b.epigraph_cost(out.conic);
  }
  return out;
}

inline LiftedSolution solve_relaxation(const RelaxationBuilder& b, const conic::SolverSettings& st = {}) {
  return analyze(b, conic::solve(b.problem(), st));
}

// Voltage phasors from the dominant eigenpair: V = sqrt(lambda1) * eta. The
// overall sign is fixed so the reference bus's real part is nonnegative.
inline VoltageVector recover_voltages(const SdpMatrices& M, const LiftedSolution& s) {
  if (s.lambda1 <= 0.0) throw std::runtime_error("no positive eigenvalue to recover voltages from");
  Eigen::VectorXd eta = s.eigvecs.col(0);
  double key = eta[M.map[static_cast<size_t>(M.ref)]];
  if (std::abs(key) < 1e-12) {
    long imax = 0;
    eta.cwiseAbs().maxCoeff(&imax);
    key = eta[imax];
  }
  if (key < 0.0) eta = -eta;
  Eigen::VectorXd x = M.lift(std::sqrt(s.lambda1) * eta);
  VoltageVector v;
  v.vd = x.head(M.n);
  v.vq = x.tail(M.n);
  return v;
}

}  // namespace lapopf::sdp
