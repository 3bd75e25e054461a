#pragma once

// Interior-point backend for the conic IR. The problem is lowered to the
// block-diagonal standard form
//
//   min  c_f' u + sum_b <C_b, X_b> + c_lp' x
//   s.t. B u + A(X) + A_lp x = rhs,   X_b psd,   x >= 0,   u free,
//
// where the blocks are: the matrix variable, one small psd block per
// second-order cone (2x2 for 3-dim cones, an arrow block for larger ones;
// 2-dim cones become two inequalities), and a diagonal block of slacks for
// the linear inequalities. The solver is a primal-dual path-following method
// with the HKM direction and Mehrotra predictor-corrector. Each step solves
// the Schur system  M dy + B du = g,  B' dy = r,  with M_ij = tr(A_i Z^-1 A_j X)
// (symmetric positive definite), eliminating du through B' M^-1 B.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "lapopf/conic.hpp"

namespace lapopf::conic {

namespace detail {

struct MatEntry {
  int i, j;   // i >= j
  double v;   // symmetric coefficient: contributes v*X_ii or 2*v*X_ij
};

struct Row {
  std::vector<std::pair<int, double>> free_terms;              // (free var, coef)
  std::vector<std::pair<int, double>> lp;                      // (slack slot, coef)
  std::vector<std::pair<int, std::vector<MatEntry>>> blocks;   // (block, entries)
};

struct Lowered {
  int n_free = 0;
  int lp_dim = 0;
  std::vector<int> dims;  // psd block dimensions; block 0 is the matrix variable when present
  std::vector<Row> rows;
  Eigen::VectorXd rhs;
  Eigen::VectorXd c_free, c_lp;
  std::vector<Eigen::MatrixXd> C;
  double obj_const = 0.0;

  int m() const { return static_cast<int>(rows.size()); }
};

inline std::vector<MatEntry>& block_entries(Row& r, int blk) {
  for (auto& pr : r.blocks)
    if (pr.first == blk) return pr.second;
  r.blocks.emplace_back(blk, std::vector<MatEntry>{});
  return r.blocks.back().second;
}

inline void add_expr(Row& r, const LinExpr& e, double sign, int wblock) {
  for (auto& [v, c] : e.scalars) r.free_terms.emplace_back(v, sign * c);
  if (!e.mat.empty()) {
    auto& es = block_entries(r, wblock);
    for (auto& [i, j, f] : e.mat) es.push_back({i, j, sign * f});
  }
}

inline Lowered lower(const ConicProblem& p) {
  Lowered L;
  L.n_free = p.num_scalars();
  const int wblock = p.matrix_dim() > 0 ? 0 : -1;
  if (p.matrix_dim() > 0) L.dims.push_back(p.matrix_dim());

  std::vector<double> rhs;
  auto push = [&](Row r, double b) {
    L.rows.push_back(std::move(r));
    rhs.push_back(b);
  };

  for (const auto& lc : p.linear()) {
    Row r;
    add_expr(r, lc.expr, 1.0, wblock);
    if (lc.type == ConType::le) r.lp.emplace_back(L.lp_dim++, 1.0);
    push(std::move(r), lc.rhs - lc.expr.constant);
  }

  for (const auto& soc : p.socs()) {
    const auto& e = soc.exprs;
    const int k = static_cast<int>(e.size());
    if (k == 2) {
      // |e1| <= e0  ->  +-e1 - e0 + s = 0
      for (double sgn : {1.0, -1.0}) {
        Row r;
        add_expr(r, e[1], sgn, wblock);
        add_expr(r, e[0], -1.0, wblock);
        r.lp.emplace_back(L.lp_dim++, 1.0);
        push(std::move(r), e[0].constant - sgn * e[1].constant);
      }
    } else if (k == 3) {
      // [[t+a, b], [b, t-a]] psd with t = e0, a = e1, b = e2.
      const int blk = static_cast<int>(L.dims.size());
      L.dims.push_back(2);
      Row r00;
      block_entries(r00, blk).push_back({0, 0, 1.0});
      add_expr(r00, e[0], -1.0, wblock);
      add_expr(r00, e[1], -1.0, wblock);
      push(std::move(r00), e[0].constant + e[1].constant);
      Row r10;
      block_entries(r10, blk).push_back({1, 0, 0.5});
      add_expr(r10, e[2], -1.0, wblock);
      push(std::move(r10), e[2].constant);
      Row r11;
      block_entries(r11, blk).push_back({1, 1, 1.0});
      add_expr(r11, e[0], -1.0, wblock);
      add_expr(r11, e[1], 1.0, wblock);
      push(std::move(r11), e[0].constant - e[1].constant);
    } else {
      // Arrow block [[t, v'], [v, t I]] psd with t = e0, v = (e1..e_{k-1}).
      const int blk = static_cast<int>(L.dims.size());
      L.dims.push_back(k);
      Row r0;
      block_entries(r0, blk).push_back({0, 0, 1.0});
      add_expr(r0, e[0], -1.0, wblock);
      push(std::move(r0), e[0].constant);
      for (int i = 1; i < k; ++i) {
        Row ra;
        block_entries(ra, blk).push_back({i, 0, 0.5});
        add_expr(ra, e[i], -1.0, wblock);
        push(std::move(ra), e[i].constant);
        Row rd;
        block_entries(rd, blk).push_back({i, i, 1.0});
        block_entries(rd, blk).push_back({0, 0, -1.0});
        push(std::move(rd), 0.0);
        for (int j = 1; j < i; ++j) {
          Row rz;
          block_entries(rz, blk).push_back({i, j, 0.5});
          push(std::move(rz), 0.0);
        }
      }
    }
  }

  L.rhs = Eigen::Map<Eigen::VectorXd>(rhs.data(), static_cast<long>(rhs.size()));
  L.c_free = Eigen::VectorXd::Zero(L.n_free);
  for (auto& [v, c] : p.objective().scalars) L.c_free[v] += c;
  L.c_lp = Eigen::VectorXd::Zero(L.lp_dim);
  L.C.resize(L.dims.size());
  for (size_t b = 0; b < L.dims.size(); ++b) L.C[b] = Eigen::MatrixXd::Zero(L.dims[b], L.dims[b]);
  for (auto& [i, j, f] : p.objective().mat) {
    L.C[0](i, j) += f;
    if (i != j) L.C[0](j, i) += f;
  }
  L.obj_const = p.objective().constant;
  return L;
}

// tr(A U) for the symmetric coefficient A given by entries; U need not be
// symmetric.
inline double inner(const std::vector<MatEntry>& es, const Eigen::MatrixXd& U) {
  double s = 0.0;
  for (const auto& e : es) s += (e.i == e.j) ? e.v * U(e.i, e.i) : e.v * (U(e.i, e.j) + U(e.j, e.i));
  return s;
}

// Largest alpha with X + alpha*dX psd, capped at 1. X may be nearly singular
// late in the solve, so the factorization is regularized; the caller verifies
// the actual candidate step and backtracks if needed.
// Matrix product with extended-precision accumulation; the products in the
// search-direction reconstruction are amplified by cond(Z) near the solution,
// so double-precision rounding there limits the attainable accuracy.
inline Eigen::MatrixXd mul_ld(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  using MatLD = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  MatLD R = A.cast<long double>() * B.cast<long double>();
  return R.cast<double>();
}

inline bool is_pd(const Eigen::MatrixXd& A) {
  if (!A.allFinite()) return false;
  return Eigen::LLT<Eigen::MatrixXd>(A).info() == Eigen::Success;
}

inline double max_step(const Eigen::MatrixXd& X, const Eigen::MatrixXd& dX) {
  Eigen::LLT<Eigen::MatrixXd> llt(X);
  if (llt.info() == Eigen::Success) {
    Eigen::MatrixXd T = llt.matrixL().solve(dX);
    Eigen::MatrixXd S = llt.matrixL().solve(T.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
    double lmin = es.eigenvalues().minCoeff();
    return lmin >= -1e-14 ? 1.0 : std::min(1.0, -1.0 / lmin);
  }
  // X numerically singular: find the largest feasible step by bisection so
  // the iterate can still move along directions that restore definiteness.
  double lo = 0.0, hi = 1.0;
  if (is_pd(X + dX)) return 1.0;
  for (int it = 0; it < 40; ++it) {
    double mid = 0.5 * (lo + hi);
    (is_pd(X + mid * dX) ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace detail

inline ConicSolution solve(const ConicProblem& p, const SolverSettings& st = {}) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  {
    auto diags = validate(p);
    if (!diags.empty()) throw std::invalid_argument("conic problem invalid: " + diags.front());
  }
  detail::Lowered L = detail::lower(p);
  // Row equilibration: scale each constraint row to unit max coefficient so
  // that cost rows (coefficients in the thousands) do not dominate the Schur
  // system over the physics rows (coefficients near one).
  for (int i = 0; i < L.m(); ++i) {
    auto& row = L.rows[i];
    double mx = 0.0;
    for (auto& [v, c] : row.free_terms) mx = std::max(mx, std::abs(c));
    for (auto& [k, a] : row.lp) mx = std::max(mx, std::abs(a));
    for (auto& pr : row.blocks)
      for (auto& e : pr.second) mx = std::max(mx, std::abs(e.v) * (e.i == e.j ? 1.0 : 2.0));
    if (mx <= 0.0) continue;
    const double s = 1.0 / mx;
    for (auto& [v, c] : row.free_terms) c *= s;
    for (auto& [k, a] : row.lp) a *= s;
    for (auto& pr : row.blocks)
      for (auto& e : pr.second) e.v *= s;
    L.rhs[i] *= s;
  }
  const int m = L.m();
  const int nf = L.n_free;
  const int nb = static_cast<int>(L.dims.size());
  double nu = L.lp_dim;
  for (int d : L.dims) nu += d;
  if (m == 0 || nu == 0) throw std::invalid_argument("conic problem has no constraints or no cones");

  // Constraint lists per block, and the (row, coef) owning each lp slack.
  std::vector<std::vector<std::pair<int, const std::vector<detail::MatEntry>*>>> rows_of(nb);
  std::vector<std::pair<int, double>> lp_row(L.lp_dim, {-1, 0.0});
  for (int i = 0; i < m; ++i) {
    for (auto& pr : L.rows[i].blocks) rows_of[pr.first].emplace_back(i, &pr.second);
    for (auto& [k, a] : L.rows[i].lp) lp_row[k] = {i, a};
  }
  MatrixXd B = MatrixXd::Zero(m, nf);
  for (int i = 0; i < m; ++i)
    for (auto& [v, c] : L.rows[i].free_terms) B(i, v) += c;

  double norm_rhs = m ? L.rhs.lpNorm<Eigen::Infinity>() : 0.0;
  double norm_obj = std::max({nf ? L.c_free.lpNorm<Eigen::Infinity>() : 0.0, 0.0});
  for (const auto& Cb : L.C) norm_obj = std::max(norm_obj, Cb.size() ? Cb.lpNorm<Eigen::Infinity>() : 0.0);
  double norm_a = 0.0;
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (auto& [v, c] : L.rows[i].free_terms) s += std::abs(c);
    for (auto& [k, a] : L.rows[i].lp) s += std::abs(a);
    for (auto& pr : L.rows[i].blocks)
      for (auto& e : pr.second) s += std::abs(e.v) * (e.i == e.j ? 1.0 : 2.0);
    norm_a = std::max(norm_a, s);
  }

  // Initial central point.
  const double pinit = std::max(10.0, 2.0 * norm_rhs);
  const double dinit = std::max(10.0, norm_obj);
  std::vector<MatrixXd> X(nb), Z(nb);
  for (int b = 0; b < nb; ++b) {
    X[b] = pinit * MatrixXd::Identity(L.dims[b], L.dims[b]);
    Z[b] = dinit * MatrixXd::Identity(L.dims[b], L.dims[b]);
  }
  VectorXd x_lp = VectorXd::Constant(L.lp_dim, pinit);
  VectorXd z_lp = VectorXd::Constant(L.lp_dim, dinit);
  VectorXd u = VectorXd::Zero(nf);
  VectorXd y = VectorXd::Zero(m);

  auto apply_A = [&]() {
    VectorXd out(m);
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      for (auto& [v, c] : L.rows[i].free_terms) s += c * u[v];
      for (auto& [k, a] : L.rows[i].lp) s += a * x_lp[k];
      for (auto& pr : L.rows[i].blocks) s += detail::inner(pr.second, X[pr.first]);
      out[i] = s;
    }
    return out;
  };
  auto apply_AT_block = [&](const VectorXd& w, int b) {
    MatrixXd out = MatrixXd::Zero(L.dims[b], L.dims[b]);
    for (auto& [i, ents] : rows_of[b])
      for (auto& e : *ents) {
        out(e.i, e.j) += w[i] * e.v;
        if (e.i != e.j) out(e.j, e.i) += w[i] * e.v;
      }
    return out;
  };
  auto apply_AT_lp = [&](const VectorXd& w) {
    VectorXd out(L.lp_dim);
    for (int k = 0; k < L.lp_dim; ++k) out[k] = lp_row[k].second * w[lp_row[k].first];
    return out;
  };

  // Best iterate seen so far, by worst of the three convergence measures.
  // Late iterations can lose ground when the iterate approaches the boundary
  // of the cone; reporting the best visited point keeps the output usable.
  double best_merit = std::numeric_limits<double>::infinity();
  double best_pri = 1.0, best_dua = 1.0, best_gap = 1.0;
  VectorXd best_u = u, best_xlp = x_lp, best_y = y;
  std::vector<MatrixXd> best_X = X;
  double cur_merit = std::numeric_limits<double>::infinity();

  ConicSolution sol;
  sol.scalars = u;
  auto finish = [&](SolveStatus status, int iters, double gap) {
    if (status != SolveStatus::optimal && status != SolveStatus::infeasible && best_merit < cur_merit) {
      u = best_u;
      x_lp = best_xlp;
      X = best_X;
      y = best_y;
      // A stalled run whose best iterate is within a small factor of the
      // requested tolerances is an acceptable answer, not a failure.
      if ((status == SolveStatus::numerical_trouble || status == SolveStatus::iteration_limit) &&
          best_pri <= 10 * st.feas_tol && best_dua <= 10 * st.feas_tol && best_gap <= 10 * st.gap_tol) {
        status = SolveStatus::optimal;
        gap = best_gap;
      }
    }
    sol.status = status;
    sol.iterations = iters;
    sol.rel_gap = gap;
    sol.scalars = u;
    if (p.matrix_dim() > 0 && nb > 0) sol.W = 0.5 * (X[0] + X[0].transpose());
    else sol.W.resize(0, 0);
    double pobj = L.obj_const + (nf ? L.c_free.dot(u) : 0.0) + (L.lp_dim ? L.c_lp.dot(x_lp) : 0.0);
    for (int b = 0; b < nb; ++b) pobj += (L.C[b].cwiseProduct(X[b])).sum();
    sol.objective = pobj;
    sol.dual_objective = L.obj_const + L.rhs.dot(y);
    sol.primal_residual = max_violation(p, sol.scalars, sol.W);
    return sol;
  };

  std::vector<MatrixXd> Zinv(nb), Rd(nb), Kp(nb), dXa(nb), dZa(nb), dX(nb), dZ(nb), Corr(nb);
  VectorXd kappa(L.lp_dim), dxa_lp(L.lp_dim), dza_lp(L.lp_dim), dx_lp(L.lp_dim), dz_lp(L.lp_dim);
  MatrixXd M(m, m), U;
  int tiny_steps = 0;
  double rel_gap = 1.0;
  double last_ap = 0.0, last_ad = 0.0;
  double sigma_boost = 1.0;

  for (int iter = 0; iter < st.max_iter; ++iter) {
    // Residuals and convergence.
    VectorXd Rp = L.rhs - apply_A();
    double dual_norm = 0.0;
    for (int b = 0; b < nb; ++b) {
      Rd[b] = L.C[b] - Z[b] - apply_AT_block(y, b);
      dual_norm = std::max(dual_norm, Rd[b].lpNorm<Eigen::Infinity>());
    }
    VectorXd rd_lp = L.c_lp - z_lp - apply_AT_lp(y);
    VectorXd rc_free = L.c_free - B.transpose() * y;
    if (L.lp_dim) dual_norm = std::max(dual_norm, rd_lp.lpNorm<Eigen::Infinity>());
    if (nf) dual_norm = std::max(dual_norm, rc_free.lpNorm<Eigen::Infinity>());

    double mu = x_lp.dot(z_lp);
    for (int b = 0; b < nb; ++b) mu += (X[b].cwiseProduct(Z[b])).sum();
    mu /= nu;

    double pobj = L.obj_const + (nf ? L.c_free.dot(u) : 0.0) + (L.lp_dim ? L.c_lp.dot(x_lp) : 0.0);
    for (int b = 0; b < nb; ++b) pobj += (L.C[b].cwiseProduct(X[b])).sum();
    double dobj = L.obj_const + L.rhs.dot(y);
    double pri = Rp.lpNorm<Eigen::Infinity>() / (1.0 + norm_rhs);
    double dua = dual_norm / (1.0 + norm_obj);
    rel_gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    // Complementarity-based gap: the objective difference also carries the
    // y'Rp term, which for well-scaled but not exactly feasible iterates
    // overstates the true optimality error.
    double mu_rel = mu * nu / (1.0 + std::abs(pobj) + std::abs(dobj));
    double gap_meas = std::min(rel_gap, mu_rel);

    if (st.verbose)
      std::printf("it %3d  mu %.3e  pri %.3e  dua %.3e  gap %.3e  ap %.2e ad %.2e\n", iter, mu, pri, dua, rel_gap,
                  last_ap, last_ad);

    if (!std::isfinite(mu) || !std::isfinite(pri) || !std::isfinite(dua)) return finish(SolveStatus::numerical_trouble, iter, rel_gap);
    cur_merit = std::max({pri, dua, gap_meas});
    if (cur_merit < best_merit) {
      best_merit = cur_merit;
      best_pri = pri;
      best_dua = dua;
      best_gap = gap_meas;
      best_u = u;
      best_xlp = x_lp;
      best_X = X;
      best_y = y;
    }
    if (pri <= st.feas_tol && dua <= st.feas_tol && gap_meas <= st.gap_tol)
      return finish(SolveStatus::optimal, iter, gap_meas);

    // Primal infeasibility certificate: y with A*(y) <= 0, B'y = 0, rhs'y > 0.
    if (iter >= 5) {
      double t = L.rhs.dot(y);
      if (t > 1e-8 * std::max(1.0, y.norm())) {
        VectorXd yn = y / t;
        double viol = nf ? (B.transpose() * yn).lpNorm<Eigen::Infinity>() : 0.0;
        for (int b = 0; b < nb && viol < 1.0; ++b) {
          MatrixXd ray = -apply_AT_block(yn, b);
          Eigen::SelfAdjointEigenSolver<MatrixXd> es(ray, Eigen::EigenvaluesOnly);
          viol = std::max(viol, -es.eigenvalues().minCoeff());
        }
        if (L.lp_dim) viol = std::max(viol, apply_AT_lp(yn).maxCoeff());
        if (viol <= 1e-9 * std::max(1.0, norm_a * yn.lpNorm<Eigen::Infinity>()))
          return finish(SolveStatus::infeasible, iter, rel_gap);
      }
    }

    // Factor Z and invert per block.
    bool fact_ok = true;
    for (int b = 0; b < nb; ++b) {
      Eigen::LLT<MatrixXd> llt(Z[b]);
      if (llt.info() != Eigen::Success) {
        fact_ok = false;
        break;
      }
      Zinv[b] = llt.solve(MatrixXd::Identity(L.dims[b], L.dims[b]));
    }
    if (!fact_ok) return finish(SolveStatus::numerical_trouble, iter, rel_gap);

    // Schur complement M_ij = tr(A_i Z^-1 A_j X) + lp diagonal.
    M.setZero();
    for (int b = 0; b < nb; ++b) {
      const int d = L.dims[b];
      U.resize(d, d);
      const auto& rows = rows_of[b];
      for (size_t jj = 0; jj < rows.size(); ++jj) {
        const int j = rows[jj].first;
        const auto& ej = *rows[jj].second;
        // U = Z^-1 (A_j X), exploiting that A_j X has few nonzero rows.
        U.setZero();
        for (auto& e : ej) {
          U.noalias() += e.v * (Zinv[b].col(e.i) * X[b].row(e.j));
          if (e.i != e.j) U.noalias() += e.v * (Zinv[b].col(e.j) * X[b].row(e.i));
        }
        for (size_t ii = 0; ii <= jj; ++ii) {
          const int i = rows[ii].first;
          double v = detail::inner(*rows[ii].second, U);
          if (i <= j) M(i, j) += v;
          else M(j, i) += v;
        }
      }
    }
    for (int k = 0; k < L.lp_dim; ++k) {
      auto [i, a] = lp_row[k];
      M(i, i) += a * a * x_lp[k] / z_lp[k];
    }
    M = M.selfadjointView<Eigen::Upper>();

    Eigen::LLT<MatrixXd> lltM(M);
    double reg = 1e-12 * (1.0 + M.diagonal().maxCoeff());
    int tries = 0;
    while (lltM.info() != Eigen::Success && tries < 4) {
      M.diagonal().array() += reg;
      lltM.compute(M);
      reg *= 100.0;
      ++tries;
    }
    if (lltM.info() != Eigen::Success) return finish(SolveStatus::numerical_trouble, iter, rel_gap);

    MatrixXd MinvB;
    Eigen::LLT<MatrixXd> lltS;
    if (nf) {
      MinvB = lltM.solve(B);
      MatrixXd S = B.transpose() * MinvB;
      S = 0.5 * (S + S.transpose()).eval();
      lltS.compute(S);
      if (lltS.info() != Eigen::Success) return finish(SolveStatus::numerical_trouble, iter, rel_gap);
    }
    // Solve the coupled system  M dy + B du = g,  B' dy = r  by eliminating
    // du, then refine against the full system: the elimination loses accuracy
    // once M is ill-conditioned near the solution.
    auto solve_kkt = [&](const VectorXd& g, const VectorXd& r, VectorXd& dy_out, VectorXd& du_out) {
      auto once = [&](const VectorXd& gg, const VectorXd& rr, VectorXd& dy, VectorXd& du) {
        VectorXd dy0 = lltM.solve(gg);
        if (nf) {
          du = lltS.solve(B.transpose() * dy0 - rr);
          dy = dy0 - MinvB * du;
        } else {
          du.resize(0);
          dy = dy0;
        }
      };
      once(g, r, dy_out, du_out);
      // Iterative refinement with residuals in extended precision: near the
      // solution the plain double-precision floor eps*||M||*||dy|| is what
      // limits primal feasibility. Corrections are only kept while they
      // reduce the residual, since refinement can diverge when M is near
      // singular.
      auto residuals = [&](VectorXd& r1, VectorXd& r2) {
        for (int i = 0; i < m; ++i) {
          long double acc = g[i];
          for (int j = 0; j < m; ++j) acc -= static_cast<long double>(M(i, j)) * dy_out[j];
          for (int k = 0; k < nf; ++k) acc -= static_cast<long double>(B(i, k)) * du_out[k];
          r1[i] = static_cast<double>(acc);
        }
        for (int k = 0; k < nf; ++k) {
          long double acc = r[k];
          for (int i = 0; i < m; ++i) acc -= static_cast<long double>(B(i, k)) * dy_out[i];
          r2[k] = static_cast<double>(acc);
        }
        return std::max(r1.lpNorm<Eigen::Infinity>(), nf ? r2.lpNorm<Eigen::Infinity>() : 0.0);
      };
      VectorXd r1(m), r2(nf);
      double rnorm = residuals(r1, r2);
      for (int pass = 0; pass < 4 && rnorm > 0.0; ++pass) {
        VectorXd e1, e2;
        once(r1, r2, e1, e2);
        VectorXd save_dy = dy_out, save_du = du_out;
        dy_out += e1;
        if (nf) du_out += e2;
        double rnew = residuals(r1, r2);
        if (!(rnew < 0.9 * rnorm)) {
          if (rnew > rnorm) {
            dy_out = save_dy;
            du_out = save_du;
          }
          break;
        }
        rnorm = rnew;
      }
    };

    // One Newton solve for a given centering target and correction term.
    auto newton = [&](double sigmu, bool correct, std::vector<MatrixXd>& dX_out, std::vector<MatrixXd>& dZ_out,
                      VectorXd& dx_out, VectorXd& dz_out, VectorXd& du_out, VectorXd& dy_out) {
      VectorXd g = Rp;
      for (int b = 0; b < nb; ++b) {
        const int d = L.dims[b];
        MatrixXd RdX = detail::mul_ld(Rd[b], X[b]);
        if (correct) RdX.noalias() += Corr[b];
        Kp[b] = sigmu * Zinv[b] - X[b] - detail::mul_ld(Zinv[b], RdX);
        for (auto& [i, ents] : rows_of[b]) g[i] -= detail::inner(*ents, Kp[b]);
        (void)d;
      }
      for (int k = 0; k < L.lp_dim; ++k) {
        double corr = correct ? dza_lp[k] * dxa_lp[k] : 0.0;
        kappa[k] = (sigmu - corr) / z_lp[k] - x_lp[k] - (x_lp[k] / z_lp[k]) * rd_lp[k];
        auto [i, a] = lp_row[k];
        g[i] -= a * kappa[k];
      }
      solve_kkt(g, rc_free, dy_out, du_out);
      for (int b = 0; b < nb; ++b) {
        dZ_out[b] = Rd[b] - apply_AT_block(dy_out, b);
        MatrixXd t = Kp[b] + detail::mul_ld(Zinv[b], detail::mul_ld(Rd[b] - dZ_out[b], X[b]));
        dX_out[b] = 0.5 * (t + t.transpose());
      }
      if (L.lp_dim) {
        VectorXd aty = apply_AT_lp(dy_out);
        dz_out = rd_lp - aty;
        for (int k = 0; k < L.lp_dim; ++k) dx_out[k] = kappa[k] + (x_lp[k] / z_lp[k]) * aty[k];
      }
    };

    auto step_len = [&](const std::vector<MatrixXd>& V, const std::vector<MatrixXd>& dV, const VectorXd& v,
                        const VectorXd& dv) {
      double a = 1.0;
      for (int b = 0; b < nb; ++b) a = std::min(a, detail::max_step(V[b], dV[b]));
      for (int k = 0; k < L.lp_dim; ++k)
        if (dv[k] < 0.0) a = std::min(a, -v[k] / dv[k]);
      return a;
    };

    VectorXd dua_, dya_, du_, dy_;
    newton(0.0, false, dXa, dZa, dxa_lp, dza_lp, dua_, dya_);
    double ap_aff = step_len(X, dXa, x_lp, dxa_lp);
    double ad_aff = step_len(Z, dZa, z_lp, dza_lp);

    double mu_aff = 0.0;
    for (int b = 0; b < nb; ++b)
      mu_aff += ((X[b] + ap_aff * dXa[b]).cwiseProduct(Z[b] + ad_aff * dZa[b])).sum();
    for (int k = 0; k < L.lp_dim; ++k) mu_aff += (x_lp[k] + ap_aff * dxa_lp[k]) * (z_lp[k] + ad_aff * dza_lp[k]);
    mu_aff /= nu;
    double sigma = std::clamp(std::pow(std::max(mu_aff, 0.0) / mu, 3.0), 1e-10, 1.0);
    // When the previous step collapsed the iterate has drifted off center and
    // wedged against the cone boundary; raise the centering target above the
    // current mu to pull it back inside.
    sigma *= sigma_boost;

    for (int b = 0; b < nb; ++b) Corr[b] = dZa[b] * dXa[b];
    newton(sigma * mu, true, dX, dZ, dx_lp, dz_lp, du_, dy_);

    double ap = step_len(X, dX, x_lp, dx_lp);
    double ad = step_len(Z, dZ, z_lp, dz_lp);
    double gamma = (ap_aff > 0.9 && ad_aff > 0.9) ? 0.999 : 0.99;
    ap = std::min(1.0, gamma * ap);
    ad = std::min(1.0, gamma * ad);
    // The step estimate uses a regularized factorization; verify the actual
    // candidate stays inside the cone and backtrack if not.
    auto cone_ok = [&](const std::vector<MatrixXd>& V, const std::vector<MatrixXd>& dV, const VectorXd& v,
                       const VectorXd& dv, double a) {
      for (int b = 0; b < nb; ++b)
        if (!detail::is_pd(V[b] + a * dV[b])) return false;
      for (int k = 0; k < L.lp_dim; ++k)
        if (v[k] + a * dv[k] <= 0.0) return false;
      return true;
    };
    int nbt = 0;
    for (int bt = 0; bt < 40 && !cone_ok(X, dX, x_lp, dx_lp, ap); ++bt) { ap *= 0.8; ++nbt; }
    for (int bt = 0; bt < 40 && !cone_ok(Z, dZ, z_lp, dz_lp, ad); ++bt) { ad *= 0.8; ++nbt; }
    if (st.verbose && nbt) std::printf("   backtracks %d\n", nbt);
    // A common step keeps the iterate centered: letting one side race ahead
    // wedges the other against the cone boundary.
    ap = ad = std::min(ap, ad);
    last_ap = ap;
    last_ad = ad;

    for (int b = 0; b < nb; ++b) {
      X[b].noalias() += ap * dX[b];
      Z[b].noalias() += ad * dZ[b];
    }
    x_lp += ap * dx_lp;
    z_lp += ad * dz_lp;
    if (nf) u += ap * du_;
    y += ad * dy_;

    if (std::min(ap, ad) < 0.05) {
      sigma_boost = std::min(sigma_boost * 4.0, 64.0);
    } else {
      sigma_boost = 1.0;
    }
    if (std::min(ap, ad) < 1e-4) {
      if (++tiny_steps >= 15) return finish(SolveStatus::numerical_trouble, iter + 1, rel_gap);
    } else {
      tiny_steps = 0;
    }
  }
  return finish(SolveStatus::iteration_limit, st.max_iter, rel_gap);
}

}  // namespace lapopf::conic
