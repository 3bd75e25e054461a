#pragma once

// Solver-agnostic conic program: scalar variables, one symmetric matrix
// variable, linear equality/inequality constraints, second-order cones, and a
// linear objective. Matrix coefficients use trace semantics: a term (i, j, f)
// with i > j contributes 2*f*W_ij (both symmetric positions), a diagonal term
// contributes f*W_ii. The scaled-vector (svec) form stores the lower triangle
// column-wise with off-diagonals multiplied by sqrt(2), so that inner products
// of svec vectors equal matrix traces.

#include <cmath>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace lapopf::conic {

inline constexpr double kSqrt2 = 1.4142135623730951;

// --- scaled-vector (svec) helpers -----------------------------------------

inline int svec_size(int d) { return d * (d + 1) / 2; }

// Slot of entry (i, j), i >= j, in the column-major lower-triangle layout.
inline int svec_slot(int i, int j, int d) { return j * d - j * (j - 1) / 2 + (i - j); }

inline Eigen::VectorXd svec(const Eigen::MatrixXd& A) {
  const int d = static_cast<int>(A.rows());
  Eigen::VectorXd v(svec_size(d));
  int k = 0;
  for (int j = 0; j < d; ++j)
    for (int i = j; i < d; ++i) v[k++] = (i == j) ? A(i, j) : kSqrt2 * A(i, j);
  return v;
}

inline Eigen::MatrixXd smat(const Eigen::VectorXd& v, int d) {
  Eigen::MatrixXd A(d, d);
  int k = 0;
  for (int j = 0; j < d; ++j)
    for (int i = j; i < d; ++i) {
      double x = (i == j) ? v[k] : v[k] / kSqrt2;
      A(i, j) = x;
      A(j, i) = x;
      ++k;
    }
  return A;
}

// --- problem --------------------------------------------------------------

// Affine expression over the scalar variables and the matrix block.
struct LinExpr {
  std::vector<std::pair<int, double>> scalars;           // (var, coef)
  std::vector<std::tuple<int, int, double>> mat;         // (i, j, f), canonical i >= j
  double constant = 0.0;

  LinExpr& add_scalar(int var, double coef) {
    scalars.emplace_back(var, coef);
    return *this;
  }
  // Trace coefficient f on W_ij (i.e. contribution f*W_ii or 2*f*W_ij).
  LinExpr& add_mat(int i, int j, double f) {
    mat.emplace_back(i, j, f);
    return *this;
  }
  // tr(F W) for sparse symmetric F given by its lower triangle.
  LinExpr& add_trace(const Eigen::SparseMatrix<double>& F) {
    for (int col = 0; col < F.outerSize(); ++col)
      for (Eigen::SparseMatrix<double>::InnerIterator it(F, col); it; ++it)
        if (it.row() >= it.col()) mat.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    return *this;
  }
};

enum class ConType { eq, le };

struct LinCon {
  LinExpr expr;
  double rhs = 0.0;
  ConType type = ConType::eq;
  std::string name;
};

struct SocCon {
  // exprs[0] >= || (exprs[1], ..., exprs[k-1]) ||_2
  std::vector<LinExpr> exprs;
  std::string name;
};

class ConicProblem {
 public:
  int add_scalar(std::string name = "") {
    scalar_names_.push_back(std::move(name));
    return static_cast<int>(scalar_names_.size()) - 1;
  }
  int num_scalars() const { return static_cast<int>(scalar_names_.size()); }
  const std::string& scalar_name(int i) const { return scalar_names_[static_cast<size_t>(i)]; }

  void set_matrix_dim(int d) { mat_dim_ = d; }
  int matrix_dim() const { return mat_dim_; }

  void add_eq(LinExpr e, double rhs, std::string name = "") {
    lin_.push_back({std::move(e), rhs, ConType::eq, std::move(name)});
  }
  void add_le(LinExpr e, double rhs, std::string name = "") {
    lin_.push_back({std::move(e), rhs, ConType::le, std::move(name)});
  }
  void add_soc(std::vector<LinExpr> exprs, std::string name = "") {
    socs_.push_back({std::move(exprs), std::move(name)});
  }
  void set_objective(LinExpr e) { objective_ = std::move(e); }

  const std::vector<LinCon>& linear() const { return lin_; }
  const std::vector<SocCon>& socs() const { return socs_; }
  const LinExpr& objective() const { return objective_; }

 private:
  std::vector<std::string> scalar_names_;
  int mat_dim_ = 0;
  std::vector<LinCon> lin_;
  std::vector<SocCon> socs_;
  LinExpr objective_;
};

enum class SolveStatus { optimal, infeasible, numerical_trouble, iteration_limit };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::numerical_trouble: return "numerical_trouble";
    case SolveStatus::iteration_limit: return "iteration_limit";
  }
  return "?";
}

struct SolverSettings {
  double feas_tol = 1e-7;
  double gap_tol = 1e-7;
  int max_iter = 200;
  bool verbose = false;
};

struct ConicSolution {
  SolveStatus status = SolveStatus::numerical_trouble;
  Eigen::VectorXd scalars;
  Eigen::MatrixXd W;  // mat_dim x mat_dim (empty when no matrix block)
  double objective = 0.0;       // primal objective at the returned point
  double dual_objective = 0.0;  // rhs'y: a lower bound on the optimum up to the dual residual
  double primal_residual = 0.0;  // max constraint violation (independent check)
  double rel_gap = 0.0;
  int iterations = 0;
};

// --- diagnostics ----------------------------------------------------------

inline std::vector<std::string> validate(const ConicProblem& p) {
  std::vector<std::string> out;
  std::set<int> used;
  auto scan = [&](const LinExpr& e, const std::string& where) {
    for (auto& [v, c] : e.scalars) {
      (void)c;
      if (v < 0 || v >= p.num_scalars())
        out.push_back(where + ": scalar variable " + std::to_string(v) + " undeclared");
      else
        used.insert(v);
    }
    for (auto& [i, j, f] : e.mat) {
      (void)f;
      if (i < j) out.push_back(where + ": coefficient addresses upper-triangle entry (" + std::to_string(i) + "," +
                               std::to_string(j) + ")");
      if (i >= p.matrix_dim() || j < 0)
        out.push_back(where + ": matrix entry (" + std::to_string(i) + "," + std::to_string(j) + ") out of range");
    }
  };
  scan(p.objective(), "objective");
  for (size_t c = 0; c < p.linear().size(); ++c) scan(p.linear()[c].expr, "lin[" + std::to_string(c) + "]");
  for (size_t c = 0; c < p.socs().size(); ++c) {
    const auto& soc = p.socs()[c];
    if (soc.exprs.size() < 2) out.push_back("soc[" + std::to_string(c) + "]: cone of dimension " +
                                            std::to_string(soc.exprs.size()) + " (need >= 2)");
    for (size_t e = 0; e < soc.exprs.size(); ++e)
      scan(soc.exprs[e], "soc[" + std::to_string(c) + "." + std::to_string(e) + "]");
  }
  for (int v = 0; v < p.num_scalars(); ++v)
    if (!used.count(v)) out.push_back("scalar variable " + std::to_string(v) +
                                      (p.scalar_name(v).empty() ? "" : " (" + p.scalar_name(v) + ")") +
                                      " is never referenced");
  return out;
}

// --- independent residual check -------------------------------------------

inline double eval_expr(const LinExpr& e, const Eigen::VectorXd& scalars, const Eigen::MatrixXd& W) {
  double v = e.constant;
  for (auto& [var, c] : e.scalars) v += c * scalars[var];
  for (auto& [i, j, f] : e.mat) v += (i == j) ? f * W(i, i) : 2.0 * f * W(i, j);
  return v;
}

// Max constraint violation of a candidate point, computed straight from the
// problem data (not by any solver internals). PSD violation is -lambda_min.
inline double max_violation(const ConicProblem& p, const Eigen::VectorXd& scalars, const Eigen::MatrixXd& W) {
  double viol = 0.0;
  for (const auto& c : p.linear()) {
    double v = eval_expr(c.expr, scalars, W) - c.rhs;
    viol = std::max(viol, c.type == ConType::eq ? std::abs(v) : v);
  }
  for (const auto& soc : p.socs()) {
    double t = eval_expr(soc.exprs[0], scalars, W);
    double nrm = 0.0;
    for (size_t e = 1; e < soc.exprs.size(); ++e) {
      double u = eval_expr(soc.exprs[e], scalars, W);
      nrm += u * u;
    }
    viol = std::max(viol, std::sqrt(nrm) - t);
  }
  if (p.matrix_dim() > 0 && W.size() > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (W + W.transpose()), Eigen::EigenvaluesOnly);
    viol = std::max(viol, -es.eigenvalues().minCoeff());
  }
  return viol;
}

// --- debug dump ------------------------------------------------------------

// Sparse-triplet text format, one line per nonzero:
//   <constraint-id> <row> <col> <value>
// Scalar-variable coefficients use row = -1 and col = the variable index;
// matrix coefficients use the (row, col) of the lower-triangle entry. The
// right-hand side / constant appears with row = -2, col = 0. Constraint ids
// are "obj", "eqK"/"leK" for linear rows, and "socK.E" for cone expressions.
inline void dump_triplets(const ConicProblem& p, std::ostream& os) {
  auto emit = [&os](const std::string& id, const LinExpr& e, double rhs) {
    for (auto& [v, c] : e.scalars) os << id << " -1 " << v << " " << c << "\n";
    for (auto& [i, j, f] : e.mat) os << id << " " << i << " " << j << " " << f << "\n";
    if (rhs != 0.0 || e.constant != 0.0) os << id << " -2 0 " << (rhs - e.constant) << "\n";
  };
  emit("obj", p.objective(), 0.0);
  for (size_t c = 0; c < p.linear().size(); ++c) {
    const auto& lc = p.linear()[c];
    emit((lc.type == ConType::eq ? "eq" : "le") + std::to_string(c), lc.expr, lc.rhs);
  }
  for (size_t c = 0; c < p.socs().size(); ++c)
    for (size_t e = 0; e < p.socs()[c].exprs.size(); ++e)
      emit("soc" + std::to_string(c) + "." + std::to_string(e), p.socs()[c].exprs[e], 0.0);
}

}  // namespace lapopf::conic
