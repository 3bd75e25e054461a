#include <gtest/gtest.h>

#include <random>

#include "helpers.hpp"
#include "lapopf/algorithm.hpp"
#include "lapopf/case_io.hpp"

using namespace lapopf;
using lapopf::testing::load_case;
using lapopf::testing::random_voltages;

// --- closest rank-one matrix ------------------------------------------------

TEST(ClosestRankOne, FixesRankOneInput) {
  std::mt19937 rng(7);
  std::normal_distribution<double> nd;
  Eigen::VectorXd x(6);
  for (long i = 0; i < x.size(); ++i) x[i] = nd(rng);
  Eigen::MatrixXd W = x * x.transpose();
  Eigen::MatrixXd W1 = alg::closest_rank_one(W);
  EXPECT_LT((W - W1).norm(), 1e-10 * W.norm());
}

TEST(ClosestRankOne, KeepsDominantDiagonal) {
  Eigen::MatrixXd W = Eigen::Vector2d(4.0, 1.0).asDiagonal();
  Eigen::MatrixXd W1 = alg::closest_rank_one(W);
  Eigen::MatrixXd expect = Eigen::Vector2d(4.0, 0.0).asDiagonal();
  EXPECT_LT((W1 - expect).norm(), 1e-12);
}

TEST(ClosestRankOne, RejectsNegativeDefinite) {
  Eigen::MatrixXd W = -Eigen::MatrixXd::Identity(3, 3);
  EXPECT_THROW(alg::closest_rank_one(W), std::runtime_error);
}

// Brute-force Eckart-Young check: no random rank-one candidate comes closer.
TEST(ClosestRankOne, BeatsRandomCandidates) {
  std::mt19937 rng(21);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 6;
    Eigen::MatrixXd A(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) A(i, j) = nd(rng);
    Eigen::MatrixXd W = A * A.transpose();
    Eigen::MatrixXd W1 = alg::closest_rank_one(W);
    double best = (W - W1).norm();
    for (int c = 0; c < 1000; ++c) {
      Eigen::VectorXd y(d);
      for (int i = 0; i < d; ++i) y[i] = nd(rng);
      y.normalize();
      // Optimal scale for candidate direction y: tr(W yy') since ||yy'||=1.
      double s = y.dot(W * y);
      EXPECT_LE(best, (W - s * y * y.transpose()).norm() + 1e-12);
    }
  }
}

// --- mismatch vectors -------------------------------------------------------

TEST(Mismatch, VanishesOnRankOne) {
  CaseData cs = load_case("case14.m");
  NetworkMatrices net = build_admittance(cs);
  sdp::SdpMatrices M = sdp::build_matrices(cs, net, true);
  std::mt19937 rng(3);
  VoltageVector v = random_voltages(cs.n(), rng);
  v.vq[M.ref] = 0.0;
  Eigen::VectorXd x = M.project(v.stacked());
  Eigen::MatrixXd W = x * x.transpose();
  Eigen::MatrixXd W1 = alg::closest_rank_one(W);
  Eigen::VectorXd inj = alg::injection_mismatch(M, W, W1, cs.base_mva);
  Eigen::VectorXd flow = alg::flow_mismatch(M, W, W1, cs.base_mva);
  EXPECT_LT(inj.maxCoeff(), 1e-9);
  EXPECT_LT(flow.maxCoeff(), 1e-9);
}

// Oracle: with dW known in eigen-decomposed form, every trace reduces to
// quadratic forms evaluated by an independent code path.
TEST(Mismatch, MatchesQuadraticFormOracle) {
  CaseData cs = load_case("case14.m");
  NetworkMatrices net = build_admittance(cs);
  sdp::SdpMatrices M = sdp::build_matrices(cs, net, true);
  std::mt19937 rng(11);
  std::normal_distribution<double> nd;
  VoltageVector v = random_voltages(cs.n(), rng);
  v.vq[M.ref] = 0.0;
  Eigen::VectorXd x = M.project(v.stacked());
  Eigen::VectorXd eta(M.dim);
  for (int i = 0; i < M.dim; ++i) eta[i] = nd(rng);
  const double eps = 1e-3;
  Eigen::MatrixXd W1 = x * x.transpose();
  Eigen::MatrixXd W = W1 + eps * eta * eta.transpose();

  // closest_rank_one(W) is not x x' here; feed W1 directly so the mismatch
  // operand is exactly eps * eta eta'.
  Eigen::VectorXd inj = alg::injection_mismatch(M, W, W1, cs.base_mva);
  Eigen::VectorXd flow = alg::flow_mismatch(M, W, W1, cs.base_mva);
  for (int k = 0; k < cs.n(); ++k) {
    double dp = eps * sdp::quad_form(M.Yk[static_cast<size_t>(k)], eta);
    double dq = eps * sdp::quad_form(M.Ybark[static_cast<size_t>(k)], eta);
    EXPECT_NEAR(inj[k], std::hypot(dp, dq) * cs.base_mva, 1e-9);
  }
  for (size_t l = 0; l < net.branches.size(); ++l) {
    double plm = eps * sdp::quad_form(M.Zlm[l], eta);
    double qlm = eps * sdp::quad_form(M.Zbarlm[l], eta);
    double pml = eps * sdp::quad_form(M.Zml[l], eta);
    double qml = eps * sdp::quad_form(M.Zbarml[l], eta);
    EXPECT_NEAR(flow[static_cast<long>(l)], (std::hypot(plm, qlm) + std::hypot(pml, qml)) * cs.base_mva, 1e-9);
  }

  alg::MismatchVectors mv = alg::compute_mismatches(M, W, W1, cs.base_mva);
  EXPECT_LT((mv.inj_mis - inj).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_LT((mv.flow_mis - flow).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_GE(mv.flow_mis.minCoeff(), 0.0);
  EXPECT_GE(mv.inj_mis.minCoeff(), 0.0);
  // Split maxima are bounded by the combined mismatch maxima.
  EXPECT_LE(mv.max_p_inj, mv.inj_mis.maxCoeff() + 1e-12);
  EXPECT_LE(mv.max_q_flow, mv.flow_mis.maxCoeff() + 1e-12);
}

// --- gap helper -------------------------------------------------------------

TEST(RelaxationGap, Basics) {
  EXPECT_DOUBLE_EQ(alg::relaxation_gap(100.0, 100.0), 0.0);
  EXPECT_NEAR(alg::relaxation_gap(100.0, 100.5), 0.005, 1e-12);
}

// --- full algorithm ---------------------------------------------------------

TEST(Algorithm, ExactCaseConvergesAtBase) {
  CaseData cs = load_case("case14.m");
  NetworkMatrices net = build_admittance(cs);
  int events = 0;
  alg::AlgorithmResult res =
      alg::run_algorithm(cs, net, {}, [&](const alg::IterationRecord&) { ++events; });
  EXPECT_EQ(res.outcome, alg::Outcome::converged);
  EXPECT_EQ(res.iterations, 0);
  ASSERT_EQ(res.trace.size(), 1u);
  EXPECT_EQ(events, 1);
  EXPECT_LT(res.gap_bound, 1e-4);
  EXPECT_TRUE(res.feasibility.pass);
  EXPECT_NEAR(res.c_star, 8081.5, 2.0);
  EXPECT_NEAR(res.point.cost, 8081.5, 2.0);
}

TEST(Algorithm, InexactCaseNeedsWeightedIterations) {
  CaseData cs = load_case("case30_mp.m");
  NetworkMatrices net = build_admittance(cs);
  alg::AlgorithmResult res = alg::run_algorithm(cs, net);
  EXPECT_EQ(res.outcome, alg::Outcome::converged);
  EXPECT_GE(res.iterations, 1);
  EXPECT_LE(res.iterations, 10);
  EXPECT_EQ(res.trace.size(), static_cast<size_t>(res.iterations) + 1);
  // Cost-cap guarantee.
  EXPECT_LE(res.achieved_cost, res.c_star * 1.005 * (1.0 + 1e-8));
  EXPECT_LE(res.gap_bound, 0.005 + 1e-8);
  // Termination criteria met.
  EXPECT_LT(res.trace.back().max_flow_mis, 1.0);
  EXPECT_LT(res.trace.back().max_inj_mis, 1.0);
  EXPECT_TRUE(res.feasibility.pass);
  // Base relaxation was not rank-one; weights are nonnegative and the
  // recorded weights grow monotonically entrywise across iterations.
  EXPECT_GT(res.trace.front().rank_ratio, sdp::kRankOneRatio);
  for (size_t i = 2; i < res.trace.size(); ++i) {
    const Eigen::VectorXd& prev = res.trace[i - 1].weights;
    const Eigen::VectorXd& cur = res.trace[i].weights;
    EXPECT_GE((cur - prev).minCoeff(), 0.0);
  }
}

TEST(Algorithm, IterationBudgetZeroStopsAfterBase) {
  CaseData cs = load_case("case30_mp.m");
  NetworkMatrices net = build_admittance(cs);
  alg::AlgorithmSettings st;
  st.max_iter = 0;
  alg::AlgorithmResult res = alg::run_algorithm(cs, net, st);
  EXPECT_EQ(res.outcome, alg::Outcome::iteration_limit);
  EXPECT_EQ(res.trace.size(), 1u);
  EXPECT_EQ(res.iterations, 0);
}

TEST(Algorithm, InfeasibleCaseCertified) {
  CaseData cs = load_case("case2_infeasible.json");
  NetworkMatrices net = build_admittance(cs);
  alg::AlgorithmResult res = alg::run_algorithm(cs, net);
  EXPECT_EQ(res.outcome, alg::Outcome::relaxation_infeasible);
  EXPECT_TRUE(res.trace.empty());
}

TEST(Algorithm, OuterLoopRaisesDelta) {
  CaseData cs = load_case("case30_mp.m");
  NetworkMatrices net = build_admittance(cs);
  alg::AlgorithmSettings st;
  st.max_iter = 0;  // inner loop never runs; only the delta ladder advances
  st.outer_delta_step = 0.005;
  st.outer_max = 2;
  alg::AlgorithmResult res = alg::run_algorithm(cs, net, st);
  EXPECT_EQ(res.outcome, alg::Outcome::iteration_limit);
  EXPECT_NEAR(res.delta_used, 0.005 + 3 * 0.005, 1e-12);
}

TEST(Algorithm, RejectsBadSettings) {
  CaseData cs = load_case("case2.json");
  NetworkMatrices net = build_admittance(cs);
  alg::AlgorithmSettings st;
  st.delta = -0.1;
  EXPECT_THROW(alg::run_algorithm(cs, net, st), std::invalid_argument);
  st = {};
  st.eps_flow = 0.0;
  EXPECT_THROW(alg::run_algorithm(cs, net, st), std::invalid_argument);
}
