#include <gtest/gtest.h>

#include <random>

#include "helpers.hpp"
#include "lapopf/network.hpp"

using namespace lapopf;
using lapopf::testing::load_case;
using lapopf::testing::random_voltages;

TEST(Admittance, TwoBusValues) {
  CaseData cs = load_case("case2.json");
  NetworkMatrices net = build_admittance(cs);
  // y = 1/(0.02 + j0.1)
  std::complex<double> y(0.02 / 0.0104, -0.1 / 0.0104);
  Eigen::MatrixXcd Y = Eigen::MatrixXcd(net.Y);
  EXPECT_NEAR(std::abs(Y(0, 0) - y), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(Y(1, 1) - y), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(Y(0, 1) + y), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(Y(1, 0) + y), 0.0, 1e-12);
}

TEST(Admittance, TapAsymmetry) {
  // A transformer branch scales the from-side self term by 1/tau^2 and makes
  // the off-diagonal terms unequal only when a phase shift is present.
  CaseData cs = load_case("case2.json");
  cs.branches[0].tau = 0.95;
  NetworkMatrices net = build_admittance(cs);
  Eigen::MatrixXcd Y = Eigen::MatrixXcd(net.Y);
  std::complex<double> y = cs.branches[0].y();
  EXPECT_NEAR(std::abs(Y(0, 0) - y / (0.95 * 0.95)), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(Y(1, 1) - y), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(Y(0, 1) - Y(1, 0)), 0.0, 1e-12);  // no shift: still symmetric

  cs.branches[0].theta_shift = 0.1;
  Eigen::MatrixXcd Ys = Eigen::MatrixXcd(build_admittance(cs).Y);
  EXPECT_GT(std::abs(Ys(0, 1) - Ys(1, 0)), 1e-6);
}

TEST(Injections, FlatVoltageTwoBus) {
  CaseData cs = load_case("case2.json");
  NetworkMatrices net = build_admittance(cs);
  VoltageVector v{Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(2)};
  auto [p, q] = eval_injections(net, v, cs);
  // Flat voltage pushes no power through the line, so generation = load.
  EXPECT_NEAR(p[0], 0.0, 1e-12);
  EXPECT_NEAR(q[0], 0.0, 1e-12);
  EXPECT_NEAR(p[1], 0.5, 1e-12);
  EXPECT_NEAR(q[1], 0.1, 1e-12);
}

TEST(LineFlows, FlatVoltageSeesOnlyCharging) {
  CaseData cs = load_case("case14.m");
  NetworkMatrices net = build_admittance(cs);
  VoltageVector v{Eigen::VectorXd::Ones(14), Eigen::VectorXd::Zero(14)};
  LineFlows f = eval_line_flows(net, v);
  for (size_t l = 0; l < net.branches.size(); ++l) {
    const auto& br = net.branches[l];
    if (br.tau == 1.0 && br.theta == 0.0) {
      EXPECT_NEAR(f.p_lm[static_cast<long>(l)], 0.0, 1e-12);
      EXPECT_NEAR(f.q_lm[static_cast<long>(l)], -br.b_sh / 2.0, 1e-12);
      EXPECT_NEAR(f.q_ml[static_cast<long>(l)], -br.b_sh / 2.0, 1e-12);
    }
  }
}

// The two flow directions of a lossless representation must satisfy
// p_lm + p_ml = series loss >= 0 for any voltage.
TEST(LineFlows, DirectedLossesNonnegative) {
  std::mt19937 rng(7);
  for (const char* name : {"case14.m", "case57.m", "case118.m"}) {
    CaseData cs = load_case(name);
    NetworkMatrices net = build_admittance(cs);
    for (int t = 0; t < 20; ++t) {
      VoltageVector v = random_voltages(cs.n(), rng);
      LineFlows f = eval_line_flows(net, v);
      for (long l = 0; l < f.p_lm.size(); ++l) EXPECT_GE(f.p_lm[l] + f.p_ml[l], -1e-10);
    }
  }
}

// Power balance: the injection at each bus equals the sum of flows into the
// lines incident to it plus the bus shunt consumption. This checks the flow
// expressions against the admittance-matrix injections independently.
TEST(Consistency, KirchhoffClosure) {
  std::mt19937 rng(42);
  for (const char* name : {"case2.json", "case3_lowz.json", "case14.m", "case30.m", "case39.m", "case57.m",
                           "case118.m"}) {
    CaseData cs = load_case(name);
    NetworkMatrices net = build_admittance(cs);
    for (int t = 0; t < 10; ++t) {
      VoltageVector v = random_voltages(cs.n(), rng);
      auto [p, q] = eval_injections(net, v, cs);
      LineFlows f = eval_line_flows(net, v);
      Eigen::VectorXd psum = Eigen::VectorXd::Zero(cs.n());
      Eigen::VectorXd qsum = Eigen::VectorXd::Zero(cs.n());
      for (size_t l = 0; l < net.branches.size(); ++l) {
        const auto& br = net.branches[l];
        psum[br.l] += f.p_lm[static_cast<long>(l)];
        psum[br.m] += f.p_ml[static_cast<long>(l)];
        qsum[br.l] += f.q_lm[static_cast<long>(l)];
        qsum[br.m] += f.q_ml[static_cast<long>(l)];
      }
      for (int k = 0; k < cs.n(); ++k) {
        double vm2 = v.vd[k] * v.vd[k] + v.vq[k] * v.vq[k];
        const Bus& b = cs.buses[static_cast<size_t>(k)];
        double p_net = p[k] - b.p_load;
        double q_net = q[k] - b.q_load;
        EXPECT_NEAR(p_net, psum[k] + b.g_shunt * vm2, 1e-9) << name << " bus " << b.id;
        EXPECT_NEAR(q_net, qsum[k] - b.b_shunt * vm2, 1e-9) << name << " bus " << b.id;
      }
    }
  }
}

TEST(Cost, QuadraticEvaluation) {
  CaseData cs = load_case("case3_lowz.json");
  Eigen::VectorXd p(3);
  p << 0.4, 0.0, 0.1;
  // 100*0.16 + 500*0.4 + 10  +  800*0.1 = 16 + 200 + 10 + 80
  EXPECT_NEAR(eval_cost(cs, p), 306.0, 1e-9);
}

TEST(Cost, RejectsMultipleGensPerBus) {
  CaseData cs = load_case("case2.json");
  cs.gens.push_back(cs.gens[0]);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
  EXPECT_THROW(eval_cost(cs, p), SemanticError);
}

TEST(Feasibility, FlagsViolations) {
  CaseData cs = load_case("case2.json");
  NetworkMatrices net = build_admittance(cs);
  VoltageVector ok{Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(2)};
  ok.vd[1] = 0.99;
  FeasibilityReport rep = check_feasibility(cs, net, ok);
  EXPECT_DOUBLE_EQ(rep.max_voltage_violation, 0.0);

  VoltageVector low{Eigen::VectorXd::Constant(2, 0.85), Eigen::VectorXd::Zero(2)};
  FeasibilityReport bad = check_feasibility(cs, net, low);
  EXPECT_NEAR(bad.max_voltage_violation, 0.05, 1e-12);
  EXPECT_FALSE(bad.pass);
}

TEST(Feasibility, FlowLimitInMva) {
  CaseData cs = load_case("case2.json");
  cs.branches[0].s_max = 0.01;  // 1 MVA limit -> clearly violated serving 50 MW
  NetworkMatrices net = build_admittance(cs);
  VoltageVector v{Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(2)};
  v.vq[1] = -0.05;
  FeasibilityReport rep = check_feasibility(cs, net, v);
  EXPECT_GT(rep.max_flow_violation_mva, 1.0);
  EXPECT_FALSE(rep.pass);
}
