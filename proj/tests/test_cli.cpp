#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "helpers.hpp"
#include "schema_check.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = LAPOPF_CLI_PATH;

std::string case_path(const std::string& name) { return lapopf::testing::data_path("cases/" + name); }

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  std::string cmd = kCli + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  EXPECT_NE(pipe, nullptr);
  RunResult r;
  std::array<char, 4096> buf;
  while (fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path temp_dir() {
  fs::path d = fs::temp_directory_path() / ("lapopf_cli_test_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d;
}

json load_json(const fs::path& p) {
  std::ifstream in(p);
  EXPECT_TRUE(in.good()) << p;
  return json::parse(in);
}

json report_schema() {
  std::ifstream in(std::string(LAPOPF_SCHEMA_DIR) + "/report.schema.json");
  return json::parse(in);
}

}  // namespace

TEST(Cli, SolveExactCaseReportsConverged) {
  fs::path dir = temp_dir();
  fs::path rep = dir / "r.json";
  fs::path csv = dir / "t.csv";
  RunResult r = run("solve " + case_path("case14.m") + " --report " + rep.string() + " --trace " + csv.string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("converged"), std::string::npos);

  json j = load_json(rep);
  EXPECT_EQ(j["outcome"], "converged");
  EXPECT_EQ(j["iterations"], 0);
  EXPECT_TRUE(j["numerically_rank_one"].get<bool>());
  EXPECT_NEAR(j["c_star"].get<double>(), 8081.5, 2.0);
  auto errs = lapopf::testing::schema_errors(j, report_schema());
  EXPECT_TRUE(errs.empty()) << errs.front();

  // Trace CSV: stable header, one data row (base solve only), LF endings.
  std::ifstream in(csv, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  EXPECT_EQ(text.find('\r'), std::string::npos);
  std::istringstream lines(text);
  std::string header, row, extra;
  std::getline(lines, header);
  EXPECT_EQ(header,
            "iter,max_flow_mis_MVA,max_inj_mis_MVA,max_P_flow_mis,max_Q_flow_mis,max_P_inj_mis,max_Q_inj_mis,"
            "objective");
  EXPECT_TRUE(static_cast<bool>(std::getline(lines, row)));
  EXPECT_FALSE(static_cast<bool>(std::getline(lines, extra)));
  EXPECT_EQ(row.substr(0, 2), "0,");
}

TEST(Cli, SolveParseErrorExitsOne) {
  fs::path dir = temp_dir();
  fs::path bad = dir / "bad.json";
  std::ofstream(bad) << "{ this is not json";
  EXPECT_EQ(run("solve " + bad.string()).code, 1);
  EXPECT_EQ(run("solve " + (dir / "missing.json").string()).code, 1);
}

TEST(Cli, SolveIterationLimitExitsTwo) {
  fs::path dir = temp_dir();
  fs::path rep = dir / "r.json";
  RunResult r = run("solve " + case_path("case30_mp.m") + " --max-iter 0 --report " + rep.string());
  EXPECT_EQ(r.code, 2) << r.out;
  json j = load_json(rep);
  EXPECT_EQ(j["outcome"], "iteration_limit");
  auto errs = lapopf::testing::schema_errors(j, report_schema());
  EXPECT_TRUE(errs.empty()) << errs.front();
}

TEST(Cli, InfeasibleCaseExitsThree) {
  EXPECT_EQ(run("solve " + case_path("case2_infeasible.json")).code, 3);
  EXPECT_EQ(run("relax " + case_path("case2_infeasible.json")).code, 3);
}

TEST(Cli, RelaxPrintsRankMetrics) {
  RunResult r = run("relax " + case_path("case14.m"));
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("numerically rank-one: true"), std::string::npos);

  RunResult inexact = run("relax " + case_path("case30_mp.m"));
  EXPECT_EQ(inexact.code, 0) << inexact.out;
  EXPECT_NE(inexact.out.find("numerically rank-one: false"), std::string::npos);
}

TEST(Cli, RelaxAlternativeObjectives) {
  EXPECT_EQ(run("relax " + case_path("case14.m") + " --objective laplacian").code, 0);
  EXPECT_EQ(run("relax " + case_path("case14.m") + " --objective qpen --qpen-eps-b 0.5").code, 0);
  EXPECT_NE(run("relax " + case_path("case14.m") + " --objective bogus").code, 0);
}

TEST(Cli, TraceRequiresOutputPath) {
  EXPECT_EQ(run("trace " + case_path("case14.m")).code, 1);
}

TEST(Cli, TraceInexactCaseRowCount) {
  fs::path dir = temp_dir();
  fs::path csv = dir / "trace30.csv";
  RunResult r = run("trace " + case_path("case30_mp.m") + " --trace " + csv.string());
  EXPECT_EQ(r.code, 0) << r.out;
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);  // header
  int rows = 0;
  double prev_obj = 0.0;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string tok;
    std::getline(fields, tok, ',');
    EXPECT_EQ(std::stoi(tok), rows);
    // All mismatch columns nonnegative.
    for (int c = 1; c <= 6; ++c) {
      std::getline(fields, tok, ',');
      EXPECT_GE(std::stod(tok), 0.0) << line;
    }
    std::getline(fields, tok, ',');
    prev_obj = std::stod(tok);
    ++rows;
  }
  (void)prev_obj;
  EXPECT_GE(rows, 2);  // base + at least one weighted iteration
}

TEST(Cli, PreprocessingFlagsAppearInReport) {
  fs::path dir = temp_dir();
  fs::path rep = dir / "r.json";
  RunResult r = run("solve " + case_path("case3_lowz.json") + " --thrshz 1e-3 --min-r 1e-5 --report " + rep.string());
  EXPECT_EQ(r.code, 0) << r.out;
  json j = load_json(rep);
  EXPECT_TRUE(j["preprocessing"]["merged_low_impedance"].get<bool>());
  EXPECT_TRUE(j["preprocessing"]["min_r_applied"].get<bool>());
  EXPECT_LT(j["preprocessing"]["buses_after"].get<int>(), j["preprocessing"]["buses_before"].get<int>());
}

TEST(Cli, BatchJobsWritesPerCaseReports) {
  fs::path dir = temp_dir();
  fs::path rdir = dir / "reports";
  RunResult r = run("solve " + case_path("case2.json") + " " + case_path("case14.m") + " --jobs 2 --report " +
                    rdir.string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(rdir / "case2.report.json"));
  EXPECT_TRUE(fs::exists(rdir / "case14.report.json"));
  for (const char* f : {"case2.report.json", "case14.report.json"}) {
    auto errs = lapopf::testing::schema_errors(load_json(rdir / f), report_schema());
    EXPECT_TRUE(errs.empty()) << f << ": " << errs.front();
  }
}
