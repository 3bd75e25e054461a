#pragma once

#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "lapopf/case.hpp"
#include "lapopf/case_io.hpp"
#include "lapopf/network.hpp"

namespace lapopf::testing {

inline std::string data_path(const std::string& rel) { return std::string(LAPOPF_DATA_DIR) + "/" + rel; }

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline CaseData load_case(const std::string& name) {
  std::string path = data_path("cases/" + name);
  CaseFormat fmt = name.size() > 2 && name.substr(name.size() - 2) == ".m" ? CaseFormat::matpower_m : CaseFormat::json;
  return parse_case(read_file(path), fmt, name);
}

// Random voltage vector with magnitudes near 1 and small angles.
inline VoltageVector random_voltages(int n, std::mt19937& rng) {
  std::uniform_real_distribution<double> mag(0.9, 1.1);
  std::uniform_real_distribution<double> ang(-0.5, 0.5);
  VoltageVector v{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (int k = 0; k < n; ++k) {
    double m = mag(rng), a = ang(rng);
    v.vd[k] = m * std::cos(a);
    v.vq[k] = m * std::sin(a);
  }
  return v;
}

}  // namespace lapopf::testing
