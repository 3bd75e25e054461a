#pragma once

// Power-system case model: buses, generators, branches, and the quantities
// needed to pose an AC optimal power flow instance. Everything is stored in
// per-unit on the system MVA base; MVA shows up only at reporting boundaries.

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace lapopf {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, int line = -1)
      : std::runtime_error(line >= 0 ? "parse error at line " + std::to_string(line) + ": " + msg
                                     : "parse error: " + msg),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class SemanticError : public std::runtime_error {
 public:
  explicit SemanticError(const std::string& msg) : std::runtime_error("case error: " + msg) {}
};

struct Bus {
  int id = 0;
  double p_load = 0.0;   // P_D, pu
  double q_load = 0.0;   // Q_D, pu
  double vmin = 0.0;     // pu
  double vmax = 0.0;     // pu
  double g_shunt = 0.0;  // pu
  double b_shunt = 0.0;  // pu
  bool is_reference = false;
};

struct Gen {
  int bus = 0;
  double pmin = 0.0, pmax = 0.0;  // pu
  double qmin = 0.0, qmax = 0.0;  // pu
  // Convex quadratic cost on active generation, per-unit based:
  // cost($/hr) = c2*Pg^2 + c1*Pg + c0 with Pg in pu.
  double c2 = 0.0, c1 = 0.0, c0 = 0.0;
};

struct Branch {
  int from = 0;  // bus id l (tap side)
  int to = 0;    // bus id m
  double r = 0.0, x = 0.0;   // series impedance, pu
  double b_sh = 0.0;         // total shunt susceptance, pu
  double tau = 1.0;          // off-nominal turns ratio
  double theta_shift = 0.0;  // phase shift, radians
  double s_max = 0.0;        // apparent-power limit, pu; 0 = unlimited

  // series admittance g + jb = 1/(r + jx)
  double g() const { return r / (r * r + x * x); }
  double b() const { return -x / (r * r + x * x); }
  std::complex<double> y() const { return {g(), b()}; }
};

struct CaseData {
  std::string name;
  std::string version = "2";
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Gen> gens;
  std::vector<Branch> branches;

  int n() const { return static_cast<int>(buses.size()); }
  int n_branches() const { return static_cast<int>(branches.size()); }

  // Index of the bus with the given id; throws SemanticError if absent.
  int bus_index(int id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw SemanticError("reference to unknown bus " + std::to_string(id));
    return it->second;
  }
  bool has_bus(int id) const { return index_.count(id) != 0; }

  int reference_index() const {
    for (int k = 0; k < n(); ++k)
      if (buses[k].is_reference) return k;
    throw SemanticError("no reference bus");
  }

  // Rebuild the id -> index map. Must be called after editing `buses`.
  void reindex() {
    index_.clear();
    for (int k = 0; k < n(); ++k) {
      if (!index_.emplace(buses[k].id, k).second)
        throw SemanticError("duplicate bus id " + std::to_string(buses[k].id));
    }
  }

  // Enforce the structural invariants of a well-formed instance.
  void validate() const {
    if (base_mva <= 0.0) throw SemanticError("base_mva must be positive");
    if (buses.empty()) throw SemanticError("case has no buses");
    int refs = 0;
    for (const auto& b : buses) {
      if (!index_.count(b.id)) throw SemanticError("bus index out of date; call reindex()");
      if (!(b.vmin > 0.0) || b.vmin > b.vmax)
        throw SemanticError("bus " + std::to_string(b.id) + " has invalid voltage bounds");
      refs += b.is_reference ? 1 : 0;
    }
    if (refs != 1) throw SemanticError("expected exactly one reference bus, found " + std::to_string(refs));
    for (const auto& g : gens) {
      bus_index(g.bus);
      if (g.pmin > g.pmax || g.qmin > g.qmax)
        throw SemanticError("generator at bus " + std::to_string(g.bus) + " has empty output box");
      if (g.c2 < 0.0)
        throw SemanticError("generator at bus " + std::to_string(g.bus) + " has nonconvex cost (c2 < 0)");
    }
    for (const auto& br : branches) {
      bus_index(br.from);
      bus_index(br.to);
      if (!(br.tau > 0.0)) throw SemanticError("branch has nonpositive turns ratio");
      if (br.r * br.r + br.x * br.x <= 0.0) throw SemanticError("branch has zero impedance");
      if (br.from == br.to) throw SemanticError("branch is a self loop at bus " + std::to_string(br.from));
    }
  }

  // Generators attached to bus index k.
  std::vector<int> gens_at(int k) const {
    std::vector<int> out;
    for (int g = 0; g < static_cast<int>(gens.size()); ++g)
      if (bus_index(gens[g].bus) == k) out.push_back(g);
    return out;
  }

  // Per-bus aggregate generation box (pu). Buses without generators get a
  // zero box, matching the convention that their generation is fixed at zero.
  struct GenBox {
    double pmin = 0.0, pmax = 0.0, qmin = 0.0, qmax = 0.0;
  };
  std::vector<GenBox> gen_boxes() const {
    std::vector<GenBox> box(buses.size());
    for (const auto& g : gens) {
      auto& b = box[bus_index(g.bus)];
      b.pmin += g.pmin;
      b.pmax += g.pmax;
      b.qmin += g.qmin;
      b.qmax += g.qmax;
    }
    return box;
  }

 private:
  std::map<int, int> index_;
};

}  // namespace lapopf
