#pragma once

// Case input/output: the canonical JSON schema, a pragmatic subset of the
// MATPOWER .m case format (numeric bus/gen/branch/gencost tables), and the
// network preprocessing transformations (low-impedance line merging and
// minimum line resistance).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <istream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lapopf/case.hpp"

namespace lapopf {

enum class CaseFormat { matpower_m, json };

namespace detail {

// A numeric matrix pulled out of an .m file, with the source line of each row.
struct MTable {
  std::vector<std::vector<double>> rows;
  std::vector<int> lines;
};

class MatpowerScanner {
 public:
  explicit MatpowerScanner(const std::string& text) : text_(text) {}

  // Strip %-comments, keep line structure.
  std::string stripped() const {
    std::string out;
    out.reserve(text_.size());
    bool comment = false;
    for (char c : text_) {
      if (c == '%') comment = true;
      if (c == '\n') comment = false;
      out.push_back(comment ? (c == '\n' ? '\n' : ' ') : c);
    }
    return out;
  }

 private:
  const std::string& text_;
};

inline int line_of(const std::string& text, size_t pos) {
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

// Find `mpc.<field> = [ ... ];` and parse the bracketed numeric rows.
inline bool find_table(const std::string& text, const std::string& field, MTable& out) {
  const std::string key = "mpc." + field;
  size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    size_t p = pos + key.size();
    while (p < text.size() && std::isspace(static_cast<unsigned char>(text[p]))) ++p;
    if (p >= text.size() || text[p] != '=') {
      pos = p;
      continue;
    }
    ++p;
    while (p < text.size() && std::isspace(static_cast<unsigned char>(text[p]))) ++p;
    if (p >= text.size() || text[p] != '[') throw ParseError(key + ": expected '['", line_of(text, p));
    size_t close = text.find(']', p);
    if (close == std::string::npos) throw ParseError(key + ": missing ']'", line_of(text, p));
    std::string body = text.substr(p + 1, close - p - 1);
    size_t body_off = p + 1;

    out.rows.clear();
    out.lines.clear();
    std::vector<double> row;
    size_t i = 0;
    int row_line = line_of(text, body_off);
    auto flush_row = [&]() {
      if (!row.empty()) {
        out.rows.push_back(row);
        out.lines.push_back(row_line);
        row.clear();
      }
    };
    while (i < body.size()) {
      char c = body[i];
      if (c == ';' || c == '\n') {
        flush_row();
        ++i;
        row_line = line_of(text, body_off + i);
      } else if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
        ++i;
      } else {
        char* end = nullptr;
        double v = std::strtod(body.c_str() + i, &end);
        if (end == body.c_str() + i)
          throw ParseError(key + ": expected a number", line_of(text, body_off + i));
        row.push_back(v);
        i = static_cast<size_t>(end - body.c_str());
      }
    }
    flush_row();
    return true;
  }
  return false;
}

inline bool find_scalar(const std::string& text, const std::string& field, double& out) {
  const std::string key = "mpc." + field;
  size_t pos = text.find(key);
  if (pos == std::string::npos) return false;
  size_t p = text.find('=', pos + key.size());
  if (p == std::string::npos) return false;
  ++p;
  char* end = nullptr;
  out = std::strtod(text.c_str() + p, &end);
  if (end == text.c_str() + p) throw ParseError(key + ": expected a number", line_of(text, p));
  return true;
}

inline double col(const std::vector<double>& row, size_t idx1, double fallback, bool required, const std::string& what,
                  int line) {
  if (row.size() < idx1) {
    if (required) throw ParseError(what + ": too few columns", line);
    return fallback;
  }
  return row[idx1 - 1];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MATPOWER .m subset
// ---------------------------------------------------------------------------

inline CaseData parse_matpower(const std::string& text, const std::string& name = "") {
  using namespace detail;
  std::string src = MatpowerScanner(text).stripped();

  CaseData cs;
  cs.name = name;
  {
    size_t fpos = src.find("function mpc =");
    if (fpos != std::string::npos && cs.name.empty()) {
      std::istringstream is(src.substr(fpos + 14));
      is >> cs.name;
    }
  }
  double base = 0.0;
  if (!find_scalar(src, "baseMVA", base)) throw ParseError("missing mpc.baseMVA");
  if (!(base > 0.0)) throw SemanticError("base_mva must be positive");
  cs.base_mva = base;

  MTable bus, gen, branch, gencost;
  if (!find_table(src, "bus", bus)) throw ParseError("missing mpc.bus");
  if (!find_table(src, "gen", gen)) throw ParseError("missing mpc.gen");
  if (!find_table(src, "branch", branch)) throw ParseError("missing mpc.branch");
  bool have_cost = find_table(src, "gencost", gencost);

  for (size_t i = 0; i < bus.rows.size(); ++i) {
    const auto& r = bus.rows[i];
    int line = bus.lines[i];
    Bus b;
    b.id = static_cast<int>(col(r, 1, 0, true, "bus", line));
    int type = static_cast<int>(col(r, 2, 1, true, "bus", line));
    b.p_load = col(r, 3, 0, true, "bus", line) / base;
    b.q_load = col(r, 4, 0, true, "bus", line) / base;
    b.g_shunt = col(r, 5, 0, false, "bus", line) / base;
    b.b_shunt = col(r, 6, 0, false, "bus", line) / base;
    b.vmax = col(r, 12, 1.1, false, "bus", line);
    b.vmin = col(r, 13, 0.9, false, "bus", line);
    b.is_reference = (type == 3);
    cs.buses.push_back(b);
  }

  std::vector<size_t> active_gen_rows;
  for (size_t i = 0; i < gen.rows.size(); ++i) {
    const auto& r = gen.rows[i];
    int line = gen.lines[i];
    double status = col(r, 8, 1, false, "gen", line);
    if (status <= 0) continue;
    active_gen_rows.push_back(i);
    Gen g;
    g.bus = static_cast<int>(col(r, 1, 0, true, "gen", line));
    g.qmax = col(r, 4, 0, true, "gen", line) / base;
    g.qmin = col(r, 5, 0, true, "gen", line) / base;
    g.pmax = col(r, 9, 0, false, "gen", line) / base;
    g.pmin = col(r, 10, 0, false, "gen", line) / base;
    cs.gens.push_back(g);
  }

  if (have_cost) {
    // 2*ng rows means reactive cost rows follow the active ones; take the first ng.
    size_t ng_file = gen.rows.size();
    if (gencost.rows.size() != ng_file && gencost.rows.size() != 2 * ng_file)
      throw ParseError("mpc.gencost: expected " + std::to_string(ng_file) + " or " + std::to_string(2 * ng_file) +
                       " rows, got " + std::to_string(gencost.rows.size()));
    size_t gi = 0;
    for (size_t i : active_gen_rows) {
      const auto& r = gencost.rows[i];
      int line = gencost.lines[i];
      int model = static_cast<int>(col(r, 1, 0, true, "gencost", line));
      if (model == 1) throw SemanticError("piecewise-linear generator costs are not supported");
      if (model != 2) throw ParseError("gencost: unknown cost model " + std::to_string(model), line);
      int ncost = static_cast<int>(col(r, 4, 0, true, "gencost", line));
      if (static_cast<int>(r.size()) < 4 + ncost) throw ParseError("gencost: too few coefficients", line);
      // Coefficients are highest-degree first, MW-based. Degrees above 2 must be zero.
      double c2 = 0, c1 = 0, c0 = 0;
      for (int k = 0; k < ncost; ++k) {
        int degree = ncost - 1 - k;
        double v = r[4 + static_cast<size_t>(k)];
        if (degree > 2) {
          if (v != 0.0) throw SemanticError("generator cost has degree > 2");
        } else if (degree == 2)
          c2 = v;
        else if (degree == 1)
          c1 = v;
        else
          c0 = v;
      }
      if (c2 < 0.0) throw SemanticError("nonconvex generator cost (c2 < 0)");
      // Convert $/MW-based to $/pu-based.
      cs.gens[gi].c2 = c2 * base * base;
      cs.gens[gi].c1 = c1 * base;
      cs.gens[gi].c0 = c0;
      ++gi;
    }
  }

  for (size_t i = 0; i < branch.rows.size(); ++i) {
    const auto& r = branch.rows[i];
    int line = branch.lines[i];
    double status = col(r, 11, 1, false, "branch", line);
    if (status == 0) continue;
    Branch br;
    br.from = static_cast<int>(col(r, 1, 0, true, "branch", line));
    br.to = static_cast<int>(col(r, 2, 0, true, "branch", line));
    br.r = col(r, 3, 0, true, "branch", line);
    br.x = col(r, 4, 0, true, "branch", line);
    br.b_sh = col(r, 5, 0, true, "branch", line);
    br.s_max = col(r, 6, 0, false, "branch", line) / base;
    double ratio = col(r, 9, 0, false, "branch", line);
    br.tau = ratio == 0.0 ? 1.0 : ratio;  // tap = 0 in the file means nominal
    br.theta_shift = col(r, 10, 0, false, "branch", line) * M_PI / 180.0;
    cs.branches.push_back(br);
  }

  cs.reindex();
  cs.validate();
  return cs;
}

// ---------------------------------------------------------------------------
// Canonical JSON schema (all quantities per-unit; costs $/pu-based)
// ---------------------------------------------------------------------------

inline CaseData parse_json_case(const std::string& text, const std::string& name = "") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.what());
  }
  try {
    CaseData cs;
    cs.name = j.value("name", name);
    cs.version = j.value("version", "2");
    cs.base_mva = j.at("base_mva").get<double>();
    for (const auto& jb : j.at("buses")) {
      Bus b;
      b.id = jb.at("id").get<int>();
      b.p_load = jb.value("p_load", 0.0);
      b.q_load = jb.value("q_load", 0.0);
      b.vmin = jb.at("vmin").get<double>();
      b.vmax = jb.at("vmax").get<double>();
      b.g_shunt = jb.value("g_shunt", 0.0);
      b.b_shunt = jb.value("b_shunt", 0.0);
      b.is_reference = jb.value("is_reference", false);
      cs.buses.push_back(b);
    }
    for (const auto& jg : j.value("gens", nlohmann::json::array())) {
      Gen g;
      g.bus = jg.at("bus").get<int>();
      g.pmin = jg.value("pmin", 0.0);
      g.pmax = jg.value("pmax", 0.0);
      g.qmin = jg.value("qmin", 0.0);
      g.qmax = jg.value("qmax", 0.0);
      g.c2 = jg.value("c2", 0.0);
      g.c1 = jg.value("c1", 0.0);
      g.c0 = jg.value("c0", 0.0);
      cs.gens.push_back(g);
    }
    for (const auto& jl : j.at("branches")) {
      Branch br;
      br.from = jl.at("from").get<int>();
      br.to = jl.at("to").get<int>();
      br.r = jl.at("r").get<double>();
      br.x = jl.at("x").get<double>();
      br.b_sh = jl.value("b_sh", 0.0);
      br.tau = jl.value("tau", 1.0);
      br.theta_shift = jl.value("theta_shift", 0.0);
      br.s_max = jl.value("s_max", 0.0);
      cs.branches.push_back(br);
    }
    cs.reindex();
    cs.validate();
    return cs;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what());
  }
}

inline nlohmann::json case_to_json(const CaseData& cs) {
  nlohmann::json j;
  j["name"] = cs.name;
  j["version"] = cs.version;
  j["base_mva"] = cs.base_mva;
  j["buses"] = nlohmann::json::array();
  for (const auto& b : cs.buses)
    j["buses"].push_back({{"id", b.id},
                          {"p_load", b.p_load},
                          {"q_load", b.q_load},
                          {"vmin", b.vmin},
                          {"vmax", b.vmax},
                          {"g_shunt", b.g_shunt},
                          {"b_shunt", b.b_shunt},
                          {"is_reference", b.is_reference}});
  j["gens"] = nlohmann::json::array();
  for (const auto& g : cs.gens)
    j["gens"].push_back({{"bus", g.bus},
                         {"pmin", g.pmin},
                         {"pmax", g.pmax},
                         {"qmin", g.qmin},
                         {"qmax", g.qmax},
                         {"c2", g.c2},
                         {"c1", g.c1},
                         {"c0", g.c0}});
  j["branches"] = nlohmann::json::array();
  for (const auto& br : cs.branches)
    j["branches"].push_back({{"from", br.from},
                             {"to", br.to},
                             {"r", br.r},
                             {"x", br.x},
                             {"b_sh", br.b_sh},
                             {"tau", br.tau},
                             {"theta_shift", br.theta_shift},
                             {"s_max", br.s_max}});
  return j;
}

inline CaseData parse_case(const std::string& text, CaseFormat format, const std::string& name = "") {
  switch (format) {
    case CaseFormat::matpower_m:
      return parse_matpower(text, name);
    case CaseFormat::json:
      return parse_json_case(text, name);
  }
  throw ParseError("unknown case format");
}

inline CaseData parse_case(std::istream& in, CaseFormat format, const std::string& name = "") {
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_case(ss.str(), format, name);
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

struct MergeLog {
  struct Merge {
    int kept_bus;
    int removed_bus;
  };
  std::vector<Merge> merged;
  int buses_before = 0, buses_after = 0;
  int branches_before = 0, branches_after = 0;
  bool empty() const { return merged.empty() && buses_before == buses_after && branches_before == branches_after; }
};

// Remove branches with |r + jx| < thrshz by merging their terminal buses.
// Loads, shunts, and generators aggregate onto the surviving bus (smallest id
// in each merged group); voltage bounds are intersected. Branches that end up
// as self loops are dropped.
inline std::pair<CaseData, MergeLog> merge_low_impedance(const CaseData& cs, double thrshz) {
  if (thrshz < 0.0) throw std::invalid_argument("thrshz must be nonnegative");
  MergeLog log;
  log.buses_before = cs.n();
  log.branches_before = cs.n_branches();

  // Union-find over bus indices, representative = smallest bus id.
  std::vector<int> parent(cs.buses.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); };
  auto unite = [&](int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (cs.buses[a].id > cs.buses[b].id) std::swap(a, b);
    parent[b] = a;
  };

  for (const auto& br : cs.branches)
    if (std::hypot(br.r, br.x) < thrshz) unite(cs.bus_index(br.from), cs.bus_index(br.to));

  CaseData out;
  out.name = cs.name;
  out.version = cs.version;
  out.base_mva = cs.base_mva;

  std::vector<int> rep_of(cs.buses.size());
  for (size_t k = 0; k < cs.buses.size(); ++k) rep_of[k] = find(static_cast<int>(k));

  std::vector<int> new_index(cs.buses.size(), -1);
  for (size_t k = 0; k < cs.buses.size(); ++k) {
    if (rep_of[k] != static_cast<int>(k)) continue;
    new_index[k] = static_cast<int>(out.buses.size());
    out.buses.push_back(cs.buses[k]);
  }
  for (size_t k = 0; k < cs.buses.size(); ++k) {
    int r = rep_of[k];
    if (r == static_cast<int>(k)) continue;
    Bus& dst = out.buses[static_cast<size_t>(new_index[r])];
    const Bus& src = cs.buses[k];
    dst.p_load += src.p_load;
    dst.q_load += src.q_load;
    dst.g_shunt += src.g_shunt;
    dst.b_shunt += src.b_shunt;
    dst.vmin = std::max(dst.vmin, src.vmin);
    dst.vmax = std::min(dst.vmax, src.vmax);
    dst.is_reference = dst.is_reference || src.is_reference;
    log.merged.push_back({cs.buses[static_cast<size_t>(r)].id, src.id});
  }
  for (const auto& b : out.buses)
    if (b.vmin > b.vmax)
      throw SemanticError("preprocessing infeasible: empty voltage bounds at merged bus " + std::to_string(b.id));

  for (const auto& g : cs.gens) {
    Gen ng = g;
    ng.bus = out.buses[static_cast<size_t>(new_index[rep_of[cs.bus_index(g.bus)]])].id;
    out.gens.push_back(ng);
  }

  for (const auto& br : cs.branches) {
    if (std::hypot(br.r, br.x) < thrshz) continue;
    int l = rep_of[cs.bus_index(br.from)];
    int m = rep_of[cs.bus_index(br.to)];
    if (l == m) continue;  // became a self loop
    Branch nb = br;
    nb.from = cs.buses[static_cast<size_t>(l)].id;
    nb.to = cs.buses[static_cast<size_t>(m)].id;
    out.branches.push_back(nb);
  }

  log.buses_after = out.n();
  log.branches_after = out.n_branches();
  out.reindex();
  out.validate();
  return {std::move(out), std::move(log)};
}

// Raise every branch resistance below eps_r up to eps_r. The derived series
// admittance follows from r, x, so no further bookkeeping is needed.
inline CaseData enforce_min_resistance(const CaseData& cs, double eps_r) {
  if (eps_r < 0.0) throw std::invalid_argument("eps_r must be nonnegative");
  CaseData out = cs;
  for (auto& br : out.branches) br.r = std::max(br.r, eps_r);
  out.reindex();
  return out;
}

}  // namespace lapopf
