#!/usr/bin/env python3
"""Generate independent reference solutions for the bundled test cases.

Solves the (nonconvex) OPF locally with scipy's SLSQP, warm-started from a
voltage profile given in a solver report, and writes the resulting operating
point to data/solutions/<case>.solution.json. The optimizer, power-flow
evaluation, and data parsing here are implemented independently of the C++
library so the bundled solutions can serve as an external cross-check.

Usage: make_reference_solutions.py <case.m> <report.json> <out.json> [min_r]
"""

import json
import re
import sys

import numpy as np
from scipy.optimize import minimize


def parse_table(text, field):
    m = re.search(r"mpc\.%s\s*=\s*\[(.*?)\];" % re.escape(field), text, re.S)
    if m is None:
        return None
    rows = []
    for line in m.group(1).splitlines():
        line = line.split("%")[0].strip().rstrip(";")
        if not line:
            continue
        rows.append([float(tok) for tok in line.split()])
    return rows


def load_case(path, min_r=0.0):
    with open(path) as f:
        text = f.read()
    base = float(re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)", text).group(1))
    bus_rows = parse_table(text, "bus")
    gen_rows = parse_table(text, "gen")
    br_rows = parse_table(text, "branch")
    cost_rows = parse_table(text, "gencost")

    buses, index = [], {}
    for r in bus_rows:
        b = dict(
            id=int(r[0]), type=int(r[1]), pd=r[2] / base, qd=r[3] / base,
            gs=r[4] / base, bs=r[5] / base, vmax=r[11], vmin=r[12],
        )
        index[b["id"]] = len(buses)
        buses.append(b)

    gens = []
    for i, r in enumerate(gen_rows):
        if len(r) > 7 and r[7] <= 0:
            continue
        c = cost_rows[i]
        ncost = int(c[3])
        coef = c[4 : 4 + ncost]
        c2 = c1 = c0 = 0.0
        for k, v in enumerate(coef):
            d = ncost - 1 - k
            if d == 2:
                c2 = v
            elif d == 1:
                c1 = v
            elif d == 0:
                c0 = v
        gens.append(dict(
            bus=index[int(r[0])], qmax=r[3] / base, qmin=r[4] / base,
            pmax=r[8] / base, pmin=r[9] / base,
            c2=c2 * base * base, c1=c1 * base, c0=c0,
        ))

    branches = []
    for r in br_rows:
        if len(r) > 10 and r[10] == 0:
            continue
        branches.append(dict(
            l=index[int(r[0])], m=index[int(r[1])],
            r=max(r[2], min_r), x=r[3], bsh=r[4], smax=r[5] / base,
            tau=r[8] if r[8] != 0 else 1.0, shift=np.deg2rad(r[9]),
        ))

    n = len(buses)
    Y = np.zeros((n, n), dtype=complex)
    for br in branches:
        y = 1.0 / (br["r"] + 1j * br["x"])
        ysh = 1j * br["bsh"] / 2.0
        tap = br["tau"] * np.exp(1j * br["shift"])
        l, m = br["l"], br["m"]
        Y[l, l] += (y + ysh) / (br["tau"] ** 2)
        Y[m, m] += y + ysh
        Y[l, m] += -y / np.conj(tap)
        Y[m, l] += -y / tap
    for k, b in enumerate(buses):
        Y[k, k] += b["gs"] + 1j * b["bs"]

    ref = next(k for k, b in enumerate(buses) if b["type"] == 3)
    return dict(base=base, buses=buses, gens=gens, branches=branches, Y=Y, ref=ref)


def solve(case, vd0, vq0):
    n = len(case["buses"])
    ref = case["ref"]
    Y = case["Y"]
    free = [k for k in range(n) if k != ref]  # vq indices that vary

    def unpack(z):
        vd = z[:n]
        vq = np.zeros(n)
        vq[free] = z[n:]
        return vd + 1j * vq

    def injections(z):
        v = unpack(z)
        s = v * np.conj(Y @ v)
        pg = s.real + np.array([b["pd"] for b in case["buses"]])
        qg = s.imag + np.array([b["qd"] for b in case["buses"]])
        return pg, qg

    gen_at = {}
    for g in case["gens"]:
        gen_at[g["bus"]] = g

    def objective(z):
        pg, _ = injections(z)
        return sum(g["c2"] * pg[k] ** 2 + g["c1"] * pg[k] + g["c0"] for k, g in gen_at.items())

    cons = []
    for k in range(n):
        g = gen_at.get(k)
        pmin = g["pmin"] if g else 0.0
        pmax = g["pmax"] if g else 0.0
        qmin = g["qmin"] if g else 0.0
        qmax = g["qmax"] if g else 0.0
        if pmin == pmax:
            cons.append(dict(type="eq", fun=lambda z, k=k, t=pmin: injections(z)[0][k] - t))
        else:
            cons.append(dict(type="ineq", fun=lambda z, k=k, t=pmax: t - injections(z)[0][k]))
            cons.append(dict(type="ineq", fun=lambda z, k=k, t=pmin: injections(z)[0][k] - t))
        if qmin == qmax:
            cons.append(dict(type="eq", fun=lambda z, k=k, t=qmin: injections(z)[1][k] - t))
        else:
            cons.append(dict(type="ineq", fun=lambda z, k=k, t=qmax: t - injections(z)[1][k]))
            cons.append(dict(type="ineq", fun=lambda z, k=k, t=qmin: injections(z)[1][k] - t))

    def vmag2(z, k):
        v = unpack(z)
        return abs(v[k]) ** 2

    for k, b in enumerate(case["buses"]):
        cons.append(dict(type="ineq", fun=lambda z, k=k, t=b["vmax"] ** 2: t - vmag2(z, k)))
        cons.append(dict(type="ineq", fun=lambda z, k=k, t=b["vmin"] ** 2: vmag2(z, k) - t))

    def flow2(z, br, end):
        v = unpack(z)
        y = 1.0 / (br["r"] + 1j * br["x"])
        ysh = 1j * br["bsh"] / 2.0
        tap = br["tau"] * np.exp(1j * br["shift"])
        vl, vm = v[br["l"]], v[br["m"]]
        if end == 0:
            i = (y + ysh) * vl / (br["tau"] ** 2) - y * vm / np.conj(tap)
            s = vl * np.conj(i)
        else:
            i = (y + ysh) * vm - y * vl / tap
            s = vm * np.conj(i)
        return abs(s) ** 2

    for br in case["branches"]:
        if br["smax"] > 0:
            for end in (0, 1):
                cons.append(dict(type="ineq",
                                 fun=lambda z, br=br, end=end: br["smax"] ** 2 - flow2(z, br, end)))

    z0 = np.concatenate([vd0, vq0[free]])
    res = minimize(objective, z0, constraints=cons, method="SLSQP",
                   options=dict(maxiter=300, ftol=1e-12))
    v = unpack(res.x)
    pg, qg = injections(res.x)

    worst = 0.0
    for c in cons:
        val = c["fun"](res.x)
        worst = max(worst, abs(val) if c["type"] == "eq" else max(-val, 0.0))
    return v, objective(res.x), worst, res


def main():
    case_path, report_path, out_path = sys.argv[1], sys.argv[2], sys.argv[3]
    min_r = float(sys.argv[4]) if len(sys.argv) > 4 else 0.0
    case = load_case(case_path, min_r)
    with open(report_path) as f:
        rep = json.load(f)
    vd0 = np.array(rep["voltages"]["vd"], dtype=float)
    vq0 = np.array(rep["voltages"]["vq"], dtype=float)
    v, cost, worst, res = solve(case, vd0, vq0)
    print(f"{case_path}: cost {cost:.6f}  worst violation {worst:.3e}  "
          f"iters {res.nit}  success {res.success}")
    out = dict(
        case=case_path.split("/")[-1],
        min_r=min_r,
        solver="scipy SLSQP (independent local OPF solve)",
        cost=cost,
        max_constraint_violation_pu=worst,
        voltages=dict(vd=list(v.real), vq=list(v.imag)),
    )
    with open(out_path, "w") as f:
        json.dump(out, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
