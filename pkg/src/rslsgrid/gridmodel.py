"""Grid case parsing, AC power flow, swing-equation equilibria, linearization.

The case document is a JSON file with MATPOWER-like tables (see
``parse_case``).  Dynamic buses carry second-order swing dynamics

    delta_i' = omega_i
    M_i omega_i' = P_i^in - P_i^L - P_i^out(delta) - b_i omega_i

with P_i^out the real power the bus injects into the network.  Non-dynamic
buses are algebraic: their voltages and angles re-solve the power-flow
equations for any given dynamic-bus angles, so the linearized A matrix uses
total derivatives dP_out/ddelta obtained by central finite differences on a
re-solved constrained power flow.  A purely dynamic network (no algebraic
buses) is linearized analytically instead.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rsls import LtiSubsystem, RslsBank


class SchemaError(ValueError):
    """Case document violates the schema; message names the field/row."""


class PowerFlowError(RuntimeError):
    """Newton-Raphson divergence or singular Jacobian."""


class EquilibriumError(RuntimeError):
    """No admissible equilibrium for the requested operating condition."""


BUS_KINDS = ("slack", "pv", "pq")


@dataclass
class Bus:
    id: int
    kind: str
    dynamic: bool
    v_mag: float
    v_ang: float          # radians
    p_load: float         # pu
    q_load: float         # pu
    shunt_g: float = 0.0  # pu conductance to ground
    shunt_b: float = 0.0  # pu susceptance to ground


@dataclass
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0   # total line-charging susceptance, split per end

    @property
    def z_abs(self):
        return math.hypot(self.r, self.x)

    @property
    def z_angle(self):
        return math.atan2(self.x, self.r)


@dataclass
class DynGenerator:
    bus: int
    m: float       # inertia
    b: float       # linearized damping slope, > 0
    p_in: float    # pu mechanical input


@dataclass
class GridCase:
    base_mva: float
    base_kv: float
    buses: list
    branches: list
    generators: list
    name: str = ""

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise SchemaError(f"duplicate bus id(s): {dup}")
        self._index = {b.id: i for i, b in enumerate(self.buses)}
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in self._index:
                    raise SchemaError(f"branch ({br.from_bus},{br.to_bus}) references unknown bus {end}")
            if br.x == 0 and br.r == 0:
                raise SchemaError(f"branch ({br.from_bus},{br.to_bus}) has zero impedance")
        for g in self.generators:
            if g.bus not in self._index:
                raise SchemaError(f"generator references unknown bus {g.bus}")
            if g.m <= 0 or g.b <= 0:
                raise SchemaError(f"generator at bus {g.bus} needs m > 0 and b > 0")
        slacks = [b for b in self.buses if b.kind == "slack"]
        if len(slacks) > 1:
            raise SchemaError("at most one slack bus allowed")
        if not slacks and not self.dynamic_buses():
            raise SchemaError("need a slack bus or at least one dynamic bus")
        if not self._connected():
            raise SchemaError("network graph is not connected")

    def _connected(self):
        if not self.buses:
            return False
        adj = {b.id: set() for b in self.buses}
        for br in self.branches:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        seen = {self.buses[0].id}
        stack = [self.buses[0].id]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self.buses)

    @property
    def n_bus(self):
        return len(self.buses)

    def bus_index(self, bus_id):
        return self._index[bus_id]

    def dynamic_buses(self):
        return [b for b in self.buses if b.dynamic]

    def generator_at(self, bus_id):
        for g in self.generators:
            if g.bus == bus_id:
                return g
        return None

    def branch_between(self, from_bus, to_bus):
        for br in self.branches:
            if {br.from_bus, br.to_bus} == {from_bus, to_bus}:
                return br
        return None


def _require(table, key, where, kinds=None):
    if key not in table:
        raise SchemaError(f"{where}: missing field {key!r}")
    val = table[key]
    if kinds and not isinstance(val, kinds):
        raise SchemaError(f"{where}: field {key!r} has invalid type {type(val).__name__}")
    return val


def parse_case(source):
    """Parse a JSON case document into a GridCase.

    Schema::

        base   {mva, kv}
        bus    [{id, kind, dynamic, v_mag, v_ang_deg, p_load_mw, q_load_mvar,
                 shunt_g_pu?, shunt_b_pu?}]
        branch [{from, to, r_pu, x_pu, b_pu?}]
        gen    [{bus, m, b, p_in_mw}]

    Powers convert to per-unit on base.mva; angles to radians.  ``source``
    may be a path, a JSON string, or an already-decoded dict.
    """
    if isinstance(source, (str, Path)):
        p = Path(source)
        if p.exists():
            doc = json.loads(p.read_text())
            name = p.stem
        else:
            try:
                doc = json.loads(str(source))
                name = ""
            except json.JSONDecodeError:
                raise SchemaError(f"case file not found: {source}")
    else:
        doc = source
        name = doc.get("name", "") if isinstance(doc, dict) else ""
    if not isinstance(doc, dict):
        raise SchemaError("case document must be a JSON object")

    base = _require(doc, "base", "document", dict)
    base_mva = float(_require(base, "mva", "base", (int, float)))
    base_kv = float(base.get("kv", 0.0))
    if base_mva <= 0:
        raise SchemaError("base.mva must be positive")

    rows = _require(doc, "bus", "document", list)
    if not rows:
        raise SchemaError("bus table is empty")
    buses = []
    for i, row in enumerate(rows):
        where = f"bus[{i}]"
        kind = _require(row, "kind", where, str)
        if kind not in BUS_KINDS:
            raise SchemaError(f"{where}: kind must be one of {BUS_KINDS}, got {kind!r}")
        buses.append(Bus(
            id=int(_require(row, "id", where, (int,))),
            kind=kind,
            dynamic=bool(_require(row, "dynamic", where, bool)),
            v_mag=float(_require(row, "v_mag", where, (int, float))),
            v_ang=math.radians(float(row.get("v_ang_deg", 0.0))),
            p_load=float(row.get("p_load_mw", 0.0)) / base_mva,
            q_load=float(row.get("q_load_mvar", 0.0)) / base_mva,
            shunt_g=float(row.get("shunt_g_pu", 0.0)),
            shunt_b=float(row.get("shunt_b_pu", 0.0)),
        ))
        if buses[-1].v_mag <= 0:
            raise SchemaError(f"{where}: v_mag must be positive")

    branches = []
    for i, row in enumerate(_require(doc, "branch", "document", list)):
        where = f"branch[{i}]"
        branches.append(Branch(
            from_bus=int(_require(row, "from", where, (int,))),
            to_bus=int(_require(row, "to", where, (int,))),
            r=float(row.get("r_pu", 0.0)),
            x=float(_require(row, "x_pu", where, (int, float))),
            b_charging=float(row.get("b_pu", 0.0)),
        ))

    gens = []
    for i, row in enumerate(doc.get("gen", [])):
        where = f"gen[{i}]"
        gens.append(DynGenerator(
            bus=int(_require(row, "bus", where, (int,))),
            m=float(_require(row, "m", where, (int, float))),
            b=float(_require(row, "b", where, (int, float))),
            p_in=float(row.get("p_in_mw", 0.0)) / base_mva,
        ))

    case = GridCase(base_mva=base_mva, base_kv=base_kv, buses=buses,
                    branches=branches, generators=gens, name=name)
    for b in case.buses:
        if b.dynamic and case.generator_at(b.id) is None:
            raise SchemaError(f"dynamic bus {b.id} has no generator entry")
    return case


def build_ybus(case):
    n = case.n_bus
    Y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        i, j = case.bus_index(br.from_bus), case.bus_index(br.to_bus)
        y = 1.0 / complex(br.r, br.x)
        Y[i, i] += y + 0.5j * br.b_charging
        Y[j, j] += y + 0.5j * br.b_charging
        Y[i, j] -= y
        Y[j, i] -= y
    for b in case.buses:
        Y[case.bus_index(b.id)][case.bus_index(b.id)] += complex(b.shunt_g, b.shunt_b)
    return Y


@dataclass
class PowerFlowSolution:
    v_mag: np.ndarray
    v_ang: np.ndarray
    p_inj: np.ndarray          # net real injection per bus, pu
    q_inj: np.ndarray
    p_slack: float
    q_slack: float
    branch_flows: list         # (from, to, P_from, Q_from, P_to, Q_to)
    iterations: int
    mismatch: float
    bus_ids: list


def _injections(Y, v, ang):
    V = v * np.exp(1j * ang)
    S = V * np.conj(Y @ V)
    return S.real, S.imag


def _polar_jacobian(Y, v, ang, P, Q):
    """Standard polar power-flow Jacobian blocks dP/da, dP/dV, dQ/da, dQ/dV."""
    n = len(v)
    G, B = Y.real, Y.imag
    aij = ang[:, None] - ang[None, :]
    cos, sin = np.cos(aij), np.sin(aij)
    VV = v[:, None] * v[None, :]
    dPda = VV * (G * sin - B * cos)
    dQda = -VV * (G * cos + B * sin)
    dPdV = v[:, None] * (G * cos + B * sin)
    dQdV = v[:, None] * (G * sin - B * cos)
    np.fill_diagonal(dPda, -Q - B.diagonal() * v ** 2)
    np.fill_diagonal(dQda, P - G.diagonal() * v ** 2)
    np.fill_diagonal(dPdV, P / v + G.diagonal() * v)
    np.fill_diagonal(dQdV, Q / v - B.diagonal() * v)
    return dPda, dPdV, dQda, dQdV


def _nr_solve(Y, v0, ang0, p_spec, q_spec, ang_free, v_free, tol=1e-10, maxit=50):
    """Generalized NR in polar form.

    ang_free / v_free are boolean masks of unknowns: a P equation is kept
    for every angle unknown, a Q equation for every magnitude unknown.
    """
    v, ang = v0.copy(), ang0.copy()
    pi = np.flatnonzero(ang_free)
    qi = np.flatnonzero(v_free)
    for it in range(maxit + 1):
        P, Q = _injections(Y, v, ang)
        mis = np.concatenate([p_spec[pi] - P[pi], q_spec[qi] - Q[qi]])
        worst = np.max(np.abs(mis)) if len(mis) else 0.0
        if worst < tol:
            return v, ang, it, worst
        if it == maxit:
            raise PowerFlowError(f"Newton-Raphson did not converge in {maxit} iterations "
                                 f"(mismatch {worst:.3e})")
        dPda, dPdV, dQda, dQdV = _polar_jacobian(Y, v, ang, P, Q)
        J = np.block([[dPda[np.ix_(pi, pi)], dPdV[np.ix_(pi, qi)]],
                      [dQda[np.ix_(qi, pi)], dQdV[np.ix_(qi, qi)]]])
        try:
            dx = np.linalg.solve(J, mis)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular power-flow Jacobian: {exc}")
        if not np.all(np.isfinite(dx)):
            raise PowerFlowError("power-flow update is not finite")
        ang[pi] += dx[:len(pi)]
        v[qi] += dx[len(pi):]
        if np.any(v[qi] <= 0):
            raise PowerFlowError("voltage magnitude collapsed below zero")
    raise PowerFlowError("unreachable")


def _specified_injections(case):
    """Net scheduled injections: generation (gen table) minus load."""
    n = case.n_bus
    p = np.zeros(n)
    q = np.zeros(n)
    for b in case.buses:
        i = case.bus_index(b.id)
        p[i] -= b.p_load
        q[i] -= b.q_load
    for g in case.generators:
        p[case.bus_index(g.bus)] += g.p_in
    return p, q


def _branch_flows(case, v, ang):
    flows = []
    for br in case.branches:
        i, j = case.bus_index(br.from_bus), case.bus_index(br.to_bus)
        y = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b_charging
        Vi = v[i] * np.exp(1j * ang[i])
        Vj = v[j] * np.exp(1j * ang[j])
        Sij = Vi * np.conj((Vi - Vj) * y + Vi * ysh)
        Sji = Vj * np.conj((Vj - Vi) * y + Vj * ysh)
        flows.append((br.from_bus, br.to_bus, Sij.real, Sij.imag, Sji.real, Sji.imag))
    return flows


def solve_power_flow(case, tol=1e-10, maxit=50, warm=None):
    """Newton-Raphson AC power flow.

    Bus handling: slack holds V and angle, pv holds P and V, pq holds P and
    Q.  Without a slack bus, the first dynamic bus provides the angle
    reference (its P equation is dropped).  ``warm`` optionally supplies a
    (v, ang) starting point.
    """
    Y = build_ybus(case)
    n = case.n_bus
    v0 = np.array([b.v_mag if b.kind in ("slack", "pv") else 1.0 for b in case.buses])
    ang0 = np.zeros(n)
    ref = next((b for b in case.buses if b.kind == "slack"), None)
    if ref is None:
        ref = case.dynamic_buses()[0]
        ang0[case.bus_index(ref.id)] = ref.v_ang
    if warm is not None:
        v0, ang0 = warm[0].copy(), warm[1].copy()
        for i, b in enumerate(case.buses):
            if b.kind in ("slack", "pv"):
                v0[i] = b.v_mag
        ang0[case.bus_index(ref.id)] = ref.v_ang
    ang_free = np.array([b.id != ref.id for b in case.buses])
    v_free = np.array([b.kind == "pq" for b in case.buses])
    p_spec, q_spec = _specified_injections(case)
    v, ang, it, worst = _nr_solve(Y, v0, ang0, p_spec, q_spec, ang_free, v_free,
                                  tol=tol, maxit=maxit)
    P, Q = _injections(Y, v, ang)
    iref = case.bus_index(ref.id)
    return PowerFlowSolution(
        v_mag=v, v_ang=ang, p_inj=P, q_inj=Q,
        p_slack=float(P[iref]), q_slack=float(Q[iref]),
        branch_flows=_branch_flows(case, v, ang),
        iterations=it, mismatch=worst,
        bus_ids=[b.id for b in case.buses],
    )


def _constrained_injections(case, Y, dyn_angles, warm, tol=1e-10):
    """Re-solve the network with every dynamic bus held at a given angle
    (and its magnitude); returns net real injections at the dynamic buses.

    Dynamic buses behave like angle references; remaining pv/pq buses keep
    their usual equations.  The slack bus keeps V and angle.
    """
    n = case.n_bus
    dyn_ids = [b.id for b in case.dynamic_buses()]
    v0, ang0 = warm
    v = v0.copy()
    ang = ang0.copy()
    fixed = set()
    for bus_id, a in dyn_angles.items():
        ang[case.bus_index(bus_id)] = a
        fixed.add(bus_id)
    for b in case.buses:
        if b.kind == "slack":
            fixed.add(b.id)
    ang_free = np.array([b.id not in fixed for b in case.buses])
    v_free = np.array([b.kind == "pq" and not b.dynamic for b in case.buses])
    p_spec, q_spec = _specified_injections(case)
    v, ang, _, _ = _nr_solve(Y, v, ang, p_spec, q_spec, ang_free, v_free, tol=tol)
    P, _ = _injections(Y, v, ang)
    return np.array([P[case.bus_index(i)] for i in dyn_ids]), (v, ang)


@dataclass
class EquilibriumRecord:
    case: GridCase
    delta: np.ndarray        # equilibrium angle per dynamic bus, rad
    omega: np.ndarray        # identically zero
    p_in: np.ndarray         # effective mechanical inputs, pu
    solution: PowerFlowSolution
    dyn_bus_ids: list
    residual: float


def _two_bus_lossless(case):
    """(beta, net) for the closed-form two-bus check, or None."""
    if case.n_bus != 2 or len(case.branches) != 1 or len(case.dynamic_buses()) != 2:
        return None
    br = case.branches[0]
    if abs(br.r) > 1e-12:
        return None
    b1, b2 = case.buses
    beta = b1.v_mag * b2.v_mag / br.z_abs
    g1 = case.generator_at(b1.id)
    net = g1.p_in - b1.p_load
    return beta, net


def compute_equilibrium(case):
    """Equilibrium of the swing dynamics: omega = 0, angles from power flow.

    Mechanical inputs are taken from the solved power flow (generation =
    load + network injection at each dynamic bus), which makes the swing
    residual vanish identically; for non-slack dynamic buses this agrees
    with the gen-table p_in by power-flow construction.
    """
    tb = _two_bus_lossless(case)
    if tb is not None:
        beta, net = tb
        if abs(net / beta) > 1.0:
            raise EquilibriumError(
                f"no equilibrium: |P_in - P_L| = {abs(net):.4g} exceeds the "
                f"transfer limit beta = {beta:.4g}")
    sol = solve_power_flow(case)
    dyn = case.dynamic_buses()
    dyn_ids = [b.id for b in dyn]
    delta = np.array([sol.v_ang[case.bus_index(i)] for i in dyn_ids])
    p_in = np.array([sol.p_inj[case.bus_index(i)] + b.p_load
                     for i, b in zip(dyn_ids, dyn)])
    residual = 0.0
    for k, (i, b) in enumerate(zip(dyn_ids, dyn)):
        residual = max(residual, abs(p_in[k] - b.p_load - sol.p_inj[case.bus_index(i)]))
    return EquilibriumRecord(case=case, delta=delta, omega=np.zeros(len(dyn)),
                             p_in=p_in, solution=sol, dyn_bus_ids=dyn_ids,
                             residual=residual)


@dataclass
class LinearizedModel:
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    state_labels: list
    dyn_bus_ids: list
    equilibrium: EquilibriumRecord


def _analytic_angle_jacobian(case, sol, dyn_ids):
    """dP_inj/ddelta for a purely dynamic network (voltages fixed)."""
    Y = build_ybus(case)
    P, Q = _injections(Y, sol.v_mag, sol.v_ang)
    dPda, _, _, _ = _polar_jacobian(Y, sol.v_mag, sol.v_ang, P, Q)
    idx = [case.bus_index(i) for i in dyn_ids]
    return dPda[np.ix_(idx, idx)]


def _fd_angle_jacobian(case, eq, h):
    """Total derivative dP_out/ddelta via central differences with network
    re-solve (non-dynamic buses re-balance at each probe)."""
    Y = build_ybus(case)
    dyn_ids = eq.dyn_bus_ids
    nd = len(dyn_ids)
    warm = (eq.solution.v_mag, eq.solution.v_ang)
    J = np.zeros((nd, nd))
    for j in range(nd):
        for sign in (+1.0, -1.0):
            angles = {bid: eq.delta[k] for k, bid in enumerate(dyn_ids)}
            angles[dyn_ids[j]] += sign * h
            pj, _ = _constrained_injections(case, Y, angles, warm)
            J[:, j] += sign * pj / (2.0 * h)
    return J


def _fd_load_sensitivity(case, eq, h):
    """dP_out/dP_load at non-dynamic buses (for the D2 channel), by central
    differences on the re-solved network.  Probes run on a private copy so
    the caller's case stays untouched."""
    probe = copy.deepcopy(case)
    Y = build_ybus(probe)
    dyn_ids = eq.dyn_bus_ids
    nd_ids = [b.id for b in probe.buses if not b.dynamic]
    warm = (eq.solution.v_mag, eq.solution.v_ang)
    out = np.zeros((len(dyn_ids), len(nd_ids)))
    angles = {bid: eq.delta[k] for k, bid in enumerate(dyn_ids)}
    for j, bid in enumerate(nd_ids):
        bus = probe.buses[probe.bus_index(bid)]
        orig = bus.p_load
        for sign in (+1.0, -1.0):
            bus.p_load = orig + sign * h
            pj, _ = _constrained_injections(probe, Y, angles, warm)
            out[:, j] += sign * pj / (2.0 * h)
        bus.p_load = orig
    return out


def linearize(case, eq=None, h=1e-5, with_load_channels=True):
    """Swing-equation state-space model around an equilibrium.

    State ordering is (delta_i, omega_i) per dynamic bus, in bus order.
    A[omega_i, delta_j] = -(1/M_i) dP_out_i/ddelta_j and the damping
    diagonal is -b_i/M_i.  B1 maps mechanical-power inputs, D1 = -B1 maps
    dynamic-bus load disturbances, D2 maps non-dynamic load disturbances
    (finite differenced; zero columns when the network is purely dynamic).
    """
    if eq is None:
        eq = compute_equilibrium(case)
    dyn = case.dynamic_buses()
    nd = len(dyn)
    if nd == 0:
        raise SchemaError("linearize requires at least one dynamic bus")
    if any(not b.dynamic for b in case.buses):
        J = _fd_angle_jacobian(case, eq, h)
    else:
        J = _analytic_angle_jacobian(case, eq.solution, eq.dyn_bus_ids)
    n = 2 * nd
    A = np.zeros((n, n))
    B1 = np.zeros((n, nd))
    labels = []
    Ms = []
    for k, b in enumerate(dyn):
        g = case.generator_at(b.id)
        Ms.append(g.m)
        A[2 * k, 2 * k + 1] = 1.0
        A[2 * k + 1, 2 * k + 1] = -g.b / g.m
        for j in range(nd):
            A[2 * k + 1, 2 * j] = -J[k, j] / g.m
        B1[2 * k + 1, k] = 1.0 / g.m
        labels.extend([f"delta_{b.id}", f"omega_{b.id}"])
    D1 = -B1.copy()
    nnd = sum(1 for b in case.buses if not b.dynamic)
    if nnd and with_load_channels:
        S = _fd_load_sensitivity(case, eq, h)
        D2 = np.zeros((n, nnd))
        for k in range(nd):
            D2[2 * k + 1, :] = -S[k, :] / Ms[k]
    else:
        D2 = np.zeros((n, nnd if with_load_channels else 0))
    B2 = np.zeros((n, 0))
    return LinearizedModel(A=A, B1=B1, B2=B2, D1=D1, D2=D2,
                           state_labels=labels, dyn_bus_ids=list(eq.dyn_bus_ids),
                           equilibrium=eq)


@dataclass(frozen=True)
class ContingencyScenario:
    """One mode of the switched model.

    mutations entries:
      {"kind": "branch_scale",      "from": i, "to": j, "factor": f}
      {"kind": "branch_set_abs_z",  "from": i, "to": j, "value": z}
      {"kind": "sensor",            "C": row-list matrix}
    branch_set_abs_z rescales (r, x) so |Z| hits the value with the
    impedance angle preserved.  A sensor mutation reuses the base-case
    linearization with the given output matrix.
    """

    index: int
    label: str
    probability: float
    mutations: tuple = ()

    def __post_init__(self):
        if not 0 < self.probability <= 1:
            raise SchemaError(f"scenario {self.index}: probability must be in (0, 1]")

    def sensor_override(self):
        for mut in self.mutations:
            if mut.get("kind") == "sensor":
                return np.atleast_2d(np.asarray(mut["C"], dtype=float))
        return None

    def is_sensor_only(self):
        return (len(self.mutations) > 0
                and all(m.get("kind") == "sensor" for m in self.mutations))


def apply_contingency(case, scenario):
    """Mutated copy of the case; the original is untouched."""
    new = copy.deepcopy(case)
    for mut in scenario.mutations:
        kind = mut.get("kind")
        if kind == "sensor":
            continue
        br = new.branch_between(int(mut["from"]), int(mut["to"]))
        if br is None:
            raise SchemaError(f"scenario {scenario.index}: no branch "
                              f"({mut['from']},{mut['to']}) in the case")
        if kind == "branch_scale":
            f = float(mut["factor"])
            br.r *= f
            br.x *= f
        elif kind == "branch_set_abs_z":
            z = float(mut["value"])
            theta = br.z_angle
            br.r = z * math.cos(theta)
            br.x = z * math.sin(theta)
        else:
            raise SchemaError(f"scenario {scenario.index}: unknown mutation kind {kind!r}")
    return new


def build_bank(case, scenarios, C_default, h=1e-5, with_load_channels=False):
    """RSLS bank: one LtiSubsystem per scenario.

    Impedance scenarios are re-equilibrated and re-linearized on the
    mutated case; sensor-only scenarios reuse the base linearization with
    the overridden C.  Probabilities must sum to one within 1e-12.
    """
    probs = np.array([s.probability for s in scenarios], dtype=float)
    if abs(probs.sum() - 1.0) > 1e-12:
        raise SchemaError(f"scenario probabilities sum to {probs.sum()!r}, expected 1")
    C_default = np.atleast_2d(np.asarray(C_default, dtype=float))
    base_model = None
    subs = []
    for s in scenarios:
        C = s.sensor_override()
        if s.is_sensor_only() or not s.mutations:
            if base_model is None:
                base_model = linearize(case, with_load_channels=with_load_channels, h=h)
            model = base_model
        else:
            mutated = apply_contingency(case, s)
            model = linearize(mutated, with_load_channels=with_load_channels, h=h)
        eqinfo = {
            "delta": model.equilibrium.delta.tolist(),
            "p_in": model.equilibrium.p_in.tolist(),
            "dyn_bus_ids": list(model.dyn_bus_ids),
        }
        subs.append(LtiSubsystem(
            index=s.index, A=model.A, B1=model.B1, B2=model.B2,
            D1=model.D1, D2=model.D2,
            C=C if C is not None else C_default,
            label=s.label, equilibrium=eqinfo))
    return RslsBank(subsystems=tuple(subs), p=probs)
