"""Randomly switched linear system: subsystem bank, schedule, exact simulation.

The mode process switches only at segment boundaries k*tau and is i.i.d.
over {1..m}.  Within a segment the probing input is active on
[k*tau, k*tau + tau0] and zero afterwards, so every sampling interval sees
a constant regime (mode, input on/off) and the trajectory can be advanced
with one cached matrix exponential per regime; sampled outputs are then
exact up to roundoff, independent of the step size.

Measurement noise is sigma * d with d uniform on [-0.5, 0.5] per channel;
a trace's whole noise block comes from one counter-based stream keyed by
the seed, so it is a pure function of (seed, sample index, channel).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matnum


class RslsError(ValueError):
    pass


@dataclass(frozen=True)
class LtiSubsystem:
    """One mode's matrices (A, B1, B2, D1, D2, C) plus metadata."""

    index: int
    A: np.ndarray
    B1: np.ndarray
    C: np.ndarray
    B2: np.ndarray = None
    D1: np.ndarray = None
    D2: np.ndarray = None
    label: str = ""
    equilibrium: dict = None

    def __post_init__(self):
        A = matnum._as_matrix(self.A, "A", square=True)
        n = A.shape[0]
        object.__setattr__(self, "A", A)
        B1 = matnum._as_matrix(self.B1, "B1") if self.B1 is not None else np.zeros((n, 1))
        if B1.shape[0] != n:
            raise RslsError(f"B1 rows {B1.shape[0]} != state dim {n}")
        object.__setattr__(self, "B1", B1)
        C = matnum._as_matrix(self.C, "C")
        if C.shape[1] != n:
            raise RslsError(f"C cols {C.shape[1]} != state dim {n}")
        object.__setattr__(self, "C", C)
        for name, width in (("B2", 0), ("D1", self.B1.shape[1]), ("D2", 0)):
            M = getattr(self, name)
            if M is None:
                M = np.zeros((n, width))
            else:
                M = matnum._as_matrix(M, name)
                if M.shape[0] != n:
                    raise RslsError(f"{name} rows {M.shape[0]} != state dim {n}")
            object.__setattr__(self, name, M)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def ny(self):
        return self.C.shape[0]

    def transfer(self, s, channel=0):
        """G(s) e_channel = C (sI - A)^{-1} B1[:, channel], complex s off eig(A)."""
        n = self.n
        rhs = self.B1[:, channel].astype(complex)
        return self.C @ np.linalg.solve(s * np.eye(n) - self.A, rhs)


@dataclass(frozen=True)
class RslsBank:
    """Ordered subsystems with the switching probability vector p."""

    subsystems: tuple
    p: np.ndarray

    def __post_init__(self):
        subs = tuple(self.subsystems)
        object.__setattr__(self, "subsystems", subs)
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "p", p)
        if len(subs) != len(p):
            raise RslsError("one probability per subsystem required")
        if abs(p.sum() - 1.0) > 1e-12:
            raise RslsError(f"probabilities sum to {p.sum()!r}, expected 1 within 1e-12")
        if np.any(p <= 0):
            raise RslsError("all switching probabilities must be positive")
        dims = {s.n for s in subs}
        if len(dims) != 1:
            raise RslsError(f"subsystems disagree on state dimension: {dims}")
        nys = {s.ny for s in subs}
        if len(nys) != 1:
            raise RslsError(f"subsystems disagree on output dimension: {nys}")

    @property
    def m(self):
        return len(self.subsystems)

    @property
    def n(self):
        return self.subsystems[0].n

    @property
    def ny(self):
        return self.subsystems[0].ny

    def __getitem__(self, mode):
        """Subsystem by 1-based mode index."""
        if not 1 <= mode <= self.m:
            raise RslsError(f"mode {mode} out of range 1..{self.m}")
        return self.subsystems[mode - 1]


@dataclass(frozen=True)
class ScheduleParams:
    """Two-time-scale schedule: segment tau, detection window tau0, step ts."""

    tau: float
    tau0: float
    ts: float

    def __post_init__(self):
        if not 0 < self.tau0 < self.tau:
            raise RslsError(f"need 0 < tau0 < tau, got tau0={self.tau0}, tau={self.tau}")
        n0 = self.tau0 / self.ts
        if abs(n0 - round(n0)) > 1e-9 or round(n0) < 2:
            raise RslsError(f"tau0/ts = {n0} must be an integer >= 2")
        rest = (self.tau - self.tau0) / self.ts
        if abs(rest - round(rest)) > 1e-9 or round(rest) < 1:
            raise RslsError(f"(tau - tau0)/ts = {rest} must be a positive integer")

    @property
    def n0(self):
        return int(round(self.tau0 / self.ts))

    @property
    def n_rest(self):
        return int(round((self.tau - self.tau0) / self.ts))

    @property
    def samples_per_segment(self):
        return self.n0 + self.n_rest


@dataclass(frozen=True)
class ProbingSignal:
    """Probing input restarted at every segment: u(s) for local time s in
    [0, tau0], zero on the rest of the segment.

    kind 'sine' is amplitude*sin(omega*s) with Laplace poles +-i*omega,
    'step' is a constant with pole 0, 'zero' disables probing.  A 'custom'
    signal carries explicit rational data (poles, zeros, each a list of
    (complex, multiplicity)) for input validation only; it cannot be
    simulated.
    """

    kind: str = "sine"
    amplitude: float = 0.1
    omega: float = 1.0
    channel: int = 0
    poles: tuple = ()
    zeros: tuple = ()

    def __post_init__(self):
        if self.kind not in ("sine", "step", "zero", "custom"):
            raise RslsError(f"unknown probing kind {self.kind!r}")
        if self.kind in ("sine", "step") and self.amplitude == 0:
            raise RslsError("probing amplitude must be nonzero (non-vanishing input)")
        if self.kind == "sine" and self.omega <= 0:
            raise RslsError("sine probing requires omega > 0")

    def laplace_poles(self):
        """[(pole, multiplicity)] of U(s)."""
        if self.kind == "sine":
            return [(complex(0, self.omega), 1), (complex(0, -self.omega), 1)]
        if self.kind == "step":
            return [(0j, 1)]
        if self.kind == "custom":
            return [(complex(p), int(m)) for p, m in self.poles]
        return []

    def laplace_zeros(self):
        if self.kind == "custom":
            return [(complex(z), int(m)) for z, m in self.zeros]
        return []

    def u(self, s):
        """Value at local segment time s (probing window only)."""
        if self.kind == "sine":
            return self.amplitude * np.sin(self.omega * s)
        if self.kind == "step":
            return self.amplitude * np.ones_like(np.asarray(s, dtype=float))
        if self.kind == "zero":
            return np.zeros_like(np.asarray(s, dtype=float))
        raise RslsError("custom rational signals have no time evaluator")


def sample_switching(p, K, seed):
    """K i.i.d. draws from {1..m} with P(mode = i) = p[i-1]; deterministic per seed."""
    p = np.asarray(p, dtype=float)
    if K < 1:
        raise RslsError("K must be >= 1")
    if abs(p.sum() - 1.0) > 1e-12 or np.any(p <= 0):
        raise RslsError("invalid probability vector")
    rng = np.random.default_rng(seed)
    return rng.choice(len(p), size=K, p=p) + 1


def measurement_noise(seed, n_samples, nchannels, sigma):
    """sigma * d with d ~ U[-0.5, 0.5] per (sample, channel).

    The whole block comes from one counter-based Philox stream keyed by the
    seed, so a trace's noise is a pure function of (seed, sample index,
    channel) regardless of how the simulation is scheduled.
    """
    sigma = np.asarray(sigma, dtype=float)
    if np.all(sigma == 0):
        return np.zeros((n_samples, nchannels))
    gen = np.random.Generator(np.random.Philox(key=seed))
    return sigma * gen.uniform(-0.5, 0.5, (n_samples, nchannels))


@dataclass
class TruthTrace:
    """Sampled truth of one simulation: arrays indexed by sample."""

    t: np.ndarray
    alpha: np.ndarray        # true mode per sample, 1-based
    x: np.ndarray            # (N, n)
    y: np.ndarray            # (N, ny) noise-free
    y_noisy: np.ndarray      # (N, ny)
    modes: np.ndarray        # per-segment mode sequence, 1-based
    sched: ScheduleParams

    def window(self, k):
        """Noisy output samples of detection window k: (n0+1, ny)."""
        per = self.sched.samples_per_segment
        lo = k * per
        return self.y_noisy[lo:lo + self.sched.n0 + 1]


class _RegimeCache:
    """Per (subsystem id, regime) matrix exponentials for the sampling step."""

    def __init__(self, sched, probing):
        self.sched = sched
        self.probing = probing
        self._cache = {}

    def window_step(self, sub):
        return self._get(("w", sub.index), sub, True)

    def rest_step(self, sub):
        return self._get(("r", sub.index), sub, False)

    def _get(self, key, sub, probing_on):
        if key not in self._cache:
            self._cache[key] = _augmented_step(sub, self.probing, self.sched.ts, probing_on)
        return self._cache[key]


def _exo_dim(probing):
    return 2 if probing.kind == "sine" else (1 if probing.kind == "step" else 0)


def _augmented_step(sub, probing, dt, probing_on):
    """expm of the [state; exosystem] block for one sampling step.

    sine exosystem s = [sin(w t_loc); cos(w t_loc)], s(0) = (0, 1);
    step exosystem s = [1].  The input feeds channel `probing.channel` of B1.
    """
    n = sub.n
    ne = _exo_dim(probing) if probing_on else 0
    J = np.zeros((n + ne, n + ne))
    J[:n, :n] = sub.A
    if ne:
        bcol = sub.B1[:, probing.channel] * probing.amplitude
        J[:n, n] = bcol
        if probing.kind == "sine":
            J[n, n + 1] = probing.omega
            J[n + 1, n] = -probing.omega
    return matnum.expm(J, dt), ne


def exo_initial(probing):
    if probing.kind == "sine":
        return np.array([0.0, 1.0])
    if probing.kind == "step":
        return np.array([1.0])
    return np.zeros(0)


def simulate(bank, modes, x0, u, sched, noise_sigma=0.0, seed=0,
             zeta=None, zeta_n=None):
    """Simulate the switched truth over len(modes) segments.

    Parameters
    ----------
    bank : RslsBank
    modes : per-segment mode sequence (1-based), e.g. from sample_switching
    x0 : initial state
    u : ProbingSignal, applied on [k*tau, k*tau + tau0] of every segment
    sched : ScheduleParams
    noise_sigma : scalar or per-channel array, measurement noise scale
    zeta, zeta_n : optional callables t -> disturbance vector (D1/D2
        channels), held constant over each sampling step.

    Output samples land on the uniform ts grid; propagation within each
    (mode, probing-regime) span uses one exact matrix exponential.
    """
    modes = np.asarray(modes, dtype=int)
    if np.any(modes < 1) or np.any(modes > bank.m):
        raise RslsError("mode sequence outside 1..m")
    x = np.asarray(x0, dtype=float).ravel()
    if x.shape[0] != bank.n:
        raise RslsError(f"x0 has dim {x.shape[0]}, bank needs {bank.n}")
    if u.kind == "custom":
        raise RslsError("custom rational signals cannot be simulated")

    cache = _RegimeCache(sched, u)
    per = sched.samples_per_segment
    K = len(modes)
    N = K * per + 1
    n, ny = bank.n, bank.ny
    t = np.arange(N) * sched.ts
    xs = np.zeros((N, n))
    ys = np.zeros((N, ny))
    alph = np.zeros(N, dtype=int)
    idx = 0
    for mode in modes:
        sub = bank[int(mode)]
        Ew, ne = cache.window_step(sub)
        Er, _ = cache.rest_step(sub)
        z = np.concatenate([x, exo_initial(u)])
        for in_window, E, count in ((True, Ew, sched.n0), (False, Er, sched.n_rest)):
            for _ in range(count):
                xs[idx] = z[:n]
                ys[idx] = sub.C @ z[:n]
                alph[idx] = mode
                z = E @ z
                if zeta is not None or zeta_n is not None:
                    z = z + _disturbance_increment(sub, u, sched.ts, in_window,
                                                   zeta, zeta_n, t[idx])
                idx += 1
            if in_window:
                z = z[:n]  # probing off: drop the exosystem components
        x = z
    xs[idx] = x
    ys[idx] = bank[int(modes[-1])].C @ x
    alph[idx] = modes[-1]

    sigma = np.asarray(noise_sigma, dtype=float)
    if sigma.ndim == 0:
        sigma = np.full(ny, float(sigma))
    noisy = ys + measurement_noise(seed, N, ny, sigma)
    return TruthTrace(t=t, alpha=alph, x=xs, y=ys, y_noisy=noisy,
                      modes=modes.copy(), sched=sched)


def _disturbance_increment(sub, u, dt, in_window, zeta, zeta_n, t_abs):
    """State increment from disturbances held constant over one step.

    For constant w, the exact update is z += (integral_0^dt e^{J s} ds) [w; 0];
    only the leading n columns of the integrated exponential matter because
    disturbances act on the state block.
    """
    n = sub.n
    phi = _integrated_expm(sub, u, dt, in_window)  # (n + ne, n)
    w = np.zeros(n)
    if zeta is not None:
        w += sub.D1 @ np.atleast_1d(zeta(t_abs))
    if zeta_n is not None and sub.D2.shape[1]:
        w += sub.D2 @ np.atleast_1d(zeta_n(t_abs))
    return phi @ w


def _integrated_expm(sub, u, dt, in_window):
    """integral_0^dt e^{J s} ds, columns restricted to the state block."""
    n = sub.n
    ne = _exo_dim(u) if in_window else 0
    m = n + ne
    J = np.zeros((m, m))
    J[:n, :n] = sub.A
    if ne:
        J[:n, n] = sub.B1[:, u.channel] * u.amplitude
        if u.kind == "sine":
            J[n, n + 1] = u.omega
            J[n + 1, n] = -u.omega
    big = np.zeros((2 * m, 2 * m))
    big[:m, :m] = J
    big[:m, m:] = np.eye(m)
    Phi = matnum.expm(big, dt)
    return Phi[:m, m:][:, :n]
