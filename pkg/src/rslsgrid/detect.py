"""Probing-input validation and mode detection from one output window.

A probing input is admissible when its Laplace transform is coprime and has
a pole away from every subsystem pole at which all subsystem transfer
functions take pairwise distinct values; then a single detection window
identifies the active mode regardless of the unknown initial state.

Detection itself fits, for every candidate subsystem, the initial state
that best explains the window (finite-window observability Gramian, least
squares), reconstructs the candidate's total output, and picks the mode
with the smallest mean absolute prediction error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matnum
from .rsls import RslsError

DISTINCT_RTOL = 1e-9
COPRIME_TOL = 1e-9
PINV_RCOND = 1e-10
LOW_CONFIDENCE_RATIO = 10.0

_METRICS = ("mae", "l2", "max")


@dataclass(frozen=True)
class PoleCheck:
    pole: complex
    in_spectrum: bool
    values: tuple               # G_i(pole) per subsystem, flattened complex
    indistinct_pairs: tuple     # ((i, j, Gi, Gj), ...) 1-based indices
    usable: bool


@dataclass(frozen=True)
class ProbingValidation:
    ok: bool
    checks: tuple               # PoleCheck per Laplace pole of U
    coprime: bool
    messages: tuple

    def __str__(self):
        return "\n".join(self.messages) if self.messages else "probing input ok"


def validate_probing(bank, u, channel=None):
    """Check a probing signal against the bank (input-design admissibility).

    Verdict is ok when U(s) is coprime and at least one of its poles lies
    off the union of subsystem spectra with pairwise-distinct transfer
    values.  Violations are reported per pole and per subsystem pair with
    the offending values.
    """
    ch = u.channel if channel is None else channel
    msgs = []
    coprime = True
    for z, mz in u.laplace_zeros():
        for p, mp in u.laplace_poles():
            if abs(z - p) < COPRIME_TOL * max(1.0, abs(p)):
                coprime = False
                msgs.append(f"U(s) not coprime: zero {z} cancels pole {p}")
    spectra = np.concatenate([np.linalg.eigvals(s.A) for s in bank.subsystems])
    checks = []
    any_usable = False
    for pole, _mult in u.laplace_poles():
        dist = np.min(np.abs(spectra - pole)) if len(spectra) else np.inf
        in_spec = dist < 1e-9 * max(1.0, abs(pole))
        vals = []
        pairs = []
        if not in_spec:
            for sub in bank.subsystems:
                vals.append(np.asarray(sub.transfer(pole, channel=ch)).ravel())
            for i in range(bank.m):
                for j in range(i + 1, bank.m):
                    gap = np.max(np.abs(vals[i] - vals[j])) if len(vals[i]) else 0.0
                    thresh = DISTINCT_RTOL * max(1.0, float(np.max(np.abs(vals[i]))))
                    if gap <= thresh:
                        pairs.append((i + 1, j + 1, _fmt(vals[i]), _fmt(vals[j])))
        usable = (not in_spec) and not pairs
        any_usable = any_usable or usable
        checks.append(PoleCheck(pole=pole, in_spectrum=in_spec,
                                values=tuple(_fmt(v) for v in vals),
                                indistinct_pairs=tuple(pairs), usable=usable))
        if in_spec:
            msgs.append(f"pole {pole} of U(s) lies in the subsystem spectra")
        for (i, j, gi, gj) in pairs:
            msgs.append(f"pole {pole}: G_{i}({_cfmt(pole)}) = {gi} equals "
                        f"G_{j}({_cfmt(pole)}) = {gj}")
    ok = coprime and any_usable
    if not u.laplace_poles():
        ok = False
        msgs.append("probing signal has no Laplace poles (vanishing input)")
    return ProbingValidation(ok=ok, checks=tuple(checks), coprime=coprime,
                             messages=tuple(msgs))


def _fmt(v):
    arr = np.atleast_1d(np.asarray(v, dtype=complex))
    return tuple(complex(z) for z in arr)


def _cfmt(z):
    return f"{z.real:g}{z.imag:+g}j" if z.imag else f"{z.real:g}"


def precompute_input_responses(bank, u, sched, channel=None):
    """Zero-initial-state response of every subsystem on the window grid.

    Closed forms (independent of the time-stepping simulator):
      sine:  x(t) = a Im[(i w I - A)^{-1} (e^{iwt} I - e^{At}) b]
      step:  x(t) = a (integral_0^t e^{As} ds) b
    Returns a list of (n0+1, ny) arrays.
    """
    ch = u.channel if channel is None else channel
    t = np.arange(sched.n0 + 1) * sched.ts
    out = []
    for sub in bank.subsystems:
        n = sub.n
        if u.kind == "zero":
            out.append(np.zeros((len(t), sub.ny)))
            continue
        if u.kind == "sine":
            R = np.linalg.solve(1j * u.omega * np.eye(n) - sub.A,
                                sub.B1[:, ch].astype(complex))
            Ri, Rr = np.imag(R), np.real(R)
            ys = np.empty((len(t), sub.ny))
            for k, tk in enumerate(t):
                x = u.amplitude * (np.cos(u.omega * tk) * Ri
                                   + np.sin(u.omega * tk) * Rr
                                   - matnum.expm(sub.A, tk) @ Ri)
                ys[k] = sub.C @ x
            out.append(ys)
            continue
        if u.kind == "step":
            big = np.zeros((2 * n, 2 * n))
            big[:n, :n] = sub.A
            big[:n, n:] = np.eye(n)
            ys = np.empty((len(t), sub.ny))
            b = sub.B1[:, ch] * u.amplitude
            for k, tk in enumerate(t):
                Phi = matnum.expm(big, tk)[:n, n:]
                ys[k] = sub.C @ (Phi @ b)
            out.append(ys)
            continue
        raise RslsError(f"cannot compute responses for probing kind {u.kind!r}")
    return out


def _window_output_maps(sub, sched):
    """Stacked C e^{A l ts} blocks over the window: (n0+1, ny, n)."""
    E = matnum.expm(sub.A, sched.ts)
    n = sub.n
    maps = np.empty((sched.n0 + 1, sub.ny, n))
    El = np.eye(n)
    for l in range(sched.n0 + 1):
        maps[l] = sub.C @ El
        El = E @ El
    return maps


def estimate_initial_state(sub, y_net, sched, output_maps=None):
    """Least-squares window-start state from net (input-free) output samples.

    Solves Gamma x = Y with the finite-window Gramian
    Gamma = sum_l ts (C e^{A l ts})^T (C e^{A l ts}); a rank-deficient
    Gramian (unobservable subsystem) falls back to the minimum-norm
    pseudo-inverse solution with rcond = 1e-10.
    """
    y_net = np.atleast_2d(np.asarray(y_net, dtype=float))
    if y_net.shape[0] != sched.n0 + 1:
        raise RslsError(f"window has {y_net.shape[0]} samples, expected {sched.n0 + 1}")
    maps = _window_output_maps(sub, sched) if output_maps is None else output_maps
    Phi = maps.reshape(-1, sub.n)
    rhs = y_net.reshape(-1)
    gamma = sched.ts * Phi.T @ Phi
    Yv = sched.ts * Phi.T @ rhs
    if matnum.numerical_rank(gamma) < sub.n:
        return np.linalg.pinv(gamma, rcond=PINV_RCOND) @ Yv
    return np.linalg.solve(gamma, Yv)


@dataclass(frozen=True)
class DetectionReport:
    alpha_hat: int              # 1-based detected mode
    eps: np.ndarray             # per-subsystem prediction errors
    xhat: tuple                 # per-subsystem initial-state estimates
    separation_ratio: float     # eps second-smallest / smallest
    low_confidence: bool        # advisory flag only; never changes alpha_hat
    metric: str


def detect_mode(bank, window, u, sched, metric="mae", channel=None,
                input_responses=None, output_maps=None):
    """Detect the active mode from one sampled output window.

    window: (n0+1, ny) sampled (possibly noisy) outputs on [k tau, k tau + tau0].
    For each candidate the input response is subtracted, the initial state
    estimated through the window Gramian, the total output re-predicted and
    scored; the mode with the smallest error wins (ties break to the lowest
    index).  metric 'mae' is the default mean absolute
    prediction error; 'l2' and 'max' are selectable alternatives.
    """
    if metric not in _METRICS:
        raise RslsError(f"metric must be one of {_METRICS}")
    window = np.atleast_2d(np.asarray(window, dtype=float))
    if window.ndim == 2 and window.shape[1] != bank.ny and bank.ny == 1:
        window = window.reshape(-1, 1)
    if window.shape != (sched.n0 + 1, bank.ny):
        raise RslsError(f"window shape {window.shape}, expected {(sched.n0 + 1, bank.ny)}")
    if input_responses is None:
        input_responses = precompute_input_responses(bank, u, sched, channel=channel)
    if output_maps is None:
        output_maps = [_window_output_maps(s, sched) for s in bank.subsystems]
    eps = np.empty(bank.m)
    xhats = []
    for i, sub in enumerate(bank.subsystems):
        y_net = window - input_responses[i]
        xh = estimate_initial_state(sub, y_net, sched, output_maps=output_maps[i])
        pred = output_maps[i] @ xh + input_responses[i]
        resid = pred - window
        if metric == "mae":
            eps[i] = np.mean(np.abs(resid))
        elif metric == "l2":
            eps[i] = float(np.sqrt(np.mean(resid ** 2)))
        else:
            eps[i] = float(np.max(np.abs(resid)))
        xhats.append(xh)
    order = np.argsort(eps, kind="stable")
    best = int(order[0])
    second = eps[order[1]] if bank.m > 1 else np.inf
    ratio = float(second / eps[best]) if eps[best] > 0 else np.inf
    return DetectionReport(alpha_hat=best + 1, eps=eps, xhat=tuple(xhats),
                           separation_ratio=ratio,
                           low_confidence=bool(ratio < LOW_CONFIDENCE_RATIO),
                           metric=metric)
