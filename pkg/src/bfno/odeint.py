"""Explicit ODE solvers with exact function-evaluation accounting.

``integrate`` drives a state that only needs ``+`` and scalar ``*``; plain
arrays, tape nodes, and the augmented adjoint state all qualify, so the same
stepping code serves forward solves, backprop-through-the-solver, and the
backward adjoint solve.

The adaptive method is the Dormand-Prince 5(4) pair with FSAL: one
evaluation up front, six fresh evaluations per attempted step.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

METHODS = ("euler", "rk4", "dopri5")

# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
# b5 - b4: coefficients of the embedded error estimate
_DP_ERR = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

SAFETY = 0.9
FACTOR_MIN = 0.2
FACTOR_MAX = 5.0
ORDER_EXPONENT = -1.0 / 5.0


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (at t={t:.6g})")
        self.t = t


@dataclass
class SolverConfig:
    method: str = "rk4"
    t0: float = 0.0
    t1: float = 1.0
    fixed_steps: int = 4
    rtol: float = 1e-3
    atol: float = 1e-3
    h_init: float = 0.0  # 0 -> (t1 - t0) / 100
    max_steps: int = 10000

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown solver method {self.method!r}")
        if not self.t1 > self.t0:
            raise ValueError("need t1 > t0")
        if self.method != "dopri5" and self.fixed_steps < 1:
            raise ValueError("fixed_steps must be >= 1")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")

    def initial_step(self) -> float:
        return self.h_init if self.h_init > 0 else (self.t1 - self.t0) / 100.0


@dataclass
class StepRecord:
    t: float
    dt: float
    error_norm: float | None
    accepted: bool
    state: object = None


@dataclass
class SolverRun:
    h1: object
    nfe_forward: int
    nfe_backward: int = 0
    steps: list[StepRecord] = field(default_factory=list)


def _value(x):
    return x.value if hasattr(x, "value") else x


def _check_finite(h, t):
    val = _value(h)
    if isinstance(val, _AugState):
        ok = bool(np.all(np.isfinite(val.h)) and np.all(np.isfinite(val.a)))
    else:
        ok = bool(np.all(np.isfinite(val)))
    if not ok:
        raise IntegrationError("non-finite state", t)


def euler_step(f, h, t: float, dt: float):
    """Forward Euler update; exactly one function evaluation."""
    out = h + dt * f(h, t)
    _check_finite(out, t + dt)
    return out


def rk4_step(f, h, t: float, dt: float):
    """Classical fourth-order Runge-Kutta update; exactly four evaluations."""
    k1 = f(h, t)
    k2 = f(h + (dt / 2) * k1, t + dt / 2)
    k3 = f(h + (dt / 2) * k2, t + dt / 2)
    k4 = f(h + dt * k3, t + dt)
    out = h + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    _check_finite(out, t + dt)
    return out


class _Counting:
    def __init__(self, f):
        self.f = f
        self.calls = 0

    def __call__(self, h, t):
        self.calls += 1
        return self.f(h, t)


def _fixed_integrate(step_fn, f, h0, cfg: SolverConfig, record_states: bool) -> SolverRun:
    n = cfg.fixed_steps
    dt = (cfg.t1 - cfg.t0) / n
    counting = _Counting(f)
    h, t = h0, cfg.t0
    steps = []
    for _ in range(n):
        h = step_fn(counting, h, t, dt)
        t += dt
        steps.append(StepRecord(t - dt, dt, None, True, _value(h) if record_states else None))
    return SolverRun(h1=h, nfe_forward=counting.calls, steps=steps)


def _error_norm(err, h_old, h_new, rtol: float, atol: float) -> float:
    e = np.asarray(_value(err), dtype=np.float64)
    scale = atol + rtol * np.maximum(np.abs(_value(h_old)), np.abs(_value(h_new)))
    return float(np.sqrt(np.mean((e / scale) ** 2)))


def dopri5_integrate(f, h0, cfg: SolverConfig, record_states: bool = False) -> SolverRun:
    """Adaptive Dormand-Prince 5(4) with FSAL and an RMS error norm.

    Accepts a step when the scaled error norm is <= 1; the next step scales
    by 0.9 * norm^(-1/5) clipped to [0.2, 5].
    """
    counting = _Counting(f)
    t, h = cfg.t0, h0
    dt = min(cfg.initial_step(), cfg.t1 - cfg.t0)
    k1 = counting(h, t)
    steps: list[StepRecord] = []
    attempts = 0
    interval = cfg.t1 - cfg.t0
    while cfg.t1 - t > 1e-12 * interval:
        if attempts >= cfg.max_steps:
            raise IntegrationError(f"max_steps={cfg.max_steps} exceeded", t)
        dt = min(dt, cfg.t1 - t)
        k = [k1]
        for i in range(1, 7):
            acc = h
            for j, a in enumerate(_DP_A[i]):
                if a != 0.0:
                    acc = acc + (dt * a) * k[j]
            k.append(counting(acc, t + _DP_C[i] * dt))
        h_new = h
        for b, ki in zip(_DP_B5, k):
            if b != 0.0:
                h_new = h_new + (dt * b) * ki
        err = None
        for e, ki in zip(_DP_ERR, k):
            if e != 0.0:
                contrib = (dt * e) * ki
                err = contrib if err is None else err + contrib
        norm = _error_norm(err, h, h_new, cfg.rtol, cfg.atol)
        attempts += 1
        accepted = norm <= 1.0
        steps.append(
            StepRecord(t, dt, norm, accepted, _value(h_new) if (record_states and accepted) else None)
        )
        if accepted:
            _check_finite(h_new, t + dt)
            t = t + dt
            h = h_new
            k1 = k[6]  # first-same-as-last
        factor = FACTOR_MAX if norm == 0.0 else SAFETY * norm**ORDER_EXPONENT
        dt = dt * min(max(factor, FACTOR_MIN), FACTOR_MAX)
    return SolverRun(h1=h, nfe_forward=counting.calls, steps=steps)


def integrate(f, h0, cfg: SolverConfig, record_states: bool = False) -> SolverRun:
    """Solve the initial value problem from t0 to t1 with the configured method."""
    cfg.validate()
    if cfg.method == "euler":
        return _fixed_integrate(euler_step, f, h0, cfg, record_states)
    if cfg.method == "rk4":
        return _fixed_integrate(rk4_step, f, h0, cfg, record_states)
    return dopri5_integrate(f, h0, cfg, record_states)


def export_steps_csv(run: SolverRun, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "accepted", "dt", "error_norm"])
        for s in run.steps:
            writer.writerow(
                [f"{s.t:.12g}", int(s.accepted), f"{s.dt:.12g}",
                 "" if s.error_norm is None else f"{s.error_norm:.12g}"]
            )


# ------------------------------------------------------------ adjoint pass


class _AugState:
    """(h, adjoint, parameter-gradient) triple closed under + and scalar *."""

    __slots__ = ("h", "a", "g")

    def __init__(self, h, a, g):
        self.h = h
        self.a = a
        self.g = g

    def __add__(self, other):
        return _AugState(
            self.h + other.h,
            self.a + other.a,
            {k: v + other.g[k] for k, v in self.g.items()},
        )

    def __rmul__(self, c):
        return _AugState(c * self.h, c * self.a, {k: c * v for k, v in self.g.items()})

    __mul__ = __rmul__


def adjoint_backward(rhs_vjp, run: SolverRun, cotangent: np.ndarray,
                     cfg: SolverConfig, param_shapes: dict):
    """Gradients of a terminal-state cost via the backward adjoint solve.

    ``rhs_vjp(h, t, a)`` must return ``(f(h, t), a^T df/dh, {name: a^T df/dtheta})``.
    The augmented system (h, a, g) is integrated from t1 back to t0 with the
    same solver family; for the adaptive method the recorded accepted step
    sequence is replayed in reverse so gradients are deterministic. Returns
    ``(dC/dh(t0), {name: dC/dtheta})`` and adds the evaluation count to
    ``run.nfe_backward``.
    """
    counter = {"n": 0}

    def aug_rhs(state: _AugState, t: float) -> _AugState:
        counter["n"] += 1
        f_val, a_dot, g_dot = rhs_vjp(state.h, t, state.a)
        return _AugState(f_val, -a_dot, {k: -v for k, v in g_dot.items()})

    state = _AugState(
        np.asarray(_value(run.h1), dtype=np.float64).copy(),
        np.asarray(cotangent, dtype=np.float64).copy(),
        {k: np.zeros(shape) for k, shape in param_shapes.items()},
    )

    if cfg.method in ("euler", "rk4"):
        step_fn = euler_step if cfg.method == "euler" else rk4_step
        dt = (cfg.t1 - cfg.t0) / cfg.fixed_steps
        t = cfg.t1
        for _ in range(cfg.fixed_steps):
            state = step_fn(aug_rhs, state, t, -dt)
            t -= dt
    else:
        accepted = [(s.t, s.dt) for s in run.steps if s.accepted]
        k1 = None
        for t_start, dt in reversed(accepted):
            state, k1 = _dopri5_fixed_step(aug_rhs, state, t_start + dt, -dt, k1)
    run.nfe_backward += counter["n"]
    return state.a, state.g


def _dopri5_fixed_step(f, h, t: float, dt: float, k1=None):
    """One Dormand-Prince step without error control (FSAL chain preserved)."""
    if k1 is None:
        k1 = f(h, t)
    k = [k1]
    for i in range(1, 7):
        acc = h
        for j, a in enumerate(_DP_A[i]):
            if a != 0.0:
                acc = acc + (dt * a) * k[j]
        k.append(f(acc, t + _DP_C[i] * dt))
    h_new = h
    for b, ki in zip(_DP_B5, k):
        if b != 0.0:
            h_new = h_new + (dt * b) * ki
    return h_new, k[6]
