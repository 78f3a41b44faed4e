"""Adaptive propagation of dX/dt = f(X) + g(X, t) with dense resampling.

The default method is a Gragg-Bulirsch-Stoer extrapolation scheme with a
fixed seven-entry substep sequence (order 14) and step-size control.  Each
accepted macro step also builds a degree-10 interpolating polynomial from
extrapolated midpoint values and midpoint derivatives, so the solution can be
resampled on an arbitrary uniform grid without constraining step selection.
An eighth-order embedded Runge-Kutta (scipy's DOP853, which carries its own
dense output) is available as an alternative.

Every run owns its state; concurrent integrations need no coordination as
long as the supplied right-hand side is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .signals import Signal

__all__ = [
    "IntegrationError",
    "IntegratorOptions",
    "NonFiniteStateError",
    "OdeProblem",
    "StepSizeUnderflowError",
    "integrate_sampled",
    "solve_dense",
]

METHODS = ("bulirsch_stoer", "rk_embedded_high_order")

#: Substep counts of the extrapolation scheme.  All entries are even with an
#: odd half-index, so raw midpoint values share one parity and keep a clean
#: h^2 error expansion across the sequence.
_SEQUENCE = (2, 6, 10, 14, 18)
_NSEQ = len(_SEQUENCE)
#: Exponent for step-size control: the error estimate tracks the
#: second-highest extrapolation column.
_ERR_EXPONENT = -1.0 / (2 * _NSEQ - 1)

#: Highest midpoint-derivative order fed into the dense polynomial.  Orders
#: above 4 are not recoverable from the substep slopes: their difference
#: stencils divide the parity oscillation of the modified midpoint rule by
#: h^4 or more, which lifts it back to O(1).
_MU = 4
_DENSE_DEGREE = _MU + 4

# Central-difference stencils for d^(kappa-1) f / dx^(kappa-1) at the step
# midpoint, applied to endpoint-smoothed slopes: (offsets, weights, h power).
_DIFF_STENCILS = {
    1: ((0,), (1.0,), 0),
    2: ((-1, 1), (-0.5, 0.5), 1),
    3: ((-1, 0, 1), (1.0, -2.0, 1.0), 2),
    4: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5), 3),
}
#: Cap on extrapolation stages per derivative estimate; deeper columns only
#: amplify rounding noise once truncation error is negligible.
_MAX_DERIV_STAGES = 4

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 4.0
_MAX_REJECTS = 30
#: Rejection threshold on the scaled magnitude of the two highest dense
#: polynomial coefficients; keeps interpolation error at the tolerance level
#: when the end-error controller alone would allow very large steps.
_DENSE_CAP = 500.0


def _limit_weights(counts: tuple[int, ...]) -> np.ndarray:
    """Weights of the h^2 -> 0 extrapolation limit over the given substeps.

    Polynomial extrapolation in x_j = 1/n_j^2 evaluated at 0 is the Lagrange
    combination sum_j T_j * prod_{i != j} x_i / (x_i - x_j).
    """
    x = np.array([1.0 / n**2 for n in counts])
    w = np.empty(len(counts))
    for j in range(len(counts)):
        others = np.delete(x, j)
        w[j] = np.prod(others / (others - x[j]))
    return w


def _extrapolation_weights(counts: tuple[int, ...]):
    """(limit weights, error-estimate weights) for one substep family.

    The error estimate is the difference between the full limit and the
    limit over the subfamily that drops the coarsest substep count, i.e. the
    last Aitken-Neville correction.
    """
    w_full = _limit_weights(counts)
    w_prev = np.zeros(len(counts))
    w_prev[1:] = _limit_weights(counts[1:])
    return w_full, w_full - w_prev


_END_WEIGHTS, _END_ERR_WEIGHTS = _extrapolation_weights(_SEQUENCE)


def _derivative_plan():
    """Static per-derivative plan: sequence indices, stencil data, weights."""
    plan = []
    for kappa, (offsets, weights, hpow) in _DIFF_STENCILS.items():
        omax = max(abs(o) for o in offsets)
        idx = [
            j
            for j, n in enumerate(_SEQUENCE)
            if n // 2 - omax >= 1 and n // 2 + omax <= n - 2
        ]
        idx = idx[-_MAX_DERIV_STAGES:]
        counts = tuple(_SEQUENCE[j] for j in idx)
        plan.append(
            (
                kappa,
                tuple(idx),
                np.asarray(offsets, dtype=int),
                np.asarray(weights)[:, None],
                hpow,
                _limit_weights(counts),
            )
        )
    return plan


_DERIV_PLAN = _derivative_plan()


class IntegrationError(RuntimeError):
    """Base class for propagation failures."""


class StepSizeUnderflowError(IntegrationError):
    """Step control drove the step below the resolvable size."""


class NonFiniteStateError(IntegrationError):
    """A state component left the finite range (divergence)."""


@dataclass(frozen=True)
class OdeProblem:
    """First-order system dX/dt = rhs(X, t) on [t_start, t_end].

    ``rhs`` maps (state vector, time) to the derivative vector and must be
    pure.
    """

    dimension: int
    rhs: Callable[[np.ndarray, float], np.ndarray]
    t_start: float
    t_end: float
    initial_state: np.ndarray

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")
        y0 = np.asarray(self.initial_state, dtype=float)
        if y0.shape != (self.dimension,):
            raise ValueError(
                f"initial_state has shape {y0.shape}, expected ({self.dimension},)"
            )
        if not np.all(np.isfinite(y0)):
            raise ValueError("initial_state must be finite")
        object.__setattr__(self, "initial_state", y0)


@dataclass(frozen=True)
class IntegratorOptions:
    method: str = "bulirsch_stoer"
    rel_tol: float = 1e-13
    abs_tol: float = 1e-13
    max_step: float | None = None
    output_count: int = 2**16

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        for name, tol in (("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)):
            if not 0.0 < tol <= 1e-3:
                raise ValueError(f"{name} must lie in (0, 1e-3], got {tol}")
        if self.max_step is not None and not self.max_step > 0.0:
            raise ValueError("max_step must be positive")
        n = self.output_count
        if n < 2 or (n & (n - 1)) != 0:
            raise ValueError(f"output_count must be a power of two >= 2, got {n}")


class _DenseStep:
    """Degree-10 interpolant for one accepted step, in u = 2*theta - 1."""

    __slots__ = ("x0", "h", "coeffs")

    def __init__(self, x0: float, h: float, coeffs: np.ndarray):
        self.x0 = x0
        self.h = h
        self.coeffs = coeffs  # shape (degree + 1, ndim)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        u = 2.0 * (t - self.x0) / self.h - 1.0
        result = np.zeros(t.shape + (self.coeffs.shape[1],))
        for c in self.coeffs[::-1]:
            result = result * u[..., None] + c
        return result


class DenseSolution:
    """Piecewise-polynomial continuous extension of an integration run."""

    def __init__(self, steps: list[_DenseStep], t_start: float, t_end: float):
        self._steps = steps
        self.t_start = t_start
        self.t_end = t_end
        self._starts = np.array([s.x0 for s in steps])

    @property
    def step_count(self) -> int:
        return len(self._steps)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(t < self.t_start - 1e-12) or np.any(t > self.t_end + 1e-12):
            raise ValueError("evaluation time outside the integration span")
        idx = np.clip(
            np.searchsorted(self._starts, t, side="right") - 1, 0, len(self._steps) - 1
        )
        out = np.empty((t.size, self._steps[0].coeffs.shape[1]))
        for k in np.unique(idx):
            sel = idx == k
            out[sel] = self._steps[k](t[sel])
        return out[0] if scalar else out


class _ScipyDense:
    """DenseSolution-compatible wrapper around a scipy OdeSolution."""

    def __init__(self, sol, t_start: float, t_end: float, nsteps: int):
        self._sol = sol
        self.t_start = t_start
        self.t_end = t_end
        self.step_count = nsteps

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return self._sol(float(t))
        return self._sol(t).T


def _midpoint_pass(rhs, x0, y0, f0, h_macro, nsteps):
    """Modified-midpoint propagation storing all substep states and slopes."""
    h = h_macro / nsteps
    two_h = 2.0 * h
    ys = np.empty((nsteps + 1, y0.shape[0]))
    fs = np.empty((nsteps, y0.shape[0]))
    ys[0] = y0
    fs[0] = f0
    ys[1] = y0 + h * f0
    for i in range(1, nsteps):
        fs[i] = rhs(ys[i], x0 + i * h)
        ys[i + 1] = ys[i - 1] + two_h * fs[i]
    return ys, fs


def _build_dense(x0, h_macro, y0, f0, y1, f1, passes):
    """Assemble the dense interpolant for one accepted macro step.

    Matches value and slope at both step ends and value plus derivatives up
    to order ``_MU`` at the midpoint; midpoint data are Richardson
    extrapolations of the stored substep states and slopes.
    """
    ndim = y0.shape[0]
    half = 0.5 * h_macro

    mids = np.stack([ys[n // 2] for n, ys, _ in passes])
    coeffs = np.zeros((_DENSE_DEGREE + 1, ndim))
    coeffs[0] = _END_WEIGHTS @ mids

    smoothed = [0.25 * (fs[:-2] + 2.0 * fs[1:-1] + fs[2:]) for _, _, fs in passes]
    scale = half
    for kappa, idx, offsets, weights, hpow, limit_w in _DERIV_PLAN:
        estimates = np.empty((len(idx), ndim))
        for row, j in enumerate(idx):
            n = _SEQUENCE[j]
            m = n // 2
            # smoothed[j][k] holds the smoothed slope at substep k + 1
            est = (smoothed[j][m - 1 + offsets] * weights).sum(axis=0)
            if hpow:
                est *= (n / h_macro) ** hpow
            estimates[row] = est
        coeffs[kappa] = (limit_w @ estimates) * scale / math.factorial(kappa)
        scale *= half

    head = coeffs[: _MU + 1]
    signs = np.array([(-1.0) ** k for k in range(_MU + 1)])
    ks = np.arange(_MU + 1)
    r_plus = y1 - head.sum(axis=0)
    r_minus = y0 - signs @ head
    q_plus = half * f1 - ks @ head
    q_minus = half * f0 + (ks * signs) @ head

    r_even = 0.5 * (r_plus + r_minus)
    r_odd = 0.5 * (r_plus - r_minus)
    q_odd = 0.5 * (q_plus + q_minus)
    q_even = 0.5 * (q_plus - q_minus)

    # tail of the degree-8 polynomial: k = mu+1 .. mu+4 at u = +-1
    k0 = _MU + 1
    coeffs[k0 + 2] = 0.5 * (q_odd - k0 * r_odd)
    coeffs[k0] = r_odd - coeffs[k0 + 2]
    coeffs[k0 + 3] = 0.5 * (q_even - (k0 + 1) * r_even)
    coeffs[k0 + 1] = r_even - coeffs[k0 + 3]
    return _DenseStep(x0, h_macro, coeffs)


def _solve_bulirsch_stoer(problem: OdeProblem, options: IntegratorOptions):
    rhs = problem.rhs
    span = problem.t_end - problem.t_start
    max_step = options.max_step if options.max_step is not None else span
    max_step = min(max_step, span)

    x = problem.t_start
    y = problem.initial_state.copy()
    f_here = np.asarray(rhs(y, x), dtype=float)
    if f_here.shape != y.shape:
        raise IntegrationError(f"rhs returned shape {f_here.shape}, expected {y.shape}")

    # initial step from the classic |y|/|f| heuristic
    sc = options.abs_tol + options.rel_tol * np.abs(y)
    d0 = math.sqrt(np.mean((y / sc) ** 2))
    d1 = math.sqrt(np.mean((f_here / sc) ** 2))
    if d0 > 1e-5 and d1 > 1e-5:
        h = 0.01 * d0 / d1
    else:
        h = 1e-6 * span
    h = min(h, max_step)

    eps = np.finfo(float).eps
    steps: list[_DenseStep] = []
    rejects_in_row = 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        while x < problem.t_end - 1e-14 * span:
            h = min(h, max_step, problem.t_end - x)
            if h < 16.0 * eps * max(abs(x), 1.0):
                raise StepSizeUnderflowError(f"step size underflow at t={x} (h={h})")

            passes = []
            ends = np.empty((_NSEQ, y.shape[0]))
            for row, n in enumerate(_SEQUENCE):
                ys, fs = _midpoint_pass(rhs, x, y, f_here, h, n)
                passes.append((n, ys, fs))
                ends[row] = ys[-1]

            if np.all(np.isfinite(ends)):
                y1 = _END_WEIGHTS @ ends
                delta = _END_ERR_WEIGHTS @ ends
                sc = options.abs_tol + options.rel_tol * np.maximum(
                    np.abs(y), np.abs(y1)
                )
                err = math.sqrt(np.mean((delta / sc) ** 2))
            else:
                err = math.inf

            if not err <= 1.0:
                rejects_in_row += 1
                if rejects_in_row > _MAX_REJECTS:
                    if not math.isfinite(err):
                        raise NonFiniteStateError(
                            f"state became non-finite near t={x}; integration diverged"
                        )
                    raise IntegrationError(
                        f"step control failed near t={x} (error {err:.3g})"
                    )
                fac = _SAFETY * err**_ERR_EXPONENT if math.isfinite(err) else 0.1
                h *= min(0.7, max(0.1, fac))
                continue

            f_next = np.asarray(rhs(y1, x + h), dtype=float)
            good = np.all(np.isfinite(f_next)) and np.all(np.isfinite(passes[-1][2]))
            if good:
                dense = _build_dense(x, h, y, f_here, y1, f_next, passes)
                dense_err = math.sqrt(
                    np.mean(
                        (
                            (np.abs(dense.coeffs[-1]) + np.abs(dense.coeffs[-2])) / sc
                        )
                        ** 2
                    )
                )
                good = np.isfinite(dense_err) and dense_err <= _DENSE_CAP
            if not good:
                rejects_in_row += 1
                if rejects_in_row > _MAX_REJECTS:
                    raise IntegrationError(f"dense-output control failed near t={x}")
                h *= 0.6
                continue

            steps.append(dense)
            x += h
            y = y1
            f_here = f_next
            rejects_in_row = 0
            fac = _SAFETY * err**_ERR_EXPONENT if err > 0.0 else _FAC_MAX
            h *= min(_FAC_MAX, max(_FAC_MIN, fac))

    return DenseSolution(steps, problem.t_start, problem.t_end), y


def _solve_scipy(problem: OdeProblem, options: IntegratorOptions):
    sol = solve_ivp(
        lambda t, y: problem.rhs(y, t),
        (problem.t_start, problem.t_end),
        problem.initial_state,
        method="DOP853",
        rtol=options.rel_tol,
        atol=options.abs_tol,
        max_step=options.max_step if options.max_step is not None else np.inf,
        dense_output=True,
    )
    if not sol.success:
        raise IntegrationError(f"DOP853 failed: {sol.message}")
    if not np.all(np.isfinite(sol.y[:, -1])):
        raise NonFiniteStateError("state became non-finite; integration diverged")
    dense = _ScipyDense(sol.sol, problem.t_start, problem.t_end, len(sol.t) - 1)
    return dense, sol.y[:, -1]


def solve_dense(problem: OdeProblem, options: IntegratorOptions | None = None):
    """Integrate and return ``(dense_solution, final_state)``.

    The dense solution is callable on any time in ``[t_start, t_end]``.
    """
    options = options or IntegratorOptions()
    if options.method == "bulirsch_stoer":
        return _solve_bulirsch_stoer(problem, options)
    return _solve_scipy(problem, options)


def integrate_sampled(
    problem: OdeProblem, options: IntegratorOptions | None = None
) -> list[Signal]:
    """Propagate the system and resample each state dimension uniformly.

    Returns one :class:`Signal` per dimension.  The ``output_count`` nodes
    span ``[t_start, t_end]``, re-indexed onto the symmetric window
    ``[-T, T]`` with ``T = (t_end - t_start) / 2``; the model time of window
    time ``w`` is ``w + (t_start + t_end) / 2``.  Sampling uses the dense
    interpolant, so the output grid never constrains step selection.
    """
    options = options or IntegratorOptions()
    dense, _ = solve_dense(problem, options)
    t_out = np.linspace(problem.t_start, problem.t_end, options.output_count)
    values = dense(t_out)
    if not np.all(np.isfinite(values)):
        raise NonFiniteStateError("non-finite samples in dense output")
    half_span = 0.5 * (problem.t_end - problem.t_start)
    return [
        Signal(
            samples=values[:, k].astype(complex),
            half_span=half_span,
            count=options.output_count,
            is_real=True,
        )
        for k in range(problem.dimension)
    ]
