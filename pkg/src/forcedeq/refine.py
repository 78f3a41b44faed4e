"""Forced/free classification and fixed-point refinement of initial conditions.

A detected frequency is *forced* when it matches an integer combination of
the known forcing frequencies (the zero-frequency line, which carries the
displaced equilibrium, always counts as forced with the zero combination);
everything else is *free*.  The refinement loop integrates the system,
decomposes every state dimension, classifies the terms, and replaces the
initial condition by the forced part of the reconstruction evaluated at
model time zero.  The free amplitudes shrink quadratically for systems with
a d'Alembert-like structure, until they hit the amplitude floor.

Per-dimension analysis steps inside one iteration are independent;
iterations are strictly sequential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .integrate import IntegratorOptions, OdeProblem, integrate_sampled
from .naff import Decomposition, NaffOptions, SpectralTerm, decompose, shift_reference

__all__ = [
    "DivergenceError",
    "ForcingBasis",
    "InsufficientDataError",
    "IterationRecord",
    "PairingError",
    "RefineOptions",
    "RefinementLog",
    "TermClassification",
    "classify",
    "estimate_convergence_rate",
    "forced_value_at_zero",
    "free_value_at_zero",
    "refine",
]

STOP_AMPLITUDE_FLOOR = "amplitude_floor"
STOP_STAGNATION = "stagnation"
STOP_MAX_ITERATIONS = "max_iterations"


class DivergenceError(RuntimeError):
    """The iterate left the admissible set of the model."""


class PairingError(ValueError):
    """Conjugate pairing broke: forced sum has a large imaginary residue."""


class InsufficientDataError(ValueError):
    """Too few usable amplitude pairs to estimate a convergence rate."""


@dataclass(frozen=True)
class ForcingBasis:
    """Known forcing frequencies with lattice-matching parameters.

    ``frequencies`` may be empty: the search then reduces to a static
    equilibrium hunt where only the zero-frequency line is forced.
    ``match_tolerance`` defaults, at classification time, to half of the
    extraction separation (pi / T): a line closer than the resolution limit
    to a lattice point cannot be told apart from it.
    """

    frequencies: tuple[float, ...] = ()
    max_order: int = 10
    match_tolerance: float | None = None

    def __post_init__(self):
        freqs = tuple(float(nu) for nu in self.frequencies)
        object.__setattr__(self, "frequencies", freqs)
        if any(nu <= 0 for nu in freqs):
            raise ValueError("forcing frequencies must be positive")
        if self.max_order < 1:
            raise ValueError("max_order must be at least 1")
        if self.match_tolerance is not None and not self.match_tolerance > 0:
            raise ValueError("match_tolerance must be positive")
        if freqs:
            tol = self.match_tolerance or 1e-9 * max(freqs)
            for value, combo in self._raw_lattice():
                if any(combo) and abs(value) < tol:
                    raise ValueError(
                        f"forcing frequencies are rationally dependent at working "
                        f"precision: {combo} . nu = {value:.3e}"
                    )

    @property
    def order(self) -> int:
        return len(self.frequencies)

    def _raw_lattice(self):
        points = []

        def rec(index, budget, value, combo):
            if index == len(self.frequencies):
                points.append((value, tuple(combo)))
                return
            nu = self.frequencies[index]
            for m in range(-budget, budget + 1):
                combo.append(m)
                rec(index + 1, budget - abs(m), value + m * nu, combo)
                combo.pop()

        rec(0, self.max_order, 0.0, [])
        return points

    def lattice(self, lo: float, hi: float, tolerance: float):
        """Lattice points m . nu with value in [lo - tol, hi + tol]."""
        return sorted(
            (v, m)
            for v, m in self._raw_lattice()
            if lo - tolerance <= v <= hi + tolerance
        )


@dataclass(frozen=True)
class TermClassification:
    """Partition of a decomposition into forced and free terms.

    ``forced`` pairs each forced term with its integer combination.
    ``proper_frequency_estimate`` is the frequency modulus of the
    largest-amplitude free term, or None when nothing is free.
    ``ambiguous`` lists frequencies where two lattice points fell inside the
    match tolerance; the nearest one won.
    """

    forced: tuple[tuple[SpectralTerm, tuple[int, ...]], ...]
    free: tuple[SpectralTerm, ...]
    proper_frequency_estimate: float | None
    ambiguous: tuple[float, ...] = ()

    @property
    def largest_free_amplitude(self) -> float:
        return max((abs(t.amplitude) for t in self.free), default=0.0)


def classify(d: Decomposition, basis: ForcingBasis) -> TermClassification:
    """Match every term against the forcing lattice within the tolerance."""
    tolerance = basis.match_tolerance
    if tolerance is None:
        tolerance = math.pi / d.half_span
    if d.terms:
        freqs = d.frequencies
        lattice = basis.lattice(freqs.min(), freqs.max(), tolerance)
    else:
        lattice = []
    values = np.array([v for v, _ in lattice]) if lattice else np.zeros(0)

    forced = []
    free = []
    ambiguous = []
    for term in d.terms:
        if values.size:
            dist = np.abs(values - term.frequency)
            inside = np.nonzero(dist <= tolerance)[0]
        else:
            inside = []
        if len(inside) == 0:
            free.append(term)
            continue
        if len(inside) > 1:
            ambiguous.append(term.frequency)
        best = inside[np.argmin(dist[inside])]
        forced.append((term, lattice[best][1]))

    omega = None
    if free:
        dominant = max(free, key=lambda t: abs(t.amplitude))
        omega = abs(dominant.frequency)
    return TermClassification(
        forced=tuple(forced),
        free=tuple(free),
        proper_frequency_estimate=omega,
        ambiguous=tuple(ambiguous),
    )


def _real_part_checked(total: complex, what: str) -> float:
    if abs(total.imag) > 1e-10 * max(1.0, abs(total.real)):
        raise PairingError(
            f"{what} has imaginary residue {total.imag:.3e}; "
            "conjugate pairing is broken"
        )
    return total.real


def forced_value_at_zero(c: TermClassification, d: Decomposition) -> float:
    """Forced reconstruction at time zero: real part of the forced sum.

    The decomposition must come from a real signal and be referenced so
    that its time zero is the model time of interest; each exp(i f 0) is 1,
    so the value is just the amplitude sum.  Raises :class:`PairingError`
    when the imaginary residue exceeds 1e-10.
    """
    term_set = {(t.frequency, t.amplitude) for t in d.terms}
    for term, _ in c.forced:
        if (term.frequency, term.amplitude) not in term_set:
            raise ValueError("classification does not belong to this decomposition")
    total = sum((term.amplitude for term, _ in c.forced), complex(0.0))
    return _real_part_checked(total, "forced sum")


def free_value_at_zero(c: TermClassification, d: Decomposition) -> float:
    """Free reconstruction at time zero; counterpart of the forced sum."""
    total = sum((term.amplitude for term in c.free), complex(0.0))
    return _real_part_checked(total, "free sum")


@dataclass(frozen=True)
class RefineOptions:
    """Controls for the fixed-point refinement loop.

    ``half_span`` sets the analysis window [-T, T]; the model is integrated
    on [0, 2T].  ``stop_mode`` selects the stopping rule: ``detect`` stops
    when the largest free amplitude is below ``amplitude_floor`` (too small
    to be detected), ``forced-purity`` when it is below 1e-6 times the
    smallest retained forced amplitude (too small to perturb the forced
    determination).
    """

    half_span: float
    naff: NaffOptions = field(default_factory=NaffOptions)
    integrator: IntegratorOptions = field(default_factory=IntegratorOptions)
    amplitude_floor: float = 1e-13
    max_iterations: int = 10
    stop_mode: str = "detect"

    def __post_init__(self):
        if not self.half_span > 0:
            raise ValueError("half_span must be positive")
        if not self.amplitude_floor > 0:
            raise ValueError("amplitude_floor must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if self.stop_mode not in ("detect", "forced-purity"):
            raise ValueError("stop_mode must be 'detect' or 'forced-purity'")


@dataclass(frozen=True)
class IterationRecord:
    """Everything measured during one refinement iteration.

    Decompositions are re-referenced to model time zero, so their
    reconstruction at 0 is the state X_n itself up to the residual.
    """

    index: int
    initial_condition: tuple[float, ...]
    decompositions: tuple[Decomposition, ...]
    classifications: tuple[TermClassification, ...]
    free_amplitudes: tuple[float, ...]
    largest_free_amplitude: float
    proper_frequency: float | None
    next_initial_condition: tuple[float, ...]


@dataclass
class RefinementLog:
    iterations: list[IterationRecord]
    converged: bool
    stop_reason: str
    refined_initial_condition: tuple[float, ...]

    @property
    def free_amplitude_sequence(self) -> list[float]:
        return [rec.largest_free_amplitude for rec in self.iterations]


def _analyze_state(system, state: np.ndarray, options: RefineOptions):
    """Integrate one orbit and classify every dimension's spectrum."""
    two_t = 2.0 * options.half_span
    problem = OdeProblem(
        dimension=system.dimension,
        rhs=system.rhs,
        t_start=0.0,
        t_end=two_t,
        initial_state=state,
    )
    signals = integrate_sampled(problem, options.integrator)
    decomps = []
    classes = []
    for sig in signals:
        d = decompose(sig, options.naff)
        d = shift_reference(d, -options.half_span)
        decomps.append(d)
        classes.append(classify(d, system.forcing))
    return tuple(decomps), tuple(classes)


def refine(system, initial_condition, options: RefineOptions) -> RefinementLog:
    """Iterate X_{n+1} = forced part of the X_n orbit at model time zero.

    Stops when the largest free amplitude falls under the stop threshold,
    when it no longer decreases (stagnation at the numerical floor), or at
    ``max_iterations``.  Raises :class:`DivergenceError` when an iterate
    leaves the admissible set; integration failures propagate.
    """
    if not getattr(system, "refinable", True):
        raise ValueError(
            f"system {system.name!r} is dissipative; refinement requires the "
            "conservative quasi-periodic setting"
        )
    state = np.asarray(initial_condition, dtype=float)
    if state.shape != (system.dimension,):
        raise ValueError(
            f"initial condition has shape {state.shape}, expected "
            f"({system.dimension},)"
        )

    records: list[IterationRecord] = []
    converged = False
    stop_reason = STOP_MAX_ITERATIONS
    for n in range(options.max_iterations + 1):
        if not np.all(np.isfinite(state)) or not system.admissible(state):
            raise DivergenceError(
                f"iterate {n} left the admissible set: {state.tolist()}"
            )
        decomps, classes = _analyze_state(system, state, options)
        free_amps = tuple(c.largest_free_amplitude for c in classes)
        largest = max(free_amps)
        dominant_dim = int(np.argmax(free_amps))
        omega = classes[dominant_dim].proper_frequency_estimate
        next_state = np.array(
            [forced_value_at_zero(c, d) for c, d in zip(classes, decomps)]
        )
        records.append(
            IterationRecord(
                index=n,
                initial_condition=tuple(state.tolist()),
                decompositions=decomps,
                classifications=classes,
                free_amplitudes=free_amps,
                largest_free_amplitude=largest,
                proper_frequency=omega,
                next_initial_condition=tuple(next_state.tolist()),
            )
        )

        if options.stop_mode == "forced-purity":
            smallest_forced = min(
                (
                    abs(term.amplitude)
                    for c in classes
                    for term, _ in c.forced
                ),
                default=0.0,
            )
            threshold = 1e-6 * smallest_forced
        else:
            threshold = options.amplitude_floor

        if largest < threshold:
            converged = True
            stop_reason = STOP_AMPLITUDE_FLOOR
            break
        if n >= 1 and largest >= records[n - 1].largest_free_amplitude:
            stop_reason = STOP_STAGNATION
            break
        state = next_state

    amplitudes = [rec.largest_free_amplitude for rec in records]
    best = int(np.argmin(amplitudes))
    if stop_reason == STOP_STAGNATION:
        converged = bool(amplitudes[best] <= 10.0 * options.amplitude_floor)
    return RefinementLog(
        iterations=records,
        converged=converged,
        stop_reason=stop_reason,
        refined_initial_condition=records[best].initial_condition,
    )


def estimate_convergence_rate(log: RefinementLog, floor: float = 1e-13) -> float:
    """Least-squares slope of log A_{n+1} against log A_n.

    Only iterations with amplitude above the effective floor enter the fit.
    When the run ended at its numerical floor (converged or stagnated), the
    effective floor is raised to ten times the smallest recorded amplitude:
    pairs that step into the noise measure the floor, not the contraction.
    Quadratic convergence shows as a slope near 2, linear contraction near
    1.  Raises :class:`InsufficientDataError` with fewer than two usable
    pairs (three iterations).
    """
    amps = log.free_amplitude_sequence
    positive = [a for a in amps if a > 0.0]
    effective = floor
    if log.stop_reason in (STOP_AMPLITUDE_FLOOR, STOP_STAGNATION) and positive:
        effective = max(effective, 10.0 * min(positive))
    xs = []
    ys = []
    for a_now, a_next in zip(amps, amps[1:]):
        if a_now > effective and a_next > effective:
            xs.append(math.log(a_now))
            ys.append(math.log(a_next))
    if len(xs) < 2:
        raise InsufficientDataError(
            f"need at least 3 iterations above the floor {effective:.1e}, "
            f"have {len(xs) + 1}"
        )
    slope = np.polyfit(np.asarray(xs), np.asarray(ys), 1)[0]
    return float(slope)


def _line_table(d: Decomposition):
    """Group conjugate pairs into lines: (|frequency|, modulus, is_free_slot)."""
    lines = {}
    for term in d.terms:
        key = round(abs(term.frequency), 12)
        mod = abs(term.amplitude)
        if key not in lines or mod > lines[key]:
            lines[key] = mod
    return lines


def largest_free_line_rank(d: Decomposition, c: TermClassification) -> int | None:
    """Amplitude-sorted position of the dominant free line among all lines.

    Conjugate pairs count as one line.  Returns None when nothing is free.
    """
    if not c.free:
        return None
    lines = _line_table(d)
    dominant = max(c.free, key=lambda t: abs(t.amplitude))
    key = round(abs(dominant.frequency), 12)
    ordered = sorted(lines.items(), key=lambda kv: -kv[1])
    for rank, (k, _) in enumerate(ordered, start=1):
        if k == key:
            return rank
    return None


def log_to_dict(log: RefinementLog) -> dict:
    """JSON-ready view of a refinement log, one entry per iteration."""
    iterations = []
    for rec in log.iterations:
        dims = []
        for d, c, amp in zip(rec.decompositions, rec.classifications,
                             rec.free_amplitudes):
            dims.append(
                {
                    "term_count": len(d.terms),
                    "largest_free_rank": largest_free_line_rank(d, c),
                    "largest_free_amplitude": amp,
                    "proper_frequency": c.proper_frequency_estimate,
                    "forced_count": len(c.forced),
                    "free_count": len(c.free),
                    "ambiguous_matches": list(c.ambiguous),
                    "residual_norm": d.residual_norm,
                }
            )
        iterations.append(
            {
                "n": rec.index,
                "initial_condition": list(rec.initial_condition),
                "largest_free_amplitude": rec.largest_free_amplitude,
                "proper_frequency": rec.proper_frequency,
                "next_initial_condition": list(rec.next_initial_condition),
                "dimensions": dims,
            }
        )
    return {
        "converged": log.converged,
        "stop_reason": log.stop_reason,
        "refined_initial_condition": list(log.refined_initial_condition),
        "iterations": iterations,
    }
