"""Iterative extraction of frequencies and complex amplitudes from a signal.

The scheme is the classic one from numerical analysis of fundamental
frequencies: locate the frequency maximizing the windowed projection
|<f, exp(i nu t)>|, project jointly onto all exponentials found so far, and
restart on the remainder.  Finite-window exponentials are not orthogonal, so
after every new frequency the full Gram system is re-solved; this is
equivalent to orthogonal projection onto the current span and prevents error
accumulation.

Peak location runs in three stages: an FFT coarse scan of the weighted
residual, a bracketed Brent refinement of |phi|^2, and a few Newton steps on
d|phi|^2/dnu.  The Newton polish matters: derivative-free maximization of a
locally quadratic function stalls at relative accuracy ~sqrt(eps), while the
frequency errors feed phase errors ~|a| dnu T into window-edge evaluation.

``decompose`` is a pure function of its inputs; concurrent decompositions of
different signals are safe.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .signals import (
    FLOAT_FORMAT,
    Signal,
    window_normalization_constant,
    window_weight,
)

__all__ = [
    "Decomposition",
    "DegenerateSignalError",
    "IllConditionedError",
    "NaffOptions",
    "NoPeakError",
    "SpectralTerm",
    "decompose",
    "locate_peak",
    "project",
    "reconstruct",
    "sampled_window_transform",
    "shift_reference",
    "write_decomposition",
]

#: Gram condition number beyond which frequencies are declared too close.
CONDITION_LIMIT = 1e12

#: Zero-padding factor of the FFT coarse scan.
_FFT_PAD = 4

#: Extra Newton iterations that polish the Brent peak.
_NEWTON_STEPS = 8


class NoPeakError(ValueError):
    """All spectral mass lies inside exclusion zones."""


class DegenerateSignalError(ValueError):
    """The signal has no usable spectral content (zero norm)."""


class IllConditionedError(ValueError):
    """Gram matrix condition exceeds the limit: frequencies too close."""


@dataclass(frozen=True)
class SpectralTerm:
    """One extracted line: complex amplitude at a real angular frequency."""

    frequency: float
    amplitude: complex


@dataclass(frozen=True)
class NaffOptions:
    """Extraction controls.

    ``min_separation`` defaults to 2*pi/T: with a record of length 2T,
    frequencies closer than twice the resolution 2*pi/(2T) disturb each
    other's determination.  ``amplitude_floor`` is relative to the largest
    extracted amplitude.  ``peak_tolerance`` is the relative frequency
    tolerance of peak refinement.
    """

    window_order: int = 2
    max_terms: int = 50
    min_separation: float | None = None
    amplitude_floor: float = 1e-15
    peak_tolerance: float = 1e-12

    def __post_init__(self):
        if self.max_terms < 1:
            raise ValueError("max_terms must be at least 1")
        if self.min_separation is not None and not self.min_separation > 0:
            raise ValueError("min_separation must be positive")
        if not 0 <= self.amplitude_floor < 1:
            raise ValueError("amplitude_floor must lie in [0, 1)")
        if not 0 < self.peak_tolerance < 1e-2:
            raise ValueError("peak_tolerance must lie in (0, 1e-2)")

    def resolved_separation(self, half_span: float) -> float:
        if self.min_separation is not None:
            return self.min_separation
        return 2.0 * math.pi / half_span


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Ordered extraction result plus grid metadata.

    ``terms`` keep extraction order (conjugate partners adjacent for real
    signals).  ``residual_norm`` is the weighted norm of what is left;
    ``residual_history`` records it after every extraction round, starting
    with the norm of the signal itself.
    """

    terms: tuple[SpectralTerm, ...]
    residual_norm: float
    half_span: float
    count: int
    window_order: int
    is_real: bool
    residual_history: tuple[float, ...]
    stop_reason: str

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([t.frequency for t in self.terms])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([t.amplitude for t in self.terms], dtype=complex)


def _binomial_window_coefficients(p: int) -> np.ndarray:
    """chi_p as a trigonometric polynomial: coefficients of e^{i k pi t / T}."""
    c = window_normalization_constant(p)
    return np.array(
        [c * math.comb(2 * p, p + k) / 2.0**p for k in range(-p, p + 1)]
    )


def _dirichlet(beta: np.ndarray, n: int) -> np.ndarray:
    """sum_{j=0}^{n-1} exp(i beta j), stable near beta = 2 pi m."""
    beta = np.asarray(beta, dtype=float)
    half = 0.5 * (np.mod(beta + np.pi, 2.0 * np.pi) - np.pi)
    q = np.round((0.5 * beta - half) / np.pi)
    num = np.sin(n * half)
    den = np.sin(half)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den == 0.0, float(n), num / np.where(den == 0.0, 1.0, den))
    # sin(n beta/2)/sin(beta/2) = (-1)^(q(n-1)) sin(n half)/sin(half)
    sign = np.where((q.astype(np.int64) * (n - 1)) % 2 == 0, 1.0, -1.0)
    return np.exp(1j * beta * 0.5 * (n - 1)) * sign * ratio


def sampled_window_transform(delta, half_span: float, count: int, p: int = 2):
    """Discrete weighted product <e^{i(nu+delta)t}, e^{i nu t}> on the grid.

    Exactly the trapezoid sum that :func:`forcedeq.signals.inner_product`
    would compute for the two exponentials, in closed form via Dirichlet
    kernels; cost is O(p) per value instead of O(count).
    """
    delta_arr = np.atleast_1d(np.asarray(delta, dtype=float))
    step = 2.0 * half_span / (count - 1)
    coeffs = _binomial_window_coefficients(p)
    total = np.zeros(delta_arr.shape, dtype=complex)
    for k, d_k in zip(range(-p, p + 1), coeffs):
        theta = delta_arr + k * math.pi / half_span
        total += d_k * np.exp(-1j * theta * half_span) * _dirichlet(theta * step, count)
    if p == 0:
        # trapezoid end weights; for p >= 1 the window vanishes there
        total -= np.cos(delta_arr * half_span)
    total *= step / (2.0 * half_span)
    if np.isscalar(delta) or np.asarray(delta).ndim == 0:
        return complex(total[0])
    return total


class _PeakWorkspace:
    """Weighted residual arrays reused across evaluations of phi."""

    def __init__(self, samples: np.ndarray, signal: Signal, p: int):
        self.times = signal.times
        self.half_span = signal.half_span
        self.count = signal.count
        self.step = signal.step
        chi = window_weight(p, self.times, self.half_span)
        w = np.ones(signal.count)
        w[0] = 0.5
        w[-1] = 0.5
        self.scale = self.step / (2.0 * self.half_span)
        self.weighted = samples * chi * w
        self._wt = None
        self._wtt = None

    def phi(self, nu: float) -> complex:
        return self.scale * complex(
            np.dot(self.weighted, np.exp(-1j * nu * self.times))
        )

    def phi_with_derivatives(self, nu: float):
        if self._wt is None:
            self._wt = self.weighted * (-1j * self.times)
            self._wtt = self._wt * (-1j * self.times)
        e = np.exp(-1j * nu * self.times)
        return (
            self.scale * complex(np.dot(self.weighted, e)),
            self.scale * complex(np.dot(self._wt, e)),
            self.scale * complex(np.dot(self._wtt, e)),
        )

    def power(self, nu: float) -> float:
        return abs(self.phi(nu)) ** 2


def _coarse_scan(ws: _PeakWorkspace, exclusions, min_separation: float,
                 positive_only: bool):
    """FFT scan of the weighted residual; returns (peak frequency, bin width)."""
    n_fft = _FFT_PAD * ws.count
    spectrum = np.abs(np.fft.fft(ws.weighted, n_fft))
    nu_grid = 2.0 * math.pi * np.fft.fftfreq(n_fft, d=ws.step)

    order = np.argsort(nu_grid)
    nu_sorted = nu_grid[order]
    spec_sorted = spectrum[order]

    allowed = np.ones(n_fft, dtype=bool)
    if positive_only:
        allowed &= nu_sorted >= 0.0
    for nu_ex in exclusions:
        lo = np.searchsorted(nu_sorted, nu_ex - min_separation, side="left")
        hi = np.searchsorted(nu_sorted, nu_ex + min_separation, side="right")
        allowed[lo:hi] = False

    if not np.any(allowed):
        raise NoPeakError("all spectral mass lies within exclusion zones")
    masked = np.where(allowed, spec_sorted, -1.0)
    k = int(np.argmax(masked))
    if masked[k] <= 0.0:
        raise NoPeakError("no spectral peak outside exclusion zones")
    bin_width = 2.0 * math.pi / (n_fft * ws.step)
    return float(nu_sorted[k]), bin_width


def _refine_peak(ws: _PeakWorkspace, nu0: float, bin_width: float,
                 peak_tolerance: float) -> float:
    """Brent maximization of |phi|^2 in a one-bin bracket, Newton-polished."""
    nyquist = math.pi / ws.step
    lo = max(nu0 - bin_width, -nyquist)
    hi = min(nu0 + bin_width, nyquist)
    xatol = peak_tolerance * max(abs(nu0), bin_width)
    result = minimize_scalar(
        lambda nu: -ws.power(nu),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": xatol, "maxiter": 120},
    )
    nu = float(result.x)

    # Newton on g(nu) = d|phi|^2/dnu = 2 Re(conj(phi) phi'); the second
    # derivative is 2(|phi'|^2 + Re(conj(phi) phi'')).
    for _ in range(_NEWTON_STEPS):
        phi, dphi, ddphi = ws.phi_with_derivatives(nu)
        g = 2.0 * (phi.conjugate() * dphi).real
        gp = 2.0 * (abs(dphi) ** 2 + (phi.conjugate() * ddphi).real)
        if gp >= 0.0:
            break
        step = -g / gp
        if not math.isfinite(step) or abs(step) > bin_width:
            break
        nu += step
        if abs(step) <= 1e-16 * max(abs(nu), 1.0):
            break
    return min(max(nu, lo - bin_width), hi + bin_width)


def locate_peak(
    f: Signal,
    p: int = 2,
    exclusions=(),
    min_separation: float | None = None,
    peak_tolerance: float = 1e-12,
) -> float:
    """Frequency maximizing |<f, exp(i nu t)>| away from the exclusions.

    Candidates are required to lie at least ``min_separation`` (default
    2*pi/T) from every excluded frequency.  For real signals only
    nonnegative frequencies are searched; the mirror line carries the same
    modulus.  Raises :class:`DegenerateSignalError` on a zero signal and
    :class:`NoPeakError` when the exclusions cover everything.
    """
    if min_separation is None:
        min_separation = 2.0 * math.pi / f.half_span
    ws = _PeakWorkspace(np.asarray(f.samples), f, p)
    if not np.any(ws.weighted):
        raise DegenerateSignalError("signal has no spectral content")
    nu0, bin_width = _coarse_scan(ws, exclusions, min_separation, f.is_real)
    return _refine_peak(ws, nu0, bin_width, peak_tolerance)


def _gram_matrix(frequencies: np.ndarray, half_span: float, count: int,
                 p: int) -> np.ndarray:
    delta = frequencies[None, :] - frequencies[:, None]
    return sampled_window_transform(delta, half_span, count, p)


def project(f: Signal, frequencies, p: int = 2) -> np.ndarray:
    """Joint orthogonal projection of ``f`` onto the given exponentials.

    Solves G a = b with G_jk = <e_k, e_j> and b_j = <f, e_j>.  Raises
    :class:`IllConditionedError` when cond(G) exceeds ``CONDITION_LIMIT``,
    which signals frequencies too close to separate on this grid.
    """
    freqs = np.asarray(frequencies, dtype=float)
    if freqs.ndim != 1 or freqs.size == 0:
        raise ValueError("frequencies must be a non-empty 1-d sequence")
    if np.unique(freqs).size != freqs.size:
        raise ValueError("frequencies must be pairwise distinct")
    gram = _gram_matrix(freqs, f.half_span, f.count, p)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise IllConditionedError(
            f"Gram condition {cond:.3e} exceeds {CONDITION_LIMIT:.0e}; "
            "frequencies too close"
        )
    ws = _PeakWorkspace(np.asarray(f.samples), f, p)
    b = np.array([ws.phi(nu) for nu in freqs])
    return np.linalg.solve(gram, b)


def reconstruct(d: Decomposition, t):
    """Evaluate the trigonometric polynomial sum a_l exp(i f_l t)."""
    t_arr = np.asarray(t, dtype=float)
    if not d.terms:
        zero = np.zeros(t_arr.shape, dtype=complex)
        return complex(0.0) if t_arr.ndim == 0 else zero
    phases = np.exp(1j * np.multiply.outer(t_arr, d.frequencies))
    values = phases @ d.amplitudes
    if t_arr.ndim == 0:
        return complex(values)
    return values


def shift_reference(d: Decomposition, origin: float) -> Decomposition:
    """Re-reference amplitudes so the window time ``origin`` becomes time 0.

    The returned decomposition satisfies new(t) == old(origin + t); shifting
    by -T expresses a [-T, T] analysis in the clock of a model started at
    the left window edge.
    """
    terms = tuple(
        SpectralTerm(
            t.frequency,
            complex(t.amplitude * np.exp(1j * t.frequency * origin)),
        )
        for t in d.terms
    )
    return replace(d, terms=terms)


def _weighted_norm(ws_samples: np.ndarray, signal: Signal, p: int) -> float:
    chi = window_weight(p, signal.times, signal.half_span)
    w = np.ones(signal.count)
    w[0] = 0.5
    w[-1] = 0.5
    val = np.sum(np.abs(ws_samples) ** 2 * chi * w) * signal.step / (2 * signal.half_span)
    return math.sqrt(max(float(val), 0.0))


def decompose(f: Signal, options: NaffOptions | None = None) -> Decomposition:
    """Extract spectral terms until a stopping rule fires.

    Stopping rules: term budget exhausted, new amplitude under the relative
    floor, new frequency within ``min_separation`` of one already extracted
    (or an ill-conditioned Gram system, the same condition seen later), or
    no remaining peak.  For real signals every positive-frequency line is
    paired with its conjugate at the mirrored frequency; a zero-frequency
    line stays unpaired.
    """
    options = options or NaffOptions()
    p = options.window_order
    min_sep = options.resolved_separation(f.half_span)
    samples = np.asarray(f.samples)

    initial_norm = _weighted_norm(samples, f, p)
    history = [initial_norm]
    freqs: list[float] = []
    amps = np.zeros(0, dtype=complex)
    columns: list[np.ndarray] = []
    residual = samples.copy()
    stop_reason = "no_peak"

    if initial_norm == 0.0:
        return Decomposition(
            terms=(),
            residual_norm=0.0,
            half_span=f.half_span,
            count=f.count,
            window_order=p,
            is_real=f.is_real,
            residual_history=tuple(history),
            stop_reason="amplitude_floor",
        )

    def scale_now() -> float:
        return max(np.abs(amps).max() if amps.size else 0.0, initial_norm)

    while True:
        if len(freqs) >= options.max_terms:
            stop_reason = "max_terms"
            break
        if history[-1] < options.amplitude_floor * scale_now():
            stop_reason = "amplitude_floor"
            break

        ws = _PeakWorkspace(residual, f, p)
        if not np.any(ws.weighted):
            stop_reason = "amplitude_floor"
            break
        try:
            nu0, bin_width = _coarse_scan(ws, freqs, min_sep, f.is_real)
        except NoPeakError:
            stop_reason = "no_peak"
            break
        nu = _refine_peak(ws, nu0, bin_width, options.peak_tolerance)

        if f.is_real:
            nu = abs(nu)
            if nu < 1e-3 * min_sep:
                nu = 0.0
                new_freqs = [0.0]
            else:
                new_freqs = [nu, -nu]
        else:
            new_freqs = [nu]

        if any(
            abs(nu_new - nu_old) < min_sep
            for nu_new in new_freqs
            for nu_old in freqs
        ) or (len(new_freqs) == 2 and 2.0 * nu < min_sep):
            stop_reason = "proximity"
            break
        if len(freqs) + len(new_freqs) > options.max_terms:
            stop_reason = "max_terms"
            break

        candidate = freqs + new_freqs
        try:
            new_amps = project(f, candidate, p)
        except IllConditionedError:
            stop_reason = "ill_conditioned"
            break

        new_mod = np.abs(new_amps[len(freqs):]).max()
        if new_mod < options.amplitude_floor * max(np.abs(new_amps).max(), 1e-300):
            stop_reason = "amplitude_floor"
            break

        freqs = candidate
        amps = new_amps
        for nu_new in new_freqs:
            columns.append(np.exp(1j * nu_new * f.times))
        residual = samples - np.column_stack(columns) @ amps
        history.append(_weighted_norm(residual, f, p))

    terms = tuple(SpectralTerm(nu, complex(a)) for nu, a in zip(freqs, amps))
    return Decomposition(
        terms=terms,
        residual_norm=history[-1],
        half_span=f.half_span,
        count=f.count,
        window_order=p,
        is_real=f.is_real,
        residual_history=tuple(history),
        stop_reason=stop_reason,
    )


def write_decomposition(d: Decomposition, path) -> None:
    """Write terms ranked by modulus: rank,frequency,amp_re,amp_im,amp_modulus."""
    order = sorted(
        range(len(d.terms)), key=lambda i: -abs(d.terms[i].amplitude)
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "frequency", "amp_re", "amp_im", "amp_modulus"])
        for rank, i in enumerate(order, start=1):
            term = d.terms[i]
            writer.writerow(
                [
                    rank,
                    FLOAT_FORMAT % term.frequency,
                    FLOAT_FORMAT % term.amplitude.real,
                    FLOAT_FORMAT % term.amplitude.imag,
                    FLOAT_FORMAT % abs(term.amplitude),
                ]
            )
