"""Uniformly sampled time series and the weighted inner product they carry.

A :class:`Signal` lives on a symmetric grid ``[-T, T]``.  All spectral
operations in this package project onto complex exponentials with respect to
the weighted product

    <f, g> = (1/2T) * integral of f(t) * conj(g(t)) * chi_p(t) dt,

where ``chi_p`` is a power of the Hann window, normalized so that the product
of two identical unit exponentials is 1.  The integral is evaluated by the
composite trapezoid rule on the sample grid; because ``chi_p`` vanishes to
high order at the endpoints, the rule is spectrally accurate here.

Signals are immutable after construction and every function in this module is
pure, so concurrent use needs no coordination.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "GridMismatchError",
    "Signal",
    "SignalFormatError",
    "SUPPORTED_WINDOW_ORDERS",
    "evaluate_phi",
    "inner_product",
    "read_signal",
    "weighted_norm",
    "window_normalization_constant",
    "window_weight",
    "write_signal",
]

SUPPORTED_WINDOW_ORDERS = (0, 1, 2, 3)
DEFAULT_WINDOW_ORDER = 2

#: Significant digits used for every real number we serialize.
FLOAT_FORMAT = "%.17g"

#: Relative tolerance on grid-step uniformity when reading CSV signals.
GRID_UNIFORMITY_RTOL = 1e-9


class SignalFormatError(ValueError):
    """Raised for malformed or non-uniform signal files."""


class GridMismatchError(ValueError):
    """Raised when two signals do not share the same sample grid."""


def _validate_window_order(p: int) -> int:
    if not isinstance(p, (int, np.integer)) or p not in SUPPORTED_WINDOW_ORDERS:
        raise ValueError(
            f"window order must be one of {SUPPORTED_WINDOW_ORDERS}, got {p!r}"
        )
    return int(p)


def window_normalization_constant(p: int) -> float:
    """Coefficient 2^p (p!)^2 / (2p)! that makes the window average to 1."""
    p = _validate_window_order(p)
    return 2.0**p * math.factorial(p) ** 2 / math.factorial(2 * p)


def window_weight(p: int, t, half_span: float):
    """Evaluate the order-``p`` Hann-power weight chi_p(t) on ``[-T, T]``.

    chi_p(t) = 2^p (p!)^2 / (2p)! * (1 + cos(pi t / T))^p

    The cosine argument is scaled by the half-span so that the unit-average
    normalization holds on any window, not just T = 1.  Vanishes (with p
    derivatives) at t = +-T for p >= 1.

    Raises ``ValueError`` if any ``|t| > T`` or if ``T <= 0``.
    """
    p = _validate_window_order(p)
    if half_span <= 0:
        raise ValueError(f"half_span must be positive, got {half_span}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(np.abs(t_arr) > half_span * (1 + 1e-15)):
        raise ValueError("window argument outside [-T, T]")
    values = window_normalization_constant(p) * (
        1.0 + np.cos(np.pi * t_arr / half_span)
    ) ** p
    if np.isscalar(t) or t_arr.ndim == 0:
        return float(values)
    return values


@dataclass(frozen=True, eq=False)
class Signal:
    """Complex samples on the uniform symmetric grid ``[-T, T]``.

    Attributes
    ----------
    samples : np.ndarray
        Complex values; read-only after construction.
    half_span : float
        T > 0; samples sit at ``linspace(-T, T, count)``.
    count : int
        Number of samples, at least 2.
    is_real : bool
        True when every sample has zero imaginary part.  Storage stays
        complex either way; the flag only toggles conjugate-pair handling
        downstream.
    """

    samples: np.ndarray
    half_span: float
    count: int
    is_real: bool

    def __post_init__(self):
        if self.half_span <= 0 or not np.isfinite(self.half_span):
            raise ValueError(f"half_span must be positive, got {self.half_span}")
        if self.count < 2:
            raise ValueError(f"need at least 2 samples, got {self.count}")
        samples = np.asarray(self.samples, dtype=complex)
        if samples.ndim != 1 or samples.shape[0] != self.count:
            raise ValueError("samples must be a 1-d array of length count")
        if self.is_real and np.any(samples.imag != 0.0):
            raise ValueError("is_real signal has nonzero imaginary parts")
        samples = samples.copy()
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @classmethod
    def from_samples(cls, samples, half_span: float) -> "Signal":
        """Build a signal, inferring ``count`` and ``is_real``."""
        arr = np.asarray(samples, dtype=complex)
        return cls(
            samples=arr,
            half_span=float(half_span),
            count=arr.shape[0],
            is_real=bool(np.all(arr.imag == 0.0)),
        )

    @cached_property
    def times(self) -> np.ndarray:
        t = np.linspace(-self.half_span, self.half_span, self.count)
        t.setflags(write=False)
        return t

    @property
    def step(self) -> float:
        return 2.0 * self.half_span / (self.count - 1)

    def same_grid(self, other: "Signal") -> bool:
        return self.count == other.count and math.isclose(
            self.half_span, other.half_span, rel_tol=1e-12, abs_tol=0.0
        )


def _quadrature_weights(count: int) -> np.ndarray:
    w = np.ones(count)
    w[0] = 0.5
    w[-1] = 0.5
    return w


def inner_product(f: Signal, g: Signal, p: int = DEFAULT_WINDOW_ORDER) -> complex:
    """Weighted product <f, g> by composite trapezoid on the shared grid.

    Conjugate-linear in ``g``.  Raises :class:`GridMismatchError` when the
    signals do not share half-span and sample count.
    """
    p = _validate_window_order(p)
    if not f.same_grid(g):
        raise GridMismatchError(
            f"grids differ: (T={f.half_span}, n={f.count}) vs "
            f"(T={g.half_span}, n={g.count})"
        )
    chi = window_weight(p, f.times, f.half_span)
    w = _quadrature_weights(f.count)
    integrand = f.samples * np.conj(g.samples) * chi * w
    return complex(integrand.sum() * (f.step / (2.0 * f.half_span)))


def weighted_norm(f: Signal, p: int = DEFAULT_WINDOW_ORDER) -> float:
    """sqrt(<f, f>); the imaginary part is zero up to rounding."""
    return math.sqrt(max(inner_product(f, f, p).real, 0.0))


def evaluate_phi(f: Signal, nu: float, p: int = DEFAULT_WINDOW_ORDER) -> complex:
    """Projection amplitude phi(nu) = <f, exp(i nu t)> on f's grid."""
    if not np.isfinite(nu):
        raise ValueError(f"frequency must be finite, got {nu}")
    p = _validate_window_order(p)
    chi = window_weight(p, f.times, f.half_span)
    w = _quadrature_weights(f.count)
    weighted = f.samples * chi * w
    phase = np.exp(-1j * nu * f.times)
    return complex((weighted * phase).sum() * (f.step / (2.0 * f.half_span)))


def _format_float(x: float) -> str:
    return FLOAT_FORMAT % x


def write_signal(signal: Signal, path) -> None:
    """Write ``t,re[,im]`` CSV with 17 significant digits per value.

    The ``im`` column is omitted for real signals, so a read/write round
    trip preserves ``is_real``.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if signal.is_real:
            writer.writerow(["t", "re"])
            for t, z in zip(signal.times, signal.samples):
                writer.writerow([_format_float(t), _format_float(z.real)])
        else:
            writer.writerow(["t", "re", "im"])
            for t, z in zip(signal.times, signal.samples):
                writer.writerow(
                    [_format_float(t), _format_float(z.real), _format_float(z.imag)]
                )


def read_signal(path) -> Signal:
    """Read a ``t,re[,im]`` CSV into a :class:`Signal`.

    The time column must be strictly increasing, equispaced (relative step
    deviation at most 1e-9) and symmetric about zero.  A missing or all-zero
    ``im`` column marks the signal real.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SignalFormatError(f"{path}: empty file") from None
        header = [h.strip().lower() for h in header]
        if header == ["t", "re"]:
            has_im = False
        elif header == ["t", "re", "im"]:
            has_im = True
        else:
            raise SignalFormatError(
                f"{path}: expected header 't,re[,im]', got {','.join(header)}"
            )
        times = []
        values = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SignalFormatError(
                    f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}"
                )
            try:
                t = float(row[0])
                re = float(row[1])
                im = float(row[2]) if has_im else 0.0
            except ValueError as exc:
                raise SignalFormatError(f"{path}:{lineno}: {exc}") from None
            times.append(t)
            values.append(complex(re, im))
    if len(times) < 2:
        raise SignalFormatError(f"{path}: need at least 2 samples, got {len(times)}")

    t_arr = np.asarray(times)
    steps = np.diff(t_arr)
    if np.any(steps <= 0):
        raise SignalFormatError(f"{path}: time column must be strictly increasing")
    mean_step = steps.mean()
    if np.max(np.abs(steps - mean_step)) > GRID_UNIFORMITY_RTOL * mean_step:
        raise SignalFormatError(f"{path}: non-uniform time grid")
    half_span = 0.5 * (t_arr[-1] - t_arr[0])
    if abs(t_arr[0] + t_arr[-1]) > GRID_UNIFORMITY_RTOL * max(half_span, 1.0):
        raise SignalFormatError(
            f"{path}: time grid must be symmetric about zero "
            f"(spans [{t_arr[0]}, {t_arr[-1]}])"
        )
    arr = np.asarray(values)
    return Signal(
        samples=arr,
        half_span=float(half_span),
        count=len(values),
        is_real=bool(np.all(arr.imag == 0.0)),
    )
