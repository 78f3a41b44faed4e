"""Built-in dynamical systems and a JSON constructor for user systems.

Every system bundles its vector field with the forcing basis that the
refinement needs and an admissible-state predicate.  Systems are immutable
after construction; the vector fields are pure and reentrant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .refine import ForcingBasis

__all__ = [
    "DynamicalSystem",
    "ModelConfigError",
    "ResonanceError",
    "forced_linear_oscillator",
    "forced_prey_predator",
    "user_system_from_config",
]

TWO_PI = 2.0 * math.pi


class ResonanceError(ValueError):
    """Forcing frequency too close to the proper frequency."""


class ModelConfigError(ValueError):
    """Malformed or inconsistent model configuration."""


@dataclass(frozen=True)
class DynamicalSystem:
    """A first-order system dX/dt = f(X) + g(X, t) ready for refinement.

    ``known_solution`` is the exact forced-equilibrium initial condition
    when one is available analytically (oracle models).  ``refinable`` is
    False for dissipative variants, which may still be integrated for
    comparison plots.
    """

    name: str
    dimension: int
    parameters: dict
    rhs: Callable[[np.ndarray, float], np.ndarray]
    forcing: ForcingBasis
    admissible: Callable[[np.ndarray], bool] = field(default=lambda state: True)
    known_solution: np.ndarray | None = None
    refinable: bool = True


def forced_prey_predator(
    alpha: float, beta: float, gamma: float = 0.0, eta: float = 0.0
) -> DynamicalSystem:
    """Prey/predator densities with a one-per-time-unit seasonal forcing.

        dx1/dt = alpha x1 (1 + gamma cos(2 pi t) - x2 - eta x1)
        dx2/dt = beta x2 (-1 + x1)

    For gamma = 0 and eta = 0 the nontrivial equilibrium is (1, 1) and
    orbits around it are periodic with angular frequency near
    sqrt(alpha beta); eta > 0 damps the oscillations and moves the
    equilibrium to (1, 1 - eta), but makes the system non-refinable.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    if gamma < 0 or eta < 0:
        raise ValueError("gamma and eta must be nonnegative")

    def rhs(state, t):
        x1, x2 = state
        return np.array(
            [
                alpha * x1 * (1.0 + gamma * math.cos(TWO_PI * t) - x2 - eta * x1),
                beta * x2 * (-1.0 + x1),
            ]
        )

    forcing = ForcingBasis(frequencies=(TWO_PI,) if gamma > 0 else ())
    known = np.array([1.0, 1.0 - eta]) if gamma == 0 else None
    return DynamicalSystem(
        name="forced_prey_predator",
        dimension=2,
        parameters={"alpha": alpha, "beta": beta, "gamma": gamma, "eta": eta},
        rhs=rhs,
        forcing=forcing,
        admissible=lambda state: bool(np.all(state > 0.0)),
        known_solution=known,
        refinable=eta == 0.0,
    )


def forced_linear_oscillator(omega: float, gamma: float, nu: float) -> DynamicalSystem:
    """Harmonic oscillator with a cosine drive; exact forced equilibrium.

        dx/dt = y,   dy/dt = -omega^2 x + gamma cos(nu t)

    The particular solution x(t) = gamma cos(nu t) / (omega^2 - nu^2) gives
    the known forced-equilibrium initial condition
    (gamma / (omega^2 - nu^2), 0).  The response of a linear system contains
    no harmonics of the drive, so the forcing basis uses max_order 1; that
    also keeps an integer ratio omega/nu from being mistaken for a forced
    combination.
    """
    if omega <= 0 or nu <= 0:
        raise ValueError("omega and nu must be positive")
    if abs(omega**2 - nu**2) < 1e-6:
        raise ResonanceError(
            f"|omega^2 - nu^2| = {abs(omega**2 - nu**2):.2e} is resonant"
        )

    omega_sq = omega**2

    def rhs(state, t):
        return np.array([state[1], -omega_sq * state[0] + gamma * math.cos(nu * t)])

    forcing = ForcingBasis(frequencies=(nu,) if gamma != 0 else (), max_order=1)
    return DynamicalSystem(
        name="forced_linear_oscillator",
        dimension=2,
        parameters={"omega": omega, "gamma": gamma, "nu": nu},
        rhs=rhs,
        forcing=forcing,
        known_solution=np.array([gamma / (omega_sq - nu**2), 0.0]),
    )


_BUILTINS = {
    "forced_prey_predator": forced_prey_predator,
    "forced_linear_oscillator": forced_linear_oscillator,
}


def _validate_term(term: dict, dimension: int, where: str):
    if not isinstance(term, dict):
        raise ModelConfigError(f"{where}: term must be an object")
    try:
        coefficient = float(term["coefficient"])
        powers = [int(e) for e in term["powers"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelConfigError(f"{where}: {exc}") from None
    if len(powers) != dimension:
        raise ModelConfigError(
            f"{where}: powers has length {len(powers)}, expected {dimension}"
        )
    if any(e < 0 for e in powers):
        raise ModelConfigError(f"{where}: negative exponents are not supported")
    trig = term.get("trig")
    if trig is not None:
        fn = trig.get("function")
        if fn not in ("cos", "sin"):
            raise ModelConfigError(f"{where}: trig function must be 'cos' or 'sin'")
        freq = float(trig.get("frequency", 0.0))
        if freq <= 0:
            raise ModelConfigError(f"{where}: trig frequency must be positive")
        trig = (fn, freq)
    return coefficient, np.array(powers), trig


def _check_forcing_consistency(trig_freqs, basis: ForcingBasis):
    """Every trig frequency must sit on the declared lattice, and every
    declared frequency must actually appear in the time-dependent part."""
    if not trig_freqs:
        if basis.frequencies:
            raise ModelConfigError(
                "forcing frequencies declared but rhs has no time dependence"
            )
        return
    if not basis.frequencies:
        raise ModelConfigError(
            f"rhs uses trig frequency {sorted(trig_freqs)[0]} but no forcing "
            "frequencies are declared"
        )
    top = max(trig_freqs)
    lattice = basis.lattice(-top, top, 1e-6 * max(1.0, top))
    used = set()
    for w in trig_freqs:
        matches = [
            (abs(abs(v) - w), m)
            for v, m in lattice
            if abs(abs(v) - w) <= 1e-9 * max(1.0, w)
        ]
        if not matches:
            raise ModelConfigError(
                f"rhs trig frequency {w} is not an integer combination of the "
                f"declared forcing frequencies {list(basis.frequencies)}"
            )
        combo = min(matches)[1]
        used.update(j for j, mj in enumerate(combo) if mj != 0)
    missing = [
        basis.frequencies[j] for j in range(basis.order) if j not in used
    ]
    if missing:
        raise ModelConfigError(
            f"declared forcing frequencies {missing} never appear in the rhs"
        )


def user_system_from_config(path) -> DynamicalSystem:
    """Build a system from a JSON file.

    Two forms are accepted: ``{"name": <builtin>, "parameters": {...}}``
    for the built-in constructors, or an explicit description with
    ``dimension``, per-dimension ``rhs`` term lists (polynomial in the
    state variables, optionally times cos/sin(c t)), and ``forcing``
    frequencies.  An ``initial_condition`` entry, when present, must match
    the dimension.
    """
    try:
        with open(path) as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ModelConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ModelConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ModelConfigError(f"{path}: top level must be an object")

    name = config.get("name", "user_system")
    if name in _BUILTINS:
        params = config.get("parameters", {})
        if not isinstance(params, dict):
            raise ModelConfigError(f"{path}: parameters must be an object")
        try:
            system = _BUILTINS[name](**params)
        except TypeError as exc:
            raise ModelConfigError(f"{path}: {exc}") from None
        _validate_initial_condition(config, system.dimension, path)
        return system

    try:
        dimension = int(config["dimension"])
        rhs_spec = config["rhs"]
    except KeyError as exc:
        raise ModelConfigError(f"{path}: missing key {exc}") from None
    if dimension < 1:
        raise ModelConfigError(f"{path}: dimension must be positive")
    if not isinstance(rhs_spec, list) or len(rhs_spec) != dimension:
        raise ModelConfigError(
            f"{path}: rhs must list {dimension} term lists, one per dimension"
        )

    compiled = []
    trig_freqs = set()
    for i, terms in enumerate(rhs_spec):
        if not isinstance(terms, list):
            raise ModelConfigError(f"{path}: rhs[{i}] must be a list of terms")
        row = []
        for j, term in enumerate(terms):
            c, powers, trig = _validate_term(term, dimension, f"{path}: rhs[{i}][{j}]")
            row.append((c, powers, trig))
            if trig is not None:
                trig_freqs.add(trig[1])
        compiled.append(row)

    forcing_freqs = tuple(float(v) for v in config.get("forcing", []))
    basis = ForcingBasis(
        frequencies=forcing_freqs,
        max_order=int(config.get("max_order", 10)),
    )
    _check_forcing_consistency(trig_freqs, basis)
    _validate_initial_condition(config, dimension, path)

    def rhs(state, t):
        out = np.zeros(dimension)
        for i, row in enumerate(compiled):
            acc = 0.0
            for c, powers, trig in row:
                value = c * float(np.prod(state**powers))
                if trig is not None:
                    fn, w = trig
                    value *= math.cos(w * t) if fn == "cos" else math.sin(w * t)
                acc += value
            out[i] = acc
        return out

    positive = bool(config.get("positive_states", False))
    if positive:
        admissible = lambda state: bool(np.all(state > 0.0))
    else:
        admissible = lambda state: bool(np.all(np.isfinite(state)))

    return DynamicalSystem(
        name=str(name),
        dimension=dimension,
        parameters={"config": str(path)},
        rhs=rhs,
        forcing=basis,
        admissible=admissible,
    )


def _validate_initial_condition(config: dict, dimension: int, path) -> None:
    ic = config.get("initial_condition")
    if ic is None:
        return
    if not isinstance(ic, list) or len(ic) != dimension:
        raise ModelConfigError(
            f"{path}: initial_condition has {len(ic) if isinstance(ic, list) else '?'}"
            f" components, expected {dimension}"
        )
