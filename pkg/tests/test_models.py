import json
import math

import numpy as np
import pytest

from forcedeq.models import (
    ModelConfigError,
    ResonanceError,
    forced_linear_oscillator,
    forced_prey_predator,
    user_system_from_config,
)

TWO_PI = 2 * math.pi


def numeric_jacobian(rhs, state, t=0.0, h=1e-7):
    n = state.size
    jac = np.empty((n, n))
    for j in range(n):
        plus = state.copy()
        minus = state.copy()
        plus[j] += h
        minus[j] -= h
        jac[:, j] = (rhs(plus, t) - rhs(minus, t)) / (2 * h)
    return jac


class TestPreyPredator:
    def test_equilibrium_unforced(self):
        system = forced_prey_predator(4.539, 1.068, 0.0, 0.0)
        assert np.allclose(system.rhs(np.array([1.0, 1.0]), 0.3), 0.0)
        assert np.allclose(system.known_solution, [1.0, 1.0])

    def test_equilibrium_with_self_limitation(self):
        eta = 0.02
        system = forced_prey_predator(4.539, 1.068, 0.0, eta)
        assert np.allclose(system.rhs(np.array([1.0, 1.0 - eta]), 1.7), 0.0, atol=1e-15)
        assert np.allclose(system.known_solution, [1.0, 1.0 - eta])
        assert not system.refinable

    def test_linearized_frequency(self):
        # eigenvalues of the Jacobian at (1, 1) are +- i sqrt(alpha beta)
        system = forced_prey_predator(4.539, 1.068, 0.0, 0.0)
        jac = numeric_jacobian(system.rhs, np.array([1.0, 1.0]))
        eig = np.linalg.eigvals(jac)
        assert np.abs(eig.imag).max() == pytest.approx(
            math.sqrt(4.539 * 1.068), abs=1e-5
        )
        assert math.sqrt(4.539 * 1.068) == pytest.approx(2.20174, abs=1e-5)

    def test_forcing_basis_tracks_gamma(self):
        forced = forced_prey_predator(4.539, 1.068, 0.25, 0.0)
        assert forced.forcing.frequencies == (TWO_PI,)
        static = forced_prey_predator(4.539, 1.068, 0.0, 0.0)
        assert static.forcing.frequencies == ()

    def test_parameter_domain(self):
        with pytest.raises(ValueError):
            forced_prey_predator(0.0, 1.0)
        with pytest.raises(ValueError):
            forced_prey_predator(1.0, 1.0, gamma=-0.1)

    def test_admissible_positive_densities(self):
        system = forced_prey_predator(1.0, 1.0)
        assert system.admissible(np.array([0.5, 2.0]))
        assert not system.admissible(np.array([-0.5, 2.0]))


class TestLinearOscillator:
    def test_known_solution(self):
        system = forced_linear_oscillator(2.0, 0.1, 1.0)
        assert np.allclose(system.known_solution, [0.1 / 3.0, 0.0])

    def test_particular_solution_satisfies_ode(self):
        # substitute x(t) = gamma cos(nu t)/(omega^2 - nu^2) into the field
        omega, gamma, nu = 2.0, 0.1, 1.0
        system = forced_linear_oscillator(omega, gamma, nu)
        c = gamma / (omega**2 - nu**2)
        for t in (0.0, 0.3, 2.9):
            x = c * math.cos(nu * t)
            y = -c * nu * math.sin(nu * t)
            dx, dy = system.rhs(np.array([x, y]), t)
            assert dx == pytest.approx(y, abs=1e-14)
            assert dy == pytest.approx(-c * nu**2 * math.cos(nu * t), abs=1e-14)

    def test_zero_drive(self):
        system = forced_linear_oscillator(2.0, 0.0, 1.0)
        assert np.allclose(system.known_solution, [0.0, 0.0])
        assert system.forcing.frequencies == ()

    def test_resonance_rejected(self):
        with pytest.raises(ResonanceError):
            forced_linear_oscillator(1.0, 0.1, 1.0)

    def test_linear_basis_order_one(self):
        system = forced_linear_oscillator(2.0, 0.1, 1.0)
        assert system.forcing.max_order == 1


class TestConfigLoading:
    def test_builtin_equivalence(self, tmp_path):
        config = {
            "name": "forced_prey_predator",
            "parameters": {"alpha": 4.539, "beta": 1.068, "gamma": 0.25, "eta": 0.0},
        }
        path = tmp_path / "model.json"
        path.write_text(json.dumps(config))
        system = user_system_from_config(path)
        direct = forced_prey_predator(4.539, 1.068, 0.25, 0.0)
        state = np.array([1.1, 0.9])
        for t in (0.0, 0.37, 5.0):
            assert np.allclose(system.rhs(state, t), direct.rhs(state, t))
        assert system.forcing.frequencies == direct.forcing.frequencies

    def test_custom_rhs_evaluation(self, tmp_path):
        # dx/dt = -0.5 x + 0.2 cos(2t), dy/dt = x y
        config = {
            "name": "toy",
            "dimension": 2,
            "rhs": [
                [
                    {"coefficient": -0.5, "powers": [1, 0]},
                    {"coefficient": 0.2, "powers": [0, 0],
                     "trig": {"function": "cos", "frequency": 2.0}},
                ],
                [{"coefficient": 1.0, "powers": [1, 1]}],
            ],
            "forcing": [2.0],
        }
        path = tmp_path / "toy.json"
        path.write_text(json.dumps(config))
        system = user_system_from_config(path)
        state = np.array([0.3, 0.7])
        expected = np.array(
            [-0.5 * 0.3 + 0.2 * math.cos(2.0 * 0.9), 0.3 * 0.7]
        )
        assert np.allclose(system.rhs(state, 0.9), expected)

    def test_trig_frequency_at_lattice_edge(self, tmp_path):
        config = {
            "name": "edge",
            "dimension": 1,
            "rhs": [[{"coefficient": 1.0, "powers": [0],
                      "trig": {"function": "cos", "frequency": 2.0}}]],
            "forcing": [2.0],
        }
        path = tmp_path / "edge.json"
        path.write_text(json.dumps(config))
        system = user_system_from_config(path)
        assert system.forcing.frequencies == (2.0,)

    def test_undeclared_trig_frequency(self, tmp_path):
        config = {
            "name": "bad",
            "dimension": 1,
            "rhs": [
                [{"coefficient": 1.0, "powers": [0],
                  "trig": {"function": "cos", "frequency": 3.0}}]
            ],
            "forcing": [TWO_PI],
        }
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(config))
        with pytest.raises(ModelConfigError):
            user_system_from_config(path)

    def test_declared_frequency_must_appear(self, tmp_path):
        config = {
            "name": "bad2",
            "dimension": 1,
            "rhs": [[{"coefficient": -1.0, "powers": [1]}]],
            "forcing": [2.0],
        }
        path = tmp_path / "bad2.json"
        path.write_text(json.dumps(config))
        with pytest.raises(ModelConfigError):
            user_system_from_config(path)

    def test_dimension_mismatch_in_initial_condition(self, tmp_path):
        config = {
            "name": "bad3",
            "dimension": 2,
            "rhs": [
                [{"coefficient": -1.0, "powers": [1, 0]}],
                [{"coefficient": -1.0, "powers": [0, 1]}],
            ],
            "forcing": [],
            "initial_condition": [1.0, 2.0, 3.0],
        }
        path = tmp_path / "bad3.json"
        path.write_text(json.dumps(config))
        with pytest.raises(ModelConfigError):
            user_system_from_config(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ModelConfigError):
            user_system_from_config(path)
