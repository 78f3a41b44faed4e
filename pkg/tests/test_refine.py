import math

import numpy as np
import pytest

from forcedeq.integrate import IntegratorOptions
from forcedeq.models import forced_linear_oscillator, forced_prey_predator
from forcedeq.naff import NaffOptions
from forcedeq.refine import (
    DivergenceError,
    ForcingBasis,
    InsufficientDataError,
    IterationRecord,
    PairingError,
    RefineOptions,
    RefinementLog,
    classify,
    estimate_convergence_rate,
    forced_value_at_zero,
    free_value_at_zero,
    refine,
)

from conftest import make_decomposition

TWO_PI = 2 * math.pi


class TestForcingBasis:
    def test_lattice_single_frequency(self):
        basis = ForcingBasis(frequencies=(TWO_PI,), max_order=3)
        values = sorted(v for v, _ in basis.lattice(-100, 100, 0.0))
        assert values == pytest.approx(
            [m * TWO_PI for m in range(-3, 4)]
        )

    def test_empty_basis_has_only_zero(self):
        basis = ForcingBasis()
        assert basis.lattice(-10, 10, 0.0) == [(0.0, ())]

    def test_two_frequencies_l1_budget(self):
        basis = ForcingBasis(frequencies=(1.0, math.sqrt(2)), max_order=2)
        combos = {m for _, m in basis.lattice(-10, 10, 0.0)}
        assert (1, 1) in combos
        assert (2, 0) in combos
        assert (1, 2) not in combos  # |m|_1 = 3 exceeds the budget

    def test_nonpositive_frequency_rejected(self):
        with pytest.raises(ValueError):
            ForcingBasis(frequencies=(0.0,))

    def test_rationally_dependent_rejected(self):
        with pytest.raises(ValueError):
            ForcingBasis(frequencies=(1.0, 2.0), max_order=3, match_tolerance=1e-6)


class TestClassify:
    def test_lattice_matching(self):
        d = make_decomposition(
            [(0.0, 0.9), (TWO_PI, 0.1), (2 * TWO_PI, 0.01), (2.2066, 0.05)]
        )
        basis = ForcingBasis(frequencies=(TWO_PI,), max_order=3)
        c = classify(d, basis)
        forced_freqs = sorted(term.frequency for term, _ in c.forced)
        assert forced_freqs == pytest.approx([0.0, TWO_PI, 2 * TWO_PI])
        assert [t.frequency for t in c.free] == [2.2066]
        assert c.proper_frequency_estimate == pytest.approx(2.2066)
        combos = {term.frequency: m for term, m in c.forced}
        assert combos[0.0] == (0,)
        assert combos[TWO_PI] == (1,)
        assert combos[2 * TWO_PI] == (2,)

    def test_empty_decomposition(self):
        c = classify(make_decomposition([]), ForcingBasis(frequencies=(TWO_PI,)))
        assert c.forced == ()
        assert c.free == ()
        assert c.proper_frequency_estimate is None

    def test_static_basis_only_constant_forced(self):
        d = make_decomposition([(0.0, 1.0), (1.7, 0.2)])
        c = classify(d, ForcingBasis())
        assert [term.frequency for term, _ in c.forced] == [0.0]
        assert [t.frequency for t in c.free] == [1.7]

    def test_partition(self):
        d = make_decomposition(
            [(0.0, 1.0), (TWO_PI, 0.1), (-TWO_PI, 0.1), (2.2, 0.05), (-2.2, 0.05)]
        )
        c = classify(d, ForcingBasis(frequencies=(TWO_PI,)))
        forced = {term.frequency for term, _ in c.forced}
        free = {t.frequency for t in c.free}
        assert forced | free == {t.frequency for t in d.terms}
        assert forced & free == set()

    def test_negative_lattice_matching_for_real_signals(self):
        d = make_decomposition([(-TWO_PI, 0.1)])
        c = classify(d, ForcingBasis(frequencies=(TWO_PI,)))
        assert len(c.forced) == 1
        assert c.forced[0][1] == (-1,)

    def test_omega_from_largest_free(self):
        d = make_decomposition([(2.2, 0.01), (3.9, 0.5)])
        c = classify(d, ForcingBasis(frequencies=(TWO_PI,)))
        assert c.proper_frequency_estimate == pytest.approx(3.9)


class TestForcedValueAtZero:
    def test_single_constant(self):
        d = make_decomposition([(0.0, 0.9892)])
        c = classify(d, ForcingBasis(frequencies=(TWO_PI,)))
        assert forced_value_at_zero(c, d) == pytest.approx(0.9892)

    def test_conjugate_pair(self):
        a = 0.1 + 0.05j
        d = make_decomposition([(TWO_PI, a), (-TWO_PI, a.conjugate())])
        c = classify(d, ForcingBasis(frequencies=(TWO_PI,)))
        assert forced_value_at_zero(c, d) == pytest.approx(0.2)

    def test_broken_pairing_raises(self):
        d = make_decomposition([(TWO_PI, 0.1 + 0.05j)])
        c = classify(d, ForcingBasis(frequencies=(TWO_PI,)))
        with pytest.raises(PairingError):
            forced_value_at_zero(c, d)

    def test_classification_must_match_decomposition(self):
        d1 = make_decomposition([(0.0, 1.0)])
        d2 = make_decomposition([(0.0, 2.0)])
        c = classify(d1, ForcingBasis())
        with pytest.raises(ValueError):
            forced_value_at_zero(c, d2)

    def test_free_value_counterpart(self):
        d = make_decomposition([(0.0, 1.0), (2.2, 0.1 - 0.2j), (-2.2, 0.1 + 0.2j)])
        c = classify(d, ForcingBasis())
        assert free_value_at_zero(c, d) == pytest.approx(0.2)


def synthetic_log(amplitudes, stop_reason="max_iterations"):
    records = [
        IterationRecord(
            index=n,
            initial_condition=(0.0,),
            decompositions=(),
            classifications=(),
            free_amplitudes=(a,),
            largest_free_amplitude=a,
            proper_frequency=None,
            next_initial_condition=(0.0,),
        )
        for n, a in enumerate(amplitudes)
    ]
    return RefinementLog(
        iterations=records,
        converged=stop_reason == "amplitude_floor",
        stop_reason=stop_reason,
        refined_initial_condition=(0.0,),
    )


class TestConvergenceRate:
    def test_exact_quadratic(self):
        amps = [1e-2]
        for _ in range(4):
            amps.append(amps[-1] ** 2)
        log = synthetic_log(amps)
        assert estimate_convergence_rate(log) == pytest.approx(2.0, abs=1e-9)

    def test_linear_contraction(self):
        amps = [0.01 * 0.5**n for n in range(25)]
        log = synthetic_log(amps)
        assert estimate_convergence_rate(log) == pytest.approx(1.0, abs=1e-9)

    def test_floor_excludes_noise_iterations(self):
        # quadratic until the numerical floor, then two stalled values
        amps = [1e-2, 2e-5, 8e-11, 3e-13, 3.2e-13]
        log = synthetic_log(amps, stop_reason="stagnation")
        rate = estimate_convergence_rate(log, floor=1e-13)
        assert 1.7 < rate < 2.3

    def test_insufficient_data(self):
        log = synthetic_log([1e-2, 1e-4])
        with pytest.raises(InsufficientDataError):
            estimate_convergence_rate(log)
        log2 = synthetic_log([1e-2, 1e-15, 1e-15], stop_reason="stagnation")
        with pytest.raises(InsufficientDataError):
            estimate_convergence_rate(log2)

    def test_all_zero_amplitudes(self):
        # a run that starts on the equilibrium measures no free content
        log = synthetic_log([0.0, 0.0, 0.0], stop_reason="amplitude_floor")
        with pytest.raises(InsufficientDataError):
            estimate_convergence_rate(log)


class TestRefineOscillator:
    def test_reaches_analytic_solution(self, oscillator_log):
        system, options, log, _ = oscillator_log
        refined = np.asarray(log.refined_initial_condition)
        assert log.converged
        assert len(log.iterations) <= 3
        assert abs(refined[0] - 1.0 / 30.0) < 1e-10
        assert abs(refined[1]) < 1e-10

    def test_first_update_lands_on_solution(self, oscillator_log):
        system, options, log, _ = oscillator_log
        x1 = np.asarray(log.iterations[0].next_initial_condition)
        assert np.abs(x1 - system.known_solution).max() < 1e-10

    def test_fixed_point_stability(self, oscillator_log):
        system, options, log, _ = oscillator_log
        start = np.asarray(log.refined_initial_condition)
        stable = refine(system, start, options)
        assert stable.iterations[0].largest_free_amplitude <= 10 * options.amplitude_floor
        x1 = np.asarray(stable.iterations[0].next_initial_condition)
        assert np.abs(x1 - start).max() < 1e-9

    def test_iteration_identity(self, oscillator_log):
        # X_{n+1} = X_n - (free part at model time zero), per dimension
        system, options, log, _ = oscillator_log
        rec = log.iterations[0]
        for k in range(system.dimension):
            forced = forced_value_at_zero(rec.classifications[k], rec.decompositions[k])
            free = free_value_at_zero(rec.classifications[k], rec.decompositions[k])
            assert forced == pytest.approx(rec.initial_condition[k] - free, abs=1e-9)


class TestRefineStatic:
    def test_static_prey_predator(self):
        system = forced_prey_predator(4.539, 1.068, 0.0, 0.0)
        options = RefineOptions(
            half_span=128.0,
            integrator=IntegratorOptions(output_count=2**13),
            amplitude_floor=1e-12,
            max_iterations=6,
        )
        log = refine(system, [1.05, 1.0], options)
        refined = np.asarray(log.refined_initial_condition)
        assert log.converged
        assert np.abs(refined - 1.0).max() < 1e-10

    def test_divergence_raises(self):
        system = forced_prey_predator(4.539, 1.068, 0.25, 0.0)
        options = RefineOptions(
            half_span=32.0,
            integrator=IntegratorOptions(output_count=2**12),
            max_iterations=2,
        )
        with pytest.raises(DivergenceError):
            refine(system, [-1.0, 1.0], options)

    def test_dissipative_system_rejected(self):
        system = forced_prey_predator(4.539, 1.068, 0.0, 0.02)
        options = RefineOptions(half_span=32.0)
        with pytest.raises(ValueError):
            refine(system, [1.0, 1.0], options)


class TestOptionsValidation:
    def test_half_span_positive(self):
        with pytest.raises(ValueError):
            RefineOptions(half_span=0.0)

    def test_stop_mode(self):
        with pytest.raises(ValueError):
            RefineOptions(half_span=10.0, stop_mode="whenever")


class TestAmbiguousMatch:
    def test_two_lattice_points_in_tolerance(self):
        # basis (1.0, 2.05): lattice holds both 2*1.0 = 2.0 and 2.05; a line
        # at 2.02 sits within pi/T = 0.0314 of both -> flagged, nearest wins
        basis = ForcingBasis(frequencies=(1.0, 2.05), max_order=4)
        d = make_decomposition([(2.02, 0.3)], half_span=100.0)
        c = classify(d, basis)
        assert len(c.forced) == 1
        assert c.ambiguous == (2.02,)
        assert c.forced[0][1] == (2, 0)  # 2.0 is nearer than 2.05


class TestForcedPurityStop:
    def test_oscillator_converges_under_purity_rule(self):
        from forcedeq.models import forced_linear_oscillator

        system = forced_linear_oscillator(2.0, 0.1, 1.0)
        options = RefineOptions(
            half_span=320.0,
            naff=NaffOptions(max_terms=8),
            integrator=IntegratorOptions(rel_tol=1e-13, abs_tol=1e-13,
                                         output_count=2**13),
            max_iterations=4,
            stop_mode="forced-purity",
        )
        log = refine(system, [0.0, 0.0], options)
        # smallest forced amplitude is nu/60 at the drive line; the free
        # remainder after one update sits far below 1e-6 of it
        assert log.converged
        assert len(log.iterations) == 2


class TestTable1PaperValues:
    def test_iteration0_proper_frequency(self, table1_run):
        from conftest import TABLE1_OMEGA0

        omega0 = table1_run["log"]["iterations"][0]["proper_frequency"]
        assert omega0 == pytest.approx(TABLE1_OMEGA0, abs=1e-4)

    def test_first_update_matches_reference_value(self, table1_run):
        from conftest import TABLE1_X1

        x1 = table1_run["log"]["iterations"][0]["next_initial_condition"]
        assert abs(x1[0] - TABLE1_X1[0]) < 1e-6
        assert abs(x1[1] - TABLE1_X1[1]) < 1e-6

    def test_iteration1_amplitude(self, table1_run):
        a1 = table1_run["log"]["iterations"][1]["largest_free_amplitude"]
        assert a1 == pytest.approx(3.573335e-5, rel=0.05)

    def test_monotone_amplitude_decay(self, table1_run):
        amps = [
            it["largest_free_amplitude"] for it in table1_run["log"]["iterations"]
        ]
        assert all(b < a for a, b in zip(amps, amps[1:]))

    def test_proper_frequency_stabilizes(self, table1_run):
        iters = [
            it for it in table1_run["log"]["iterations"]
            if it["largest_free_amplitude"] > 1e-11
        ]
        omegas = [it["proper_frequency"] for it in iters]
        diffs = [abs(b - a) for a, b in zip(omegas, omegas[1:])]
        assert all(d2 < d1 for d1, d2 in zip(diffs, diffs[1:]))
