import json
import time

import numpy as np
import pytest

from forcedeq.cli import main as cli_main
from forcedeq.integrate import IntegratorOptions
from forcedeq.naff import Decomposition, NaffOptions, SpectralTerm
from forcedeq.refine import RefineOptions, refine
from forcedeq.models import forced_linear_oscillator
from forcedeq.signals import Signal

# Reference values for the forced prey-predator benchmark run
# (alpha=4.539, beta=1.068, gamma=0.25, eta=0 from (1, 1)).
TABLE1_TARGET_IC = (0.989186576347806, 0.965545142191327)
TABLE1_A0 = (3.831163e-2, 1.854280e-2)
TABLE1_X1 = (0.989166714745100, 0.965514795157481)
TABLE1_OMEGA0 = 2.206634
TABLE1_OMEGA = 2.207483


def make_signal(fn, half_span, count):
    t = np.linspace(-half_span, half_span, count)
    return Signal.from_samples(fn(t), half_span)


def make_decomposition(term_pairs, half_span=100.0, count=4096, is_real=True):
    """Hand-built decomposition for classification-level tests."""
    terms = tuple(SpectralTerm(f, complex(a)) for f, a in term_pairs)
    return Decomposition(
        terms=terms,
        residual_norm=0.0,
        half_span=half_span,
        count=count,
        window_order=2,
        is_real=is_real,
        residual_history=(1.0, 0.0),
        stop_reason="max_terms",
    )


@pytest.fixture(scope="session")
def table1_run(tmp_path_factory):
    """One full reproduce-table1 run shared by every test that needs it."""
    out = tmp_path_factory.mktemp("table1")
    start = time.perf_counter()
    code = cli_main(["reproduce-table1", "--output-dir", str(out)])
    elapsed = time.perf_counter() - start
    with open(out / "refinement_log.json") as fh:
        log = json.load(fh)
    report = (out / "report.txt").read_text()
    return {
        "exit_code": code,
        "log": log,
        "report": report,
        "dir": out,
        "elapsed": elapsed,
    }


@pytest.fixture(scope="session")
def oscillator_log():
    """Refinement of the driven linear oscillator from rest."""
    system = forced_linear_oscillator(2.0, 0.1, 1.0)
    options = RefineOptions(
        half_span=320.0,
        naff=NaffOptions(max_terms=8),
        integrator=IntegratorOptions(rel_tol=1e-13, abs_tol=1e-13,
                                     output_count=2**13),
        amplitude_floor=1e-12,
        max_iterations=4,
    )
    start = time.perf_counter()
    log = refine(system, [0.0, 0.0], options)
    elapsed = time.perf_counter() - start
    return system, options, log, elapsed
