from __future__ import annotations

import numpy as np
import pytest

from liftlab.liftcheck import (
    LiftEntry,
    apply_lifted_generator,
    check_first_order,
    check_pair,
    check_second_order,
    generator_on_position_function,
    reflect_batch,
    run_dictionary,
)
from liftlab.model import TargetMeasure, TestFunction, double_well_potential, quadratic_potential
from liftlab.samplers import LIFTS, PhaseState, sample_target

X = TestFunction.from_1d([0, 1], name="x")
X2M1 = TestFunction.from_1d([-1, 0, 1], name="x^2-1")
X3 = TestFunction.from_1d([0, 0, 0, 1], name="x^3")
GAUSS = TargetMeasure(quadratic_potential(1.0))
DW = TargetMeasure(double_well_potential(0.5))


@pytest.fixture(scope="module")
def gauss_stream():
    return sample_target(GAUSS, 1_000_000, seed=1)


@pytest.fixture(scope="module")
def dw_stream():
    return sample_target(DW, 1_000_000, seed=2)


def test_apply_lifted_generator_examples():
    assert apply_lifted_generator(X, PhaseState(np.array([3.0]), np.array([2.0]))) == 2.0
    assert apply_lifted_generator(X2M1, PhaseState(np.array([1.0]), np.array([-1.0]))) == -2.0
    assert apply_lifted_generator(X3, PhaseState(np.array([1.7]), np.array([0.0]))) == 0.0


def test_reflect_batch_leaves_zero_gradient_rows():
    v = np.array([[1.0, 2.0], [2.0, 3.0]])
    grad = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert np.array_equal(reflect_batch(v, grad), [[1.0, 2.0], [-2.0, 3.0]])


@pytest.mark.parametrize("f,g", [(X, X), (X2M1, X), (X, X3)])
def test_first_order_examples(f, g, gauss_stream, dw_stream):
    stream = dw_stream if f is X2M1 else gauss_stream
    m, se = check_first_order(f, g, stream)
    assert se > 0 and abs(m) <= 4 * se


@pytest.mark.parametrize("f,g,target", [(X, X, 0.5), (X2M1, X2M1, 2.0), (X, X2M1, 0.0)])
def test_second_order_examples(f, g, target, gauss_stream):
    m, se = check_second_order(f, g, gauss_stream)
    assert abs(m - target) <= 4 * se


def test_second_order_mixed_on_double_well(dw_stream):
    entry = check_pair(X, X2M1, DW, dw_stream, "langevin")
    assert entry.dirichlet == pytest.approx(0.0, abs=1e-14)
    assert entry.passed


def test_entry_pass_rule():
    e = LiftEntry("f", "g", 0.3, 0.1, 1.0, 0.1, 0.5, 4.0)
    assert e.first_pass and not e.second_pass and not e.passed
    assert LiftEntry("f", "g", 0.0, 0.0, 0.5, 0.0, 0.5, 4.0).passed


def test_degree_zero_dictionary_is_trivial(gauss_stream):
    report = run_dictionary("bps", GAUSS, 0, gauss_stream.size, stream=gauss_stream)
    (entry,) = report.entries
    assert entry.first_order == 0.0 and entry.second_order == 0.0 and entry.dirichlet == 0.0
    assert report.passed


def test_degree_one_gaussian_dictionary_passes(gauss_stream):
    report = run_dictionary("langevin", GAUSS, 1, gauss_stream.size, stream=gauss_stream)
    assert len(report.entries) == 4 and report.passed
    d = report.to_dict()
    assert d["passed"] and all(e["first_order_se"] >= 0 for e in d["entries"])


def test_degree_four_double_well_dictionary_passes(dw_stream):
    report = run_dictionary("rhmc", DW, 4, dw_stream.size, stream=dw_stream)
    assert len(report.entries) == 25 and report.passed


def test_second_order_symmetric_bitwise(dw_stream):
    f, g = X2M1, X3
    for process in LIFTS:
        a = check_second_order(f, g, dw_stream, process, DW.potential)
        b = check_second_order(g, f, dw_stream, process, DW.potential)
        assert a == b


def test_process_independence_bitwise(gauss_stream):
    state = PhaseState(*gauss_stream.flat())
    base = apply_lifted_generator(X3, state)
    for process in LIFTS:
        out = generator_on_position_function(process, X3, state, GAUSS.potential, gamma=2.5)
        assert out.tobytes() == base.tobytes()
    reports = [run_dictionary(p, GAUSS, 2, gauss_stream.size, stream=gauss_stream).to_dict()["entries"] for p in LIFTS]
    assert reports[0] == reports[1] == reports[2]


def test_unknown_process_rejected(gauss_stream):
    with pytest.raises(ValueError):
        run_dictionary("overdamped", GAUSS, 1, 10, stream=gauss_stream)
    with pytest.raises(ValueError):
        generator_on_position_function("teleport", X, PhaseState(np.zeros(1), np.ones(1)))


def test_standard_error_halves_when_samples_quadruple():
    hits = 0
    for rep in range(20):
        small = sample_target(GAUSS, 10_000, seed=100 + rep)
        large = sample_target(GAUSS, 40_000, seed=200 + rep)
        ratio = check_second_order(X2M1, X2M1, large)[1] / check_second_order(X2M1, X2M1, small)[1]
        hits += 0.4 <= ratio <= 0.6
    assert hits > 10
