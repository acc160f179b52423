from collections.abc import Callable

import numpy as np
import pytest
from numpy.typing import NDArray

from swarm_ltl.geometry import (ControlInput, Formation, SwarmState, centroid,
                                check_positive_definite, displacement, grad_h_formation,
                                grad_h_obstacle, grad_h_separation, grad_h_waypoint,
                                h_formation, h_obstacle, h_separation, h_waypoint, pairs)

TRIANGLE = Formation("f3", {(0, 1): (-0.35, -0.45), (0, 2): (-0.7, 0.0), (1, 2): (-0.35, 0.45)})


def test_centroid() -> None:
    assert centroid(SwarmState.from_points([(0, 0), (1, 0), (2, 0)])).tolist() == [1, 0]
    assert centroid(SwarmState.from_points([(0, 0), (0, 3), (3, 0)])).tolist() == [1, 1]
    assert centroid(SwarmState.from_points([(2.5, -1)] * 4)).tolist() == [2.5, -1]


def test_centroid_translation_equivariant() -> None:
    rng = np.random.default_rng(1)
    s = SwarmState(rng.normal(size=(5, 2)))
    t = np.array((3.0, -2.0))
    assert np.allclose(centroid(s.translate(t)), centroid(s) + t)


def test_displacement() -> None:
    s = SwarmState.from_points([(1, 1), (0, 0)])
    assert displacement(s, 0, 1).tolist() == [1, 1]
    assert displacement(s, 1, 0).tolist() == [-1, -1]
    assert displacement(SwarmState.from_points([(2, 0), (5, 4)]), 1, 0).tolist() == [3, 4]


def test_displacement_errors() -> None:
    s = SwarmState.from_points([(1, 1), (0, 0)])
    with pytest.raises(IndexError):
        displacement(s, 0, 2)
    with pytest.raises(ValueError, match="two different"):
        displacement(s, 1, 1)


def test_swarm_state_validation() -> None:
    with pytest.raises(ValueError, match="at least 2"):
        SwarmState.from_points([(0, 0)])
    with pytest.raises(ValueError, match="finite"):
        SwarmState(np.array([(0.0, np.nan), (1.0, 1.0)]))
    with pytest.raises(ValueError):
        ControlInput(np.zeros((2, 3)))


def test_scalar_functions() -> None:
    assert h_waypoint((1, 1), (1, 1), 0.1) == pytest.approx(-0.01)
    assert h_waypoint((3, 4), (0, 0), 1.0) == pytest.approx(24)
    assert h_waypoint((0.6, 0.8), (0, 0), 1.0) == pytest.approx(0)
    assert h_formation((1, 0), (0, 0), 1.0) == pytest.approx(0)
    assert h_formation((2, 0), (0, 1), 0.5) == pytest.approx(4.75)
    assert h_separation((0, 0), 0.3) == pytest.approx(-0.09)
    assert h_separation((0.6, 0.8), 0.5) == pytest.approx(0.75)
    assert h_obstacle((2, 3), (2, 3), np.eye(2)) == pytest.approx(1)
    assert h_obstacle((1, 0), (0, 0), np.eye(2)) == pytest.approx(0)
    assert h_obstacle((0.5, 0), (0, 0), np.diag((4.0, 1.0))) == pytest.approx(0)


def test_separation_symmetric() -> None:
    assert h_separation((0.3, -0.2), 0.25) == h_separation((-0.3, 0.2), 0.25)


@pytest.mark.parametrize("bad", (0.0, -1.0))
def test_tolerances_must_be_positive(bad: float) -> None:
    with pytest.raises(ValueError, match="d_G"):
        h_waypoint((0, 0), (1, 1), bad)
    with pytest.raises(ValueError, match="d_O"):
        h_separation((0, 0), bad)


@pytest.mark.parametrize("P", (np.diag((1.0, -1.0)), np.array([[1.0, 2.0], [0.0, 1.0]]),
                               np.zeros((2, 2))))
def test_obstacle_matrix_checked(P: NDArray[np.float64]) -> None:
    with pytest.raises(ValueError, match="P must be"):
        check_positive_definite(P)
    with pytest.raises(ValueError):
        h_obstacle((0, 0), (1, 1), P)


def _central_difference(f: Callable[[NDArray[np.float64]], float],
                        x: NDArray[np.float64], h: float = 1e-5) -> NDArray[np.float64]:
    return np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(2)])


def test_gradients_match_finite_differences() -> None:
    rng = np.random.default_rng(6)
    for _ in range(100):
        x, y = rng.uniform(-3, 3, size=(2, 2))
        a = rng.normal(size=(2, 2))
        P = a @ a.T + 0.5 * np.eye(2)
        cases = (
            (grad_h_waypoint(x, y), lambda v: h_waypoint(v, y, 0.1)),
            (grad_h_formation(x, y), lambda v: h_formation(v, y, 0.05)),
            (grad_h_separation(x), lambda v: h_separation(v, 0.3)),
            (grad_h_obstacle(x, y, P), lambda v: h_obstacle(v, y, P)),
        )
        for analytic, f in cases:
            numeric = _central_difference(f, x)
            err = np.linalg.norm(analytic - numeric) / max(1.0, np.linalg.norm(numeric))
            assert err <= 1e-5


def test_gradient_examples() -> None:
    assert grad_h_waypoint((1, 2), (1, 2)).tolist() == [0, 0]
    assert grad_h_separation((1, 2)).tolist() == [2, 4]


def test_pairs() -> None:
    assert list(pairs(3)) == [(0, 1), (0, 2), (1, 2)]
    assert len(list(pairs(5))) == 10


def test_formation_accessors() -> None:
    assert TRIANGLE.r == 3
    assert TRIANGLE.f(0, 2).tolist() == [-0.7, 0]
    assert TRIANGLE.f(2, 0).tolist() == [0.7, 0]
    assert TRIANGLE.is_consistent()


def test_formation_normalises_pair_order() -> None:
    f = Formation("line", {(1, 0): (0.5, 0.0)})
    assert f.f(0, 1).tolist() == [-0.5, 0]


def test_formation_validation() -> None:
    with pytest.raises(ValueError, match="every pair"):
        Formation("bad", {(0, 1): (1, 0), (0, 2): (2, 0)})
    with pytest.raises(ValueError, match="not realisable"):
        Formation("bad", {(0, 1): (1, 0), (0, 2): (2, 0), (1, 2): (5, 0)})
    with pytest.raises(ValueError, match="not a pair"):
        Formation("bad", {(0, 0): (1, 0)})


def test_in_formation_realises_every_pair() -> None:
    s = SwarmState.in_formation((2.0, 3.0), TRIANGLE)
    assert np.allclose(centroid(s), (2, 3))
    for i, j in pairs(3):
        assert h_formation(displacement(s, i, j), TRIANGLE.f(i, j), 0.05) == pytest.approx(-0.0025)


def test_control_input_zeros() -> None:
    u = ControlInput.zeros(3)
    assert u.r == 3
    assert not u.inputs.any()
