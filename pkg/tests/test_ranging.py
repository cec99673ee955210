import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rfidgp import ranging
from rfidgp.ranging import AntennaPose, RangeObservation, TagTrackEstimate

import oracles


class _Train:
    delta_phi = np.array([0.2, 0.4, 0.6])
    true_distance = np.array([5.0, 10.0, 15.0])


# --- KNN -------------------------------------------------------------------------

def test_knn_nearest_neighbour():
    assert ranging.knn_range(_Train, 0.41, k=1) == 10.0


def test_knn_three_neighbours_average():
    assert ranging.knn_range(_Train, 0.41, k=3) == pytest.approx(10.0)


def test_knn_full_k_is_global_mean():
    assert ranging.knn_ranges(_Train.delta_phi, _Train.true_distance, [-4.0, 0.5, 9.0], k=3) == \
        pytest.approx([10.0] * 3)


def test_knn_domain_errors():
    with pytest.raises(ValueError):
        ranging.knn_ranges([], [], [0.5], 1)
    with pytest.raises(ValueError):
        ranging.knn_ranges([0.1], [1.0], [0.5], 2)


@given(arrays(float, st.integers(1, 60), elements=st.floats(0.0, 1.5)),
       arrays(float, st.integers(1, 20), elements=st.floats(-0.2, 1.7)), st.integers(1, 9))
def test_knn_matches_brute_force(x, q, k):
    k = min(k, x.size)
    y = np.arange(x.size, dtype=float) * 0.5 + 2.0
    got = ranging.knn_ranges(x, y, q, k)
    for qi, g in zip(q, got):
        idx = sorted(range(x.size), key=lambda i: (abs(x[i] - qi), i))[:k]
        assert g == pytest.approx(y[idx].mean(), rel=1e-12)


@given(arrays(float, st.integers(1, 40), elements=st.floats(0.0, 1.5), unique=True))
def test_knn_k1_on_training_point(x):
    y = 3.0 + 20.0 * x
    assert np.array_equal(ranging.knn_ranges(x, y, x, 1), y)


# --- kinematic constraint ----------------------------------------------------------------

def test_clamp_arithmetic():
    assert ranging.kinematic_constrain([0, 1], [10.0, 13.5], 2.0)[1] == 12.0


def test_clamp_identity_inside_band():
    raw = np.array([10.0, 11.0, 10.5, 12.0])
    assert np.array_equal(ranging.kinematic_constrain(np.arange(4), raw, 2.0), raw)


def test_clamp_constant_series():
    assert np.array_equal(ranging.kinematic_constrain(np.arange(5), np.full(5, 7.0)), np.full(5, 7.0))


def test_clamp_init_and_velocity_mode():
    out = ranging.kinematic_constrain([0.0, 0.5, 2.5], [9.0, 20.0, 20.0], init=10.0, max_speed=1.0)
    assert out.tolist() == [9.0, 9.5, 11.5]


def test_clamp_rejects_non_monotone_time():
    with pytest.raises(ValueError):
        ranging.kinematic_constrain([0.0, 1.0, 1.0], [1.0, 2.0, 3.0])


@given(arrays(float, st.integers(1, 80), elements=st.floats(-50, 50)), st.floats(0.01, 5.0))
def test_clamp_lipschitz(raw, bound):
    out = ranging.kinematic_constrain(np.arange(raw.size, dtype=float), raw, bound)
    assert np.all(np.abs(np.diff(out)) <= bound * (1 + 1e-12))


# --- trilateration -------------------------------------------------------------------------

ANTS = [AntennaPose("A", (0.0, 0.0)), AntennaPose("B", (10.0, 0.0)), AntennaPose("C", (0.0, 10.0))]


def test_two_antenna_tangent_circles():
    fix = ranging.solve_position_arrays([(0, 0), (10, 0)], [5.0, 5.0])
    assert np.allclose(fix, [5.0, 0.0], atol=1e-6)


def test_three_antennas_exact_ranges():
    truth = np.array([3.0, 4.0])
    obs = [RangeObservation(a.id, 0.0, float(np.hypot(*(truth - a.position)))) for a in ANTS]
    assert np.allclose(ranging.solve_position(obs, ANTS), truth, atol=1e-6)


def test_single_antenna_rejected():
    with pytest.raises(ranging.DegenerateGeometryError):
        ranging.solve_position([RangeObservation("A", 0.0, 5.0)], ANTS)


def test_coincident_antennas_rejected():
    with pytest.raises(ranging.DegenerateGeometryError):
        ranging.solve_position_arrays([(1, 1), (1, 1), (1, 1)], [2.0, 2.0, 2.0])


def test_unknown_antenna_rejected():
    with pytest.raises(ValueError):
        ranging.solve_position([RangeObservation("Z", 0.0, 1.0), RangeObservation("A", 0.0, 1.0)], ANTS)


def test_non_convergence_carries_iterate():
    with pytest.raises(ranging.ConvergenceError) as info:
        ranging.solve_position_arrays([(0, 0), (10, 0), (0, 10)], [3.0, 40.0, 1.0], max_iter=1)
    assert info.value.last_iterate.shape == (2,) and info.value.residual >= 0


@given(st.integers(0, 2**31 - 1))
def test_descent_from_prior(seed):
    rng = np.random.default_rng(seed)
    anchors = rng.uniform(-10, 10, (rng.integers(2, 6), 2))
    ranges = rng.uniform(0.5, 15, anchors.shape[0])
    prior = rng.uniform(-10, 10, 2)
    try:
        fix = ranging.solve_position_arrays(anchors, ranges, prior)
    except ranging.ConvergenceError as exc:
        fix = exc.last_iterate
    before = np.sum(oracles.circle_residual(prior, anchors, ranges) ** 2)
    after = np.sum(oracles.circle_residual(fix, anchors, ranges) ** 2)
    assert after <= before + 1e-12


# --- metrics -----------------------------------------------------------------------------------

def test_metrics_perfect():
    m = ranging.error_metrics([1.0, 2.0], [1.0, 2.0])
    assert (m.mean, m.rmse, m.p90) == (0.0, 0.0, 0.0)


def test_metrics_constant_bias():
    m = ranging.error_metrics(np.arange(5.0) + 1.0, np.arange(5.0))
    assert (m.mean, m.rmse, m.p90) == (1.0, 1.0, 1.0)


def test_metrics_percentile_interpolates():
    m = ranging.error_metrics(np.arange(10.0), np.zeros(10))
    assert m.mean == 4.5 and m.p90 == pytest.approx(8.1)


def test_metrics_shape_mismatch():
    with pytest.raises(ValueError):
        ranging.error_metrics([1.0, 2.0], [1.0])


def test_position_metrics_skip_nan():
    est = np.array([[0.0, 0.0], [np.nan, np.nan], [3.0, 4.0]])
    m = ranging.error_metrics(est, np.zeros((3, 2)))
    assert m.n == 2 and m.mean == 2.5


# --- files --------------------------------------------------------------------------------------

def _track():
    tr = TagTrackEstimate("T9", [0.0, 0.5], ["A1", "A2"], [3.25, 4.5], [3.25, 4.0],
                          [[1.0, 2.0], [np.nan, np.nan]])
    ranging.evaluate_track(tr, [3.0, 4.0])
    return tr


def test_tracks_csv_round_trip(tmp_path):
    tr = _track()
    ranging.write_tracks_csv([tr], tmp_path / "t.csv")
    (back,) = ranging.read_tracks_csv(tmp_path / "t.csv")
    assert back.tag_id == "T9" and list(back.antenna_id) == ["A1", "A2"]
    for col in ("t", "raw_ranges", "constrained_ranges", "positions"):
        assert np.array_equal(getattr(back, col), getattr(tr, col), equal_nan=True)
    assert ranging.tracks_to_csv([back]) == ranging.tracks_to_csv([tr])


def test_metrics_json(tmp_path):
    summary = ranging.metrics_summary([_track()], "env_x")
    ranging.write_metrics_json(summary, tmp_path / "m.json")
    assert summary["tags"]["T9"]["raw"]["mean"] == pytest.approx(0.375)


def test_antennas_csv_round_trip(tmp_path):
    ranging.write_antennas_csv(ANTS, tmp_path / "a.csv")
    assert ranging.read_antennas_csv(tmp_path / "a.csv") == ANTS
