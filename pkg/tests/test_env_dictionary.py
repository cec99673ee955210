import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rfidgp import env_dictionary, gp_engine, signal_sim
from rfidgp.env_dictionary import ModelDictionary, select_model
from rfidgp.gp_engine import GpEnvironmentModel, KernelConfig, MeanFunction
from rfidgp.segmentation import SegmentationThresholds, SegmentationVector, segment, segment_counts


# --- segmentation -------------------------------------------------------------

def test_segment_one_of_each():
    v = segment([0.1, 0.5, 1.5])
    assert (v.v1, v.v2, v.v3) == pytest.approx((100 / 3, 100 / 3, 100 / 3))


def test_segment_all_inside():
    assert segment([0.2, 0.7, 1.2]) == SegmentationVector(100.0, 0.0, 0.0)


def test_segment_boundaries_count_inside():
    assert segment_counts([0.2, 1.2], SegmentationThresholds()) == (2, 0, 0)


def test_segment_rejects_empty_and_nan():
    with pytest.raises(ValueError):
        segment([])
    with pytest.raises(ValueError):
        segment([0.5, float("nan")])


def test_segment_reconstructed_fraction_table():
    # 1000 samples laid out as 2.8% below, 82.9% inside, 14.3% above
    x = np.concatenate([np.full(28, 0.1), np.full(829, 0.6), np.full(143, 1.4)])
    v = segment(x)
    assert (v.v2, v.v1, v.v3) == pytest.approx((2.8, 82.9, 14.3))


@given(st.lists(st.floats(-1.0, 3.0), min_size=1, max_size=300),
       st.floats(0.0, 1.0), st.floats(0.01, 1.0))
def test_segmentation_partitions_stream(x, lo, width):
    thr = SegmentationThresholds(lo, lo + width)
    counts = segment_counts(x, thr)
    assert sum(counts) == len(x)
    assert sum(Fraction(100 * c, len(x)) for c in counts) == 100
    v = segment(x, thr)
    assert v.v1 + v.v2 + v.v3 == pytest.approx(100.0, abs=1e-12)


def test_thresholds_must_be_ordered():
    with pytest.raises(ValueError):
        SegmentationThresholds(1.2, 0.2)


# --- weights --------------------------------------------------------------------

def _model(env_id, v, x=(0.3, 0.6, 0.9), y=(7.0, 14.0, 21.0), slope=23.0):
    return GpEnvironmentModel(env_id, KernelConfig(), MeanFunction(slope, 0.0),
                              np.array(x), np.array(y), v)


def test_weight_floor_for_identical_vectors():
    v = SegmentationVector(80.0, 5.0, 15.0)
    d = ModelDictionary([_model("a", v)])
    assert env_dictionary.weights(d, v) == [env_dictionary.WEIGHT_FLOOR]


def test_weight_is_euclidean_distance():
    d = ModelDictionary([_model("a", SegmentationVector(0.0, 100.0, 0.0))])
    w = env_dictionary.weights(d, SegmentationVector(100.0, 0.0, 0.0))
    assert w[0] == pytest.approx(math.sqrt(2) * 100, rel=1e-12)
    assert w[0] == pytest.approx(141.42, abs=1e-2)


def test_dictionary_validation():
    v = SegmentationVector(100.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        ModelDictionary([_model("a", v), _model("a", v)])
    with pytest.raises(ValueError):
        select_model(ModelDictionary([]), np.linspace(0.3, 1.0, 20))


# --- selection --------------------------------------------------------------------

def _env_model(spec, seed=0, cap=300):
    ds = signal_sim.generate_dataset(spec, samples_per_position=15)
    return gp_engine.train(ds, cap=cap, seed=seed), ds


@pytest.fixture(scope="module")
def two_envs():
    near = signal_sim.EnvironmentSpec(id="near", phase_offset=0.3, noise_sigma=0.02, seed=1)
    far = signal_sim.EnvironmentSpec(id="far", phase_offset=0.55, noise_sigma=0.05,
                                     spike_rate=0.1, spike_scale=0.2, seed=2)
    m_near, ds_near = _env_model(near)
    m_far, _ = _env_model(far)
    return ModelDictionary([m_near, m_far]), signal_sim.generate_dataset(
        near.perturbed(seed=77), samples_per_position=5)


def test_single_model_always_chosen(small_model):
    rep = select_model(ModelDictionary([small_model]), np.linspace(2.0, 3.0, 30))
    assert rep.chosen_env_id == small_model.env_id and rep.chosen_index == 0


def test_identical_models_tie_break_to_first(small_model):
    twin = gp_engine.model_from_dict({**gp_engine.model_to_dict(small_model), "env_id": "twin"})
    rep = select_model(ModelDictionary([small_model, twin]), np.linspace(0.3, 1.0, 40))
    assert rep.weighted_scores[0] == rep.weighted_scores[1]
    assert rep.chosen_index == 0


def test_short_stream_rejected(small_model):
    with pytest.raises(ValueError, match="at least"):
        select_model(ModelDictionary([small_model]), [0.5] * 9)


def test_well_separated_environments_monte_carlo(two_envs):
    dictionary, stream = two_envs
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(100):
        idx = rng.choice(len(stream), size=60, replace=False)
        hits += select_model(dictionary, stream.delta_phi[idx]).chosen_env_id == "near"
    assert hits >= 90


def test_selection_invariant_to_order(two_envs):
    dictionary, stream = two_envs
    x = stream.delta_phi[::7]
    flipped = ModelDictionary(dictionary.models[::-1])
    a, b = select_model(dictionary, x), select_model(flipped, x)
    assert a.chosen_env_id == b.chosen_env_id
    assert a.weighted_scores == b.weighted_scores[::-1]


def test_equal_weights_reduce_to_max_likelihood(two_envs):
    dictionary, stream = two_envs
    x = stream.delta_phi[::5]
    v = segment(x)
    same = [gp_engine.model_from_dict({**gp_engine.model_to_dict(m), "v_l": [v.v1, v.v2, v.v3]})
            for m in dictionary.models]
    rep = select_model(ModelDictionary(same), x)
    assert rep.chosen_index == int(np.argmax(rep.likelihoods))


def test_labeled_hint_uses_plain_likelihood(two_envs):
    dictionary, stream = two_envs
    x, y = stream.delta_phi[:50], stream.true_distance[:50]
    rep = select_model(dictionary, x, y_hint=y)
    assert rep.likelihoods[0] == pytest.approx(gp_engine.log_likelihood(dictionary.models[0], x, y))


@given(st.floats(-1e4, -1e-3), st.floats(1e-6, 1e3), st.floats(0.0, 1.0))
def test_shrinking_weight_never_lowers_negative_score(lik, w, shrink):
    assert (w * shrink) * lik >= w * lik


def test_failed_model_is_flagged(two_envs, monkeypatch):
    dictionary, stream = two_envs
    real = gp_engine.log_likelihood

    def flaky(model, x, y):
        if model.env_id == "far":
            raise gp_engine.FactorizationError("boom")
        return real(model, x, y)

    monkeypatch.setattr(gp_engine, "log_likelihood", flaky)
    rep = select_model(dictionary, stream.delta_phi[:40])
    assert rep.failed == ["far"] and rep.weighted_scores[1] == -math.inf
    assert rep.chosen_env_id == "near"


def test_threads_do_not_change_result(two_envs):
    dictionary, stream = two_envs
    x = stream.delta_phi[::9]
    assert select_model(dictionary, x).to_dict() == select_model(dictionary, x, threads=4).to_dict()


# --- persistence ---------------------------------------------------------------------

def test_report_round_trip(two_envs):
    dictionary, stream = two_envs
    rep = select_model(dictionary, stream.delta_phi[:30])
    back = env_dictionary.SelectionReport.from_dict(rep.to_dict())
    assert back == rep


def test_dictionary_round_trip(tmp_path, two_envs):
    dictionary, stream = two_envs
    env_dictionary.save_dictionary(dictionary, tmp_path / "d")
    back = env_dictionary.load_dictionary(tmp_path / "d")
    assert back.env_ids == dictionary.env_ids and back.thresholds == dictionary.thresholds
    x = stream.delta_phi[:25]
    assert select_model(back, x).to_dict() == select_model(dictionary, x).to_dict()


def test_add_model_replaces_same_id(two_envs):
    dictionary, _ = two_envs
    same = env_dictionary.add_model(dictionary, dictionary.models[0])
    assert same.env_ids == ["near", "far"]
    extra = gp_engine.model_from_dict({**gp_engine.model_to_dict(dictionary.models[0]), "env_id": "x"})
    assert env_dictionary.add_model(dictionary, extra).env_ids == ["near", "far", "x"]


def test_manifest_format_checked(tmp_path):
    (tmp_path / env_dictionary.MANIFEST).write_text('{"format": "nope"}')
    with pytest.raises(ValueError):
        env_dictionary.load_dictionary(tmp_path)
