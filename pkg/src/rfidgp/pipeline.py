"""End-to-end localisation of a phase-difference stream."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import gp_engine
from .env_dictionary import ModelDictionary, SelectionReport, select_model
from .gp_engine import GpEnvironmentModel
from .ranging import (DEFAULT_KIN_BOUND, AntennaPose, ConvergenceError, DegenerateGeometryError,
                      TagTrackEstimate, evaluate_track, kinematic_constrain, solve_position_arrays)

SELECTION_SAMPLES = 300
CLAMP_SEED_READS = 5
MIN_RANGE = 0.05

DEFAULT_ANTENNAS = (
    AntennaPose("A1", (0.0, 0.0), 45.0),
    AntennaPose("A2", (15.0, 0.0), 135.0),
    AntennaPose("A3", (7.5, 22.0), -90.0),
)


@dataclass
class LocalizationResult:
    tracks: list[TagTrackEstimate]
    model_env_id: str
    selection: SelectionReport | None


def selection_subset(x, n: int = SELECTION_SAMPLES) -> np.ndarray:
    """Evenly spaced deterministic subset used for dictionary selection."""
    x = np.asarray(x, dtype=float)
    if x.size <= n:
        return x
    return x[np.linspace(0, x.size - 1, n).round().astype(int)]


def range_tag(model: GpEnvironmentModel, t, antenna_id, delta_phi, antennas,
              kin_bound=DEFAULT_KIN_BOUND, max_speed=None, tag_id="T0") -> TagTrackEstimate:
    """Ranges, constrained ranges and per-epoch fixes for one tag's readings."""
    t = np.asarray(t, dtype=float)
    antenna_id = np.asarray(antenna_id, dtype=object)
    order = np.lexsort((antenna_id.astype(str), t))
    t, antenna_id = t[order], antenna_id[order]
    raw = gp_engine.predict_mean(model, np.asarray(delta_phi, dtype=float)[order])
    constrained = np.empty_like(raw)
    for ant in np.unique(antenna_id.astype(str)):
        rows = np.flatnonzero(antenna_id.astype(str) == ant)
        # A median seed keeps one spiked first read from anchoring the clamp.
        seed = float(np.median(raw[rows][:CLAMP_SEED_READS]))
        constrained[rows] = kinematic_constrain(t[rows], raw[rows], kin_bound, init=seed,
                                                max_speed=max_speed)

    positions = np.full((t.size, 2), np.nan)
    anchor_of = {a.id: a.position for a in antennas}
    prior = None
    epochs, starts = np.unique(t, return_index=True)
    bounds = list(starts) + [t.size]
    for e in range(epochs.size):
        rows = np.arange(bounds[e], bounds[e + 1])
        rows = [r for r in rows if antenna_id[r] in anchor_of]
        if len({antenna_id[r] for r in rows}) < 2:
            continue
        anchors = np.array([anchor_of[antenna_id[r]] for r in rows])
        ranges = np.maximum(constrained[rows], MIN_RANGE)
        try:
            fix = solve_position_arrays(anchors, ranges, prior)
        except ConvergenceError as exc:
            fix = exc.last_iterate
        except DegenerateGeometryError:
            continue
        positions[rows] = fix
        prior = fix
    return TagTrackEstimate(tag_id, t, antenna_id, raw, constrained, positions)


def localize(stream, models, antennas=DEFAULT_ANTENNAS, kin_bound=DEFAULT_KIN_BOUND,
             max_speed=None, threads: int = 1, truth=None) -> LocalizationResult:
    """Select a model (if given a dictionary), then range and fix every tag.

    ``truth`` optionally maps tag ids to ``(epoch_times, xy)`` for position
    errors; range errors are computed whenever the stream carries true distances.
    """
    selection = None
    if isinstance(models, ModelDictionary):
        if len(models) == 1:
            model = models.models[0]
        else:
            selection = select_model(models, selection_subset(stream.delta_phi), threads=threads)
            model = models.models[selection.chosen_index]
    else:
        model = models

    tag_ids = list(dict.fromkeys(stream.tag_id.tolist()))

    def run(tag):
        rows = np.flatnonzero(stream.tag_id == tag)
        try:
            track = range_tag(model, stream.t[rows], stream.antenna_id[rows], stream.delta_phi[rows],
                              antennas, kin_bound, max_speed, tag)
        except ValueError as exc:
            raise ValueError(f"tag {tag}: {exc}") from exc
        truth_ranges = None
        if stream.labeled:
            order = np.lexsort((stream.antenna_id[rows].astype(str), stream.t[rows]))
            truth_ranges = stream.true_distance[rows][order]
        truth_xy = None
        if truth is not None and tag in truth:
            t_ep, xy = truth[tag]
            idx = np.searchsorted(t_ep, track.t)
            idx = np.clip(idx, 0, len(t_ep) - 1)
            truth_xy = xy[idx]
        evaluate_track(track, truth_ranges, truth_xy)
        return track

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            tracks = list(pool.map(run, tag_ids))
    else:
        tracks = [run(tag) for tag in tag_ids]
    return LocalizationResult(tracks, model.env_id, selection)


def pooled_errors(tracks, which: str = "constrained") -> np.ndarray:
    """Absolute range errors of every row of every track (``raw`` or ``constrained``)."""
    errs = []
    for tr in tracks:
        if tr.true_ranges is None:
            raise ValueError(f"track {tr.tag_id} has no true ranges")
        est = tr.constrained_ranges if which == "constrained" else tr.raw_ranges
        errs.append(np.abs(est - tr.true_ranges))
    return np.concatenate(errs) if errs else np.empty(0)
