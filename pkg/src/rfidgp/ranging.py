"""Range post-processing, planar trilateration and the KNN ranging baseline."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_KIN_BOUND = 2.0
DEFAULT_K = 5
TRACK_COLUMNS = ("tag_id", "t", "raw_range", "constrained_range", "x", "y", "antenna_id")


class DegenerateGeometryError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, last_iterate, residual):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


@dataclass(frozen=True)
class AntennaPose:
    id: str
    position: tuple[float, float]
    boresight: float = 90.0

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.position):
            raise ValueError(f"antenna {self.id!r} has non-finite coordinates")
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))


@dataclass(frozen=True)
class RangeObservation:
    antenna_id: str
    t: float
    range: float
    variance: float = 0.0

    def __post_init__(self):
        if not self.range > 0:
            raise ValueError("range must be > 0")
        if self.variance < 0:
            raise ValueError("variance must be >= 0")


@dataclass(frozen=True)
class TrackMetrics:
    mean: float
    rmse: float
    p90: float
    n: int

    def to_dict(self):
        return {"mean": self.mean, "rmse": self.rmse, "p90": self.p90, "n": self.n}


@dataclass
class TagTrackEstimate:
    """Per-tag series; one row per (epoch, antenna) reading.

    ``positions`` holds the planar fix of the row's epoch (NaN when the epoch
    had fewer than two usable antennas).
    """

    tag_id: str
    t: np.ndarray
    antenna_id: np.ndarray
    raw_ranges: np.ndarray
    constrained_ranges: np.ndarray
    positions: np.ndarray
    metrics: dict = field(default_factory=dict)
    true_ranges: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        n = self.t.size
        self.antenna_id = np.asarray(self.antenna_id, dtype=object).reshape(n)
        self.raw_ranges = np.asarray(self.raw_ranges, dtype=float).reshape(n)
        self.constrained_ranges = np.asarray(self.constrained_ranges, dtype=float).reshape(n)
        self.positions = np.asarray(self.positions, dtype=float).reshape(n, 2)


# ---------------------------------------------------------------------------
# KNN baseline

def knn_ranges(train_x, train_y, queries, k: int = DEFAULT_K) -> np.ndarray:
    """Mean true distance of the ``k`` training samples nearest in phase difference.

    Ties in phase distance go to the earlier training sample.
    """
    train_x = np.asarray(train_x, dtype=float).ravel()
    train_y = np.asarray(train_y, dtype=float).ravel()
    queries = np.atleast_1d(np.asarray(queries, dtype=float))
    n = train_x.size
    if n == 0:
        raise ValueError("KNN needs a non-empty training set")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    order = np.argsort(train_x, kind="stable")
    xs, ys = train_x[order], train_y[order]
    pos = np.searchsorted(xs, queries)
    # the k nearest lie within k places either side of the insertion point
    offsets = np.arange(-k, k)
    cand = np.clip(pos[:, None] + offsets[None, :], 0, n - 1)
    dist = np.abs(xs[cand] - queries[:, None])
    dup = np.zeros_like(cand, dtype=bool)
    dup[:, 1:] = cand[:, 1:] == cand[:, :-1]
    dist[dup] = np.inf
    orig = order[cand]
    rank = np.lexsort((orig, dist), axis=-1)[:, :k]
    picked = np.take_along_axis(cand, rank, axis=1)
    out = ys[picked].mean(axis=1)

    # a run of equal distances may continue past the window; redo those queries exactly
    d_k = np.take_along_axis(dist, rank[:, -1:], axis=1)[:, 0]
    ties = np.sum(dist == d_k[:, None], axis=1) > 1
    for edge in (pos - k - 1, pos + k):
        inside = (edge >= 0) & (edge < n)
        edge_dist = np.abs(xs[np.clip(edge, 0, n - 1)] - queries)
        ties |= inside & (edge_dist == d_k)
    for i in np.flatnonzero(ties):
        full = np.abs(train_x - queries[i])
        out[i] = train_y[np.lexsort((np.arange(n), full))[:k]].mean()
    return out


def knn_range(train, query: float, k: int = DEFAULT_K) -> float:
    return float(knn_ranges(train.delta_phi, train.true_distance, [query], k)[0])


# ---------------------------------------------------------------------------
# kinematic constraint

def kinematic_constrain(t, raw, bound: float = DEFAULT_KIN_BOUND, init: float | None = None,
                        max_speed: float | None = None) -> np.ndarray:
    """Clamp each range to within ``bound`` of the previous constrained range.

    With ``max_speed`` (m/s) the per-step bound becomes ``max_speed * dt``
    instead.  ``init`` defaults to the first raw range.
    """
    t = np.asarray(t, dtype=float).ravel()
    raw = np.asarray(raw, dtype=float).ravel()
    if t.size != raw.size:
        raise ValueError("timestamps and ranges differ in length")
    if raw.size == 0:
        return raw.copy()
    if np.any(np.diff(t) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    if not bound > 0:
        raise ValueError("bound must be > 0")
    out = np.empty_like(raw)
    prev = raw[0] if init is None else float(init)
    for i, r in enumerate(raw):
        step = bound if max_speed is None or i == 0 else max_speed * (t[i] - t[i - 1])
        prev = min(max(r, prev - step), prev + step)
        out[i] = prev
    return out


# ---------------------------------------------------------------------------
# trilateration

def _cost(x, anchors, ranges):
    r = ranges - np.linalg.norm(anchors - x, axis=1)
    return float(r @ r)


def _levenberg_marquardt(x0, anchors, ranges, max_iter, tol):
    x = np.asarray(x0, dtype=float).copy()
    cost = _cost(x, anchors, ranges)
    lam = 1e-3
    for it in range(1, max_iter + 1):
        diff = x - anchors
        rho = np.maximum(np.linalg.norm(diff, axis=1), 1e-12)
        resid = ranges - rho
        jac = -diff / rho[:, None]
        jtj = jac.T @ jac
        grad = jac.T @ resid
        while True:
            step = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj) + 1e-12), -grad)
            trial = x + step
            trial_cost = _cost(trial, anchors, ranges)
            if trial_cost <= cost or np.linalg.norm(step) < tol:
                break
            lam *= 10.0
        if trial_cost <= cost:
            x, cost = trial, trial_cost
            lam = max(lam / 10.0, 1e-12)
        if np.linalg.norm(step) < tol:
            return x, cost, it, True
    return x, cost, max_iter, False


def _linear_fix(anchors, ranges):
    """Closed-form fix from differenced circle equations (needs 3 non-collinear anchors)."""
    a0, r0 = anchors[0], ranges[0]
    lhs = 2.0 * (anchors[1:] - a0)
    rhs = (r0 ** 2 - ranges[1:] ** 2) + np.sum(anchors[1:] ** 2, axis=1) - a0 @ a0
    if np.linalg.matrix_rank(lhs) < 2:
        return None
    sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return sol


def solve_position(obs: Sequence[RangeObservation], antennas: Sequence[AntennaPose],
                   prior=None, max_iter: int = 100, tol: float = 1e-9) -> np.ndarray:
    """Least-squares planar fix minimising the squared range residuals.

    Damped Gauss-Newton from ``prior``; without a prior it also tries the
    differenced-circle closed form and keeps whichever start ends lower.
    """
    by_id = {a.id: a for a in antennas}
    try:
        anchors = np.array([by_id[o.antenna_id].position for o in obs], dtype=float)
    except KeyError as exc:
        raise ValueError(f"observation from unknown antenna {exc.args[0]!r}") from None
    ranges = np.array([o.range for o in obs], dtype=float)
    return solve_position_arrays(anchors, ranges, prior, max_iter, tol)


def solve_position_arrays(anchors, ranges, prior=None, max_iter: int = 100, tol: float = 1e-9):
    anchors = np.asarray(anchors, dtype=float).reshape(-1, 2)
    ranges = np.asarray(ranges, dtype=float).ravel()
    if anchors.shape[0] < 2:
        raise DegenerateGeometryError("need ranges from at least two antennas")
    if np.max(np.ptp(anchors, axis=0)) < 1e-9:
        raise DegenerateGeometryError("all antennas are coincident")
    starts = []
    if prior is not None:
        starts.append(np.asarray(prior, dtype=float))
    else:
        w = 1.0 / np.maximum(ranges, 1e-6)
        starts.append(w @ anchors / w.sum())
        if anchors.shape[0] >= 3:
            lin = _linear_fix(anchors, ranges)
            if lin is not None:
                starts.append(lin)
    best = None
    for x0 in starts:
        x, cost, _, ok = _levenberg_marquardt(x0, anchors, ranges, max_iter, tol)
        if best is None or cost < best[1]:
            best = (x, cost, ok)
    x, cost, ok = best
    if not ok:
        raise ConvergenceError(f"no convergence in {max_iter} iterations", x, math.sqrt(cost))
    return x


# ---------------------------------------------------------------------------
# metrics

def error_metrics(estimate, truth) -> TrackMetrics:
    """Mean absolute error, RMSE and linearly interpolated 90th percentile.

    ``estimate``/``truth`` are 1-D ranges or (n, 2) positions; NaN rows are skipped.
    """
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ValueError(f"estimate shape {est.shape} does not match truth {tru.shape}")
    err = np.abs(est - tru) if est.ndim == 1 else np.linalg.norm(est - tru, axis=1)
    err = err[np.isfinite(err)]
    if err.size == 0:
        return TrackMetrics(math.nan, math.nan, math.nan, 0)
    return TrackMetrics(float(err.mean()), float(np.sqrt(np.mean(err ** 2))),
                        float(np.percentile(err, 90)), int(err.size))


def evaluate_track(track: TagTrackEstimate, truth_ranges=None, truth_positions=None) -> dict:
    metrics = {}
    if truth_ranges is not None:
        track.true_ranges = np.asarray(truth_ranges, dtype=float)
        metrics["raw"] = error_metrics(track.raw_ranges, truth_ranges)
        metrics["constrained"] = error_metrics(track.constrained_ranges, truth_ranges)
    if truth_positions is not None:
        metrics["position"] = error_metrics(track.positions, truth_positions)
    track.metrics = metrics
    return metrics


# ---------------------------------------------------------------------------
# file formats

def tracks_to_csv(tracks: Sequence[TagTrackEstimate]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACK_COLUMNS)
    for tr in tracks:
        for i in range(tr.t.size):
            writer.writerow([tr.tag_id, repr(float(tr.t[i])), repr(float(tr.raw_ranges[i])),
                             repr(float(tr.constrained_ranges[i])), repr(float(tr.positions[i, 0])),
                             repr(float(tr.positions[i, 1])), tr.antenna_id[i]])
    return buf.getvalue()


def write_tracks_csv(tracks: Sequence[TagTrackEstimate], path) -> None:
    Path(path).write_text(tracks_to_csv(tracks), encoding="utf-8")


def read_tracks_csv(path) -> list[TagTrackEstimate]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    grouped: dict[str, list[dict]] = {}
    for r in rows:
        grouped.setdefault(r["tag_id"], []).append(r)
    tracks = []
    for tag, rs in grouped.items():
        col = lambda k: np.array([float(r[k]) for r in rs])  # noqa: E731
        tracks.append(TagTrackEstimate(tag, col("t"), [r.get("antenna_id", "A0") for r in rs],
                                       col("raw_range"), col("constrained_range"),
                                       np.column_stack([col("x"), col("y")])))
    return tracks


def metrics_summary(tracks: Sequence[TagTrackEstimate], env_id: str | None = None) -> dict:
    out = {"env_id": env_id, "tags": {}}
    for tr in tracks:
        out["tags"][tr.tag_id] = {k: v.to_dict() for k, v in tr.metrics.items()}
    return out


def write_metrics_json(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_antennas_csv(path) -> list[AntennaPose]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [AntennaPose(r["id"], (float(r["x"]), float(r["y"])), float(r.get("boresight") or 90.0))
                for r in csv.DictReader(fh)]


def write_antennas_csv(antennas: Sequence[AntennaPose], path) -> None:
    lines = ["id,x,y,boresight"]
    lines += [f"{a.id},{a.position[0]!r},{a.position[1]!r},{a.boresight!r}" for a in antennas]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
