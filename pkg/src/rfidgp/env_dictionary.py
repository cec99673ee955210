"""Dictionary of per-environment GP models and weighted-likelihood selection.

Each model is scored by ``w_l * L_l`` where ``L_l`` is a Gaussian log
likelihood of the stream under that model and ``w_l`` is the Euclidean
distance between the stream's segmentation vector and the model's.  Log
likelihoods are normally negative, so a small distance pulls the score towards
zero and the argmax favours the best-matching segmentation.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gp_engine
from .gp_engine import GpEnvironmentModel
from .segmentation import SegmentationThresholds, SegmentationVector, segment, segment_counts

__all__ = [
    "ModelDictionary", "SelectionReport", "SegmentationThresholds", "SegmentationVector",
    "segment", "segment_counts", "weights", "select_model", "save_dictionary", "load_dictionary",
]

WEIGHT_FLOOR = 1e-9
MIN_STREAM = 10
MANIFEST = "manifest.json"
DICTIONARY_FORMAT = "rfidgp-dictionary"
DICTIONARY_VERSION = 1


@dataclass
class ModelDictionary:
    models: list[GpEnvironmentModel]
    thresholds: SegmentationThresholds = field(default_factory=SegmentationThresholds)

    def __post_init__(self):
        self.models = list(self.models)
        ids = self.env_ids
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate env ids in dictionary: {ids}")
        for m in self.models:
            if m.thresholds != self.thresholds:
                raise ValueError(f"model {m.env_id!r} was segmented with other thresholds")

    @property
    def env_ids(self) -> list[str]:
        return [m.env_id for m in self.models]

    def __len__(self):
        return len(self.models)

    def __getitem__(self, env_id: str) -> GpEnvironmentModel:
        for m in self.models:
            if m.env_id == env_id:
                return m
        raise KeyError(env_id)


@dataclass
class SelectionReport:
    chosen_env_id: str
    chosen_index: int
    env_ids: list[str]
    weights: list[float]
    likelihoods: list[float]
    weighted_scores: list[float]
    input_segmentation: SegmentationVector
    failed: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        seg = self.input_segmentation
        return {
            "chosen_env_id": self.chosen_env_id,
            "chosen_index": self.chosen_index,
            "env_ids": self.env_ids,
            "weights": self.weights,
            "likelihoods": [_json_float(v) for v in self.likelihoods],
            "weighted_scores": [_json_float(v) for v in self.weighted_scores],
            "input_segmentation": [seg.v1, seg.v2, seg.v3],
            "failed": self.failed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SelectionReport":
        return cls(data["chosen_env_id"], data["chosen_index"], list(data["env_ids"]),
                   list(data["weights"]), [float(v) for v in data["likelihoods"]],
                   [float(v) for v in data["weighted_scores"]],
                   SegmentationVector(*data["input_segmentation"]), list(data["failed"]))


def _json_float(v: float):
    return v if math.isfinite(v) else str(v)


def weights(dictionary: ModelDictionary, v_star: SegmentationVector) -> list[float]:
    if len(dictionary) == 0:
        raise ValueError("dictionary is empty")
    target = v_star.as_array()
    return [max(float(np.linalg.norm(m.v_l.as_array() - target)), WEIGHT_FLOOR)
            for m in dictionary.models]


def self_consistency_likelihood(model: GpEnvironmentModel, x) -> float:
    """Log density of the model's own predictions under its predictive Gaussian.

    Used when no ranges accompany the stream.  The residual is zero by
    construction, so the value reduces to the normalising term and measures how
    well the model's training data covers the incoming phase differences.
    """
    x = np.asarray(x, dtype=float)
    y_pred = gp_engine.predict_mean(model, x)
    return gp_engine.log_likelihood(model, x, y_pred)


def _score(model, x, y_hint):
    try:
        if y_hint is None:
            return self_consistency_likelihood(model, x)
        return gp_engine.log_likelihood(model, x, y_hint)
    except (np.linalg.LinAlgError, ValueError, FloatingPointError):
        return -math.inf


def select_model(dictionary: ModelDictionary, x, y_hint: Sequence[float] | None = None,
                 threads: int = 1) -> SelectionReport:
    """Pick the dictionary entry maximising ``w_l * L_l`` for phase stream ``x``.

    Ties go to the lowest index.  A model whose likelihood cannot be evaluated
    is scored ``-inf`` and listed in ``failed``.
    """
    if len(dictionary) == 0:
        raise ValueError("dictionary is empty")
    x = np.asarray(x, dtype=float).ravel()
    if x.size < MIN_STREAM:
        raise ValueError(f"stream has {x.size} samples; at least {MIN_STREAM} are required")
    if y_hint is not None:
        y_hint = np.asarray(y_hint, dtype=float).ravel()
        if y_hint.size != x.size:
            raise ValueError("y_hint must match the stream length")

    v_star = segment(x, dictionary.thresholds)
    w = weights(dictionary, v_star)
    if threads > 1 and len(dictionary) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            lik = list(pool.map(lambda m: _score(m, x, y_hint), dictionary.models))
    else:
        lik = [_score(m, x, y_hint) for m in dictionary.models]
    scores = [wi * li if math.isfinite(li) else -math.inf for wi, li in zip(w, lik)]
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    failed = [m.env_id for m, li in zip(dictionary.models, lik) if not math.isfinite(li)]
    return SelectionReport(dictionary.models[best].env_id, best, dictionary.env_ids, w, lik,
                           scores, v_star, failed)


def save_dictionary(dictionary: ModelDictionary, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for m in dictionary.models:
        name = f"{m.env_id}.model.json"
        gp_engine.save_model(m, directory / name)
        files.append(name)
    manifest = {
        "format": DICTIONARY_FORMAT,
        "version": DICTIONARY_VERSION,
        "env_ids": dictionary.env_ids,
        "files": files,
        "thresholds": {"phi_min": dictionary.thresholds.phi_min,
                       "phi_max": dictionary.thresholds.phi_max},
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")


def load_dictionary(directory) -> ModelDictionary:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
    if manifest.get("format") != DICTIONARY_FORMAT:
        raise ValueError(f"{directory} does not hold an rfidgp dictionary")
    if manifest.get("version") != DICTIONARY_VERSION:
        raise ValueError(f"unsupported dictionary version {manifest.get('version')!r}")
    models = [gp_engine.load_model(directory / f) for f in manifest["files"]]
    if [m.env_id for m in models] != manifest["env_ids"]:
        raise ValueError("manifest env_ids do not match the stored models")
    return ModelDictionary(models, SegmentationThresholds(**manifest["thresholds"]))


def add_model(dictionary: ModelDictionary, model: GpEnvironmentModel) -> ModelDictionary:
    """New dictionary with ``model`` appended, or replacing an entry with the same id in place."""
    models = list(dictionary.models)
    ids = dictionary.env_ids
    if model.env_id in ids:
        models[ids.index(model.env_id)] = model
    else:
        models.append(model)
    return ModelDictionary(models, dictionary.thresholds)
