"""Exact Gaussian process regression of tag range on phase difference.

The model is ``d = m(dphi) + f(dphi) + noise`` with a linear mean ``m`` fitted
inside the linear phase band and a zero-mean GP ``f`` with unit prior variance.
Only the training Cholesky factor and ``alpha = (K + s2 I)^-1 (y - m(x))`` are
kept; predictions are evaluated in blocks so long streams do not materialise
huge cross-covariance matrices.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .segmentation import SegmentationThresholds, SegmentationVector, segment

KERNELS = ("rbf", "matern15", "matern25", "rq")
DEFAULT_LENGTH_SCALE = 0.0075
DEFAULT_NOISE_VARIANCE = 0.25
DEFAULT_CAP = 2000
MODEL_FORMAT = "rfidgp-gp-model"
MODEL_VERSION = 1

_JITTER_LADDER = tuple(10.0 ** p for p in range(-12, -3))
_BLOCK = 2048
# entries this small are flushed to zero; subnormals make BLAS solves ~5x slower
_TINY = 1e-200


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a covariance matrix stays non-PD after jitter escalation."""


class MeanFitError(ValueError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    kind: str = "rbf"
    length_scale: float = DEFAULT_LENGTH_SCALE
    noise_variance: float = DEFAULT_NOISE_VARIANCE
    jitter: float = 0.0
    alpha: float = 1.0  # rational-quadratic shape, ignored by other kinds

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}; choose from {KERNELS}")
        if not self.length_scale > 0:
            raise ValueError("length_scale must be > 0")
        if self.noise_variance < 0 or self.jitter < 0:
            raise ValueError("noise_variance and jitter must be >= 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")

    def __call__(self, x1, x2):
        """Covariance matrix between 1-D input arrays ``x1`` and ``x2``."""
        x1 = np.asarray(x1, dtype=float).reshape(-1, 1)
        x2 = np.asarray(x2, dtype=float).reshape(1, -1)
        r = np.abs(x1 - x2) / self.length_scale
        if self.kind == "rbf":
            k = np.exp(-0.5 * r * r)
        elif self.kind == "matern15":
            s = np.sqrt(3.0) * r
            k = (1.0 + s) * np.exp(-s)
        elif self.kind == "matern25":
            s = np.sqrt(5.0) * r
            k = (1.0 + s + s * s / 3.0) * np.exp(-s)
        else:
            k = (1.0 + r * r / (2.0 * self.alpha)) ** (-self.alpha)
        k[k < _TINY] = 0.0
        return k


def kernel_eval(cfg: KernelConfig, x1: float, x2: float) -> float:
    return float(cfg([x1], [x2])[0, 0])


@dataclass(frozen=True)
class MeanFunction:
    """Linear range trend ``d = slope * dphi + intercept``.

    ``residual_std`` is the spread of the in-band training ranges about the line.
    """

    slope: float
    intercept: float
    residual_std: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.slope) and np.isfinite(self.intercept)):
            raise ValueError("mean-function coefficients must be finite")

    @property
    def valid(self) -> bool:
        return self.slope > 0

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept


def fit_line(x, y, thresholds: SegmentationThresholds | None = None) -> MeanFunction:
    """Ordinary least squares of ``y`` on ``x`` using only in-band ``x``."""
    thresholds = thresholds or SegmentationThresholds()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = thresholds.inside(x)
    x, y = x[keep], y[keep]
    if np.unique(x).size < 2:
        raise MeanFitError("need >= 2 distinct phase differences inside the linear band")
    xc, yc = x - x.mean(), y - y.mean()
    slope = (xc @ yc) / (xc @ xc)
    intercept = y.mean() - slope * x.mean()
    resid = y - (slope * x + intercept)
    dof = max(x.size - 2, 1)
    return MeanFunction(float(slope), float(intercept), float(np.sqrt(resid @ resid / dof)))


def fit_mean_function(train, thresholds: SegmentationThresholds | None = None) -> MeanFunction:
    return fit_line(train.delta_phi, train.true_distance, thresholds)


def cholesky_with_jitter(matrix: np.ndarray, jitter: float = 0.0, what: str = "covariance"):
    """Lower Cholesky factor, adding diagonal jitter on failure.

    Returns ``(L, jitter_used)``.  Jitter steps are relative to the mean diagonal.
    """
    n = matrix.shape[0]
    scale = float(np.mean(np.diag(matrix))) if n else 1.0
    scale = scale if scale > 0 else 1.0
    ladder = (jitter,) + tuple(j for j in _JITTER_LADDER if j > jitter)
    for jit in ladder:
        try:
            chol = linalg.cholesky(matrix + jit * scale * np.eye(n), lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.isfinite(chol)):
            chol[np.abs(chol) < _TINY] = 0.0
            return chol, jit
    cond = np.linalg.cond(matrix)
    raise FactorizationError(
        f"{what} matrix ({n}x{n}, condition number {cond:.3g}) is not positive definite "
        f"even with relative jitter {_JITTER_LADDER[-1]:g}")


@dataclass(eq=False)
class GpEnvironmentModel:
    """Trained per-environment model.  Treat as immutable once built."""

    env_id: str
    kernel: KernelConfig
    mean: MeanFunction
    x_train: np.ndarray
    y_train: np.ndarray
    v_l: SegmentationVector
    thresholds: SegmentationThresholds = field(default_factory=SegmentationThresholds)
    chol: np.ndarray = field(init=False, repr=False)
    alpha: np.ndarray = field(init=False, repr=False)
    jitter_used: float = field(init=False)

    def __post_init__(self):
        self.x_train = np.asarray(self.x_train, dtype=float).ravel()
        self.y_train = np.asarray(self.y_train, dtype=float).ravel()
        if self.x_train.size != self.y_train.size or self.x_train.size < 2:
            raise ValueError("need matching training inputs/outputs with >= 2 points")
        gram = self.train_covariance()
        self.chol, self.jitter_used = cholesky_with_jitter(
            gram, self.kernel.jitter, what=f"training covariance of {self.env_id!r}")
        self.alpha = linalg.cho_solve((self.chol, True), self.y_train - self.mean(self.x_train),
                                      check_finite=False)
        for arr in (self.x_train, self.y_train, self.chol, self.alpha):
            arr.setflags(write=False)

    def train_covariance(self) -> np.ndarray:
        k = self.kernel(self.x_train, self.x_train)
        k[np.diag_indices_from(k)] += self.kernel.noise_variance
        return k

    @property
    def n_train(self) -> int:
        return self.x_train.size

    def predict_mean(self, x):
        return predict_mean(self, x)

    def predict_cov(self, x):
        return predict_cov(self, x)

    def predict_var(self, x):
        return predict_var(self, x)


def stratified_subsample(y, cap: int, rng: np.random.Generator, bin_width: float = 0.5):
    """Indices of at most ``cap`` points spread over distance bins in proportion to size."""
    y = np.asarray(y, dtype=float)
    if y.size <= cap:
        return np.arange(y.size)
    bins = np.floor(y / bin_width + 1e-9).astype(int)
    labels, inverse = np.unique(bins, return_inverse=True)
    sizes = np.bincount(inverse)
    exact = sizes * cap / y.size
    alloc = np.floor(exact).astype(int)
    order = np.argsort(-(exact - alloc), kind="stable")
    alloc[order[: cap - alloc.sum()]] += 1
    chosen = []
    for k in range(labels.size):
        members = np.flatnonzero(inverse == k)
        chosen.append(rng.choice(members, size=alloc[k], replace=False))
    return np.sort(np.concatenate(chosen))


def train(train_set, cfg: KernelConfig | None = None, cap: int = DEFAULT_CAP,
          thresholds: SegmentationThresholds | None = None, seed: int = 0,
          env_id: str | None = None) -> GpEnvironmentModel:
    """Fit the mean line and condition the GP on (a capped subsample of) ``train_set``.

    The segmentation vector is computed from the full training stream, not just
    the subsample.
    """
    cfg = cfg or KernelConfig()
    thresholds = thresholds or SegmentationThresholds()
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    if not train_set.labeled:
        raise ValueError("training needs true distances")
    if cap < 2:
        raise ValueError("cap must be >= 2")
    x, y = train_set.delta_phi, train_set.true_distance
    try:
        mean = fit_line(x, y, thresholds)
    except MeanFitError:
        mean = None
    if mean is None or not mean.valid:
        mean = MeanFunction(0.0, float(np.mean(y)), float(np.std(y)))
    idx = stratified_subsample(y, cap, np.random.default_rng(seed))
    return GpEnvironmentModel(env_id or train_set.env_id, cfg, mean, x[idx], y[idx],
                              segment(x, thresholds), thresholds)


def _blocks(n):
    for start in range(0, n, _BLOCK):
        yield slice(start, min(start + _BLOCK, n))


def predict_mean(model: GpEnvironmentModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    out = model.mean(x)
    for sl in _blocks(x.size):
        out[sl] += model.kernel(x[sl], model.x_train) @ model.alpha
    return out


def predict_cov(model: GpEnvironmentModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    cross = model.kernel(model.x_train, x)
    v = linalg.solve_triangular(model.chol, cross, lower=True, check_finite=False)
    cov = model.kernel(x, x) - v.T @ v
    return 0.5 * (cov + cov.T)


def predict_var(model: GpEnvironmentModel, x) -> np.ndarray:
    """Diagonal of :func:`predict_cov` without forming the full matrix."""
    x = np.asarray(x, dtype=float).ravel()
    out = np.empty(x.size)
    for sl in _blocks(x.size):
        v = linalg.solve_triangular(model.chol, model.kernel(model.x_train, x[sl]),
                                    lower=True, check_finite=False)
        out[sl] = 1.0 - np.einsum("ij,ij->j", v, v)
    return out


def gaussian_logpdf(residual, cov) -> float:
    """Multivariate normal log density via a Cholesky log-determinant."""
    residual = np.asarray(residual, dtype=float).ravel()
    chol, _ = cholesky_with_jitter(cov, what="predictive covariance")
    z = linalg.solve_triangular(chol, residual, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (z @ z) - 0.5 * logdet - 0.5 * residual.size * np.log(2.0 * np.pi))


def log_likelihood(model: GpEnvironmentModel, x, y) -> float:
    """Log density (nats) of ranges ``y`` at inputs ``x`` under the predictive GP.

    Covariance is the posterior covariance of ``f`` plus the observation noise.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size or x.size == 0:
        raise ValueError("x and y must be non-empty and of equal length")
    cov = predict_cov(model, x)
    cov[np.diag_indices_from(cov)] += model.kernel.noise_variance
    return gaussian_logpdf(y - predict_mean(model, x), cov)


# ---------------------------------------------------------------------------
# persistence

def model_to_dict(model: GpEnvironmentModel) -> dict:
    k = model.kernel
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "env_id": model.env_id,
        "kernel": {"kind": k.kind, "length_scale": k.length_scale,
                   "noise_variance": k.noise_variance, "jitter": k.jitter, "alpha": k.alpha},
        "mean": {"slope": model.mean.slope, "intercept": model.mean.intercept,
                 "residual_std": model.mean.residual_std},
        "thresholds": {"phi_min": model.thresholds.phi_min, "phi_max": model.thresholds.phi_max},
        "v_l": [model.v_l.v1, model.v_l.v2, model.v_l.v3],
        "x_train": model.x_train.tolist(),
        "y_train": model.y_train.tolist(),
    }


def model_from_dict(data: dict) -> GpEnvironmentModel:
    if data.get("format") != MODEL_FORMAT:
        raise ValueError("not an rfidgp model file")
    if data.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {data.get('version')!r}")
    return GpEnvironmentModel(
        data["env_id"], KernelConfig(**data["kernel"]), MeanFunction(**data["mean"]),
        np.array(data["x_train"], dtype=float), np.array(data["y_train"], dtype=float),
        SegmentationVector(*data["v_l"]), SegmentationThresholds(**data["thresholds"]))


def save_model(model: GpEnvironmentModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> GpEnvironmentModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
