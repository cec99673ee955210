"""Synthetic RFID phase-difference environments.

Each environment is described by an :class:`EnvironmentSpec`.  Samples follow a
linear phase-difference/distance trend with Gaussian phase noise, sparse
heavy-tailed (Laplace) multipath spikes whose RSSI shows a matching trough, and
dead zones in which the tag is never read.

The noise families (Gaussian, Laplace, one-sided RSSI trough) are modelling
stand-ins chosen to reproduce the qualitative field behaviour; they are not
measured distributions.
"""
from __future__ import annotations

import configparser
import csv
import io
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
F1_DEFAULT = 902.75e6
F2_DEFAULT = 903.75e6
TWO_PI = 2.0 * np.pi

CSV_COLUMNS = ("tag_id", "t", "delta_phi", "rssi", "f1", "f2", "angle", "true_distance")
DEFAULT_ANTENNA = "A0"


@dataclass(frozen=True)
class DeadZone:
    """Closed (distance, angle) box in which the tag is undetectable."""

    d_lo: float
    d_hi: float
    a_lo: float
    a_hi: float

    def __post_init__(self):
        if not (self.d_lo < self.d_hi and self.a_lo < self.a_hi):
            raise ValueError(f"degenerate dead zone {self}")

    def contains(self, d, angle):
        d = np.asarray(d)
        angle = np.asarray(angle)
        return (d >= self.d_lo) & (d <= self.d_hi) & (angle >= self.a_lo) & (angle <= self.a_hi)


@dataclass(frozen=True)
class EnvironmentSpec:
    """Parameters of one synthetic RF environment.

    ``ripple_amplitude``/``ripple_period`` add a smooth, environment-specific
    interference pattern on top of the linear phase trend.  ``trough_depth`` is
    the RSSI drop (dB) that accompanies a phase spike.
    """

    id: str
    path_loss_exponent: float = 2.0
    rssi_ref: float = -40.0
    phase_offset: float = 0.0
    noise_sigma: float = 0.0
    spike_rate: float = 0.0
    spike_scale: float = 0.0
    dead_zones: tuple[DeadZone, ...] = ()
    seed: int = 0
    ripple_amplitude: float = 0.0
    ripple_period: float = 4.0
    rssi_sigma: float = 0.0
    trough_depth: float = 6.0
    f1: float = F1_DEFAULT
    f2: float = F2_DEFAULT

    def __post_init__(self):
        if not self.path_loss_exponent > 0:
            raise ValueError("path_loss_exponent must be > 0")
        if self.noise_sigma < 0 or self.rssi_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not 0.0 <= self.spike_rate <= 1.0:
            raise ValueError("spike_rate must lie in [0, 1]")
        if self.spike_scale < 0 or self.trough_depth <= 0:
            raise ValueError("spike_scale must be >= 0 and trough_depth > 0")
        if not self.ripple_period > 0:
            raise ValueError("ripple_period must be > 0")
        if not self.f2 > self.f1 > 0:
            raise ValueError("carrier frequencies must satisfy 0 < f1 < f2")
        object.__setattr__(self, "dead_zones", tuple(self.dead_zones))

    @property
    def delta_f(self) -> float:
        return self.f2 - self.f1

    def in_dead_zone(self, d, angle):
        mask = np.zeros(np.broadcast(np.asarray(d), np.asarray(angle)).shape, dtype=bool)
        for zone in self.dead_zones:
            mask |= zone.contains(d, angle)
        return mask

    def perturbed(self, **changes) -> "EnvironmentSpec":
        return replace(self, **changes)


@dataclass(frozen=True)
class SignalSample:
    tag_id: str
    t: float
    delta_phi: float
    rssi: float
    f1: float
    f2: float
    angle: float
    true_distance: float = math.nan
    antenna_id: str = DEFAULT_ANTENNA


class EnvironmentDataset:
    """Column-oriented collection of :class:`SignalSample` records.

    Columns are numpy arrays so that the GP, KNN and segmentation code can work
    on them directly.  ``samples`` yields row objects for callers that want
    them.
    """

    def __init__(self, env_id, tag_id, t, delta_phi, rssi, f1, f2, angle,
                 true_distance=None, antenna_id=None, split_fraction=0.8):
        n = len(t)
        self.env_id = str(env_id)
        self.tag_id = _str_column(tag_id, n, "T0")
        self.t = np.asarray(t, dtype=float)
        self.delta_phi = np.asarray(delta_phi, dtype=float)
        self.rssi = np.asarray(rssi, dtype=float)
        self.f1 = np.broadcast_to(np.asarray(f1, dtype=float), (n,)).copy()
        self.f2 = np.broadcast_to(np.asarray(f2, dtype=float), (n,)).copy()
        self.angle = np.asarray(angle, dtype=float)
        if true_distance is None:
            true_distance = np.full(n, np.nan)
        self.true_distance = np.asarray(true_distance, dtype=float)
        self.antenna_id = _str_column(antenna_id, n, DEFAULT_ANTENNA)
        if not 0.0 < split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")
        self.split_fraction = float(split_fraction)
        for name in ("delta_phi", "rssi", "angle", "true_distance"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"column {name} has wrong length")
        if np.any(self.f2 <= self.f1):
            raise ValueError("every sample needs f2 > f1")

    def __len__(self):
        return len(self.t)

    def __iter__(self) -> Iterator[SignalSample]:
        return iter(self.samples)

    @property
    def samples(self) -> list[SignalSample]:
        return [
            SignalSample(self.tag_id[i], self.t[i], self.delta_phi[i], self.rssi[i],
                         self.f1[i], self.f2[i], self.angle[i], self.true_distance[i],
                         self.antenna_id[i])
            for i in range(len(self))
        ]

    @property
    def labeled(self) -> bool:
        return len(self) > 0 and not np.any(np.isnan(self.true_distance))

    @property
    def has_antennas(self) -> bool:
        return bool(np.any(self.antenna_id != DEFAULT_ANTENNA))

    def subset(self, index) -> "EnvironmentDataset":
        index = np.asarray(index)
        return EnvironmentDataset(
            self.env_id, self.tag_id[index], self.t[index], self.delta_phi[index],
            self.rssi[index], self.f1[index], self.f2[index], self.angle[index],
            self.true_distance[index], self.antenna_id[index], self.split_fraction)

    def position_keys(self) -> np.ndarray:
        """Integer label of the (distance, angle) grid position of each sample."""
        if not self.labeled:
            raise ValueError("position keys need labeled samples")
        pairs = np.column_stack([np.round(self.true_distance, 9), np.round(self.angle, 9)])
        _, inverse = np.unique(pairs, axis=0, return_inverse=True)
        return inverse.ravel()

    @classmethod
    def concatenate(cls, parts: Sequence["EnvironmentDataset"], env_id=None) -> "EnvironmentDataset":
        if not parts:
            raise ValueError("nothing to concatenate")
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        return cls(env_id or parts[0].env_id, cat("tag_id"), cat("t"), cat("delta_phi"),
                   cat("rssi"), cat("f1"), cat("f2"), cat("angle"), cat("true_distance"),
                   cat("antenna_id"), parts[0].split_fraction)


def _str_column(values, n, default):
    if values is None:
        return np.full(n, default, dtype=object)
    if isinstance(values, str):
        return np.full(n, values, dtype=object)
    out = np.asarray(values, dtype=object)
    if out.shape != (n,):
        raise ValueError("string column has wrong length")
    return out


def wrap_phase(phi):
    """Wrap to [0, 2*pi)."""
    out = np.mod(phi, TWO_PI)
    # np.mod can return 2*pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


def ideal_phase_difference(d, delta_f):
    """Unwrapped phase difference ``4*pi*delta_f*d/c`` (rad) at distance ``d`` (m)."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 0) or np.any(np.isnan(d_arr)):
        raise ValueError("distance must be >= 0")
    if not delta_f > 0:
        raise ValueError("delta_f must be > 0")
    out = 4.0 * np.pi * delta_f * d_arr / SPEED_OF_LIGHT
    return float(out) if out.ndim == 0 else out


def ideal_rssi(d, spec: EnvironmentSpec):
    """Log-distance path loss relative to the 1 m reference."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 1.0) or np.any(np.isnan(d_arr)):
        raise ValueError("distance is below the 1 m reference distance")
    out = spec.rssi_ref - 10.0 * spec.path_loss_exponent * np.log10(d_arr)
    return float(out) if out.ndim == 0 else out


def survey_grid():
    """Distances 2-20 m every 0.5 m and bearings -30..30 deg every 15 deg."""
    distances = np.round(np.arange(2.0, 20.0 + 1e-9, 0.5), 10)
    angles = np.arange(-30.0, 30.0 + 1e-9, 15.0)
    return distances, angles


DEFAULT_SAMPLES_PER_POSITION = 145


def draw_signal(spec: EnvironmentSpec, d, rng: np.random.Generator):
    """Draw phase differences and RSSI for the distances ``d``.

    Returns ``(delta_phi, rssi, spiked)`` where ``spiked`` flags samples hit by a
    multipath spike.
    """
    d = np.asarray(d, dtype=float)
    n = d.shape[0]
    clean = ideal_phase_difference(d, spec.delta_f) + spec.phase_offset
    if spec.ripple_amplitude:
        clean = clean + spec.ripple_amplitude * np.sin(TWO_PI * d / spec.ripple_period)
    noise = rng.normal(0.0, spec.noise_sigma, n) if spec.noise_sigma > 0 else np.zeros(n)
    spiked = rng.random(n) < spec.spike_rate
    spikes = np.zeros(n)
    if spec.spike_scale > 0:
        spikes[spiked] = rng.laplace(0.0, spec.spike_scale, int(spiked.sum()))
    delta_phi = wrap_phase(clean + noise + spikes)

    rssi = ideal_rssi(np.maximum(d, 1.0), spec) * np.ones(n)
    wobble = rng.normal(0.0, spec.rssi_sigma, n) if spec.rssi_sigma > 0 else np.zeros(n)
    rel = np.abs(spikes) / spec.spike_scale if spec.spike_scale > 0 else np.zeros(n)
    trough = spec.trough_depth * (1.0 + rel) + np.abs(wobble)
    rssi = np.where(spiked, rssi - trough, rssi + wobble)
    return delta_phi, rssi, spiked


def generate_dataset(spec: EnvironmentSpec, distances=None, angles=None,
                     samples_per_position: int | None = None, rate: float = 50.0,
                     tag_id: str = "T0", split_fraction: float = 0.8) -> EnvironmentDataset:
    """Simulate a static single-tag survey over a distance x bearing grid.

    Grid positions inside a dead zone emit no samples.  Time stamps run
    continuously at ``rate`` Hz across positions in grid order.
    """
    if distances is None or angles is None:
        d_default, a_default = survey_grid()
        distances = d_default if distances is None else distances
        angles = a_default if angles is None else angles
    if samples_per_position is None:
        samples_per_position = DEFAULT_SAMPLES_PER_POSITION
    distances = np.atleast_1d(np.asarray(distances, dtype=float))
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    if distances.size == 0 or angles.size == 0:
        raise ValueError("grid must be non-empty")
    if samples_per_position < 1:
        raise ValueError("samples_per_position must be >= 1")
    if not rate > 0:
        raise ValueError("rate must be > 0")

    dd, aa = np.meshgrid(distances, angles, indexing="ij")
    dd, aa = dd.ravel(), aa.ravel()
    live = ~spec.in_dead_zone(dd, aa)
    d_col = np.repeat(dd[live], samples_per_position)
    a_col = np.repeat(aa[live], samples_per_position)
    rng = np.random.default_rng(spec.seed)
    delta_phi, rssi, _ = draw_signal(spec, d_col, rng)
    t = np.arange(d_col.size) / rate
    return EnvironmentDataset(spec.id, tag_id, t, delta_phi, rssi, spec.f1, spec.f2,
                              a_col, d_col, None, split_fraction)


def split_dataset(ds: EnvironmentDataset, fraction: float | None = None, seed: int = 0):
    """Stratified train/test split; every grid position keeps >=1 sample on each side.

    The overall train size is ``round(len(ds) * fraction)`` whenever the
    per-position bounds allow it.  Both halves keep the original sample order.
    """
    fraction = ds.split_fraction if fraction is None else fraction
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    keys = ds.position_keys()
    groups = [np.flatnonzero(keys == k) for k in range(keys.max() + 1)]
    sizes = np.array([g.size for g in groups])
    if np.any(sizes < 2):
        raise ValueError("stratified split needs >= 2 samples at every position")

    # largest-remainder allocation with 1 <= n_train <= size - 1 per position
    exact = sizes * fraction
    alloc = np.clip(np.floor(exact).astype(int), 1, sizes - 1)
    target = int(round(len(ds) * fraction))
    remainder = exact - np.floor(exact)
    order = np.argsort(-remainder, kind="stable")
    for k in order:
        if alloc.sum() >= target:
            break
        if alloc[k] < sizes[k] - 1:
            alloc[k] += 1
    for k in order[::-1]:
        if alloc.sum() <= target:
            break
        if alloc[k] > 1:
            alloc[k] -= 1

    rng = np.random.default_rng(seed)
    train_mask = np.zeros(len(ds), dtype=bool)
    for g, n_train in zip(groups, alloc):
        train_mask[rng.permutation(g)[:n_train]] = True
    return ds.subset(np.flatnonzero(train_mask)), ds.subset(np.flatnonzero(~train_mask))


DEFAULT_REGION = ((3.0, 12.0), (4.0, 16.0))


def simulate_tracks(spec: EnvironmentSpec, antennas, n_tags: int = 8, duration: float = 60.0,
                    update_rate: float = 2.0, speed: float = 1.3, region=DEFAULT_REGION,
                    seed: int | None = None, obstruction_rate: float = 0.002):
    """Simulate tags walking inside ``region`` and read by every antenna each epoch.

    ``antennas`` are objects with ``id``, ``position`` and ``boresight`` (deg).
    Each extra tag present raises the spike rate by ``obstruction_rate`` to mimic
    physical blockage.  Tags are queried one at a time, so each tag's epoch is
    offset by a fraction of the update period.

    Returns ``(stream, truth)`` with ``truth[tag_id] = (epoch_times, xy)``.
    """
    if n_tags < 1 or duration <= 0 or update_rate <= 0 or speed < 0:
        raise ValueError("invalid track simulation parameters")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    crowded = replace(spec, spike_rate=min(1.0, spec.spike_rate + obstruction_rate * (n_tags - 1)))
    (x_lo, x_hi), (y_lo, y_hi) = region
    n_epochs = int(round(duration * update_rate))
    dt = 1.0 / update_rate
    ant_xy = np.array([a.position for a in antennas], dtype=float)
    boresight = np.array([a.boresight for a in antennas], dtype=float)
    ant_ids = np.array([a.id for a in antennas], dtype=object)

    parts, truth = [], {}
    for k in range(n_tags):
        tag = f"T{k}"
        xy = np.empty((n_epochs, 2))
        pos = np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi)])
        heading = rng.uniform(0.0, TWO_PI)
        for e in range(n_epochs):
            xy[e] = pos
            heading += rng.normal(0.0, 0.4)
            step = speed * dt * rng.uniform(0.0, 1.0)
            nxt = pos + step * np.array([np.cos(heading), np.sin(heading)])
            if not (x_lo <= nxt[0] <= x_hi):
                heading = np.pi - heading
                nxt[0] = np.clip(nxt[0], x_lo, x_hi)
            if not (y_lo <= nxt[1] <= y_hi):
                heading = -heading
                nxt[1] = np.clip(nxt[1], y_lo, y_hi)
            pos = nxt
        t_epoch = np.arange(n_epochs) * dt + k * dt / n_tags
        truth[tag] = (t_epoch, xy)

        rel = xy[:, None, :] - ant_xy[None, :, :]
        dist = np.linalg.norm(rel, axis=2)
        bearing = np.degrees(np.arctan2(rel[..., 1], rel[..., 0])) - boresight[None, :]
        bearing = (bearing + 180.0) % 360.0 - 180.0
        d_col, a_col = dist.ravel(), bearing.ravel()
        t_col = np.repeat(t_epoch, len(antennas))
        id_col = np.tile(ant_ids, n_epochs)
        live = ~spec.in_dead_zone(d_col, a_col)
        delta_phi, rssi, _ = draw_signal(crowded, d_col[live], rng)
        parts.append(EnvironmentDataset(spec.id, tag, t_col[live], delta_phi, rssi, spec.f1,
                                        spec.f2, a_col[live], d_col[live], id_col[live]))
    return EnvironmentDataset.concatenate(parts), truth


# ---------------------------------------------------------------------------
# file formats

def write_dataset_csv(ds: EnvironmentDataset, path) -> None:
    Path(path).write_text(dataset_to_csv(ds), encoding="utf-8")


def dataset_to_csv(ds: EnvironmentDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    with_antennas = ds.has_antennas
    columns = CSV_COLUMNS + (("antenna_id",) if with_antennas else ())
    writer.writerow(columns)
    for i in range(len(ds)):
        row = [ds.tag_id[i], repr(float(ds.t[i])), repr(float(ds.delta_phi[i])),
               repr(float(ds.rssi[i])), repr(float(ds.f1[i])), repr(float(ds.f2[i])),
               repr(float(ds.angle[i])),
               "" if np.isnan(ds.true_distance[i]) else repr(float(ds.true_distance[i]))]
        if with_antennas:
            row.append(ds.antenna_id[i])
        writer.writerow(row)
    return buf.getvalue()


def read_dataset_csv(path, env_id: str | None = None) -> EnvironmentDataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        rows = list(reader)
    num = lambda key: np.array([float(r[key]) if r[key] != "" else np.nan for r in rows])  # noqa: E731
    antenna = None
    if "antenna_id" in (reader.fieldnames or []):
        antenna = np.array([r["antenna_id"] for r in rows], dtype=object)
    return EnvironmentDataset(env_id or path.stem, np.array([r["tag_id"] for r in rows], dtype=object),
                              num("t"), num("delta_phi"), num("rssi"), num("f1"), num("f2"),
                              num("angle"), num("true_distance"), antenna)


_FLOAT_FIELDS = {f.name for f in fields(EnvironmentSpec)} - {"id", "dead_zones", "seed"}


def spec_to_config(spec: EnvironmentSpec) -> str:
    lines = ["[environment]", f"id = {spec.id}"]
    for f in fields(EnvironmentSpec):
        if f.name in _FLOAT_FIELDS:
            lines.append(f"{f.name} = {getattr(spec, f.name)!r}")
    lines.append(f"seed = {spec.seed}")
    zones = "; ".join(f"{z.d_lo!r}:{z.d_hi!r} @ {z.a_lo!r}:{z.a_hi!r}" for z in spec.dead_zones)
    lines.append(f"dead_zones = {zones}")
    return "\n".join(lines) + "\n"


def spec_from_config(text: str) -> EnvironmentSpec:
    """Parse ``key = value`` lines (an optional ``[environment]`` header is allowed).

    Dead zones are written ``d_lo:d_hi @ a_lo:a_hi`` and separated by ``;``.
    """
    if not any(line.strip().startswith("[") for line in text.splitlines()):
        text = "[environment]\n" + text
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string(text)
    section = parser["environment"]
    unknown = set(section) - _FLOAT_FIELDS - {"id", "dead_zones", "seed"}
    if unknown:
        raise ValueError(f"unknown environment keys: {sorted(unknown)}")
    if "id" not in section:
        raise ValueError("environment config needs an id")
    kwargs = {k: float(section[k]) for k in section if k in _FLOAT_FIELDS}
    zones = []
    for chunk in section.get("dead_zones", "").split(";"):
        if not chunk.strip():
            continue
        dist, ang = chunk.split("@")
        d_lo, d_hi = (float(v) for v in dist.split(":"))
        a_lo, a_hi = (float(v) for v in ang.split(":"))
        zones.append(DeadZone(d_lo, d_hi, a_lo, a_hi))
    return EnvironmentSpec(id=section["id"].strip(), dead_zones=tuple(zones),
                           seed=int(section.get("seed", "0")), **kwargs)


def load_spec(path) -> EnvironmentSpec:
    return spec_from_config(Path(path).read_text(encoding="utf-8"))


def save_spec(spec: EnvironmentSpec, path) -> None:
    Path(path).write_text(spec_to_config(spec), encoding="utf-8")


PRESET_DIR = Path(__file__).parent / "presets"


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.cfg"))


def load_preset(name: str) -> EnvironmentSpec:
    path = PRESET_DIR / f"{name}.cfg"
    if not path.exists():
        raise KeyError(f"no preset named {name!r}; have {preset_names()}")
    return load_spec(path)
