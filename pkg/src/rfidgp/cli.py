"""Command-line entry point: ``rfidgp {simulate,train,classify,localize,bench}``.

Exit codes: 0 success, 2 validation error, 3 numerical error, 4 I/O error.
Every failure prints a single ``rfidgp: error: ...`` line on stderr.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bench, env_dictionary, gp_engine, pipeline, ranging, signal_sim
from .env_dictionary import ModelDictionary, select_model
from .gp_engine import KernelConfig

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "seed": None,
    "kernel": "rbf",
    "length_scale": gp_engine.DEFAULT_LENGTH_SCALE,
    "noise_var": gp_engine.DEFAULT_NOISE_VARIANCE,
    "cap": gp_engine.DEFAULT_CAP,
    "k": ranging.DEFAULT_K,
    "kin_bound": ranging.DEFAULT_KIN_BOUND,
    "max_speed": None,
    "threads": 1,
    "trials": 100,
    "split": 0.8,
    "tags": None,
    "duration": 60.0,
    "env_id": None,
    "samples": pipeline.SELECTION_SAMPLES,
}
_INT_KEYS = {"seed", "cap", "k", "threads", "trials", "tags", "samples"}
_FLOAT_KEYS = {"length_scale", "noise_var", "kin_bound", "max_speed", "split", "duration"}
_PATH_KEYS = {"spec", "dict", "in", "out", "antennas", "truth"}


class ValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


@dataclass
class RunConfig:
    """Resolved options for one command; flags win over the ``--config`` file."""
    command: str
    spec: Path | None = None
    preset: str | None = None
    dict: Path | None = None
    input: Path | None = None
    out: Path | None = None
    antennas: Path | None = None
    truth: Path | None = None
    seed: int | None = None
    kernel: str = "rbf"
    length_scale: float = gp_engine.DEFAULT_LENGTH_SCALE
    noise_var: float = gp_engine.DEFAULT_NOISE_VARIANCE
    cap: int = gp_engine.DEFAULT_CAP
    k: int = ranging.DEFAULT_K
    kin_bound: float = ranging.DEFAULT_KIN_BOUND
    max_speed: float | None = None
    threads: int = 1
    trials: int = 100
    split: float = 0.8
    tags: int | None = None
    duration: float = 60.0
    env_id: str | None = None
    samples: int = pipeline.SELECTION_SAMPLES
    only: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kernel not in gp_engine.KERNELS:
            raise ValidationError(f"--kernel must be one of {', '.join(gp_engine.KERNELS)}")
        for name in ("length_scale", "noise_var", "kin_bound", "duration"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"--{name.replace('_', '-')} must be positive")
        if self.max_speed is not None and not self.max_speed > 0:
            raise ValidationError("--max-speed must be positive")
        for name in ("cap", "k", "threads", "trials"):
            if getattr(self, name) < 1:
                raise ValidationError(f"--{name} must be at least 1")
        if self.samples < env_dictionary.MIN_STREAM:
            raise ValidationError(f"--samples must be at least {env_dictionary.MIN_STREAM}")
        if self.tags is not None and self.tags < 1:
            raise ValidationError("--tags must be at least 1")
        if not 0.0 < self.split <= 1.0:
            raise ValidationError("--split must lie in (0, 1]")
        if self.seed is not None and self.seed < 0:
            raise ValidationError("--seed must be non-negative")
        for name in ("spec", "dict", "input", "out", "antennas", "truth"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, Path(value).expanduser().resolve())
        unknown = set(self.only) - set(bench.EXPERIMENTS)
        if unknown:
            raise ValidationError(f"unknown experiment(s): {', '.join(sorted(unknown))}")

    @property
    def kernel_config(self) -> KernelConfig:
        return KernelConfig(kind=self.kernel, length_scale=self.length_scale,
                            noise_variance=self.noise_var)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file with a [run] section of option defaults")
    common.add_argument("--spec", help="environment spec file")
    common.add_argument("--preset", help="built-in environment preset name")
    common.add_argument("--dict", help="model dictionary directory (or a single model file)")
    common.add_argument("--in", dest="input", help="input dataset or stream CSV")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--antennas", help="antenna layout CSV (id,x,y,boresight)")
    common.add_argument("--truth", help="ground-truth positions CSV (tag_id,t,x,y)")
    common.add_argument("--seed", type=int)
    common.add_argument("--kernel", choices=gp_engine.KERNELS)
    common.add_argument("--length-scale", type=float)
    common.add_argument("--noise-var", type=float)
    common.add_argument("--cap", type=int)
    common.add_argument("--k", type=int)
    common.add_argument("--kin-bound", type=float)
    common.add_argument("--max-speed", type=float, help="velocity bound in m/s (scales with dt)")
    common.add_argument("--threads", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--split", type=float, help="training fraction (1 trains on everything)")
    common.add_argument("--tags", type=int, help="simulate moving tags instead of the survey grid")
    common.add_argument("--duration", type=float, help="track duration in seconds")
    common.add_argument("--env-id", help="environment id stored in the trained model")
    common.add_argument("--samples", type=int, help="stream samples used for model selection")
    common.add_argument("--only", action="append", default=[], help="bench experiment to run")

    parser = _Parser(prog="rfidgp", description="Phase-difference RFID ranging and localization.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="write a simulated dataset or tag stream")
    sub.add_parser("train", parents=[common], help="train a GP model, optionally into a dictionary")
    sub.add_parser("classify", parents=[common], help="select the best dictionary model for a stream")
    sub.add_parser("localize", parents=[common], help="range and fix every tag in a stream")
    sub.add_parser("bench", parents=[common], help="run the seeded experiment suite")
    return parser


def _read_config(path: Path) -> dict:
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(f"cannot read config file {path}")
    if not parser.has_section("run"):
        raise ValidationError(f"{path}: missing [run] section")
    out = {}
    for key, raw in parser["run"].items():
        key = key.replace("-", "_")
        if key == "in":
            key = "input"
        try:
            if key in _INT_KEYS:
                out[key] = int(raw)
            elif key in _FLOAT_KEYS:
                out[key] = float(raw)
            elif key == "only":
                out[key] = tuple(s.strip() for s in raw.split(",") if s.strip())
            elif key in {"input", "kernel", "preset", "env_id"} | _PATH_KEYS:
                out[key] = raw.strip()
                if key in _PATH_KEYS | {"input"}:
                    out[key] = str((path.parent / out[key]).expanduser())
            else:
                raise ValidationError(f"{path}: unknown option {key!r}")
        except ValueError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"{path}: bad value for {key!r}: {raw!r}") from exc
    return out


def resolve_config(argv) -> RunConfig:
    args = build_parser().parse_args(argv)
    merged = dict(DEFAULTS)
    if args.config is not None:
        merged.update(_read_config(args.config))
    for key, value in vars(args).items():
        if key in ("config", "command"):
            continue
        if key == "only":
            if value:
                merged["only"] = tuple(value)
        elif value is not None:
            merged[key] = value
    return RunConfig(command=args.command, **merged)


# ---------------------------------------------------------------------------
# commands

def _require(value, flag):
    if value is None:
        raise ValidationError(f"{flag} is required")
    return value


def _load_spec(cfg: RunConfig) -> signal_sim.EnvironmentSpec:
    if cfg.spec is not None and cfg.preset is not None:
        raise ValidationError("give either --spec or --preset, not both")
    if cfg.spec is not None:
        spec = signal_sim.load_spec(cfg.spec)
    elif cfg.preset is not None:
        if cfg.preset not in signal_sim.preset_names():
            raise ValidationError(f"unknown preset {cfg.preset!r}")
        spec = signal_sim.load_preset(cfg.preset)
    else:
        raise ValidationError("--spec or --preset is required")
    return spec if cfg.seed is None else spec.perturbed(seed=cfg.seed)


def _antennas(cfg: RunConfig):
    return ranging.read_antennas_csv(cfg.antennas) if cfg.antennas else list(pipeline.DEFAULT_ANTENNAS)


def write_truth_csv(truth: dict, path) -> None:
    lines = ["tag_id,t,x,y"]
    for tag, (t, xy) in truth.items():
        lines += [f"{tag},{float(ti)!r},{float(p[0])!r},{float(p[1])!r}" for ti, p in zip(t, xy)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_truth_csv(path) -> dict:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    grouped: dict[str, list] = {}
    for r in rows:
        grouped.setdefault(r["tag_id"], []).append((float(r["t"]), float(r["x"]), float(r["y"])))
    return {tag: (np.array([v[0] for v in vals]), np.array([[v[1], v[2]] for v in vals]))
            for tag, vals in grouped.items()}


def cmd_simulate(cfg: RunConfig) -> int:
    spec = _load_spec(cfg)
    out = _require(cfg.out, "--out")
    out.parent.mkdir(parents=True, exist_ok=True)
    if cfg.tags is None:
        ds = signal_sim.generate_dataset(spec)
        signal_sim.write_dataset_csv(ds, out)
        keys, counts = np.unique(ds.position_keys(), return_counts=True)
        print(f"{spec.id}: {len(ds)} samples at {keys.size} positions "
              f"({counts.min()}-{counts.max()} per position) -> {out}")
        return EXIT_OK
    antennas = _antennas(cfg)
    ds, truth = signal_sim.simulate_tracks(spec, antennas, n_tags=cfg.tags, duration=cfg.duration,
                                           seed=spec.seed)
    signal_sim.write_dataset_csv(ds, out)
    truth_path = cfg.truth or out.with_suffix(".truth.csv")
    write_truth_csv(truth, truth_path)
    print(f"{spec.id}: {cfg.tags} tags, {len(ds)} readings from {len(antennas)} antennas -> {out}; "
          f"truth -> {truth_path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    data = signal_sim.read_dataset_csv(_require(cfg.input, "--in"), env_id=cfg.env_id)
    if not data.labeled:
        raise ValidationError(f"{cfg.input}: training data needs true_distance for every row")
    if cfg.out is None and cfg.dict is None:
        raise ValidationError("--out or --dict is required")
    seed = 0 if cfg.seed is None else cfg.seed
    train_set = data if cfg.split >= 1.0 else signal_sim.split_dataset(data, cfg.split, seed=seed)[0]
    thresholds = None
    dictionary = None
    if cfg.dict is not None and (cfg.dict / env_dictionary.MANIFEST).exists():
        dictionary = env_dictionary.load_dictionary(cfg.dict)
        thresholds = dictionary.thresholds
    model = gp_engine.train(train_set, cfg.kernel_config, cfg.cap, thresholds, seed=seed,
                            env_id=data.env_id)
    if cfg.out is not None:
        cfg.out.parent.mkdir(parents=True, exist_ok=True)
        gp_engine.save_model(model, cfg.out)
    if cfg.dict is not None:
        dictionary = (ModelDictionary([model]) if dictionary is None
                      else env_dictionary.add_model(dictionary, model))
        env_dictionary.save_dictionary(dictionary, cfg.dict)
    v = model.v_l
    resid = np.abs(gp_engine.predict_mean(model, model.x_train) - model.y_train)
    print(f"{model.env_id}: |X_t|={model.n_train} v_l=({v.v1:.2f}, {v.v2:.2f}, {v.v3:.2f}) "
          f"mean slope={model.mean.slope:.6g} intercept={model.mean.intercept:.6g} "
          f"train residual mean={resid.mean():.4g} m")
    return EXIT_OK


def _load_models(cfg: RunConfig):
    path = _require(cfg.dict, "--dict")
    if path.is_file():
        return gp_engine.load_model(path)
    return env_dictionary.load_dictionary(path)


def cmd_classify(cfg: RunConfig) -> int:
    models = _load_models(cfg)
    dictionary = models if isinstance(models, ModelDictionary) else ModelDictionary([models])
    stream = signal_sim.read_dataset_csv(_require(cfg.input, "--in"))
    x = pipeline.selection_subset(stream.delta_phi, cfg.samples)
    report = select_model(dictionary, x, threads=cfg.threads)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if cfg.out is not None:
        cfg.out.parent.mkdir(parents=True, exist_ok=True)
        cfg.out.write_text(text, encoding="utf-8")
    for env, w, li, sc in zip(report.env_ids, report.weights, report.likelihoods, report.weighted_scores):
        print(f"  {env}: w={w:.4g} L={li:.6g} score={sc:.6g}")
    print(f"chosen: {report.chosen_env_id}")
    return EXIT_OK


def cmd_localize(cfg: RunConfig) -> int:
    models = _load_models(cfg)
    stream = signal_sim.read_dataset_csv(_require(cfg.input, "--in"))
    out = _require(cfg.out, "--out")
    truth = read_truth_csv(cfg.truth) if cfg.truth else None
    if isinstance(models, ModelDictionary) and len(models) > 1 and len(stream) < env_dictionary.MIN_STREAM:
        raise ValidationError(f"stream has {len(stream)} samples; selection needs "
                              f"at least {env_dictionary.MIN_STREAM}")
    result = pipeline.localize(stream, models, _antennas(cfg), cfg.kin_bound, cfg.max_speed,
                               cfg.threads, truth)
    track_dir = out / "tracks"
    track_dir.mkdir(parents=True, exist_ok=True)
    ranging.write_tracks_csv(result.tracks, out / "tracks.csv")
    for tr in result.tracks:
        ranging.write_tracks_csv([tr], track_dir / f"{tr.tag_id}.csv")
    summary = ranging.metrics_summary(result.tracks, result.model_env_id)
    if stream.labeled:
        for which in ("raw", "constrained"):
            errs = pipeline.pooled_errors(result.tracks, which)
            summary[f"pooled_{which}"] = ranging.error_metrics(errs, np.zeros_like(errs)).to_dict()
    ranging.write_metrics_json(summary, out / "metrics.json")
    if result.selection is not None:
        (out / "selection.json").write_text(
            json.dumps(result.selection.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    line = f"model {result.model_env_id}: {len(result.tracks)} tags -> {out}"
    if stream.labeled:
        line += (f"; mean range error raw={summary['pooled_raw']['mean']:.3f} m "
                 f"constrained={summary['pooled_constrained']['mean']:.3f} m")
    print(line)
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    out = _require(cfg.out, "--out")
    seeds = (0 if cfg.seed is None else cfg.seed,)
    results = bench.run_all(seeds=seeds, trials=cfg.trials, names=cfg.only or None, out_dir=out,
                            cap=cfg.cap, kernel=cfg.kernel_config, k=cfg.k)
    for res in results.values():
        print(res.summary(), end="")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "classify": cmd_classify,
            "localize": cmd_localize, "bench": cmd_bench}


def _one_line(exc: BaseException) -> str:
    text = str(exc) or type(exc).__name__
    return " ".join(text.split())


def main(argv=None) -> int:
    try:
        cfg = resolve_config(sys.argv[1:] if argv is None else argv)
        return COMMANDS[cfg.command](cfg)
    except (np.linalg.LinAlgError, ranging.ConvergenceError, FloatingPointError, ArithmeticError) as exc:
        code, exc_ = EXIT_NUMERICAL, exc
    except (ValueError, KeyError, configparser.Error, csv.Error) as exc:
        code, exc_ = EXIT_VALIDATION, exc
    except OSError as exc:
        code, exc_ = EXIT_IO, exc
    print(f"rfidgp: error: {_one_line(exc_)}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
