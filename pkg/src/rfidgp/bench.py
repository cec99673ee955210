"""Seeded desk-scale experiments over the simulator presets.

Each ``exp_*`` function returns an :class:`ExperimentResult` whose ``checks``
hold the individual pass/fail outcomes.  Thresholds come from
``bench_thresholds.cfg`` next to this module.
"""
from __future__ import annotations

import configparser
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gp_engine, signal_sim
from .env_dictionary import ModelDictionary, segment_counts, select_model
from .gp_engine import DEFAULT_CAP, KernelConfig
from .pipeline import DEFAULT_ANTENNAS, localize, pooled_errors
from .ranging import DEFAULT_K, DEFAULT_KIN_BOUND, error_metrics, kinematic_constrain, knn_ranges

THRESHOLDS_FILE = Path(__file__).parent / "bench_thresholds.cfg"
KNN_SWEEP = (1, 3, 5, 9)
TRAINED_PRESETS = ("env_a", "env_b", "env_c", "env_d", "env_e", "env_f")
UNSEEN_PRESETS = ("unseen_a", "unseen_b", "unseen_c")


def load_thresholds(path=THRESHOLDS_FILE) -> dict:
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    sec = parser["thresholds"]
    out = {k: float(v) for k, v in sec.items() if k not in ("dissimilar_presets", "forest_presets",
                                                             "kernel_pair", "drift_preset")}
    for key in ("dissimilar_presets", "forest_presets", "kernel_pair"):
        out[key] = tuple(s.strip() for s in sec[key].split(",") if s.strip())
    out["drift_preset"] = sec["drift_preset"].strip()
    return out


@dataclass
class ExperimentResult:
    name: str
    seeds: list[int]
    per_seed: list[dict]
    checks: dict[str, bool] = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    @property
    def aggregate(self) -> dict:
        """Mean and std over seeds of every scalar per-seed metric."""
        keys = [k for k, v in self.per_seed[0].items() if isinstance(v, (int, float))]
        out = {}
        for k in keys:
            vals = np.array([s[k] for s in self.per_seed], dtype=float)
            with np.errstate(invalid="ignore"):
                out[k] = {"mean": float(vals.mean()), "std": float(vals.std())}
        return out

    def to_dict(self) -> dict:
        return {"name": self.name, "seeds": self.seeds, "per_seed": self.per_seed,
                "aggregate": self.aggregate, "checks": self.checks, "passed": self.passed,
                "details": self.details}

    def summary(self) -> str:
        lines = [f"{self.name}: {'PASS' if self.passed else 'FAIL'}"]
        lines += [f"  [{'pass' if ok else 'FAIL'}] {name}" for name, ok in self.checks.items()]
        for k, v in self.aggregate.items():
            lines.append(f"  {k}: {v['mean']:.4f} (std {v['std']:.4f})")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> Path:
        target = Path(out_dir) / self.name
        target.mkdir(parents=True, exist_ok=True)
        (target / "result.json").write_text(
            json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (target / "summary.txt").write_text(self.summary(), encoding="utf-8")
        for name, text in self.artifacts.items():
            (target / name).write_text(text, encoding="utf-8")
        return target


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Workbench:
    """Caches simulated datasets, splits and trained models for one seed."""

    def __init__(self, seed: int = 0, cap: int = DEFAULT_CAP, kernel: KernelConfig | None = None,
                 presets=TRAINED_PRESETS, samples_per_position: int | None = None):
        self.seed = seed
        self.cap = cap
        self.kernel = kernel or KernelConfig()
        self.presets = tuple(presets)
        self.samples_per_position = samples_per_position
        self._data, self._splits, self._models = {}, {}, {}

    def spec(self, name):
        spec = signal_sim.load_preset(name)
        return spec.perturbed(seed=spec.seed + 1000 * self.seed)

    def dataset(self, name):
        if name not in self._data:
            self._data[name] = signal_sim.generate_dataset(
                self.spec(name), samples_per_position=self.samples_per_position)
        return self._data[name]

    def split(self, name):
        if name not in self._splits:
            self._splits[name] = signal_sim.split_dataset(self.dataset(name), 0.8, seed=self.seed)
        return self._splits[name]

    def model(self, name, kernel: KernelConfig | None = None):
        kernel = kernel or self.kernel
        key = (name, kernel)
        if key not in self._models:
            self._models[key] = gp_engine.train(self.split(name)[0], kernel, self.cap, seed=self.seed)
        return self._models[key]

    def dictionary(self) -> ModelDictionary:
        return ModelDictionary([self.model(n) for n in self.presets])


def constrained_by_position(test, ranges, bound=DEFAULT_KIN_BOUND):
    """Apply the kinematic constraint to each static position's time series."""
    keys = test.position_keys()
    out = np.empty_like(ranges)
    for k in np.unique(keys):
        rows = np.flatnonzero(keys == k)
        out[rows] = kinematic_constrain(test.t[rows], ranges[rows], bound)
    return out


def _mean_err(est, truth):
    return float(np.mean(np.abs(est - truth)))


def _workbenches(seeds, **kw):
    return [Workbench(seed=s, **kw) for s in seeds]


# ---------------------------------------------------------------------------

def exp_model_choice(seeds=(0,), k: int = DEFAULT_K, bench=None) -> ExperimentResult:
    """Cross-evaluate every trained model on every test environment, GP against KNN."""
    th = load_thresholds()
    benches = bench or _workbenches(seeds)
    per_seed, details, artifacts = [], {}, {}
    ok_mismatch, ok_knn = True, True
    for wb in benches:
        names = wb.presets
        gp_err = np.zeros((len(names), len(names)))
        gp_p90 = np.zeros_like(gp_err)
        knn_err = np.zeros_like(gp_err)
        for i, env in enumerate(names):
            test = wb.split(env)[1]
            for j, mod in enumerate(names):
                pred = gp_engine.predict_mean(wb.model(mod), test.delta_phi)
                m = error_metrics(pred, test.true_distance)
                gp_err[i, j], gp_p90[i, j] = m.mean, m.p90
                train = wb.split(mod)[0]
                knn_err[i, j] = _mean_err(knn_ranges(train.delta_phi, train.true_distance,
                                                     test.delta_phi, k), test.true_distance)
        matched = np.diag(gp_err)
        off = gp_err + np.diag(np.full(len(names), np.inf))
        sweep = {}
        for kk in KNN_SWEEP:
            sweep[kk] = []
            for env in names:
                train, test = wb.split(env)
                sweep[kk].append(_mean_err(knn_ranges(train.delta_phi, train.true_distance,
                                                      test.delta_phi, kk), test.true_distance))
        n_mismatch = int(np.sum(matched < off.min(axis=1)))
        n_knn = int(np.sum(matched <= np.diag(knn_err)))
        ok_mismatch &= n_mismatch >= th["min_envs_matched_beats_mismatched"]
        ok_knn &= n_knn >= th["min_envs_gp_beats_knn"]
        per_seed.append({"envs_matched_beats_mismatched": n_mismatch, "envs_gp_beats_knn": n_knn,
                         "mean_matched_gp_error": float(matched.mean()),
                         "mean_matched_knn_error": float(np.diag(knn_err).mean())})
        details[f"seed_{wb.seed}"] = {"envs": list(names), "gp_mean_error": gp_err.tolist(),
                                      "gp_p90_error": gp_p90.tolist(), "knn_mean_error": knn_err.tolist(),
                                      "matched_knn_by_k": {str(kk): v for kk, v in sweep.items()}}
        csv_rows = ["seed,test_env,model_env,gp_mean,gp_p90,knn_mean"]
        csv_rows += [f"{wb.seed},{e},{m},{gp_err[i, j]!r},{gp_p90[i, j]!r},{knn_err[i, j]!r}"
                     for i, e in enumerate(names) for j, m in enumerate(names)]
        artifacts[f"error_matrix_seed{wb.seed}.csv"] = "\n".join(csv_rows) + "\n"
    return ExperimentResult("model_choice", [wb.seed for wb in benches], per_seed,
                            {"matched GP beats mismatched GP on enough presets": ok_mismatch,
                             "matched GP <= matched KNN on enough presets": ok_knn}, details, artifacts)


def exp_kinematic(seeds=(0,), bench=None) -> ExperimentResult:
    """Matched-model ranging with and without the per-step kinematic clamp."""
    th = load_thresholds()
    benches = bench or _workbenches(seeds)
    per_seed, details = [], {}
    ok_le, ok_sub = True, True
    for wb in benches:
        rows = {}
        for env in wb.presets:
            test = wb.split(env)[1]
            raw = gp_engine.predict_mean(wb.model(env), test.delta_phi)
            con = constrained_by_position(test, raw)
            rows[env] = {"full": _mean_err(raw, test.true_distance),
                         "constrained": _mean_err(con, test.true_distance)}
        n_le = sum(r["constrained"] <= r["full"] for r in rows.values())
        n_sub = sum(r["constrained"] < th["kin_mean_error_max"] for r in rows.values())
        ok_le &= n_le == len(rows)
        ok_sub &= n_sub >= th["min_envs_kin_submeter"]
        per_seed.append({"envs_constrained_le_full": n_le, "envs_constrained_submeter": n_sub})
        details[f"seed_{wb.seed}"] = rows
    return ExperimentResult("kinematic", [wb.seed for wb in benches], per_seed,
                            {"constrained <= full on every preset": ok_le,
                             "constrained sub-meter on enough presets": ok_sub}, details)


def exp_kernel_sweep(seeds=(0,), bench=None) -> ExperimentResult:
    """Correct/incorrect-environment RMSE for every kernel family."""
    th = load_thresholds()
    correct_env, wrong_env = th["kernel_pair"]
    benches = bench or _workbenches(seeds)
    per_seed, details, artifacts = [], {}, {}
    ok_best, ok_order = True, True
    for wb in benches:
        test = wb.split(correct_env)[1]
        table = {}
        for kind in gp_engine.KERNELS:
            kernel = KernelConfig(kind=kind, length_scale=wb.kernel.length_scale,
                                  noise_variance=wb.kernel.noise_variance)
            right = error_metrics(gp_engine.predict_mean(wb.model(correct_env, kernel), test.delta_phi),
                                  test.true_distance).rmse
            wrong = error_metrics(gp_engine.predict_mean(wb.model(wrong_env, kernel), test.delta_phi),
                                  test.true_distance).rmse
            table[kind] = {"correct_rmse": right, "incorrect_rmse": wrong}
        others = [v["correct_rmse"] for k, v in table.items() if k != "rbf"]
        ok_best &= table["rbf"]["correct_rmse"] < min(others)
        ok_order &= table["rbf"]["correct_rmse"] <= table["rbf"]["incorrect_rmse"]
        per_seed.append({f"{k}_correct_rmse": v["correct_rmse"] for k, v in table.items()})
        details[f"seed_{wb.seed}"] = table
        rows = ["kernel,correct_rmse,incorrect_rmse"]
        rows += [f"{k},{v['correct_rmse']!r},{v['incorrect_rmse']!r}" for k, v in table.items()]
        artifacts[f"kernel_table_seed{wb.seed}.csv"] = "\n".join(rows) + "\n"
    return ExperimentResult("kernel_sweep", [wb.seed for wb in benches], per_seed,
                            {"RBF strictly lowest correct-env RMSE": ok_best,
                             "RBF correct <= incorrect": ok_order}, details, artifacts)


def exp_selection_trials(trials: int = 100, subset: int | None = None, seeds=(0,),
                         bench=None) -> ExperimentResult:
    """Classify random sparse subsets of each preset's test stream against the dictionary."""
    th = load_thresholds()
    subset = int(th["selection_subset"]) if subset is None else subset
    benches = bench or _workbenches(seeds)
    per_seed, details = [], {}
    ok_acc, ok_seg = True, True
    for wb in benches:
        dictionary = wb.dictionary()
        names = list(wb.presets)
        confusion = np.zeros((len(names), len(names)), dtype=int)
        outcomes = {}
        for i, env in enumerate(names):
            test = wb.split(env)[1]
            rng = np.random.default_rng([wb.seed, i, 7])
            outcomes[env] = []
            for _ in range(trials):
                idx = np.sort(rng.choice(len(test), size=min(subset, len(test)), replace=False))
                x = test.delta_phi[idx]
                report = select_model(dictionary, x)
                counts = segment_counts(x, dictionary.thresholds)
                seg = report.input_segmentation
                ok_seg &= sum(counts) == x.size and abs(seg.v1 + seg.v2 + seg.v3 - 100.0) <= 1e-9
                confusion[i, report.chosen_index] += 1
                outcomes[env].append(report.chosen_env_id)
        accuracy = {env: confusion[i, i] / trials for i, env in enumerate(names)}
        for env in th["dissimilar_presets"]:
            ok_acc &= accuracy[env] >= th["selection_accuracy_min"]
        per_seed.append({f"accuracy_{env}": acc for env, acc in accuracy.items()})
        details[f"seed_{wb.seed}"] = {"envs": names, "confusion": confusion.tolist(),
                                      "outcomes": outcomes,
                                      "most_confused_with": {
                                          env: names[int(np.argmax(np.where(np.arange(len(names)) == i, -1, confusion[i])))]
                                          for i, env in enumerate(names)}}
    return ExperimentResult("selection_trials", [wb.seed for wb in benches], per_seed,
                            {"dissimilar presets classified >= threshold": ok_acc,
                             "segmentation sums to 100%": ok_seg}, details)


def _track_errors(stream, model, truth=None):
    res = localize(stream, model, DEFAULT_ANTENNAS, truth=truth)
    return pooled_errors(res.tracks, "raw"), pooled_errors(res.tracks, "constrained"), res


def simulate_tag_stream(spec, n_tags, seed, duration=None, obstruction_rate=None):
    th = load_thresholds()
    return signal_sim.simulate_tracks(
        spec, DEFAULT_ANTENNAS, n_tags=n_tags,
        duration=th["track_duration_s"] if duration is None else duration,
        update_rate=th["track_update_hz"], seed=seed,
        obstruction_rate=th["obstruction_rate"] if obstruction_rate is None else obstruction_rate)


def drifted(spec: signal_sim.EnvironmentSpec, seed: int) -> signal_sim.EnvironmentSpec:
    """The same site some months later: thinner vegetation, new clutter."""
    return spec.perturbed(phase_offset=spec.phase_offset + 0.005,
                          noise_sigma=spec.noise_sigma * 1.2,
                          spike_rate=min(1.0, spec.spike_rate * 1.5),
                          seed=spec.seed + 5000 + seed)


def exp_multitag_drift(seeds=(0,), bench=None) -> ExperimentResult:
    """Eight simultaneously deployed tags on a drifted site against the single-tag survey."""
    th = load_thresholds()
    benches = bench or _workbenches(seeds)
    per_seed, details = [], {}
    ok_z, ok_kin, ok_repro = True, True, True
    site = th["drift_preset"]
    for wb in benches:
        test = wb.split(site)[1]
        stream, truth = simulate_tag_stream(drifted(wb.spec(site), wb.seed), 8, seed=wb.seed + 11)
        rows = {}
        for mod in th["forest_presets"]:
            model = wb.model(mod)
            raw = gp_engine.predict_mean(model, test.delta_phi)
            st = {"full": np.abs(raw - test.true_distance),
                  "constrained": np.abs(constrained_by_position(test, raw) - test.true_distance)}
            again = np.abs(gp_engine.predict_mean(model, test.delta_phi) - test.true_distance)
            ok_repro &= bool(np.array_equal(again, st["full"]))
            mt_full, mt_con, _ = _track_errors(stream, model, truth)
            mt = {"full": mt_full, "constrained": mt_con}
            for kind in ("full", "constrained"):
                z = (mt[kind].mean() - st[kind].mean()) / st[kind].std()
                rows[f"{mod}/{kind}"] = {"mt_mean": float(mt[kind].mean()),
                                         "st_mean": float(st[kind].mean()),
                                         "st_std": float(st[kind].std()), "z": float(z)}
                ok_z &= abs(z) <= th["z_abs_max"]
            ok_kin &= mt["constrained"].mean() < th["kin_mean_error_max"]
        per_seed.append({f"{k}_z": v["z"] for k, v in rows.items()})
        details[f"seed_{wb.seed}"] = rows
    return ExperimentResult("multitag_drift", [wb.seed for wb in benches], per_seed,
                            {"|z| within one std": ok_z,
                             "multi-tag constrained sub-meter": ok_kin,
                             "single-tag baseline reproducible": ok_repro}, details)


def exp_unseen_env(seeds=(0,), unseen=UNSEEN_PRESETS, bench=None) -> ExperimentResult:
    """Tags in never-modelled environments ranged with the two forest models."""
    th = load_thresholds()
    benches = bench or _workbenches(seeds)
    per_seed, details = [], {}
    ok_kin, ok_full = True, True
    for wb in benches:
        rows = {}
        for env in unseen:
            stream, truth = simulate_tag_stream(wb.spec(env), 8, seed=wb.seed + 23)
            for mod in th["forest_presets"]:
                full, con, _ = _track_errors(stream, wb.model(mod), truth)
                rows[f"{env}/{mod}"] = {"full": float(full.mean()), "constrained": float(con.mean())}
                ok_kin &= con.mean() < th["kin_mean_error_max"]
                ok_full &= full.mean() < th["unseen_full_mean_error_max"]
        per_seed.append({"worst_full": max(r["full"] for r in rows.values()),
                         "worst_constrained": max(r["constrained"] for r in rows.values())})
        details[f"seed_{wb.seed}"] = rows
    return ExperimentResult("unseen_env", [wb.seed for wb in benches], per_seed,
                            {"constrained mean error below bound": ok_kin,
                             "full-data mean error below bound": ok_full}, details)


def exp_throughput(n_tags: int = 40, seeds=(0,), bench=None) -> ExperimentResult:
    """Tags localized per minute through the full select/range/fix chain."""
    th = load_thresholds()
    benches = bench or _workbenches(seeds)
    per_seed = []
    ok = True
    for wb in benches:
        dictionary = wb.dictionary()
        stream, _ = simulate_tag_stream(wb.spec(wb.presets[0]), n_tags, seed=wb.seed + 31)
        t0 = time.perf_counter()
        localize(stream, dictionary, DEFAULT_ANTENNAS)
        elapsed = time.perf_counter() - t0
        rate = n_tags / elapsed * 60.0
        ok &= rate >= th["throughput_tags_per_min_min"]
        per_seed.append({"tags_per_minute": rate, "seconds": elapsed})
    return ExperimentResult("throughput", [wb.seed for wb in benches], per_seed,
                            {"throughput above bound": ok})


EXPERIMENTS = {
    "model_choice": exp_model_choice,
    "kinematic": exp_kinematic,
    "kernel_sweep": exp_kernel_sweep,
    "selection_trials": exp_selection_trials,
    "multitag_drift": exp_multitag_drift,
    "unseen_env": exp_unseen_env,
    "throughput": exp_throughput,
}


def run_all(seeds=(0,), trials: int = 100, names=None, out_dir=None, cap: int = DEFAULT_CAP,
            kernel: KernelConfig | None = None, k: int = DEFAULT_K) -> dict[str, ExperimentResult]:
    benches = _workbenches(seeds, cap=cap, kernel=kernel)
    results = {}
    for name in names or EXPERIMENTS:
        fn = EXPERIMENTS[name]
        kwargs = {"bench": benches}
        if name == "selection_trials":
            kwargs["trials"] = trials
        elif name == "model_choice":
            kwargs["k"] = k
        results[name] = fn(**kwargs)
        if out_dir is not None:
            results[name].write(out_dir)
    return results
