import json

import numpy as np
import pytest

from rfidgp import cli, env_dictionary, gp_engine, ranging, signal_sim
from rfidgp.env_dictionary import SelectionReport


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Two simulated presets, a dictionary of both and an 8-tag stream."""
    root = tmp_path_factory.mktemp("cli")
    for name in ("env_a", "env_c"):
        assert run("simulate", "--preset", name, "--out", root / f"{name}.csv") == 0
        assert run("train", "--in", root / f"{name}.csv", "--env-id", name, "--cap", 300,
                   "--dict", root / "dict") == 0
    assert run("simulate", "--preset", "env_a", "--seed", 9, "--tags", 8, "--duration", 20,
               "--out", root / "stream.csv") == 0
    return root


def test_simulate_is_deterministic(tmp_path):
    for name in ("a.csv", "b.csv"):
        assert run("simulate", "--preset", "env_b", "--seed", 3, "--out", tmp_path / name) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    ds = signal_sim.read_dataset_csv(tmp_path / "a.csv")
    assert len(ds) <= 27_000


def test_simulate_tracks_deterministic(tmp_path, work):
    assert run("simulate", "--preset", "env_a", "--seed", 9, "--tags", 8, "--duration", 20,
               "--out", tmp_path / "s.csv") == 0
    assert (tmp_path / "s.csv").read_bytes() == (work / "stream.csv").read_bytes()
    assert (tmp_path / "s.truth.csv").read_bytes() == (work / "stream.truth.csv").read_bytes()
    truth = cli.read_truth_csv(tmp_path / "s.truth.csv")
    assert len(truth) == 8 and truth["T0"][1].shape == (40, 2)


def test_zero_noise_spec_trains_to_tiny_residuals(tmp_path, capsys):
    spec = signal_sim.EnvironmentSpec(id="quiet", phase_offset=0.3, seed=1)
    signal_sim.save_spec(spec, tmp_path / "quiet.cfg")
    assert run("simulate", "--spec", tmp_path / "quiet.cfg", "--out", tmp_path / "q.csv") == 0
    assert run("train", "--in", tmp_path / "q.csv", "--out", tmp_path / "q.json", "--cap", 500) == 0
    model = gp_engine.load_model(tmp_path / "q.json")
    resid = np.abs(model.predict_mean(model.x_train) - model.y_train)
    assert resid.max() < 1e-3
    assert "|X_t|=500" in capsys.readouterr().out


def test_train_cap_and_byte_identical_retrain(tmp_path, work):
    for name in ("m1.json", "m2.json"):
        assert run("train", "--in", work / "env_a.csv", "--cap", 500, "--seed", 2,
                   "--out", tmp_path / name) == 0
    assert (tmp_path / "m1.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
    assert gp_engine.load_model(tmp_path / "m1.json").n_train == 500


def test_dictionary_manifest_lists_every_trained_env(tmp_path, work):
    names = ["env_a", "env_b", "env_c", "env_d", "env_e", "env_f"]
    for name in names:
        spec = signal_sim.load_preset(name)
        ds = signal_sim.generate_dataset(spec, samples_per_position=6)
        signal_sim.write_dataset_csv(ds, tmp_path / f"{name}.csv")
        assert run("train", "--in", tmp_path / f"{name}.csv", "--cap", 100, "--dict", tmp_path / "d") == 0
    manifest = json.loads((tmp_path / "d" / env_dictionary.MANIFEST).read_text())
    assert manifest["env_ids"] == names
    assert env_dictionary.load_dictionary(tmp_path / "d").env_ids == names


def test_classify_report_round_trip(tmp_path, work):
    out = tmp_path / "rep.json"
    assert run("classify", "--dict", work / "dict", "--in", work / "stream.csv", "--out", out) == 0
    rep = SelectionReport.from_dict(json.loads(out.read_text()))
    assert rep.chosen_env_id == "env_a" and rep.env_ids == ["env_a", "env_c"]
    assert run("classify", "--dict", work / "dict", "--in", work / "stream.csv", "--out", tmp_path / "r2.json") == 0
    assert (tmp_path / "r2.json").read_bytes() == out.read_bytes()


def test_classify_single_model_file(tmp_path, work):
    out = tmp_path / "rep.json"
    assert run("classify", "--dict", work / "dict" / "env_c.model.json", "--in", work / "stream.csv",
               "--out", out) == 0
    assert json.loads(out.read_text())["chosen_env_id"] == "env_c"


def test_classify_short_stream_is_validation_error(tmp_path, work, capsys):
    ds = signal_sim.read_dataset_csv(work / "stream.csv")
    signal_sim.write_dataset_csv(ds.subset(np.arange(9)), tmp_path / "short.csv")
    assert run("classify", "--dict", work / "dict", "--in", tmp_path / "short.csv") == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("rfidgp: error:") and "\n" not in err


def test_localize_outputs_and_determinism(tmp_path, work):
    args = ["--dict", work / "dict", "--in", work / "stream.csv", "--truth", work / "stream.truth.csv"]
    assert run("localize", *args, "--out", tmp_path / "a") == 0
    assert run("localize", *args, "--out", tmp_path / "b", "--threads", 4) == 0
    files = sorted(p.name for p in (tmp_path / "a" / "tracks").iterdir())
    assert files == [f"T{i}.csv" for i in range(8)]
    for name in ("tracks.csv", "metrics.json", "selection.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    tracks = ranging.read_tracks_csv(tmp_path / "a" / "tracks.csv")
    assert len(tracks) == 8
    assert ranging.tracks_to_csv(tracks) == (tmp_path / "a" / "tracks.csv").read_text()
    metrics = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert metrics["env_id"] == "env_a"
    assert metrics["pooled_constrained"]["mean"] <= metrics["pooled_raw"]["mean"]
    assert "position" in metrics["tags"]["T3"]


def test_localize_kinematic_flag_changes_constraint(tmp_path, work):
    base = ["localize", "--dict", work / "dict" / "env_a.model.json", "--in", work / "stream.csv"]
    assert run(*base, "--out", tmp_path / "tight", "--kin-bound", 0.5) == 0
    assert run(*base, "--out", tmp_path / "speed", "--max-speed", 1.5) == 0
    tight = json.loads((tmp_path / "tight" / "metrics.json").read_text())
    assert tight["pooled_constrained"]["n"] == tight["pooled_raw"]["n"]


def test_bench_writes_results(tmp_path):
    args = ["bench", "--out", tmp_path / "b", "--only", "kinematic", "--only", "kernel_sweep", "--cap", 300]
    assert run(*args) == 0
    for exp in ("kinematic", "kernel_sweep"):
        assert (tmp_path / "b" / exp / "result.json").exists()
        assert (tmp_path / "b" / exp / "summary.txt").exists()
    assert (tmp_path / "b" / "kernel_sweep" / "kernel_table_seed0.csv").exists()
    first = (tmp_path / "b" / "kinematic" / "result.json").read_bytes()
    assert run("bench", "--out", tmp_path / "c", "--only", "kinematic", "--cap", 300) == 0
    assert (tmp_path / "c" / "kinematic" / "result.json").read_bytes() == first


# --- configuration and error contract ------------------------------------------------------

def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[run]\ncap = 700\nkernel = matern25\nk = 9\nout = results\n")
    rc = cli.resolve_config(["train", "--config", str(cfg), "--cap", "123"])
    assert (rc.cap, rc.kernel, rc.k) == (123, "matern25", 9)
    assert rc.out == (tmp_path / "results").resolve()


@pytest.mark.parametrize("text", ["[other]\ncap = 3\n", "[run]\nbogus = 1\n", "[run]\ncap = many\n"])
def test_bad_config_is_validation_error(tmp_path, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    assert run("train", "--config", cfg, "--in", "x.csv", "--out", "y.json") == 2


@pytest.mark.parametrize("args", [
    ["train", "--cap", "0"], ["train", "--kernel", "lagrange"], ["simulate"],
    ["localize", "--kin-bound", "-1"], ["bench", "--only", "nope"], ["simulate", "--preset", "nope", "--out", "x"],
    ["frobnicate"],
])
def test_validation_exit_code(args, capsys):
    assert cli.main(args) == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and err.startswith("rfidgp: error:")


def test_io_exit_code(tmp_path):
    assert run("train", "--in", tmp_path / "missing.csv", "--out", tmp_path / "m.json") == 4
    assert run("classify", "--dict", tmp_path / "nodict", "--in", tmp_path / "missing.csv") == 4


def test_numerical_exit_code(tmp_path, monkeypatch, work):
    def broken(*a, **k):
        raise gp_engine.FactorizationError("matrix (3x3, condition number 1e+20) is not positive definite")

    monkeypatch.setattr(gp_engine, "train", broken)
    assert run("train", "--in", work / "env_a.csv", "--out", tmp_path / "m.json") == 3
