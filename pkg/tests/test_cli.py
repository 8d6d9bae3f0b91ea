import csv
import json
from pathlib import Path

import numpy as np
import pytest

from resyn import cli
from resyn.adapters import adapter_generic
from resyn.advdetect import read_attack_csv
from resyn.datamodel import load_score_map
from resyn.discrepancy import forward, load_checkpoint
from resyn.synthesis import load_pairs

from pipeline import run_pipeline, stage

SMALL = {
    "toyworld": {"n_train": 24, "n_test": 6},
    "segmenter_training": {"epochs": 3, "ensemble_size": 2},
    "discrepancy": {"train": {"epochs": 3}},
    "uncertainty": {"n_samples": 4},
    "rbm": {"epochs": 2},
    "attack": {"max_iter": 6, "total_linf_budget": 0.5, "limit": 4},
    "detect": {"sc_pairs": 4, "train_fraction": 0.5},
}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    return root, run_pipeline(root, SMALL)


def _manifest(d):
    return json.loads((Path(d) / "manifest.json").read_text())


def test_every_stage_writes_config_and_manifest(run):
    root, res = run
    for name in res:
        m = _manifest(root / name)
        assert (root / name / "resolved_config.json").is_file()
        assert m["seed"] == 0 and len(m["config_hash"]) == 16
        for rel, digest in m["files"].items():
            assert (root / name / rel).is_file(), rel
    # score stages differ only in paths, which stay out of the hash
    assert _manifest(root / "eval_full")["config_hash"] != _manifest(root / "eval_road")["config_hash"]
    assert _manifest(root / "score_rbm")["config_hash"] == _manifest(root / "score_dropout")["config_hash"]


def test_gen_synthetic_counts(run):
    root, res = run
    pairs = load_pairs(root / "pairs" / "pairs")
    assert len(pairs) == 24 == res["pairs"]["n_pairs"]
    pos = sum(int((p.target == 1).sum()) for p in pairs)
    valid = sum(int((p.target != 255).sum()) for p in pairs)
    assert res["pairs"]["positive_pixels"] == pos
    assert res["pairs"]["positive_fraction"] == pytest.approx(pos / valid, abs=1e-15)
    assert res["pairs"]["n_swaps"] == sum(len(p.swaps) for p in pairs)


def test_gen_synthetic_rerun_same_manifest(run, tmp_path):
    root, _ = run
    cfg = json.loads((root / "pairs.config.json").read_text())
    stage(tmp_path, "again", ["gen-synthetic"], cfg)
    assert (tmp_path / "again" / "manifest.json").read_bytes() == (root / "pairs" / "manifest.json").read_bytes()


def test_train_discrepancy_outputs(run):
    root, res = run
    rows = list(csv.reader(open(root / "disc" / "loss.csv")))
    assert len(rows) - 1 == res["disc"]["epochs"] == 3
    net = load_checkpoint(root / "disc" / "checkpoint")
    again = load_checkpoint(root / "disc" / "checkpoint")
    r = np.random.default_rng(0)
    x, y, lab = r.random((16, 16, 3)), r.random((16, 16, 3)), np.eye(5)[r.integers(0, 5, (16, 16))]
    np.testing.assert_array_equal(forward(net, x, y, lab), forward(again, x, y, lab))


def test_score_maps_match_samples(run):
    root, _ = run
    test = adapter_generic(root / "data" / "test")
    for m in cli.METHODS:
        files = sorted((root / f"score_{m}" / "scores").glob("*.png"))
        assert len(files) == len(test)
        for s in test.samples:
            assert load_score_map(root / f"score_{m}" / "scores" / f"{s.id}.png").shape == s.anomaly.shape


def test_eval_reports(run):
    root, res = run
    full, road = res["eval_full"], res["eval_road"]
    assert set(full["auroc"]) == set(cli.METHODS)
    assert all(0.0 <= v <= 1.0 for v in full["auroc"].values())
    assert all(road["pixels"][m] < full["pixels"][m] for m in cli.METHODS)
    svg = (root / "eval_full" / "toy_combined_full.svg").read_text()
    assert svg.count("<polyline") == len(cli.METHODS) + 1
    assert len(list((root / "eval_full").glob("toy_*_full.json"))) == len(cli.METHODS)


def test_attack_csv_and_detector(run):
    root, res = run
    recs = read_attack_csv(root / "attack" / "attacks.csv")
    ids = sorted({r.id for r in recs})
    assert len(ids) == 4 and len(recs) == 8
    for i in ids:
        kinds = sorted(r.target_kind for r in recs if r.id == i)
        assert kinds[0] == "clean" and kinds[1] in ("shift", "pure")
    assert all(r.linf_norm <= 0.5 for r in recs)
    m = json.loads((root / "detect" / "metrics.json").read_text())
    assert m["n_pairs"] == 4 and len(m["test_ids"]) == 2
    assert (root / "detect" / "detector.json").is_file()


def test_attack_rerun_identical_csv(run, tmp_path):
    root, _ = run
    cfg = json.loads((root / "attack.config.json").read_text())
    stage(tmp_path, "again", ["attack"], cfg)
    assert (tmp_path / "again" / "attacks.csv").read_bytes() == (root / "attack" / "attacks.csv").read_bytes()


# -- configuration ----------------------------------------------------------------

def test_env_overrides():
    env = {"RESYN_SEED": "7", "RESYN_SYNTHESIS__SWAP_PROB": "0.25", "RESYN_DATASET_NAME": "plain",
           "RESYN_DISABLE_NUMBA": "1", "OTHER": "x"}
    cfg = cli.resolve_config(None, {}, env)
    assert cfg["seed"] == 7 and cfg["synthesis"]["swap_prob"] == 0.25 and cfg["dataset_name"] == "plain"
    assert "disable_numba" not in cfg
    assert cli.resolve_config(None, {"seed": 3}, env)["seed"] == 3


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(cli.ConfigError):
        cli.resolve_config(str(bad))
    with pytest.raises(cli.ConfigError):
        cli.resolve_config(str(tmp_path / "missing.json"))
    with pytest.raises(cli.ConfigError):
        cli.resolve_config(None, environ={"RESYN_SEED": "\"x\""})


def _main(tmp_path, command, cfg, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    code = cli.main([*command, "--config", str(p), "--out", str(tmp_path / "o")])
    capsys.readouterr()
    return code


@pytest.fixture
def clean_env(monkeypatch):
    import os
    for k in list(os.environ):
        if k.startswith("RESYN_") and k not in ("RESYN_DISABLE_NUMBA", "RESYN_NUMBA_CACHE"):
            monkeypatch.delenv(k)


def test_exit_codes(run, tmp_path, capsys, clean_env):
    root, _ = run
    data = {"train": str(root / "data" / "train"), "test": str(root / "data" / "test")}
    seg = {**data, "segmenter": str(root / "seg" / "segmenter")}
    # unknown option -> config error
    assert _main(tmp_path, ["toyworld", "gen"], {"toyworld": {"scene": {"bogus": 1}}}, capsys) == 2
    # ensemble with a single member -> precondition (config) error
    one = {"paths": {**data, "ensemble": [str(root / "seg" / "ensemble" / "member_0")]}}
    assert _main(tmp_path, ["score", "--method", "ensemble"], one, capsys) == 2
    # dropout on a deterministic backend -> capability error
    det = {"paths": {**data, "segmenter": str(root / "seg" / "ensemble" / "member_0")}}
    assert _main(tmp_path, ["score", "--method", "dropout"], det, capsys) == 4
    # missing pair directory -> data error naming the path
    missing = str(tmp_path / "no_pairs")
    assert _main(tmp_path, ["train-discrepancy"], {"paths": {"pairs": missing}}, capsys) == 3
    with pytest.raises(cli.DataError, match="no_pairs"):
        cli.run(["train-discrepancy", "--out", str(tmp_path / "o")], environ={"RESYN_PATHS__PAIRS": missing})
    # eval without configured score dirs
    assert _main(tmp_path, ["eval"], {"paths": data}, capsys) == 2
    # dataset root that does not exist
    assert _main(tmp_path, ["attack"], {"paths": {**seg, "test": str(tmp_path / "none")}}, capsys) == 3
    assert _main(tmp_path, ["score", "--method", "rbm"], {"paths": seg, "rbm": {"stride": 0}}, capsys) == 2


def test_attack_needs_gradients(run, tmp_path, monkeypatch):
    root, _ = run

    class Frozen:
        def __init__(self, inner):
            self.label_spec = inner.label_spec
            self.capabilities = cli.segmentation.Capabilities()
            self.predict_logits = inner.predict_logits

    monkeypatch.setitem(cli.SEGMENTERS, "frozen", lambda p: Frozen(cli.segmentation.ToySegmenter.load(p)))
    cfg = {"backends": {"segmenter": "frozen"},
           "paths": {"test": str(root / "data" / "test"), "segmenter": str(root / "seg" / "segmenter")}}
    with pytest.raises(cli.CapabilityError):
        stage(tmp_path, "a", ["attack"], cfg)


def test_main_success_prints_json(tmp_path, capsys, clean_env):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"toyworld": {"n_train": 2, "n_test": 1}}))
    assert cli.main(["toyworld", "gen", "--config", str(p), "--out", str(tmp_path / "o"), "--seed", "4"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n_train"] == 2
    assert _manifest(tmp_path / "o")["seed"] == 4
