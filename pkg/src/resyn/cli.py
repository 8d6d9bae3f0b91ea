"""Command-line entry point ``resyn``.

Every command reads one JSON config (``--config``), applies ``RESYN_*``
environment overrides and command-line flags, writes the resolved config and a
manifest next to its outputs and exits with 0 (ok), 2 (config error),
3 (data error) or 4 (capability error).

Environment overrides map ``RESYN_A__B=value`` onto ``config["a"]["b"]``; the
value is parsed as JSON when possible and kept as a string otherwise.
Filesystem locations live under ``paths`` and are excluded from the config
hash, so the same experiment run in two directories hashes identically.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import advdetect, baselines, discrepancy, evalharness, segmentation, synthesis, toyworld
from ._torchio import set_deterministic
from .adapters import Dataset, load_dataset
from .datamodel import CITYSCAPES, TOY, LabelSpec, load_score_map, save_dataset, save_score_map
from .errors import CapabilityError, ConfigError, DataError, ResynError

log = logging.getLogger("resyn")

DEFAULTS: dict = {
    "seed": 0,
    "deterministic": False,
    "label_spec": "toy",
    "dataset_name": "toy",
    "toyworld": {"n_train": 200, "n_test": 50, "scene": {}},
    "data": {"train_adapter": "generic", "test_adapter": "generic", "train_split": None, "test_split": None,
             "resize": None},
    "backends": {"segmenter": "toy", "generator": "toy", "generator_options": {"style_seed": 0, "amplitude": 0.06}},
    "segmenter_training": {"epochs": 8, "lr": 3e-3, "batch_size": 8, "hidden": 16, "dropout": 0.5,
                           "input_noise": 0.1, "ensemble_size": 4},
    "synthesis": {"swap_prob": 0.5},
    "discrepancy": {"net": {}, "train": {}},
    "uncertainty": {"n_samples": 16},
    "rbm": {},
    "eval": {"roi": "full", "bins": None},
    "attack": {"max_iter": 200, "step_linf": 0.05, "total_linf_budget": 0.05, "target_kinds": ["shift", "pure"],
               "shift_offset": 1, "pure_label": None, "limit": None},
    "hog": {},
    "detect": {"train_fraction": 0.8, "sc_pairs": 50, "sc_patch": None},
    "paths": {"train": None, "test": None, "pairs": None, "segmenter": None, "ensemble": [],
              "discrepancy": None, "rbm": None, "scores": {}, "attacks": None},
}

ENV_PREFIX = "RESYN_"
_RESERVED_ENV = {"RESYN_DISABLE_NUMBA", "RESYN_NUMBA_CACHE"}


# -- config ----------------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    over: dict = {}
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX) or key in _RESERVED_ENV:
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = over
        for p in path[:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = value
    return over


def resolve_config(path: Optional[str], flags: Optional[dict] = None, environ=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {p} is not valid JSON: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, user)
    cfg = _merge(cfg, env_overrides(environ))
    cfg = _merge(cfg, {k: v for k, v in (flags or {}).items() if v is not None})
    if not isinstance(cfg.get("seed"), int):
        raise ConfigError("seed must be an integer")
    return cfg


def experiment_hash(cfg: dict) -> str:
    return evalharness.config_hash({k: v for k, v in cfg.items() if k != "paths"})


def _build(cls, section: dict, **extra):
    names = {f.name for f in fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} options: {sorted(unknown)}")
    try:
        return cls(**{**section, **extra})
    except (TypeError, ValueError) as e:
        if isinstance(e, ResynError):
            raise
        raise ConfigError(f"invalid {cls.__name__}: {e}") from e


def label_spec(cfg: dict) -> LabelSpec:
    v = cfg["label_spec"]
    if v == "toy":
        return TOY
    if v == "cityscapes":
        return CITYSCAPES
    if isinstance(v, dict):
        return LabelSpec.from_dict(v)
    p = Path(v)
    if not p.is_file():
        raise ConfigError(f"label_spec must be 'toy', 'cityscapes', an object or a JSON file; got {v!r}")
    return LabelSpec.from_dict(json.loads(p.read_text()))


def _path(cfg: dict, key: str, what: str) -> Path:
    v = cfg["paths"].get(key)
    if not v:
        raise ConfigError(f"paths.{key} ({what}) is not configured")
    p = Path(v)
    if not p.exists():
        raise DataError(f"paths.{key} does not exist: {p}")
    return p


# -- backend registry ----------------------------------------------------------

SEGMENTERS: dict[str, Callable] = {"toy": segmentation.ToySegmenter.load}
GENERATORS: dict[str, Callable] = {"toy": lambda spec, **kw: synthesis.toy_generator(spec, **kw)}


def register_segmenter(name: str, loader: Callable) -> None:
    """``loader(checkpoint_dir) -> SegmentationBackend``."""
    SEGMENTERS[name] = loader


def register_generator(name: str, factory: Callable) -> None:
    """``factory(label_spec, **options) -> GeneratorBackend``."""
    GENERATORS[name] = factory


def load_segmenter(cfg: dict, checkpoint) -> segmentation.SegmentationBackend:
    name = cfg["backends"]["segmenter"]
    if name not in SEGMENTERS:
        raise ConfigError(f"unknown segmentation backend {name!r}")
    return SEGMENTERS[name](checkpoint)


def load_generator(cfg: dict, spec: LabelSpec) -> synthesis.GeneratorBackend:
    name = cfg["backends"]["generator"]
    if name not in GENERATORS:
        raise ConfigError(f"unknown generator backend {name!r}")
    return GENERATORS[name](spec, **cfg["backends"].get("generator_options", {}))


def _dataset(cfg: dict, which: str, spec: Optional[LabelSpec]) -> Dataset:
    d = cfg["data"]
    root = _path(cfg, which, f"{which} dataset root")
    return load_dataset(d[f"{which}_adapter"], root, d.get(f"{which}_split"), spec, d.get("resize"))


# -- output bookkeeping ----------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _prepare_out(out) -> Path:
    if out is None:
        raise ConfigError("--out is required")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {out}: {e}") from e
    return out


def write_manifest(out: Path, command: str, cfg: dict, body: dict, files=()) -> Path:
    """Resolved config plus a manifest whose bytes depend only on config and results."""
    (out / "resolved_config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    manifest = {
        "command": command,
        "config_hash": experiment_hash(cfg),
        "seed": cfg["seed"],
        **body,
        "files": {str(Path(f).relative_to(out)): _sha256(Path(f)) for f in sorted(files)},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


# -- commands ----------------------------------------------------------------------

def cmd_toyworld_gen(cfg: dict, out: Path) -> dict:
    spec = label_spec(cfg)
    tw = cfg["toyworld"]
    scene = {k: tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v
             for k, v in tw.get("scene", {}).items()}
    scene_cfg = _build(toyworld.ToySceneConfig, scene)
    train, test = toyworld.generate_split(scene_cfg, int(tw["n_train"]), int(tw["n_test"]), cfg["seed"], spec)
    save_dataset(train, out / "train", spec)
    save_dataset(test, out / "test", spec)
    files = sorted(p for p in out.rglob("*.png")) + [out / "train" / "label_spec.json", out / "test" / "label_spec.json"]
    body = {
        "n_train": len(train),
        "n_test": len(test),
        "anomaly_pixels_test": int(sum(int((s.anomaly == 1).sum()) for s in test)),
    }
    write_manifest(out, "toyworld gen", cfg, body, files)
    return body


def cmd_train_segmenter(cfg: dict, out: Path) -> dict:
    spec = label_spec(cfg)
    train = _dataset(cfg, "train", spec)
    st = dict(cfg["segmenter_training"])
    size = int(st.pop("ensemble_size"))
    seg_cfg = _build(segmentation.SegTrainConfig, st, seed=cfg["seed"])
    seg, losses = segmentation.train_toy_segmenter(train.samples, spec, seg_cfg)
    seg.save(out / "segmenter")
    member_cfg = _build(segmentation.SegTrainConfig, {**st, "dropout": 0.0}, seed=cfg["seed"] + 1000)
    members = segmentation.train_ensemble(train.samples, spec, size, member_cfg) if size > 0 else []
    for k, m in enumerate(members):
        m.save(out / "ensemble" / f"member_{k}")
    body = {"n_train": len(train), "final_loss": losses[-1], "ensemble_size": len(members)}
    write_manifest(out, "train-segmenter", cfg, body, sorted(out.rglob("*.npz")))
    return body


def cmd_gen_synthetic(cfg: dict, out: Path) -> dict:
    spec = label_spec(cfg)
    train = _dataset(cfg, "train", spec)
    gen = load_generator(cfg, spec)
    swap_prob = float(cfg["synthesis"]["swap_prob"])
    rng = np.random.default_rng(cfg["seed"])
    n_pos = n_valid = n_swaps = 0
    per_pair = {}
    for s in train.samples:
        if s.semantic is None or s.instances is None:
            raise DataError(f"sample {s.id} lacks ground-truth semantic/instance labels")
        pair = synthesis.build_training_pair(s, gen, spec, swap_prob, rng)
        synthesis.save_pair(pair, out / "pairs")
        n_pos += int((pair.target == 1).sum())
        n_valid += int((pair.target != 255).sum())
        n_swaps += len(pair.swaps)
        per_pair[pair.id] = len(pair.swaps)
    body = {"n_pairs": len(train), "n_swaps": n_swaps, "positive_pixels": n_pos, "valid_pixels": n_valid,
            "positive_fraction": n_pos / max(n_valid, 1), "swaps_per_pair": per_pair}
    write_manifest(out, "gen-synthetic", cfg, body, sorted((out / "pairs").rglob("*.*")))
    return body


def _discrepancy_cfgs(cfg: dict, spec: LabelSpec):
    net_cfg = _build(discrepancy.DiscrepancyConfig, cfg["discrepancy"]["net"], num_classes=spec.num_classes,
                     seed=cfg["seed"])
    train_cfg = _build(discrepancy.TrainConfig, cfg["discrepancy"]["train"], seed=cfg["seed"])
    return net_cfg, train_cfg


def cmd_train_discrepancy(cfg: dict, out: Path) -> dict:
    spec = label_spec(cfg)
    pair_dir = Path(cfg["paths"]["pairs"] or "")
    if not cfg["paths"]["pairs"] or not pair_dir.is_dir():
        raise DataError(f"training pair directory not found: {pair_dir}")
    sub = pair_dir / "pairs"
    pairs = synthesis.load_pairs(sub if sub.is_dir() else pair_dir)
    net_cfg, train_cfg = _discrepancy_cfgs(cfg, spec)
    net = discrepancy.DiscrepancyNet(net_cfg)
    net, history = discrepancy.train(net, pairs, train_cfg, spec,
                                     log=lambda e, l: log.info("epoch %d loss %.6f", e, l))
    ckpt = discrepancy.save_checkpoint(net, out / "checkpoint")
    discrepancy.write_loss_csv(history, out / "loss.csv")
    body = {"n_pairs": len(pairs), "epochs": len(history), "final_loss": history[-1]}
    write_manifest(out, "train-discrepancy", cfg, body, [out / "loss.csv", *sorted(ckpt.iterdir())])
    return body


METHODS = ("discrepancy", "rbm", "dropout", "ensemble")


def _scorer(cfg: dict, method: str, spec: LabelSpec, out: Path):
    if method == "discrepancy":
        net = discrepancy.load_checkpoint(_checkpoint_dir(_path(cfg, "discrepancy", "discrepancy checkpoint")))
        seg = load_segmenter(cfg, _path(cfg, "segmenter", "segmenter checkpoint"))
        gen = load_generator(cfg, spec)

        def score(image):
            sem = segmentation.predict_labels(seg, image)
            return discrepancy.score_image(net, image, gen.generate(sem), sem, spec)
        return score
    if method == "dropout":
        seg = load_segmenter(cfg, _path(cfg, "segmenter", "segmenter checkpoint"))
        if not seg.capabilities.stochastic_forward:
            raise CapabilityError("the configured segmenter cannot run stochastic (dropout) passes")
        n = int(cfg["uncertainty"]["n_samples"])
        return lambda image: segmentation.mc_dropout_uncertainty(seg, image, n, cfg["seed"])
    if method == "ensemble":
        paths = cfg["paths"].get("ensemble") or []
        if len(paths) < 2:
            raise ConfigError(f"the ensemble baseline needs at least two members, got {len(paths)}")
        members = [load_segmenter(cfg, p) for p in paths]
        return lambda image: segmentation.ensemble_uncertainty(members, image)
    if method == "rbm":
        rbm_cfg = _build(baselines.RbmConfig, cfg["rbm"], seed=cfg["seed"])
        if cfg["paths"].get("rbm"):
            model = baselines.load_rbm(_path(cfg, "rbm", "RBM model"))
        else:
            train = _dataset(cfg, "train", spec)
            model = baselines.train_rbm(baselines.extract_road_patches(train.samples, spec, rbm_cfg), rbm_cfg)
            baselines.save_rbm(model, out / "rbm_model")
        return lambda image: baselines.rbm_score(model, image)
    raise ConfigError(f"unknown scoring method {method!r}; choose from {METHODS}")


def _checkpoint_dir(p: Path) -> Path:
    return p / "checkpoint" if (p / "checkpoint" / "architecture.json").is_file() else p


def cmd_score(cfg: dict, out: Path, method: str) -> dict:
    spec = label_spec(cfg)
    test = _dataset(cfg, "test", spec)
    score = _scorer(cfg, method, spec, out)
    written = []
    (out / "scores").mkdir(exist_ok=True)
    for s in test.samples:
        path = out / "scores" / f"{s.id}.png"
        save_score_map(score(s.image), path)
        written += [path, path.with_suffix(".json")]
    extra = sorted((out / "rbm_model").iterdir()) if (out / "rbm_model").is_dir() else []
    body = {"method": method, "n_samples": len(test)}
    write_manifest(out, f"score {method}", cfg, body, written + extra)
    return body


def _score_dir(p) -> Path:
    p = Path(p)
    return p / "scores" if (p / "scores").is_dir() else p


def cmd_eval(cfg: dict, out: Path) -> dict:
    test = _dataset(cfg, "test", None)
    methods = cfg["paths"].get("scores") or {}
    if not methods:
        raise ConfigError("paths.scores must map method names to score directories")
    roi_mode = cfg["eval"]["roi"]
    if roi_mode not in ("full", "road-only"):
        raise ConfigError(f"eval.roi must be 'full' or 'road-only', got {roi_mode!r}")
    masks, rois = [], []
    for s in test.samples:
        if s.anomaly is None:
            raise DataError(f"sample {s.id} has no anomaly mask")
        roi = s.roi
        if roi_mode == "road-only":
            if s.freespace is None:
                raise DataError(f"sample {s.id} has no free-space mask for road-only evaluation")
            road = evalharness.road_only_roi(s.anomaly, s.freespace)
            roi = road if roi is None else road & roi
        masks.append(s.anomaly)
        rois.append(roi if roi is not None else np.ones(s.anomaly.shape, dtype=bool))
    h = experiment_hash(cfg)
    reports, files = [], []
    for method in sorted(methods):
        d = _score_dir(methods[method])
        scores = [load_score_map(d / f"{s.id}.png") for s in test.samples]
        rep = evalharness.evaluate(method, cfg["dataset_name"], roi_mode, scores, masks, rois, h,
                                   cfg["eval"].get("bins"))
        reports.append(rep)
        files += evalharness.emit_report(rep, out)
    files.append(evalharness.emit_combined(reports, out))
    body = {"roi": roi_mode, "auroc": {r.method: r.auroc for r in reports},
            "pixels": {r.method: r.curve.positives + r.curve.negatives for r in reports}}
    write_manifest(out, "eval", cfg, body, files)
    return body


def _attack_cfg(cfg: dict, kind: str) -> advdetect.AttackConfig:
    a = {k: v for k, v in cfg["attack"].items() if k not in ("target_kinds", "limit")}
    return _build(advdetect.AttackConfig, a, target_kind=kind)


def cmd_attack(cfg: dict, out: Path) -> dict:
    spec = label_spec(cfg)
    test = _dataset(cfg, "test", spec)
    seg = load_segmenter(cfg, _path(cfg, "segmenter", "segmenter checkpoint"))
    if not seg.capabilities.gradient_access:
        raise CapabilityError("the configured segmenter exposes no gradients; attacks are impossible")
    gen = load_generator(cfg, spec)
    hog_cfg = _build(advdetect.HogConfig, cfg["hog"])
    kinds = list(cfg["attack"]["target_kinds"])
    if not kinds:
        raise ConfigError("attack.target_kinds is empty")
    cfgs = {k: _attack_cfg(cfg, k) for k in kinds}
    limit = cfg["attack"].get("limit")
    samples = test.samples[: int(limit)] if limit else test.samples
    (out / "adversarial").mkdir(exist_ok=True)
    records, files = [], []
    for i, s in enumerate(samples):
        kind = kinds[i % len(kinds)]
        rng = np.random.default_rng([cfg["seed"], i])
        pred = segmentation.predict_labels(seg, s.image)
        target = advdetect.attack_target(pred, cfgs[kind], spec, rng)
        res = advdetect.dag_attack(s.image, seg, target, cfgs[kind])
        path = out / "adversarial" / f"{s.id}.npy"
        np.save(path, res.image)
        files.append(path)
        records.append(advdetect.AttackRecord(s.id, "clean", 0, float("nan"), 0.0,
                                              advdetect.resynth_distance(s.image, seg, gen, hog_cfg)))
        records.append(advdetect.AttackRecord(s.id, kind, res.iterations_used, res.success_rate, res.linf_norm,
                                              advdetect.resynth_distance(res.image, seg, gen, hog_cfg)))
    advdetect.write_attack_csv(records, out / "attacks.csv")
    files.append(out / "attacks.csv")
    attacked = [r for r in records if r.target_kind != "clean"]
    body = {
        "n_samples": len(samples),
        "success_rate": {k: float(np.mean([r.success_rate for r in attacked if r.target_kind == k]))
                         for k in kinds if any(r.target_kind == k for r in attacked)},
        "max_linf": max(r.linf_norm for r in attacked),
    }
    write_manifest(out, "attack", cfg, body, files)
    return body


def cmd_detect_attack(cfg: dict, out: Path) -> dict:
    spec = label_spec(cfg)
    adir = _path(cfg, "attacks", "attack output directory")
    records = advdetect.read_attack_csv(adir / "attacks.csv")
    test = {s.id: s for s in _dataset(cfg, "test", spec).samples}
    seg = load_segmenter(cfg, _path(cfg, "segmenter", "segmenter checkpoint"))
    det_cfg = cfg["detect"]
    clean = {r.id: r for r in records if r.target_kind == "clean"}
    adv = {r.id: r for r in records if r.target_kind != "clean"}
    ids = [i for i in clean if i in adv]
    if not ids:
        raise DataError(f"no clean/attacked pairs in {adir / 'attacks.csv'}")
    d_clean = [clean[i].hog_distance for i in ids]
    d_adv = [adv[i].hog_distance for i in ids]
    detector, metrics = advdetect.fit_detector(d_clean, d_adv, det_cfg["train_fraction"],
                                               np.random.default_rng(cfg["seed"]))
    sc_rows = []
    for k, i in enumerate(ids):
        s = test.get(i)
        if s is None:
            raise DataError(f"attacked sample {i} is not in the test dataset")
        patch = det_cfg.get("sc_patch") or min(s.height, s.width) // 2
        x_adv = np.load(adir / "adversarial" / f"{i}.npy")
        sc_c = advdetect.sc_score(s.image, seg, det_cfg["sc_pairs"], patch, np.random.default_rng([cfg["seed"], k]))
        sc_a = advdetect.sc_score(x_adv, seg, det_cfg["sc_pairs"], patch, np.random.default_rng([cfg["seed"], k]))
        sc_rows.append((i, sc_c, sc_a))
    with open(out / "sc_scores.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "sc_clean", "sc_attacked"])
        for i, a, b in sc_rows:
            w.writerow([i, repr(a), repr(b)])
    te = list(metrics.test_indices)

    def sep(neg, pos):
        y = np.r_[np.zeros(len(neg)), np.ones(len(pos))].astype(bool)
        return evalharness.auroc(evalharness.roc_from_pooled(np.r_[neg, pos], y))

    sc_c = np.array([r[1] for r in sc_rows])
    sc_a = np.array([r[2] for r in sc_rows])
    hc, ha = np.array(d_clean), np.array(d_adv)
    result = {
        "n_pairs": len(ids),
        "detector": asdict(detector),
        "train_accuracy": metrics.train_accuracy,
        "test_accuracy": metrics.test_accuracy,
        "test_auroc": metrics.test_auroc,
        "test_ids": [ids[j] for j in te],
        "hog_auroc_test": sep(hc[te], ha[te]),
        "sc_auroc_test": sep(-sc_c[te], -sc_a[te]),
        "hog_auroc_all": sep(hc, ha),
        "sc_auroc_all": sep(-sc_c, -sc_a),
    }
    (out / "detector.json").write_text(detector.to_json())
    (out / "metrics.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    write_manifest(out, "detect-attack", cfg, result,
                   [out / "detector.json", out / "metrics.json", out / "sc_scores.csv"])
    return result


# -- argument parsing --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--deterministic", action="store_true", help="deterministic torch kernels, one thread")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="resyn", description="Resynthesis-based anomaly and attack detection.")
    sub = p.add_subparsers(dest="command", required=True)
    tw = sub.add_parser("toyworld", help="procedural toy dataset")
    tw_sub = tw.add_subparsers(dest="toy_command", required=True)
    tw_sub.add_parser("gen", parents=[common], help="write train/test toy splits")
    sub.add_parser("train-segmenter", parents=[common], help="train the toy segmenter and ensemble")
    sub.add_parser("gen-synthetic", parents=[common], help="label-swap training pairs")
    sub.add_parser("train-discrepancy", parents=[common], help="train the discrepancy network")
    sc = sub.add_parser("score", parents=[common], help="per-pixel anomaly scores on the test split")
    sc.add_argument("--method", required=True, choices=METHODS)
    sub.add_parser("eval", parents=[common], help="ROC / AUROC reports")
    sub.add_parser("attack", parents=[common], help="targeted attacks on the test split")
    sub.add_parser("detect-attack", parents=[common], help="fit and evaluate the attack detector")
    return p


def run(argv=None, environ=None) -> dict:
    args = build_parser().parse_args(argv)
    flags = {"seed": args.seed, "deterministic": True if args.deterministic else None}
    cfg = resolve_config(args.config, flags, environ)
    if cfg["deterministic"]:
        set_deterministic(True)
    out = _prepare_out(args.out)
    if args.command == "toyworld":
        return cmd_toyworld_gen(cfg, out)
    if args.command == "score":
        return cmd_score(cfg, out, args.method)
    handlers = {
        "train-segmenter": cmd_train_segmenter,
        "gen-synthetic": cmd_gen_synthetic,
        "train-discrepancy": cmd_train_discrepancy,
        "eval": cmd_eval,
        "attack": cmd_attack,
        "detect-attack": cmd_detect_attack,
    }
    return handlers[args.command](cfg, out)


def main(argv=None) -> int:
    verbose = argv is not None and ("-v" in argv or "--verbose" in argv) or "-v" in sys.argv or "--verbose" in sys.argv
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = run(argv)
    except ResynError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    print(json.dumps(result, indent=1, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
