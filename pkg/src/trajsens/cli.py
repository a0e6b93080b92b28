"""Command-line pipeline: simulate -> dataset -> train -> eval -> reach /
falsify / predict, driven by one YAML config per run.

Every command writes its artifacts plus a manifest (resolved config, seeds,
versions) into a run directory.  All randomness flows from config seeds, and
floats serialize via repr, so re-running a verb with the same config produces
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys as _sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__, data, explore, falsify, net, sim, systems
from .errors import ConfigError, TrajsensError


# --------------------------------------------------------------------------
# config handling
# --------------------------------------------------------------------------


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark else path
        raise ConfigError(f"invalid YAML at {where}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return cfg


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like dotted.key=value")
        key, value = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} crosses a non-mapping value")
        node[parts[-1]] = yaml.safe_load(value)
    return cfg


def require(cfg: dict, key: str):
    node = cfg
    for part in key.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"config is missing required key {key!r}")
        node = node[part]
    return node


def get(cfg: dict, key: str, default=None):
    node = cfg
    for part in key.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


# --------------------------------------------------------------------------
# deterministic artifact writing
# --------------------------------------------------------------------------


def _canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _config_hash(verb: str, cfg: dict) -> str:
    blob = json.dumps({"verb": verb, "config": cfg}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


class Run:
    """One run directory: artifacts plus a manifest naming them."""

    def __init__(self, verb: str, cfg: dict, out: str | None):
        self.verb = verb
        self.cfg = cfg
        self.dir = Path(out) if out else Path("runs") / f"{verb}-{_config_hash(verb, cfg)}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.dir / name

    def write_json(self, name: str, doc) -> Path:
        p = self.path(name)
        p.write_text(_canonical_json(doc))
        return p

    def finish(self, extra: dict | None = None) -> Path:
        manifest = {
            "verb": self.verb,
            "config": self.cfg,
            "outputs": sorted(set(self.outputs)),
            "versions": {
                "trajsens": __version__,
                "python": ".".join(map(str, _sys.version_info[:3])),
                "numpy": np.__version__,
            },
        }
        if extra:
            manifest.update(extra)
        (self.dir / "manifest.json").write_text(_canonical_json(manifest))
        return self.dir


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for v in row])


# --------------------------------------------------------------------------
# shared pipeline pieces
# --------------------------------------------------------------------------


def _system_from(cfg: dict) -> systems.SystemSpec:
    return systems.builtin_system(str(require(cfg, "system")))


def _corpus_from(cfg: dict, system: systems.SystemSpec) -> list[sim.Trajectory]:
    corpus_cfg = get(cfg, "corpus", {}) or {}
    init_box = get(cfg, "init_set") or system.metadata["init_box"]
    return data.generate_corpus(
        system,
        init_box,
        n_traj=int(corpus_cfg.get("n", 30)),
        steps=int(corpus_cfg.get("steps", system.metadata["horizon"])),
        h=float(corpus_cfg.get("h", system.metadata["h"])),
        seed=int(corpus_cfg.get("seed", get(cfg, "seed", 0))),
    )


def _datasets_from(cfg: dict, system: systems.SystemSpec):
    corpus = _corpus_from(cfg, system)
    ds_cfg = get(cfg, "dataset", {}) or {}
    full = data.make_records(
        corpus,
        kind=str(ds_cfg.get("kind", "inverse")),
        budget=int(ds_cfg.get("budget", data.DEFAULT_BUDGET)),
        seed=int(ds_cfg.get("seed", get(cfg, "seed", 0))),
        cross_offset=bool(ds_cfg.get("cross_offset", True)),
    )
    train_ds, test_ds = data.split(
        full,
        test_fraction=float(ds_cfg.get("test_fraction", 0.1)),
        seed=int(ds_cfg.get("split_seed", ds_cfg.get("seed", get(cfg, "seed", 0)))),
    )
    return corpus, train_ds, test_ds


def _train_config(cfg: dict) -> net.TrainConfig:
    tr = get(cfg, "train", {}) or {}
    return net.TrainConfig(
        epochs=int(tr.get("epochs", 50)),
        batch_size=int(tr.get("batch_size", 256)),
        learning_rate=float(tr.get("learning_rate", 0.05)),
        seed=int(tr.get("seed", get(cfg, "seed", 0))),
        loss=str(tr.get("loss", "mae")),
        init=str(tr.get("init", "nguyen-widrow")),
        momentum=float(tr.get("momentum", 0.9)),
        lr_decay=float(tr.get("lr_decay", 1.0)),
    )


def _model_from(cfg: dict, expect_kind: str | None = None) -> net.Mlp:
    path = require(cfg, "model")
    if not Path(path).is_file():
        raise ConfigError(f"model file {path!r} does not exist")
    model = net.load_model(path)
    trained_kind = (model.meta or {}).get("kind")
    if expect_kind and trained_kind and trained_kind != expect_kind:
        raise ConfigError(
            f"model {path!r} was trained for {trained_kind} sensitivity; "
            f"this command needs a {expect_kind}-sensitivity model"
        )
    return model


def _reference_block(system: systems.SystemSpec, kind: str) -> dict | None:
    ref = system.metadata.get("reference_metrics")
    return None if ref is None else ref.get(kind)


# --------------------------------------------------------------------------
# verbs
# --------------------------------------------------------------------------


def cmd_systems(args) -> int:
    rows = []
    for name in systems.available_systems():
        spec = systems.builtin_system(name)
        rows.append(
            {
                "name": name,
                "kind": spec.kind,
                "dimension": spec.dimension,
                "h": spec.metadata["h"],
                "horizon": spec.metadata["horizon"],
            }
        )
    if args.json:
        Path(args.json).write_text(_canonical_json(rows))
    for row in rows:
        print(
            f"{row['name']:<20} {row['kind']:<11} n={row['dimension']} "
            f"h={row['h']} horizon={row['horizon']}"
        )
    return 0


def cmd_simulate(cfg: dict, out: str | None) -> int:
    system = _system_from(cfg)
    run = Run("simulate", cfg, out)
    sim_cfg = get(cfg, "simulate", {}) or {}
    x0 = sim_cfg.get("x0")
    if x0 is None:
        box = np.asarray(get(cfg, "init_set") or system.metadata["init_box"], dtype=float)
        rng = np.random.default_rng(int(get(cfg, "seed", 0)))
        x0 = rng.uniform(box[:, 0], box[:, 1])
    steps = int(sim_cfg.get("steps", system.metadata["horizon"]))
    h = float(sim_cfg.get("h", system.metadata["h"]))
    traj = sim.simulate(system, np.asarray(x0, dtype=float), steps, h)
    sim.trajectory_to_csv(traj, run.path("trajectory.csv"))
    run.finish()
    print(f"wrote {run.dir}/trajectory.csv ({traj.steps + 1} states)")
    return 0


def cmd_dataset(cfg: dict, out: str | None) -> int:
    system = _system_from(cfg)
    run = Run("dataset", cfg, out)
    _, train_ds, test_ds = _datasets_from(cfg, system)
    data.save_dataset(train_ds, run.path("dataset_train.npz"))
    run.outputs.append("dataset_train.json")
    data.save_dataset(test_ds, run.path("dataset_test.npz"))
    run.outputs.append("dataset_test.json")
    if get(cfg, "dataset.csv", False):
        data.dataset_to_csv(train_ds, run.path("dataset_train.csv"))
    run.finish(extra={"counts": {"train": len(train_ds), "test": len(test_ds)}})
    print(f"wrote {run.dir} (train {len(train_ds)}, test {len(test_ds)} records)")
    return 0


def cmd_train(cfg: dict, out: str | None) -> int:
    system = _system_from(cfg)
    run = Run("train", cfg, out)
    _, train_ds, test_ds = _datasets_from(cfg, system)
    net_cfg = get(cfg, "net", {}) or {}
    hidden = list(net_cfg.get("hidden", [128, 128, 128, 128]))
    tc = _train_config(cfg)
    model = net.make_mlp(
        in_width=2 * system.dimension + 1,
        hidden=[int(w) for w in hidden],
        out_width=system.dimension,
        activation=str(net_cfg.get("activation", "relu")),
        init=tc.init,
        seed=tc.seed,
    )
    model, history = net.train(model, train_ds, tc)
    metrics = net.evaluate(model, test_ds)
    reference = _reference_block(system, train_ds.kind)
    if reference is not None:
        metrics = dict(metrics, reference=reference)
    net.save_model(model, run.path("model.json"))
    run.write_json("metrics.json", metrics)
    run.write_json("history.json", {"loss": history})
    run.finish(extra={"reference_metrics": reference})
    print(f"wrote {run.dir}/model.json  metrics: " + json.dumps(metrics, sort_keys=True))
    return 0


def cmd_eval(cfg: dict, out: str | None) -> int:
    system = _system_from(cfg)
    run = Run("eval", cfg, out)
    model = _model_from(cfg)
    _, _, test_ds = _datasets_from(cfg, system)
    metrics = net.evaluate(model, test_ds)
    reference = _reference_block(system, test_ds.kind)
    if reference is not None:
        metrics = dict(metrics, reference=reference)
    run.write_json("metrics.json", metrics)
    run.finish(extra={"reference_metrics": reference})
    print("metrics: " + json.dumps(metrics, sort_keys=True))
    return 0


def cmd_reach(cfg: dict, out: str | None) -> int:
    system = _system_from(cfg)
    run = Run("reach", cfg, out)
    model = _model_from(cfg, expect_kind="inverse")
    rc = get(cfg, "reach", {}) or {}
    seed = int(rc.get("seed", get(cfg, "seed", 0)))
    epsilon = float(rc.get("epsilon", 0.01))
    iterations = int(rc.get("iterations", 10))
    theta = get(cfg, "init_set") or system.metadata["init_box"]
    targets = rc.get("targets")
    h = float(rc.get("h", system.metadata["h"]))
    if targets is not None:
        t = rc.get("interval") or float(require(cfg, "reach.time"))
        results = explore.reach_targets(
            system, model, [np.asarray(z, dtype=float) for z in targets], t,
            theta=theta, epsilon=epsilon, iterations=iterations, seed=seed, h=h,
        )
        run.write_json("result.json", [r.to_dict() for r in results])
    elif rc.get("interval") is not None:
        result, t_star = explore.reach_target_interval(
            system, model, np.asarray(require(cfg, "reach.target"), dtype=float),
            tuple(rc["interval"]), theta=theta, epsilon=epsilon,
            iterations=iterations, seed=seed, h=h,
        )
        run.write_json("result.json", dict(result.to_dict(), t_star=t_star))
        results = [result]
    else:
        result = explore.reach_target(
            system, model, np.asarray(require(cfg, "reach.target"), dtype=float),
            float(require(cfg, "reach.time")), theta=theta, epsilon=epsilon,
            iterations=iterations, seed=seed, h=h,
        )
        run.write_json("result.json", result.to_dict())
        results = [result]
    rows = []
    for ri, result in enumerate(results):
        if result.error is not None:
            continue
        steps = int(round((result.time or 0.0) / h))
        for ii, (x, _) in enumerate(result.iterates):
            traj = sim.simulate(system, x, steps, h)
            for s, state in enumerate(traj.states):
                rows.append([ri, ii, s, s * h, *state])
    _write_csv(
        run.path("iterate_trajectories.csv"),
        ["result", "iterate", "step", "time"] + [f"x{i + 1}" for i in range(system.dimension)],
        rows,
    )
    run.finish()
    print(f"wrote {run.dir}/result.json")
    return 0


def _safety_spec(cfg: dict, system: systems.SystemSpec) -> falsify.SafetySpec:
    fc = get(cfg, "falsify", {}) or {}
    unsafe = require(cfg, "falsify.unsafe")
    horizon = int(fc.get("horizon", system.metadata["horizon"]))
    window = fc.get("window")
    return falsify.SafetySpec(
        unsafe=np.asarray(unsafe, dtype=float),
        horizon=horizon,
        time_window=None if window is None else (int(window[0]), int(window[1])),
    )


def cmd_falsify(cfg: dict, out: str | None) -> int:
    system = _system_from(cfg)
    run = Run("falsify", cfg, out)
    fc = get(cfg, "falsify", {}) or {}
    spec = _safety_spec(cfg, system)
    method = str(fc.get("method", "inverse"))
    seed = int(fc.get("seed", get(cfg, "seed", 0)))
    theta = get(cfg, "init_set") or system.metadata["init_box"]
    if method == "inverse":
        report = falsify.falsify_inverse(
            system, _model_from(cfg, expect_kind="inverse"), spec, theta=theta,
            targets=int(fc.get("targets", 10)), epsilon=float(fc.get("epsilon", 0.01)),
            iterations=int(fc.get("iterations", 10)), seed=seed,
            stride=int(fc.get("stride", 10)),
        )
    elif method == "forward":
        report = falsify.falsify_forward_density(
            system, _model_from(cfg, expect_kind="forward"), spec, theta=theta,
            cluster_size=int(fc.get("cluster", 20)),
            iterations=int(fc.get("iterations", 10)),
            threshold=float(fc.get("threshold", 0.0)), seed=seed,
        )
    elif method == "random":
        report = falsify.falsify_random_baseline(
            system, spec, theta=theta, budget=int(fc.get("budget", 100)), seed=seed,
        )
    else:
        raise ConfigError(f"falsify.method must be inverse, forward, or random, got {method!r}")
    run.write_json("report.json", report.to_dict())
    _write_csv(
        run.path("profile.csv"),
        [f"x{i + 1}" for i in range(system.dimension)] + ["distance"],
        [[*x, d] for x, d in report.distance_profile],
    )
    if report.predicted_profile:
        _write_csv(
            run.path("predicted_profile.csv"),
            [f"x{i + 1}" for i in range(system.dimension)] + ["distance"],
            [[*x, d] for x, d in report.predicted_profile],
        )
    run.finish()
    print(f"outcome: {report.outcome} after {report.samples_used} simulations")
    return 0


def cmd_predict(cfg: dict, out: str | None) -> int:
    system = _system_from(cfg)
    run = Run("predict", cfg, out)
    model = _model_from(cfg, expect_kind="forward")
    pc = get(cfg, "predict", {}) or {}
    h = float(pc.get("h", system.metadata["h"]))
    steps = int(pc.get("steps", system.metadata["horizon"]))
    anchor_x = pc.get("anchor")
    rng = np.random.default_rng(int(pc.get("seed", get(cfg, "seed", 0))))
    box = np.asarray(get(cfg, "init_set") or system.metadata["init_box"], dtype=float)
    if anchor_x is None:
        anchor_x = rng.uniform(box[:, 0], box[:, 1])
    anchor = sim.simulate(system, np.asarray(anchor_x, dtype=float), steps, h)
    window = pc.get("window") or [0, steps]
    starts = pc.get("starts")
    if starts is None:
        count = int(pc.get("count", 10))
        radius = float(pc.get("radius", 0.05)) * (box[:, 1] - box[:, 0])
        starts = anchor.initial + rng.uniform(-radius, radius, size=(count, system.dimension))
    preds = explore.predict_batch(
        anchor, model, [np.asarray(s, dtype=float) for s in starts],
        (int(window[0]), int(window[1])),
    )
    sim.trajectory_to_csv(anchor, run.path("anchor.csv"))
    rows = []
    for pi, p in enumerate(preds):
        for offset, state in enumerate(p.states):
            s = p.window[0] + offset
            rows.append([pi, s, s * h, *state])
    _write_csv(
        run.path("predicted.csv"),
        ["start", "step", "time"] + [f"x{i + 1}" for i in range(system.dimension)],
        rows,
    )
    run.finish()
    print(f"wrote {run.dir}/predicted.csv ({len(preds)} predicted trajectories)")
    return 0


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

VERBS = ("systems", "simulate", "dataset", "train", "eval", "reach", "falsify", "predict")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajsens",
        description="Sensitivity-surrogate pipeline for closed-loop systems",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    p_systems = sub.add_parser("systems", help="list registered benchmark systems")
    p_systems.add_argument("action", nargs="?", default="list", choices=["list"])
    p_systems.add_argument("--json", help="also write the listing to this JSON file")
    for verb in VERBS[1:]:
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a dotted config key")
        p.add_argument("--out", help="run directory (default: runs/<verb>-<config hash>)")
        p.add_argument("--seed", type=int, help="override the top-level seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "systems":
            return cmd_systems(args)
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, args.set)
        if args.seed is not None:
            cfg["seed"] = args.seed
        handler = {
            "simulate": cmd_simulate,
            "dataset": cmd_dataset,
            "train": cmd_train,
            "eval": cmd_eval,
            "reach": cmd_reach,
            "falsify": cmd_falsify,
            "predict": cmd_predict,
        }[args.verb]
        return handler(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return 2
    except TrajsensError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
