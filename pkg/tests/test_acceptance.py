"""Acceptance suite: one test per criterion, one printed pass/fail line each.

The two desk-scale Van der Pol networks are trained once per session (a few
minutes) and shared by criteria 4-8.  Everything is seeded; reruns are
bit-identical.  Run with `pytest tests/test_acceptance.py -v -s`.
"""

import filecmp
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import yaml

from trajsens import (
    SafetySpec,
    TrainConfig,
    builtin_system,
    evaluate,
    falsify_inverse,
    generate_corpus,
    gradient,
    make_mlp,
    make_records,
    oracle_for,
    predict_trajectory,
    random_vector_eval,
    reach_target,
    simulate,
    split,
    train,
)
from trajsens.cli import main as cli_main
from trajsens.data import enumeration_total
from trajsens.sim import OraclePredictor

H = 0.01


import conftest


@contextmanager
def criterion(number, description):
    started = time.perf_counter()
    try:
        yield
    except BaseException:
        line = f"ACCEPTANCE {number}: FAIL - {description}"
        conftest.ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        raise
    elapsed = time.perf_counter() - started
    line = f"ACCEPTANCE {number}: PASS - {description} ({elapsed:.1f}s)"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


# ---------------------------------------------------------------------------
# shared desk-scale Van der Pol networks (criteria 4-8)
# ---------------------------------------------------------------------------

TRAIN_SETTINGS = dict(epochs=120, batch_size=256, learning_rate=0.02,
                      loss="mae", init="nguyen-widrow", momentum=0.9, lr_decay=0.98)


@pytest.fixture(scope="session")
def vanderpol():
    return builtin_system("vanderpol")


@pytest.fixture(scope="session")
def vdp_nets(vanderpol):
    """Forward and inverse nets per criterion 4: N=30, k=500, h=0.01,
    budget 50 000, 4x128 relu.  Returns nets, held-out MREs, and wall time."""
    started = time.perf_counter()
    corpus = generate_corpus(vanderpol, vanderpol.metadata["init_box"], 30, 500, H, seed=101)
    nets, mres = {}, {}
    for kind in ("forward", "inverse"):
        records = make_records(corpus, kind, budget=50_000, seed=102)
        train_ds, test_ds = split(records, 0.1, seed=103)
        model = make_mlp(5, [128] * 4, 2, activation="relu", init="nguyen-widrow", seed=104)
        model, _ = train(model, train_ds, TrainConfig(seed=105, **TRAIN_SETTINGS))
        nets[kind] = model
        mres[kind] = evaluate(model, test_ds)["mre"]
    return nets, mres, time.perf_counter() - started


# ---------------------------------------------------------------------------
# 1. oracle pipeline gate
# ---------------------------------------------------------------------------


def test_criterion_1_oracle_pipeline_gate():
    with criterion(1, "exact-oracle reachTarget converges in one pass on linear-rotation"):
        started = time.perf_counter()
        spec = builtin_system("linear-rotation")
        predictor = OraclePredictor(oracle_for(spec), inverse=True)
        rng = np.random.default_rng(2024)
        for trial in range(100):
            z = rng.uniform(-1.4, 1.4, size=2)  # rotations preserve norm: no clamping
            steps = int(rng.integers(1, 629))  # t <= 2*pi
            result = reach_target(spec, predictor, z, steps * H, epsilon=1e-6,
                                  iterations=5, seed=trial)
            assert result.converged
            assert len(result.iterates) == 2
            assert result.iterates[1][1] < 1e-6
        assert time.perf_counter() - started < 5.0


# ---------------------------------------------------------------------------
# 2. dataset identity suite
# ---------------------------------------------------------------------------


def _brute_force(corpus, kind, cross_offset):
    h = corpus[0].step
    rows = []
    for a, ta in enumerate(corpus):
        for j in range(ta.steps + 1):
            for b, tb in enumerate(corpus):
                if not cross_offset and a == b:
                    continue
                for j2 in (range(tb.steps + 1) if cross_offset else [j]):
                    p, q = ta.states[j], tb.states[j2]
                    if np.array_equal(p, q):
                        continue
                    for i in range(1, min(ta.steps - j, tb.steps - j2) + 1):
                        if kind == "forward":
                            rows.append((p, q - p, i * h,
                                         tb.states[j2 + i] - ta.states[j + i]))
                        else:
                            x0 = ta.states[j + i]
                            rows.append((x0, tb.states[j2 + i] - x0, i * h, q - p))
    return rows


def test_criterion_2_dataset_identity_suite(vanderpol):
    with criterion(2, "records re-verify Eq.-identities exactly; counts match brute force"):
        started = time.perf_counter()
        # identity re-verification, bitwise, on a real corpus with a budget
        corpus = generate_corpus(vanderpol, vanderpol.metadata["init_box"], 4, 60, H, seed=7)
        states = np.stack([t.states for t in corpus])
        for kind in ("forward", "inverse"):
            ds = make_records(corpus, kind, budget=2000, seed=8)
            assert len(ds) == 2000
            for row in range(len(ds)):
                a, j, b, j2, i = ds.provenance[row]
                p, q = states[a, j], states[b, j2]
                if kind == "forward":
                    ok = (np.array_equal(ds.x0[row], p)
                          and np.array_equal(ds.v[row], q - p)
                          and np.array_equal(ds.y[row],
                                             states[b, j2 + i] - states[a, j + i]))
                else:
                    ok = (np.array_equal(ds.x0[row], states[a, j + i])
                          and np.array_equal(ds.v[row],
                                             states[b, j2 + i] - states[a, j + i])
                          and np.array_equal(ds.y[row], q - p))
                assert ok and ds.t[row] == i * H

        # enumeration equals the brute-force oracle on small corpora
        rng = np.random.default_rng(9)
        for n_traj, samples in [(2, 3), (3, 7), (4, 10)]:
            small = generate_corpus(vanderpol, vanderpol.metadata["init_box"],
                                    n_traj, samples - 1, H, seed=int(rng.integers(1e6)))
            for kind in ("forward", "inverse"):
                for cross in (True, False):
                    ds = make_records(small, kind, cross_offset=cross)
                    oracle = _brute_force(small, kind, cross)
                    assert len(ds) == len(oracle)
                    assert len(ds) <= enumeration_total(n_traj, samples - 1, cross)
        assert time.perf_counter() - started < 10.0


# ---------------------------------------------------------------------------
# 3. gradient correctness
# ---------------------------------------------------------------------------


def test_criterion_3_gradient_correctness():
    # smooth loss keeps the central difference itself valid; components whose
    # finite difference sits below its own cancellation noise are held to an
    # absolute 1e-8 instead of a meaningless relative figure
    with criterion(3, "backprop matches central differences on a 3-layer sigmoid net"):
        started = time.perf_counter()
        rng = np.random.default_rng(31)
        step = 1e-6
        for _ in range(50):
            model = make_mlp(4, [8, 6], 3, activation="sigmoid", init="uniform-he",
                             seed=int(rng.integers(1e9)))
            x = rng.normal(size=(6, 4))
            y = rng.normal(size=(6, 3))
            dw, db, _ = gradient(model, x, y, "mse")
            params = model.weights + model.biases
            grads = dw + db
            for container, grad in zip(params, grads):
                flat = container.reshape(-1)
                flat_grad = grad.reshape(-1)
                for k in range(flat.size):
                    orig = flat[k]
                    flat[k] = orig + step
                    up = gradient(model, x, y, "mse")[2]
                    flat[k] = orig - step
                    down = gradient(model, x, y, "mse")[2]
                    flat[k] = orig
                    fd = (up - down) / (2 * step)
                    if abs(fd) < 1e-6:
                        assert abs(flat_grad[k] - fd) < 1e-8
                    else:
                        assert abs(flat_grad[k] - fd) / abs(fd) < 1e-4
        assert time.perf_counter() - started < 10.0


# ---------------------------------------------------------------------------
# 4. learnability at desk scale
# ---------------------------------------------------------------------------


def test_criterion_4_learnability(vdp_nets):
    with criterion(4, "desk-scale Vanderpol nets reach held-out MRE <= 0.35"):
        _, mres, elapsed = vdp_nets
        assert mres["forward"] <= 0.35, f"forward MRE {mres['forward']:.3f}"
        assert mres["inverse"] <= 0.35, f"inverse MRE {mres['inverse']:.3f}"
        assert elapsed <= 30 * 60


# ---------------------------------------------------------------------------
# 5. reachTarget improvement
# ---------------------------------------------------------------------------


def test_criterion_5_reach_improvement(vanderpol, vdp_nets):
    with criterion(5, "median d_r: 5 iterations <= 0.5 and beats 1 iteration"):
        started = time.perf_counter()
        nets, _, _ = vdp_nets
        box = np.asarray(vanderpol.metadata["init_box"], float)
        rng = np.random.default_rng(9)
        d_r_1, d_r_5 = [], []
        for i in range(20):
            source = rng.uniform(box[:, 0], box[:, 1])
            steps = int(rng.integers(100, 501))
            z = simulate(vanderpol, source, steps, H).states[-1]  # guaranteed reachable
            common = dict(epsilon=0.01, seed=1000 + i, h=H)
            d_r_1.append(reach_target(vanderpol, nets["inverse"], z, steps * H,
                                      iterations=1, **common).d_r)
            d_r_5.append(reach_target(vanderpol, nets["inverse"], z, steps * H,
                                      iterations=5, **common).d_r)
        assert np.median(d_r_5) <= 0.5, f"median d_r(5) {np.median(d_r_5):.3f}"
        assert np.median(d_r_5) < np.median(d_r_1)
        assert time.perf_counter() - started < 5 * 60


# ---------------------------------------------------------------------------
# 6. random-vector trend
# ---------------------------------------------------------------------------


def test_criterion_6_random_vector_trend(vanderpol, vdp_nets):
    with criterion(6, "binned abs err non-decreasing; rel err converges in last bins"):
        nets, _, _ = vdp_nets
        table = random_vector_eval(vanderpol, nets["inverse"], (0.25, 0.70),
                                   count=2000, seed=11)
        order = np.argsort(table["vnorm"])
        bins = np.array_split(order, 5)  # >= 4 bins
        abs_means = [float(table["abs_err"][b].mean()) for b in bins]
        rel_means = [float(table["rel_err"][b].mean()) for b in bins]
        assert all(later >= earlier for earlier, later in zip(abs_means, abs_means[1:])), (
            f"binned abs err not monotone: {abs_means}"
        )
        assert abs(rel_means[-1] - rel_means[-2]) <= 0.25 * rel_means[-2], (
            f"last-bin rel err {rel_means[-1]:.3f} vs penultimate {rel_means[-2]:.3f}"
        )


# ---------------------------------------------------------------------------
# 7. falsification soundness + capability
# ---------------------------------------------------------------------------


def test_criterion_7_falsification(vanderpol, vdp_nets):
    with criterion(7, "falsify_inverse finds a re-simulatable counterexample"):
        started = time.perf_counter()
        nets, _, _ = vdp_nets
        box = np.asarray(vanderpol.metadata["init_box"], float)
        rng = np.random.default_rng(12)
        known = rng.uniform(box[:, 0], box[:, 1])
        point = simulate(vanderpol, known, 500, H).states[350]
        unsafe = np.stack([point - 0.15, point + 0.15], axis=1)  # known reachable
        spec = SafetySpec(unsafe=unsafe, horizon=500, time_window=(300, 400))
        report = falsify_inverse(vanderpol, nets["inverse"], spec, targets=10,
                                 epsilon=0.01, iterations=10, seed=13)
        assert report.outcome == "falsified"
        assert report.samples_used >= 1
        x0, step = report.counterexample
        resim = simulate(vanderpol, x0, spec.horizon, H)
        inside = np.all((resim.states[step] >= unsafe[:, 0])
                        & (resim.states[step] <= unsafe[:, 1]))
        assert bool(inside), "counterexample does not re-enter the unsafe box"
        assert time.perf_counter() - started < 5 * 60


# ---------------------------------------------------------------------------
# 8. prediction exactness / accuracy
# ---------------------------------------------------------------------------


def test_criterion_8_prediction(vanderpol, vdp_nets):
    with criterion(8, "exact-oracle predictions within 1e-6; net cluster error bounded"):
        started = time.perf_counter()
        # linear part: exact superposition over t <= 2*pi for 100 random starts
        rotation = builtin_system("linear-rotation")
        fwd_oracle = OraclePredictor(oracle_for(rotation), inverse=False)
        anchor = simulate(rotation, np.array([0.6, -0.2]), 628, H)
        rng = np.random.default_rng(81)
        for _ in range(100):
            start = rng.uniform(-1.0, 1.0, size=2)
            predicted = predict_trajectory(anchor, fwd_oracle, start, (0, 628))
            truth = simulate(rotation, start, 628, H)
            assert np.max(np.linalg.norm(predicted.states - truth.states, axis=1)) < 1e-6

        # trained net: 50-start neighborhood of an on-cycle anchor state
        nets, mres, _ = vdp_nets
        on_cycle = simulate(vanderpol, np.array([2.0, 0.0]), 2000, H).states[-1]
        window = (0, 250)
        vdp_anchor = simulate(vanderpol, on_cycle, 500, H)
        cluster_rng = np.random.default_rng(80)
        starts = np.clip(on_cycle + cluster_rng.uniform(-1.0, 1.0, size=(50, 2)),
                         vanderpol.domain[:, 0], vanderpol.domain[:, 1])
        errors, vnorms = [], []
        for start in starts:
            predicted = predict_trajectory(vdp_anchor, nets["forward"], start, window)
            truth = simulate(vanderpol, start, window[1], H)
            errors.append(float(np.linalg.norm(
                predicted.states - truth.states[window[0]:], axis=1).mean()))
            vnorms.append(float(np.linalg.norm(start - on_cycle)))
        bound = 3.0 * mres["forward"] * np.mean(vnorms)
        assert np.mean(errors) <= bound, (
            f"mean prediction error {np.mean(errors):.4f} > bound {bound:.4f}"
        )
        assert time.perf_counter() - started < 2 * 60


# ---------------------------------------------------------------------------
# 9. CLI determinism
# ---------------------------------------------------------------------------

CLI_BASE = {
    "system": "linear-rotation",
    "seed": 7,
    "corpus": {"n": 4, "steps": 60, "h": 0.01, "seed": 1},
    "simulate": {"steps": 60},
    "dataset": {"kind": "inverse", "budget": 400, "test_fraction": 0.1, "seed": 2},
    "net": {"hidden": [16, 16], "activation": "relu"},
    "train": {"epochs": 3, "batch_size": 64, "learning_rate": 0.05, "seed": 3},
}


def _identical_dirs(a: Path, b: Path) -> bool:
    names = sorted(p.name for p in a.iterdir())
    if names != sorted(p.name for p in b.iterdir()):
        return False
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    return not mismatch and not errors


def test_criterion_9_cli_determinism(tmp_path):
    with criterion(9, "every CLI verb re-run emits byte-identical JSON/CSV"):
        cfg_path = tmp_path / "base.yaml"
        cfg_path.write_text(yaml.safe_dump(CLI_BASE))
        model_dir = tmp_path / "train-model"
        assert cli_main(["train", "--config", str(cfg_path), "--out", str(model_dir)]) == 0
        model = str(model_dir / "model.json")

        fwd_cfg = {**CLI_BASE, "dataset": dict(CLI_BASE["dataset"], kind="forward")}
        fwd_path = tmp_path / "fwd.yaml"
        fwd_path.write_text(yaml.safe_dump(fwd_cfg))
        fwd_dir = tmp_path / "train-fwd"
        assert cli_main(["train", "--config", str(fwd_path), "--out", str(fwd_dir)]) == 0
        fwd_model = str(fwd_dir / "model.json")

        configs = {
            "simulate": CLI_BASE,
            "dataset": CLI_BASE,
            "train": CLI_BASE,
            "eval": {**CLI_BASE, "model": model},
            "reach": {**CLI_BASE, "model": model,
                      "reach": {"target": [0.2, 0.3], "time": 0.5, "epsilon": 0.001,
                                "iterations": 3, "seed": 5}},
            "falsify": {**CLI_BASE, "model": model,
                        "falsify": {"method": "random", "budget": 20, "horizon": 60,
                                    "unsafe": [[-0.2, 0.2], [-0.2, 0.2]], "seed": 4}},
            "predict": {**CLI_BASE, "model": fwd_model,
                        "predict": {"steps": 60, "window": [0, 60], "count": 4, "seed": 9}},
        }
        for verb, cfg in configs.items():
            path = tmp_path / f"{verb}.yaml"
            path.write_text(yaml.safe_dump(cfg))
            out1, out2 = tmp_path / f"{verb}-1", tmp_path / f"{verb}-2"
            assert cli_main([verb, "--config", str(path), "--out", str(out1)]) == 0
            assert cli_main([verb, "--config", str(path), "--out", str(out2)]) == 0
            assert _identical_dirs(out1, out2), f"{verb} outputs differ between reruns"

        # the listing verb with a JSON artifact
        j1, j2 = tmp_path / "sys1.json", tmp_path / "sys2.json"
        assert cli_main(["systems", "--json", str(j1)]) == 0
        assert cli_main(["systems", "--json", str(j2)]) == 0
        assert j1.read_bytes() == j2.read_bytes()
