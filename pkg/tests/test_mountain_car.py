"""End-to-end checks on the discrete neural-feedback benchmark.

Trains a small sigmoid inverse net (the bundled controller is sigmoid-based)
and exercises the time-interval reach variants: scanning an ordered list of
left-hill targets for the farthest reachable one, and the effect of widening
the initial set on the achievable left-hill excursion.
"""

import numpy as np
import pytest

from trajsens import (
    TrainConfig,
    builtin_system,
    evaluate,
    generate_corpus,
    make_mlp,
    make_records,
    reach_target,
    reach_target_interval,
    split,
    train,
)


@pytest.fixture(scope="module")
def mc():
    return builtin_system("mountain-car")


@pytest.fixture(scope="module")
def mc_inverse(mc):
    corpus = generate_corpus(mc, mc.metadata["init_box"], 20, 100, 1.0, seed=51)
    ds = make_records(corpus, "inverse", budget=15_000, seed=52)
    train_ds, test_ds = split(ds, 0.1, seed=53)
    model = make_mlp(5, [64, 64], 2, activation="sigmoid", init="nguyen-widrow", seed=54)
    cfg = TrainConfig(epochs=40, batch_size=128, learning_rate=0.05, seed=55,
                      loss="mae", momentum=0.9, lr_decay=0.97)
    model, _ = train(model, train_ds, cfg)
    metrics = evaluate(model, test_ds)
    return model, metrics


def test_mc_inverse_net_learns_something(mc_inverse):
    _, metrics = mc_inverse
    assert np.isfinite(metrics["mre"])
    assert metrics["mse"] < 0.05  # state scale is ~1e-1, so this is loose


def test_left_hill_targets_interval_search(mc, mc_inverse):
    # ordered targets farther and farther up the left hill; the interval scan
    # reports the best time instance per target and distances grow once the
    # car can no longer reach
    model, _ = mc_inverse
    interval = (20.0, 80.0)
    targets = [np.array([-0.7, 0.0]), np.array([-0.85, 0.0]), np.array([-1.0, 0.0])]
    best = []
    for z in targets:
        result, t_star = reach_target_interval(
            mc, model, z, interval, epsilon=0.02, iterations=4, seed=60, h=1.0,
        )
        assert interval[0] <= t_star <= interval[1]
        assert t_star == int(t_star)  # unit steps
        best.append(result.d_a)
    assert best[0] < 0.25  # the near target is approachable
    assert all(np.isfinite(d) for d in best)


def _max_left_excursion(mc, model, theta, seed):
    """Farthest-left position over every real probe of a far-left reach run."""
    excursions = []

    def observer(x, traj):
        excursions.append(-traj.states[:, 0].min())
        return False

    reach_target(mc, model, np.array([-1.1, 0.0]), 60.0, theta=theta,
                 epsilon=0.02, iterations=6, seed=seed, h=1.0, observer=observer,
                 clamp_box=np.asarray(theta, float))
    return max(excursions)


def test_wider_initial_set_reaches_farther_left(mc, mc_inverse):
    model, _ = mc_inverse
    trained = [[-0.55, -0.45], [0.0, 0.0]]
    expanded = [[-0.60, -0.40], [0.0, 0.0]]
    base = max(_max_left_excursion(mc, model, trained, seed) for seed in range(5))
    wide = max(_max_left_excursion(mc, model, expanded, seed) for seed in range(5))
    assert wide > base
