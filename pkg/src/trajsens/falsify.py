"""Safety falsification: inverse-sensitivity targeting, forward density-based
greedy search, distance-profile maps, and a random-sampling baseline.

Distance to the unsafe box is the Euclidean distance to its nearest point
(zero inside).  Every reported counterexample and profile distance comes from
a real simulation, so reports re-verify under re-simulation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .explore import _resolve_theta, _uniform_in_box, predict_batch, reach_target
from .sim import Trajectory, simulate
from .systems import SystemSpec


@dataclass(frozen=True)
class SafetySpec:
    """Axis-aligned unsafe box, a step horizon, and an optional step window."""

    unsafe: np.ndarray  # (n, 2)
    horizon: int
    time_window: tuple[int, int] | None = None

    def __post_init__(self):
        box = np.asarray(self.unsafe, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 0] > box[:, 1]):
            raise ConfigError("unsafe set must be an (n, 2) box with lower <= upper")
        box.setflags(write=False)
        object.__setattr__(self, "unsafe", box)
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.time_window is not None:
            lo, hi = self.time_window
            if not (0 <= lo <= hi <= self.horizon):
                raise ConfigError("time window must lie within [0, horizon]")

    def window(self) -> tuple[int, int]:
        return self.time_window if self.time_window is not None else (0, self.horizon)


@dataclass
class FalsifyReport:
    outcome: str  # falsified | exhausted
    counterexample: tuple[np.ndarray, int] | None
    samples_used: int
    distance_profile: list[tuple[np.ndarray, float]]
    predicted_profile: list[tuple[np.ndarray, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        ce = None
        if self.counterexample is not None:
            ce = {"x0": [float(v) for v in self.counterexample[0]],
                  "step": int(self.counterexample[1])}
        return {
            "outcome": self.outcome,
            "counterexample": ce,
            "samples_used": self.samples_used,
            "profile": [[*map(float, x), float(d)] for x, d in self.distance_profile],
        }


def box_distance(x, box) -> float:
    """Euclidean distance from x to the box (zero inside)."""
    x = np.asarray(x, dtype=float)
    box = np.asarray(box, dtype=float)
    return float(np.linalg.norm(x - np.clip(x, box[:, 0], box[:, 1])))


def trajectory_distances(traj: Trajectory, box, window: tuple[int, int]) -> np.ndarray:
    lo, hi = window
    states = traj.states[lo : hi + 1]
    box = np.asarray(box, dtype=float)
    clipped = np.clip(states, box[:, 0], box[:, 1])
    return np.linalg.norm(states - clipped, axis=1)


def trajectory_entry_step(traj: Trajectory, box, window: tuple[int, int]) -> int | None:
    """First step (absolute index) at which the trajectory is inside the box.

    Uses exact box membership rather than a zero distance: squared norms of
    sub-1e-150 offsets underflow to 0.0, which would admit states marginally
    outside the box.
    """
    lo, hi = window
    states = traj.states[lo : hi + 1]
    box = np.asarray(box, dtype=float)
    inside = np.flatnonzero(
        np.all((states >= box[:, 0]) & (states <= box[:, 1]), axis=1)
    )
    return int(lo + inside[0]) if inside.size else None


def _check_unsafe_overlaps_domain(sys: SystemSpec, spec: SafetySpec):
    lo = np.maximum(sys.domain[:, 0], spec.unsafe[:, 0])
    hi = np.minimum(sys.domain[:, 1], spec.unsafe[:, 1])
    if np.any(lo > hi):
        raise ConfigError(
            f"unsafe set does not intersect the domain of {sys.name}"
        )


def _candidate_steps(spec: SafetySpec, stride: int) -> list[int]:
    if spec.time_window is not None:
        lo, hi = spec.time_window
        return list(range(max(lo, 1), hi + 1)) or [max(lo, 1)]
    return list(range(stride, spec.horizon + 1, stride)) or [spec.horizon]


def falsify_inverse(
    sys: SystemSpec,
    model,
    spec: SafetySpec,
    theta=None,
    targets: int = 10,
    epsilon: float = 0.01,
    iterations: int = 10,
    seed: int = 0,
    stride: int = 10,
    h: float | None = None,
    stop_on_entry: bool = True,
    target_states=None,
) -> FalsifyReport:
    """Reach-toward random unsafe states until a probe trajectory enters U.

    Samples `targets` states uniformly in the unsafe box (or uses explicit
    `target_states`), then runs the inverse-sensitivity reach loop toward each
    at every candidate time: each step of the spec's time window, or the full
    horizon at `stride` when no window is given.  Probed initial states stay
    clamped inside theta, so a counterexample is always a legal initial state.
    Every real simulation lands in the distance profile; a target is abandoned
    after `iterations` passes without entry.
    """
    _check_unsafe_overlaps_domain(sys, spec)
    if targets < 1:
        raise ConfigError("target count must be >= 1")
    h = sys.metadata.get("h", 0.01) if h is None else float(h)
    theta_box = _resolve_theta(sys, theta)
    rng = np.random.default_rng(seed)
    if target_states is None:
        target_states = [_uniform_in_box(rng, spec.unsafe) for _ in range(targets)]
    else:
        target_states = [np.asarray(z, dtype=float) for z in target_states]
    window = spec.window()
    profile: list[tuple[np.ndarray, float]] = []
    counterexample: list = []
    samples = 0

    def observer(x, traj):
        nonlocal samples
        samples += 1
        d = float(trajectory_distances(traj, spec.unsafe, window).min())
        profile.append((np.asarray(x, dtype=float).copy(), d))
        if not counterexample:
            step = trajectory_entry_step(traj, spec.unsafe, window)
            if step is not None:
                counterexample.append((np.asarray(x, dtype=float).copy(), step))
        return bool(counterexample) and stop_on_entry

    candidate_steps = _candidate_steps(spec, stride)
    run_seeds = rng.integers(0, 2 ** 63 - 1, size=len(target_states) * len(candidate_steps))
    run = 0
    done = False
    for z in target_states:
        for s in candidate_steps:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                reach_target(
                    sys, model, z, s * h, theta=theta_box, epsilon=epsilon,
                    iterations=iterations, seed=int(run_seeds[run]), h=h,
                    sim_steps=spec.horizon, observer=observer, clamp_box=theta_box,
                )
            run += 1
            if counterexample and stop_on_entry:
                done = True
                break
        if done:
            break
    return FalsifyReport(
        outcome="falsified" if counterexample else "exhausted",
        counterexample=counterexample[0] if counterexample else None,
        samples_used=samples,
        distance_profile=profile,
    )


def falsify_forward_density(
    sys: SystemSpec,
    model,
    spec: SafetySpec,
    theta=None,
    cluster_size: int = 20,
    iterations: int = 10,
    threshold: float = 0.0,
    seed: int = 0,
    radius_frac: float = 0.05,
    h: float | None = None,
) -> FalsifyReport:
    """Greedy anchor re-selection guided by predicted trajectories.

    Each round simulates an anchor (a real sample), finds the window of its
    trajectory nearest the unsafe set, predicts trajectories for a cluster of
    nearby starts over that window, and re-anchors at the start whose
    prediction comes closest to the unsafe set.  Stops on entry, on reaching
    `threshold`, or after `iterations` rounds.  Only anchors consume
    simulations and only they enter the distance profile; predicted cluster
    distances are reported separately.
    """
    _check_unsafe_overlaps_domain(sys, spec)
    if cluster_size < 2:
        raise ConfigError("cluster size must be >= 2")
    h = sys.metadata.get("h", 0.01) if h is None else float(h)
    box = _resolve_theta(sys, theta)
    rng = np.random.default_rng(seed)
    window = spec.window()
    radius = radius_frac * (box[:, 1] - box[:, 0])
    if not np.any(radius > 0):
        radius = radius_frac * (sys.domain[:, 1] - sys.domain[:, 0])
    profile: list[tuple[np.ndarray, float]] = []
    predicted: list[tuple[np.ndarray, float]] = []
    samples = 0
    anchor_x = _uniform_in_box(rng, box)
    halfwidth = max(5, spec.horizon // 10)

    for _ in range(iterations + 1):
        anchor = simulate(sys, anchor_x, spec.horizon, h)
        samples += 1
        distances = trajectory_distances(anchor, spec.unsafe, window)
        d_min = float(distances.min())
        profile.append((anchor_x.copy(), d_min))
        step = trajectory_entry_step(anchor, spec.unsafe, window)
        if step is not None:
            return FalsifyReport("falsified", (anchor_x.copy(), step), samples,
                                 profile, predicted)
        if d_min <= threshold:
            break
        s_star = window[0] + int(np.argmin(distances))
        pred_window = (max(window[0], s_star - halfwidth), min(window[1], s_star + halfwidth))
        starts = anchor_x + rng.uniform(-radius, radius, size=(cluster_size, sys.dimension))
        starts = np.clip(starts, box[:, 0], box[:, 1])  # stay inside the legal init set
        preds = predict_batch(anchor, model, starts, pred_window)
        pred_d = []
        for start, p in zip(starts, preds):
            clipped = np.clip(p.states, spec.unsafe[:, 0], spec.unsafe[:, 1])
            d = float(np.linalg.norm(p.states - clipped, axis=1).min())
            pred_d.append(d)
            predicted.append((start.copy(), d))
        anchor_x = starts[int(np.argmin(pred_d))]
    return FalsifyReport("exhausted", None, samples, profile, predicted)


def inverse_density_map(
    sys: SystemSpec,
    model,
    spec: SafetySpec,
    theta=None,
    samples: int | None = None,
    grid=None,
    epsilon: float = 0.01,
    iterations: int = 10,
    seed: int = 0,
    stride: int = 10,
    h: float | None = None,
) -> list[tuple[np.ndarray, float]]:
    """(initial state, min distance to U) pairs for heat-map rendering.

    With `samples`, runs the full inverse-sensitivity probing toward that many
    random unsafe states without stopping at entry, and returns every probed
    initial state.  With an explicit `grid` of initial states, simulates each
    once and reports its window-min distance.
    """
    if grid is not None:
        h = sys.metadata.get("h", 0.01) if h is None else float(h)
        window = spec.window()
        out = []
        for x0 in grid:
            traj = simulate(sys, np.asarray(x0, dtype=float), spec.horizon, h)
            d = float(trajectory_distances(traj, spec.unsafe, window).min())
            out.append((np.asarray(x0, dtype=float).copy(), d))
        return out
    if samples is None or samples < 1:
        raise ConfigError("pass a sample count >= 1 or an explicit grid")
    report = falsify_inverse(
        sys, model, spec, theta=theta, targets=samples, epsilon=epsilon,
        iterations=iterations, seed=seed, stride=stride, h=h, stop_on_entry=False,
    )
    return report.distance_profile


def falsify_random_baseline(
    sys: SystemSpec,
    spec: SafetySpec,
    theta=None,
    budget: int = 100,
    seed: int = 0,
    h: float | None = None,
) -> FalsifyReport:
    """Uniform random initial states; the report schema matches the guided
    searches so sample counts compare directly."""
    _check_unsafe_overlaps_domain(sys, spec)
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    h = sys.metadata.get("h", 0.01) if h is None else float(h)
    box = _resolve_theta(sys, theta)
    rng = np.random.default_rng(seed)
    window = spec.window()
    profile = []
    for i in range(budget):
        x0 = _uniform_in_box(rng, box)
        traj = simulate(sys, x0, spec.horizon, h)
        d = float(trajectory_distances(traj, spec.unsafe, window).min())
        profile.append((x0.copy(), d))
        step = trajectory_entry_step(traj, spec.unsafe, window)
        if step is not None:
            return FalsifyReport("falsified", (x0.copy(), step), i + 1, profile)
    return FalsifyReport("exhausted", None, budget, profile)
