"""Target reaching via learned inverse sensitivity and trajectory prediction
via learned forward sensitivity.

The reach loop repeatedly simulates from a candidate initial state, asks the
inverse-sensitivity model for the initial-state perturbation that moves the
trajectory's endpoint onto the target, and applies it.  The model input
vector is the desired endpoint displacement z - xi(x, t): with the exact
linear oracle the single correction x + exp(-At)(z - xi(x, t)) lands on z.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainWarning, RangeError, TrajsensError
from .sim import Trajectory, simulate
from .systems import SystemSpec


@dataclass
class ReachResult:
    """Best iterate of one reach run plus the full iterate log."""

    x: np.ndarray
    d_a: float
    d_r: float
    iterates: list[tuple[np.ndarray, float]]
    converged: bool
    target: np.ndarray | None = None
    time: float | None = None
    clamped: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "x": [float(v) for v in self.x],
            "d_a": self.d_a,
            "d_r": self.d_r,
            "converged": self.converged,
            "iterates": [
                {"x": [float(v) for v in xi], "d_a": di} for xi, di in self.iterates
            ],
            "target": None if self.target is None else [float(v) for v in self.target],
            "time": self.time,
            "clamped": self.clamped,
            "error": self.error,
        }


@dataclass(frozen=True)
class PredictedTrajectory:
    """Network-predicted states around an anchor trajectory; no integration."""

    anchor: Trajectory
    start: np.ndarray
    window: tuple[int, int]
    states: np.ndarray

    @property
    def times(self) -> np.ndarray:
        lo, hi = self.window
        return np.arange(lo, hi + 1) * self.anchor.step


def _steps_for(t: float, h: float) -> int:
    steps = int(round(t / h))
    if abs(steps * h - t) > 1e-9 * max(1.0, abs(t)) or steps < 0:
        raise ConfigError(f"time {t} is not a non-negative multiple of the step size {h}")
    return steps


def _clamp_to_box(box: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, bool]:
    clipped = np.clip(x, box[:, 0], box[:, 1])
    return clipped, bool(np.any(clipped != x))


def _uniform_in_box(rng: np.random.Generator, box: np.ndarray) -> np.ndarray:
    return rng.uniform(box[:, 0], box[:, 1])


def _resolve_theta(sys: SystemSpec, theta) -> np.ndarray:
    if theta is None:
        theta = sys.metadata.get("init_box")
        if theta is None:
            raise ConfigError(f"{sys.name} has no default init box; pass theta")
    box = np.asarray(theta, dtype=float)
    if box.shape != (sys.dimension, 2) or np.any(box[:, 0] > box[:, 1]):
        raise ConfigError("theta must be an (n, 2) box with lower <= upper")
    return box


def reach_target(
    sys: SystemSpec,
    model,
    z,
    t: float,
    theta=None,
    epsilon: float = 0.01,
    iterations: int = 10,
    seed: int = 0,
    h: float | None = None,
    restarts: int = 1,
    sim_steps: int | None = None,
    observer=None,
    clamp_box=None,
) -> ReachResult:
    """Iterative inverse-sensitivity correction toward target z at time t.

    Samples the first candidate uniformly from theta, then applies up to
    `iterations` correction passes, stopping early once the endpoint distance
    d_a = ||xi(x, t) - z|| drops to `epsilon`.  Returns the best iterate seen.
    Iterates leaving `clamp_box` (the system domain unless the caller narrows
    it, e.g. falsifiers keep probes inside the legal initial set) are clamped
    with a DomainWarning.  When the distance stalls for three passes and
    `restarts` allows, a fresh random candidate is drawn.  `sim_steps` extends
    each probe simulation past t; `observer(x, trajectory)` sees every real
    simulation and may return True to stop the loop.
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be > 0")
    if iterations < 1:
        raise ConfigError("iteration count must be >= 1")
    h = sys.metadata.get("h", 0.01) if h is None else float(h)
    n_t = _steps_for(t, h)
    steps = n_t if sim_steps is None else int(sim_steps)
    if steps < n_t:
        raise ConfigError("sim_steps must cover the target time")
    box = _resolve_theta(sys, theta)
    clamp = sys.domain if clamp_box is None else np.asarray(clamp_box, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.shape != (sys.dimension,):
        raise ConfigError(f"target shape {z.shape} does not match dimension {sys.dimension}")
    if np.any(z < sys.domain[:, 0]) or np.any(z > sys.domain[:, 1]):
        warnings.warn(f"target {z.tolist()} lies outside the domain of {sys.name}",
                      DomainWarning, stacklevel=2)

    rng = np.random.default_rng(seed)
    clamp_count = 0
    stop = False

    def probe(x):
        nonlocal stop
        traj = simulate(sys, x, steps, h)
        if observer is not None and observer(x, traj):
            stop = True
        endpoint = traj.states[n_t]
        return endpoint, float(np.linalg.norm(endpoint - z))

    x = _uniform_in_box(rng, box)
    endpoint, d = probe(x)
    iterates = [(x.copy(), d)]
    stall = 0
    restarts_used = 1
    for _ in range(iterations):
        if d <= epsilon or stop:
            break
        if stall >= 3 and restarts_used < restarts:
            restarts_used += 1
            stall = 0
            x = _uniform_in_box(rng, box)
        else:
            correction = np.asarray(model.predict(endpoint, z - endpoint, n_t * h), dtype=float)
            x = x + correction
        x, was_clamped = _clamp_to_box(clamp, x)
        if was_clamped:
            clamp_count += 1
            warnings.warn(f"iterate of {sys.name} clamped into bounds",
                          DomainWarning, stacklevel=2)
        d_prev = d
        endpoint, d = probe(x)
        iterates.append((x.copy(), d))
        stall = stall + 1 if d > d_prev * 0.99 else 0

    best = min(range(len(iterates)), key=lambda i: iterates[i][1])
    d_best = iterates[best][1]
    d_orig = iterates[0][1]
    d_r = d_best / d_orig if d_orig > 0 else 0.0
    return ReachResult(
        x=iterates[best][0],
        d_a=d_best,
        d_r=d_r,
        iterates=iterates,
        converged=d_best <= epsilon,
        target=z,
        time=n_t * h,
        clamped=clamp_count,
    )


def reach_target_interval(
    sys: SystemSpec,
    model,
    z,
    interval: tuple[float, float],
    theta=None,
    epsilon: float = 0.01,
    iterations: int = 10,
    seed: int = 0,
    h: float | None = None,
    **kwargs,
) -> tuple[ReachResult, float]:
    """Run reach_target for every step in [t1, t2]; return the best result
    and its time, ties broken by the earliest time."""
    h = sys.metadata.get("h", 0.01) if h is None else float(h)
    t1, t2 = interval
    s1, s2 = _steps_for(t1, h), _steps_for(t2, h)
    if s1 > s2:
        raise ConfigError("interval must satisfy t1 <= t2")
    steps = list(range(max(s1, 1), s2 + 1)) or [s1]
    rng = np.random.default_rng(seed)
    extra = rng.integers(0, 2 ** 63 - 1, size=len(steps))
    seeds = [seed] + [int(v) for v in extra[1:]]
    best_result, best_t = None, None
    for s, run_seed in zip(steps, seeds):
        result = reach_target(
            sys, model, z, s * h, theta=theta, epsilon=epsilon,
            iterations=iterations, seed=run_seed, h=h, **kwargs,
        )
        if best_result is None or result.d_a < best_result.d_a:
            best_result, best_t = result, s * h
    return best_result, best_t


def reach_targets(
    sys: SystemSpec,
    model,
    targets,
    t,
    theta=None,
    epsilon: float = 0.01,
    iterations: int = 10,
    seed: int = 0,
    h: float | None = None,
    **kwargs,
) -> list[ReachResult]:
    """Independent reach_target per target (interval when t is a pair);
    order-preserving, per-target errors isolated."""
    results = []
    for z in targets:
        try:
            if isinstance(t, (tuple, list)) and len(t) == 2:
                result, _ = reach_target_interval(
                    sys, model, z, tuple(t), theta=theta, epsilon=epsilon,
                    iterations=iterations, seed=seed, h=h, **kwargs,
                )
            else:
                result = reach_target(
                    sys, model, z, float(t), theta=theta, epsilon=epsilon,
                    iterations=iterations, seed=seed, h=h, **kwargs,
                )
        except TrajsensError as exc:
            z_arr = np.asarray(z, dtype=float)
            result = ReachResult(
                x=z_arr, d_a=float("inf"), d_r=float("inf"), iterates=[],
                converged=False, target=z_arr, error=str(exc),
            )
        results.append(result)
    return results


def random_vector_eval(
    sys: SystemSpec,
    model,
    t_interval: tuple[float, float],
    count: int,
    seed: int = 0,
    theta=None,
    v_max: float | None = None,
    h: float | None = None,
) -> dict:
    """Correction quality on random displacement vectors.

    Each sample perturbs the endpoint of a random trajectory at a random time
    in the interval by a random nonzero vector v, asks the model for the
    initial-state correction, and measures how far the corrected trajectory
    lands from the displaced endpoint.  Returns columns vnorm, t, abs_err,
    rel_err.
    """
    if count < 1:
        raise ConfigError("count must be >= 1")
    h = sys.metadata.get("h", 0.01) if h is None else float(h)
    box = _resolve_theta(sys, theta)
    s1, s2 = _steps_for(t_interval[0], h), _steps_for(t_interval[1], h)
    if s1 > s2:
        raise ConfigError("interval must satisfy t1 <= t2")
    s1 = max(s1, 1)
    if v_max is None:
        v_max = 0.25 * float(np.mean(sys.domain[:, 1] - sys.domain[:, 0]))
    rng = np.random.default_rng(seed)
    vnorm = np.empty(count)
    times = np.empty(count)
    abs_err = np.empty(count)
    rel_err = np.empty(count)
    for i in range(count):
        x1 = _uniform_in_box(rng, box)
        s = int(rng.integers(s1, s2 + 1))
        direction = rng.normal(size=sys.dimension)
        while np.linalg.norm(direction) == 0.0:
            direction = rng.normal(size=sys.dimension)
        magnitude = rng.uniform(0.05, 1.0) * v_max
        v = direction / np.linalg.norm(direction) * magnitude
        t = s * h
        base = simulate(sys, x1, s, h).states[-1]
        correction = np.asarray(model.predict(base, v, t), dtype=float)
        reached = simulate(sys, x1 + correction, s, h).states[-1]
        err = float(np.linalg.norm(reached - (base + v)))
        vnorm[i] = magnitude
        times[i] = t
        abs_err[i] = err
        rel_err[i] = err / magnitude
    return {"vnorm": vnorm, "t": times, "abs_err": abs_err, "rel_err": rel_err}


def predict_trajectory(anchor: Trajectory, model, start, window: tuple[int, int]) -> PredictedTrajectory:
    """Predicted trajectory from `start` over a step window of the anchor:
    anchor state plus the forward-sensitivity estimate, no integration."""
    lo, hi = int(window[0]), int(window[1])
    if lo < 0 or hi > anchor.steps or lo > hi:
        raise RangeError(
            f"window [{lo}, {hi}] outside the anchor horizon [0, {anchor.steps}]"
        )
    start = np.asarray(start, dtype=float)
    if start.shape != (anchor.dimension,):
        raise ConfigError(f"start shape {start.shape} does not match dimension {anchor.dimension}")
    x_i = anchor.initial
    v = start - x_i
    steps = np.arange(lo, hi + 1)
    if hasattr(model, "predict_raw"):
        raw = np.hstack([
            np.tile(x_i, (steps.size, 1)),
            np.tile(v, (steps.size, 1)),
            (steps * anchor.step)[:, None],
        ])
        offsets = model.predict_raw(raw)
    else:
        offsets = np.empty((steps.size, anchor.dimension))
        for row, s in enumerate(steps):
            offsets[row] = model.predict(x_i, v, s * anchor.step)
    states = anchor.states[lo : hi + 1] + offsets
    return PredictedTrajectory(anchor=anchor, start=start, window=(lo, hi), states=states)


def predict_batch(anchor: Trajectory, model, starts, window: tuple[int, int]) -> list[PredictedTrajectory]:
    """Elementwise predict_trajectory; output order follows the input order."""
    return [predict_trajectory(anchor, model, s, window) for s in starts]
