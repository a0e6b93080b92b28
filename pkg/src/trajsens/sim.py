"""Fixed-step simulation and exact sensitivity oracles for linear systems.

Continuous and hybrid systems are integrated with classical fixed-step RK4;
the active hybrid mode is selected once per step at the step's start state.
Discrete systems iterate their next-state map.  Fixed stepping keeps every
trajectory bit-reproducible, which the data pipeline relies on.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, DivergenceError, UnsupportedError
from .systems import SystemSpec, select_mode

DIVERGENCE_NORM = 1e9


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled solution sequence from one initial state."""

    initial: np.ndarray
    step: float
    states: np.ndarray  # (k+1, n), states[0] == initial
    direction: str = "forward"
    system: str = ""

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        states.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=float))

    @property
    def steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.states.shape[0]) * self.step

    def state_at(self, step: int) -> np.ndarray:
        return self.states[step]


def _check_x0(sys: SystemSpec, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.dimension,):
        raise DimensionError(
            f"{sys.name} is {sys.dimension}-dimensional, got initial state shape {x0.shape}"
        )
    return x0


def _rk4_step(fieldfn, x: np.ndarray, h: float) -> np.ndarray:
    k1 = fieldfn(x)
    k2 = fieldfn(x + 0.5 * h * k1)
    k3 = fieldfn(x + 0.5 * h * k2)
    k4 = fieldfn(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _run(sys: SystemSpec, x0: np.ndarray, steps: int, h: float, sign: float,
         direction: str) -> Trajectory:
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if h <= 0:
        raise ValueError("step size must be > 0")
    out = np.empty((steps + 1, sys.dimension))
    out[0] = x0
    x = x0
    for i in range(steps):
        mode = select_mode(sys, x)
        # overflow on the way out of range is expected; the guard below
        # converts it into a DivergenceError with the finite prefix
        with np.errstate(over="ignore", invalid="ignore"):
            if sys.kind == "discrete":
                x = np.asarray(mode.field(x), dtype=float)
            else:
                fieldfn = mode.field if sign > 0 else (lambda y, f=mode.field: -f(y))
                x = _rk4_step(fieldfn, x, h)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            prefix = Trajectory(initial=x0, step=h, states=out[: i + 1].copy(),
                                direction=direction, system=sys.name)
            raise DivergenceError(
                f"{sys.name} diverged at step {i + 1} of {steps}", prefix=prefix
            )
        out[i + 1] = x
    return Trajectory(initial=x0, step=h, states=out, direction=direction, system=sys.name)


def simulate(sys: SystemSpec, x0, steps: int, h: float | None = None) -> Trajectory:
    """Forward trajectory of `steps` fixed steps (k+1 states including x0)."""
    x0 = _check_x0(sys, x0)
    h = sys.metadata.get("h", 0.01) if h is None else float(h)
    return _run(sys, x0, steps, h, sign=1.0, direction="forward")


def simulate_backward(sys: SystemSpec, x0, steps: int, h: float | None = None) -> Trajectory:
    """Backward trajectory: integrates the negated closed-loop field."""
    if sys.kind == "discrete":
        raise UnsupportedError(f"{sys.name} is discrete; its map need not be invertible")
    x0 = _check_x0(sys, x0)
    h = sys.metadata.get("h", 0.01) if h is None else float(h)
    return _run(sys, x0, steps, h, sign=-1.0, direction="backward")


def empirical_sensitivity(sys: SystemSpec, x0, v, steps: int, h: float | None = None) -> np.ndarray:
    """Displacement xi(x0+v, t) - xi(x0, t) at t = steps*h from two simulations."""
    x0 = _check_x0(sys, x0)
    v = np.asarray(v, dtype=float)
    if v.shape != x0.shape:
        raise DimensionError(f"perturbation shape {v.shape} does not match state {x0.shape}")
    base = simulate(sys, x0, steps, h)
    moved = simulate(sys, x0 + v, steps, h)
    return moved.states[-1] - base.states[-1]


# --------------------------------------------------------------------------
# exact sensitivity for linear systems
# --------------------------------------------------------------------------


def expm(matrix, tol: float = 1e-12) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring of the Taylor series.

    The argument is scaled by 2**-s until its 1-norm is <= 0.5, the series is
    summed until the next term falls below `tol` relative to the partial sum,
    and the result is squared s times.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expm needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    norm = np.linalg.norm(a, 1)
    s = 0
    if norm > 0.5:
        s = int(np.ceil(np.log2(norm / 0.5)))
    b = a / (2.0 ** s)
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 64):
        term = term @ b / k
        result = result + term
        if np.linalg.norm(term, 1) <= tol * np.linalg.norm(result, 1):
            break
    for _ in range(s):
        result = result @ result
    return result


@dataclass(frozen=True)
class SensOracle:
    """Closed-form sensitivity of a linear system xdot = Ax."""

    matrix: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError("oracle matrix must be square")
        a.setflags(write=False)
        object.__setattr__(self, "matrix", a)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


def linear_sensitivity(oracle: SensOracle, v, t: float, inverse: bool = False) -> np.ndarray:
    """exp(+-A t) @ v; independent of any anchor state."""
    if t < 0:
        raise ValueError("t must be >= 0")
    v = np.asarray(v, dtype=float)
    if v.shape != (oracle.dimension,):
        raise DimensionError(
            f"vector shape {v.shape} does not match oracle dimension {oracle.dimension}"
        )
    sign = -1.0 if inverse else 1.0
    return expm(sign * oracle.matrix * t) @ v


def oracle_for(sys: SystemSpec) -> SensOracle:
    """Exact oracle for a registered linear system (metadata carries A)."""
    if "matrix" not in sys.metadata:
        raise UnsupportedError(f"{sys.name} has no linear closed form")
    return SensOracle(np.asarray(sys.metadata["matrix"], dtype=float))


class OraclePredictor:
    """Drop-in stand-in for a trained sensitivity network on linear systems.

    Exposes the same predict(x0, v, t) surface as a trained model; the anchor
    state x0 is ignored because the linear closed form does not depend on it.
    Matrix exponentials are cached per time value.
    """

    def __init__(self, oracle: SensOracle, inverse: bool = False):
        self.oracle = oracle
        self.inverse = inverse
        self._cache: dict[float, np.ndarray] = {}

    def _matrix(self, t: float) -> np.ndarray:
        key = round(float(t), 12)
        if key not in self._cache:
            sign = -1.0 if self.inverse else 1.0
            self._cache[key] = expm(sign * self.oracle.matrix * key)
        return self._cache[key]

    def predict(self, x0, v, t: float) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.oracle.dimension,):
            raise DimensionError(
                f"vector shape {v.shape} does not match oracle dimension "
                f"{self.oracle.dimension}"
            )
        return self._matrix(t) @ v


# --------------------------------------------------------------------------
# trajectory I/O
# --------------------------------------------------------------------------


def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Write `step,time,x1..xn` rows; floats use repr so the file round-trips."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        n = traj.dimension
        writer.writerow(["step", "time"] + [f"x{i + 1}" for i in range(n)])
        for i, row in enumerate(traj.states):
            writer.writerow([i, repr(i * traj.step)] + [repr(float(v)) for v in row])


def trajectory_from_csv(path, system: str = "") -> Trajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    n = len(header) - 2
    states = np.array([row[2:] for row in rows])
    h = rows[1][1] - rows[0][1] if len(rows) > 1 else 1.0
    return Trajectory(initial=states[0], step=h, states=states, system=system)


def save_corpus(trajs: list[Trajectory], path) -> None:
    """Binary cache of a trajectory corpus (round-trips exactly)."""
    arrays = {f"traj_{i}": t.states for i, t in enumerate(trajs)}
    meta = {
        "count": len(trajs),
        "step": trajs[0].step if trajs else 0.0,
        "system": trajs[0].system if trajs else "",
    }
    np.savez_compressed(Path(path), _meta=np.array([meta["count"], meta["step"]]),
                        _system=np.array(meta["system"]), **arrays)


def load_corpus(path) -> list[Trajectory]:
    with np.load(Path(path), allow_pickle=False) as data:
        count = int(data["_meta"][0])
        h = float(data["_meta"][1])
        system = str(data["_system"])
        out = []
        for i in range(count):
            states = data[f"traj_{i}"]
            out.append(Trajectory(initial=states[0], step=h, states=states, system=system))
    return out
