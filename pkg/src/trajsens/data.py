"""Supervised sensitivity records from simulated trajectory corpora.

Every sampled state of a trajectory starts a virtual trajectory (any suffix
is itself a trajectory), so a corpus of N simulations yields far more anchor
pairs than N.  For anchor states p = xi(a, j*h) and q = xi(b, j'*h) and any
duration i*h that both remaining horizons cover:

  forward:  target = xi(q, i*h) - xi(p, i*h),  input anchor p, vector q - p
  inverse:  anchor  = xi(p, i*h),  vector = xi(q, i*h) - xi(p, i*h),
            target = q - p

Targets are differences of stored states, so every record re-verifies its
defining identity exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, ParseError
from .sim import Trajectory, simulate
from .systems import SystemSpec

KINDS = ("forward", "inverse")
DEFAULT_BUDGET = 200_000


@dataclass(frozen=True)
class SensRecord:
    """One supervised tuple (x0, v, t) -> target."""

    x0: np.ndarray
    v: np.ndarray
    t: float
    target: np.ndarray
    kind: str


@dataclass
class Dataset:
    """Array-backed record collection with per-feature min-max normalization.

    `provenance` rows are (traj_a, offset_a, traj_b, offset_b, duration) and
    let tests re-verify each record against the stored corpus states.
    """

    kind: str
    system: str
    h: float
    seed: int
    x0: np.ndarray  # (M, n)
    v: np.ndarray  # (M, n)
    t: np.ndarray  # (M,)
    y: np.ndarray  # (M, n)
    provenance: np.ndarray | None = None  # (M, 5) int
    normalization: dict | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"record kind must be one of {KINDS}, got {self.kind!r}")
        m = self.x0.shape[0]
        if not (self.v.shape[0] == self.t.shape[0] == self.y.shape[0] == m):
            raise DimensionError("dataset arrays disagree on record count")

    def __len__(self) -> int:
        return self.x0.shape[0]

    @property
    def dimension(self) -> int:
        return self.x0.shape[1]

    def record(self, i: int) -> SensRecord:
        return SensRecord(self.x0[i], self.v[i], float(self.t[i]), self.y[i], self.kind)

    def inputs(self) -> np.ndarray:
        """Raw network inputs (x0, v, t), width 2n+1."""
        return np.hstack([self.x0, self.v, self.t[:, None]])

    def normalized_inputs(self) -> np.ndarray:
        self._require_normalization()
        lo = np.asarray(self.normalization["input_min"])
        span = np.asarray(self.normalization["input_span"])
        return (self.inputs() - lo) / span

    def normalized_targets(self) -> np.ndarray:
        self._require_normalization()
        lo = np.asarray(self.normalization["output_min"])
        span = np.asarray(self.normalization["output_span"])
        return (self.y - lo) / span

    def denormalize_outputs(self, yn: np.ndarray) -> np.ndarray:
        self._require_normalization()
        lo = np.asarray(self.normalization["output_min"])
        span = np.asarray(self.normalization["output_span"])
        return yn * span + lo

    def _require_normalization(self):
        if self.normalization is None:
            raise ConfigError("dataset has no normalization; split() fits one on the training part")


def fit_normalization(inputs: np.ndarray, outputs: np.ndarray) -> dict:
    """Per-feature (min, max) ranges; constant features get span 1 so the map stays invertible."""

    def ranges(arr):
        lo = arr.min(axis=0)
        hi = arr.max(axis=0)
        span = hi - lo
        span[span == 0.0] = 1.0
        return lo, hi, span

    in_lo, in_hi, in_span = ranges(inputs)
    out_lo, out_hi, out_span = ranges(outputs)
    return {
        "input_min": in_lo.tolist(),
        "input_max": in_hi.tolist(),
        "input_span": in_span.tolist(),
        "output_min": out_lo.tolist(),
        "output_max": out_hi.tolist(),
        "output_span": out_span.tolist(),
    }


# --------------------------------------------------------------------------
# corpus generation
# --------------------------------------------------------------------------


def generate_corpus(
    sys: SystemSpec,
    init_box,
    n_traj: int,
    steps: int,
    h: float | None = None,
    seed: int = 0,
    initial_states=None,
) -> list[Trajectory]:
    """Simulate `n_traj` trajectories from states drawn uniformly in the init box.

    Explicit `initial_states` override the random draw.  Record pairing needs
    at least two trajectories.
    """
    if initial_states is not None:
        starts = [np.asarray(x, dtype=float) for x in initial_states]
    else:
        box = np.asarray(init_box, dtype=float)
        if box.shape != (sys.dimension, 2) or np.any(box[:, 0] > box[:, 1]):
            raise ConfigError("init box must be an (n, 2) box with lower <= upper")
        dom = sys.domain
        if np.any(box[:, 0] < dom[:, 0]) or np.any(box[:, 1] > dom[:, 1]):
            raise ConfigError(f"init box must lie inside the domain of {sys.name}")
        rng = np.random.default_rng(seed)
        starts = list(rng.uniform(box[:, 0], box[:, 1], size=(int(n_traj), sys.dimension)))
    if len(starts) < 2:
        raise ConfigError("corpus needs at least two trajectories for pairing")
    return [simulate(sys, x0, steps, h) for x0 in starts]


# --------------------------------------------------------------------------
# record enumeration and sampling
# --------------------------------------------------------------------------


def _corpus_array(corpus: list[Trajectory]) -> tuple[np.ndarray, float, str]:
    if not corpus:
        raise ConfigError("corpus is empty")
    h = corpus[0].step
    system = corpus[0].system
    k = corpus[0].steps
    for tr in corpus:
        if tr.step != h or tr.system != system:
            raise ConfigError("corpus trajectories must share step size and system")
        if tr.steps != k:
            raise ConfigError("corpus trajectories must share the same horizon")
    return np.stack([tr.states for tr in corpus]), h, system


def enumeration_total(n_traj: int, steps: int, cross_offset: bool = True) -> int:
    """Count of candidate (pair, offsets, duration) triples before the p != q filter."""
    total = 0
    for i in range(1, steps + 1):
        alive = steps - i + 1  # offsets j with j + i <= steps
        if cross_offset:
            total += (n_traj * alive) ** 2 - n_traj * alive
        else:
            total += n_traj * (n_traj - 1) * alive
    return total


def _assemble(kind, states, sel, h):
    a, j, b, j2, i = (sel[:, c] for c in range(5))
    p = states[a, j]
    q = states[b, j2]
    if kind == "forward":
        x0 = p
        v = q - p
        y = states[b, j2 + i] - states[a, j + i]
    else:
        x0 = states[a, j + i]
        v = states[b, j2 + i] - states[a, j + i]
        y = q - p
    return x0.copy(), v.copy(), i.astype(float) * h, y.copy()


def _enumerate_all(states: np.ndarray, cross_offset: bool) -> np.ndarray:
    n_traj, samples, _ = states.shape
    steps = samples - 1
    rows = []
    for a in range(n_traj):
        for j in range(steps + 1):
            for b in range(n_traj):
                offsets = range(steps + 1) if cross_offset else (j,)
                for j2 in offsets:
                    if a == b and j == j2:
                        continue
                    if not cross_offset and a == b:
                        continue
                    if np.array_equal(states[a, j], states[b, j2]):
                        continue
                    horizon = min(steps - j, steps - j2)
                    for i in range(1, horizon + 1):
                        rows.append((a, j, b, j2, i))
    return np.array(rows, dtype=np.int64).reshape(-1, 5)


def _sample_budget(states, budget, rng, cross_offset) -> np.ndarray:
    n_traj, samples, _ = states.shape
    steps = samples - 1
    durations = np.arange(1, steps + 1)
    alive = steps - durations + 1
    if cross_offset:
        weights = (n_traj * alive).astype(float) ** 2 - n_traj * alive
    else:
        weights = (n_traj * (n_traj - 1) * alive).astype(float)
    probs = weights / weights.sum()

    chosen: set[tuple] = set()
    rows = []
    attempts = 0
    while len(rows) < budget and attempts < 200:
        attempts += 1
        batch = max(1024, 2 * (budget - len(rows)))
        i = rng.choice(durations, size=batch, p=probs)
        a = rng.integers(0, n_traj, size=batch)
        j = rng.integers(0, steps - i + 1)
        b = rng.integers(0, n_traj, size=batch)
        j2 = rng.integers(0, steps - i + 1) if cross_offset else j
        same_pointer = (a == b) & (j == j2)
        same_traj = (a == b) if not cross_offset else np.zeros(batch, dtype=bool)
        equal_state = np.all(states[a, j] == states[b, j2], axis=1)
        ok = ~(same_pointer | same_traj | equal_state)
        for row in zip(a[ok], j[ok], b[ok], j2[ok], i[ok]):
            key = tuple(int(x) for x in row)
            if key not in chosen:
                chosen.add(key)
                rows.append(key)
                if len(rows) == budget:
                    break
    if len(rows) < budget:
        raise ConfigError(
            f"could not draw {budget} distinct records from this corpus "
            f"(got {len(rows)}); lower the budget"
        )
    rows.sort()
    return np.array(rows, dtype=np.int64)


def make_records(
    corpus: list[Trajectory],
    kind: str,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
    cross_offset: bool = True,
) -> Dataset:
    """Build a forward or inverse sensitivity dataset from a corpus.

    Enumerates every valid (anchor pair, duration) combination when that fits
    within `budget`; otherwise draws `budget` distinct records uniformly from
    the enumeration with the given seed.  Pairs whose anchor states coincide
    are excluded.  `cross_offset=False` restricts pairs to equal offsets on
    distinct trajectories.
    """
    if kind not in KINDS:
        raise ConfigError(f"record kind must be one of {KINDS}, got {kind!r}")
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    states, h, system = _corpus_array(corpus)
    n_traj, samples, _ = states.shape
    total = enumeration_total(n_traj, samples - 1, cross_offset)
    if total <= budget:
        sel = _enumerate_all(states, cross_offset)
    else:
        rng = np.random.default_rng(seed)
        sel = _sample_budget(states, budget, rng, cross_offset)
    x0, v, t, y = _assemble(kind, states, sel, h)
    return Dataset(kind=kind, system=system, h=h, seed=seed,
                   x0=x0, v=v, t=t, y=y, provenance=sel)


def split(ds: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive shuffle split; normalization is fitted on the
    training part and copied to the test part."""
    if not (0.0 < test_fraction < 1.0):
        raise ConfigError("test fraction must be strictly between 0 and 1")
    m = len(ds)
    if m < 10:
        raise ConfigError(f"need at least 10 records to split, got {m}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    n_test = min(max(int(round(m * test_fraction)), 1), m - 1)
    test_idx, train_idx = perm[:n_test], perm[n_test:]

    def take(idx):
        return replace(
            ds,
            x0=ds.x0[idx],
            v=ds.v[idx],
            t=ds.t[idx],
            y=ds.y[idx],
            provenance=None if ds.provenance is None else ds.provenance[idx],
        )

    train, test = take(train_idx), take(test_idx)
    norm = fit_normalization(train.inputs(), train.y)
    train.normalization = norm
    test.normalization = dict(norm)
    return train, test


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def save_dataset(ds: Dataset, path) -> None:
    """Binary arrays plus a JSON sidecar (same stem, .json suffix)."""
    path = Path(path)
    arrays = {"x0": ds.x0, "v": ds.v, "t": ds.t, "y": ds.y}
    if ds.provenance is not None:
        arrays["provenance"] = ds.provenance
    np.savez_compressed(path, **arrays)
    sidecar = {
        "system": ds.system,
        "h": ds.h,
        "kind": ds.kind,
        "seed": ds.seed,
        "count": len(ds),
        "normalization": ds.normalization,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    sidecar_path = path.with_suffix(".json")
    try:
        sidecar = json.loads(sidecar_path.read_text())
        with np.load(path if path.suffix else path.with_suffix(".npz")) as data:
            x0, v, t, y = data["x0"], data["v"], data["t"], data["y"]
            prov = data["provenance"] if "provenance" in data else None
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ParseError(f"cannot read dataset {path}: {exc}") from exc
    return Dataset(
        kind=sidecar["kind"], system=sidecar["system"], h=float(sidecar["h"]),
        seed=int(sidecar["seed"]), x0=x0, v=v, t=t, y=y, provenance=prov,
        normalization=sidecar.get("normalization"),
    )


def dataset_to_csv(ds: Dataset, path) -> None:
    """Rows `x0_1..x0_n, v_1..v_n, t, y_1..y_n, kind`."""
    n = ds.dimension
    header = (
        [f"x0_{i + 1}" for i in range(n)]
        + [f"v_{i + 1}" for i in range(n)]
        + ["t"]
        + [f"y_{i + 1}" for i in range(n)]
        + ["kind"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(ds)):
            row = (
                [repr(float(x)) for x in ds.x0[i]]
                + [repr(float(x)) for x in ds.v[i]]
                + [repr(float(ds.t[i]))]
                + [repr(float(x)) for x in ds.y[i]]
                + [ds.kind]
            )
            writer.writerow(row)
